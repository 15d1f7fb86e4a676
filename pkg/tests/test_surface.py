import numpy as np
import pytest

from gammacell.fields import Box, GraphInterface, PiecewiseField
from gammacell.surface import DensityCache, k_functional, surface_rule

FAST_E1 = {"grid_n": 512}


def test_no_interfaces(mm2):
    field = PiecewiseField(mm2.layout, Box((0.0, 0.0), (1.0, 1.0)), 0, [], [[1.0]])
    for kind in ("E1", "Eper", "KernelLimit"):
        rep = k_functional(field, mm2, kind)
        assert rep.value == 0.0 and rep.per_interface == []


def test_flat_interface_e1(flat2d, mm2):
    rep = k_functional(flat2d, mm2, "E1")
    assert abs(rep.value - 8.0 / 3.0) <= 2e-3
    assert rep.evaluations == 1 and rep.cache_hits == 7
    assert rep.measures == [pytest.approx(1.0, abs=1e-14)]


def test_point_interface_counting_measure(step1d, mm1):
    rep = k_functional(step1d, mm1, "E1", **FAST_E1)
    assert rep.measures == [1.0]


def test_periodic_below_e1(flat2d, mm2):
    k1 = k_functional(flat2d, mm2, "E1", grid_n=128, l_grid=(0.5, 0.25, 0.125)).value
    kp = k_functional(flat2d, mm2, "Eper", grid=(128, 16), l_grid=(0.5, 0.25, 0.125), kick=0.05, seed=0).value
    assert kp <= k1 + 1e-6


def test_kernel_limit_above_e1(flat2d, mm2):
    assert k_functional(flat2d, mm2, "KernelLimit").value >= k_functional(flat2d, mm2, "E1").value


def test_additivity(mm2):
    box = Box((-0.5, -0.5), (0.5, 0.5))
    g1, g2 = GraphInterface.flat(2, -0.2), GraphInterface.from_coefficients(2, [0.2, 0.1])
    both = PiecewiseField(mm2.layout, box, 0, [g1, g2], [[-1.0], [1.0], [0.0]])
    a = PiecewiseField(mm2.layout, box, 0, [g1], [[-1.0], [1.0]])
    b = PiecewiseField(mm2.layout, box, 0, [g2], [[1.0], [0.0]])
    kb = k_functional(both, mm2, "E1", **FAST_E1)
    assert kb.value == pytest.approx(k_functional(a, mm2, "E1", **FAST_E1).value
                                     + k_functional(b, mm2, "E1", **FAST_E1).value, rel=1e-12)
    assert len(kb.per_interface) == 2


def test_orientation(mm2):
    box = Box((-0.5, -0.5), (0.5, 0.5))
    g = GraphInterface.from_coefficients(2, [0.0, 0.3])
    up = PiecewiseField(mm2.layout, box, 0, [g], [[-1.0], [1.0]])
    down = PiecewiseField(mm2.layout, box, 0, [g], [[1.0], [-1.0]])
    assert k_functional(up, mm2, "E1", **FAST_E1).value == pytest.approx(
        k_functional(down, mm2, "E1", **FAST_E1).value, rel=1e-10)


def test_area_factor(mm2):
    box = Box((-0.5, -0.5), (0.5, 0.5))
    tilted = PiecewiseField(mm2.layout, box, 0, [GraphInterface.from_coefficients(2, [0.0, 0.3])],
                            [[-1.0], [1.0]])
    rep = k_functional(tilted, mm2, "E1", **FAST_E1)
    assert rep.measures[0] == pytest.approx(np.hypot(1.0, 0.3), rel=1e-14)
    flat = k_functional(PiecewiseField(mm2.layout, box, 0, [GraphInterface.flat(2)], [[-1.0], [1.0]]),
                        mm2, "E1", **FAST_E1).value
    assert rep.value == pytest.approx(np.hypot(1.0, 0.3) * flat, rel=1e-6)


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_scaling(mm2, lam):
    def make(s):
        return PiecewiseField(mm2.layout, Box((-s, -s), (s, s)), 0,
                              [GraphInterface.from_coefficients(2, [0.0, 0.0, 0.4 / s])], [[-1.0], [1.0]])
    a = k_functional(make(0.5), mm2, "KernelLimit").value
    b = k_functional(make(0.5 * lam), mm2, "KernelLimit").value
    assert b == pytest.approx(lam * a, rel=1e-10)


def test_refinement_self_consistency(mm2):
    field = PiecewiseField(mm2.layout, Box((-0.5, -0.5), (0.5, 0.5)), 0,
                           [GraphInterface.from_coefficients(2, [0.0, 0.1, 0.4])], [[-1.0], [1.0]])
    cache = DensityCache()
    a = k_functional(field, mm2, "KernelLimit", nodes=8, cache=cache).value
    b = k_functional(field, mm2, "KernelLimit", nodes=16, cache=cache).value
    assert abs(a - b) <= 1e-3 * b


def test_surface_rule_integrates_area(mm2):
    field = PiecewiseField(mm2.layout, Box((-0.5, -1.0), (0.5, 1.0)), 0, [GraphInterface.flat(2)], [[-1.0], [1.0]])
    pts, w = surface_rule(field, 0, 8)
    assert pts.shape == (8, 1) and w.sum() == pytest.approx(2.0, abs=1e-14)


def test_bad_kind(flat2d, mm2):
    with pytest.raises(ValueError):
        k_functional(flat2d, mm2, "E2")
