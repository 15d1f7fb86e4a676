import numpy as np
import pytest

from gammacell.fields import Box, GraphInterface, Layout, PiecewiseField
from gammacell.functionals import ModicaMortola
from gammacell.mollifier import GridSpec, Kernel
from gammacell.recovery import (RecoveryConfig, build_modified, build_primary, energy, epsilon_scan, extrapolate,
                                mean_correct, optimal_perturbation)
from gammacell.surface import k_functional

K1 = Kernel("bump", 1)


@pytest.fixture(scope="module")
def pert1():
    mm = ModicaMortola(1)
    from gammacell.fields import CompositeJump
    jump = CompositeJump.build(mm.layout, [1.0], [1.0], [-1.0])
    return optimal_perturbation(mm, jump, 0.25, K1)


def test_config_validation():
    with pytest.raises(ValueError):
        RecoveryConfig(epsilons=(0.05, 0.1))
    with pytest.raises(ValueError):
        RecoveryConfig(spacing_ratio=8)
    with pytest.raises(ValueError):
        RecoveryConfig(L=0.0)
    g = RecoveryConfig().grid(Box((-1.0,), (1.0,)), 0.1)
    assert g.spacing[0] <= 0.1 / 16 + 1e-15


def test_energy_of_constant_field(mm1):
    field = PiecewiseField(mm1.layout, Box((-1.0,), (1.0,)), 0, [GraphInterface.flat(1, 0.0)], [[1.0], [1.0]])
    grid = GridSpec((-1.0,), (1.0,), (320,))
    assert energy(build_primary(field, K1, 0.1, grid), mm1) == 0.0


def test_energy_grid_must_cover_domain(step1d, mm1):
    grid = GridSpec((-0.5,), (1.0,), (240,))
    mf = build_primary(step1d, K1, 0.1, grid)
    with pytest.raises(ValueError):
        energy(mf, mm1, domain=step1d.box)


def test_no_perturbation_gives_primary(step1d):
    grid = GridSpec((-1.0,), (1.0,), (320,))
    a = build_primary(step1d, K1, 0.1, grid)
    b = build_modified(step1d, 0, None, K1, 0.1, grid)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.D1, b.D1)


def test_modified_slab_support(step1d, pert1):
    grid = GridSpec((-1.0,), (1.0,), (640,))
    eps = 0.1
    a = build_primary(step1d, K1, eps, grid)
    b = build_modified(step1d, 0, pert1, K1, eps, grid)
    x = grid.points()[:, 0]
    outside = np.abs(x - 0.1) >= eps / (2 * pert1.L)
    assert np.array_equal(a.values[outside], b.values[outside])
    assert np.array_equal(a.D1[outside], b.D1[outside])
    assert np.any(a.values[~outside] != b.values[~outside])


def test_perturbation_interpolates_nodes(pert1):
    n1 = pert1.sigma.shape[0] - 1
    s = (-0.5 + np.arange(n1 + 1) / n1)[1:-1, None]
    val, _, _ = pert1.evaluate(s)
    assert np.allclose(val, pert1.sigma[1:-1], atol=1e-12)
    val, grad, hess = pert1.evaluate(np.array([[0.5], [-0.7]]), order=2)
    assert np.all(val == 0) and np.all(grad == 0) and np.all(hess == 0)


def test_perturbation_gradient_matches_differences(pert1):
    s = np.array([[0.1], [-0.23]])
    h = 1e-6
    _, g, _ = pert1.evaluate(s)
    vp, _, _ = pert1.evaluate(s + h)
    vm, _, _ = pert1.evaluate(s - h)
    assert np.allclose(g[..., 0], (vp - vm) / (2 * h), atol=1e-6)


def test_modified_rejects_overlap_and_curved(mm1, mm2, pert1):
    field = PiecewiseField(mm1.layout, Box((-1.0,), (1.0,)), 0,
                           [GraphInterface.flat(1, 0.0), GraphInterface.flat(1, 0.2)], [[-1.0], [1.0], [-1.0]])
    with pytest.raises(ValueError):
        build_modified(field, 0, pert1, K1, 0.1, GridSpec((-1.0,), (1.0,), (320,)))
    curved = PiecewiseField(mm2.layout, Box((-0.5, -0.5), (0.5, 0.5)), 0,
                            [GraphInterface.from_coefficients(2, [0.0, 0.0, 0.5])], [[-1.0], [1.0]])
    with pytest.raises(ValueError):
        build_modified(curved, 0, pert1, Kernel("bump", 2), 0.1, GridSpec((-0.5, -0.5), (0.5, 0.5), (16, 16)))


def test_primary_scan_converges(step1d, mm1):
    cfg = RecoveryConfig(epsilons=(0.1, 0.05, 0.025))
    tr = epsilon_scan(step1d, mm1, cfg)
    assert tr.predicted == pytest.approx(k_functional(step1d, mm1, "KernelLimit", kernel=K1).value)
    assert abs(tr.rows[1]["energy"] - tr.predicted) <= 1e-3 * tr.predicted
    assert tr.relative_gap <= 1e-3


def test_translation_invariance(mm1):
    cfg = RecoveryConfig(epsilons=(0.1, 0.05))
    vals = []
    for x0 in (0.0, 0.1, -0.237):
        f = PiecewiseField(mm1.layout, Box((-1.0,), (1.0,)), 0, [GraphInterface.flat(1, x0)], [[-1.0], [1.0]])
        vals.append(epsilon_scan(f, mm1, cfg).rows[-1]["energy"])
    assert np.ptp(vals) <= 1e-6 * vals[0]


def test_modified_scan(step1d, mm1, pert1):
    cfg = RecoveryConfig(epsilons=(0.1, 0.05, 0.025), L=pert1.L)
    tr = epsilon_scan(step1d, mm1, cfg, mode="modified", perturbation=pert1)
    assert tr.details["cell_value"] == pert1.value
    assert tr.relative_gap <= 1e-3
    with pytest.raises(ValueError):
        epsilon_scan(step1d, mm1, cfg, mode="modified")


def test_mean_correction():
    lay = Layout(N=1, m=1)
    mm = ModicaMortola(1)
    field = PiecewiseField(lay, Box((-1.0,), (1.0,)), 0, [GraphInterface.flat(1, 0.3)], [[-1.0], [1.0]])
    grid = GridSpec((-1.0,), (1.0,), (160,))
    mf = build_primary(field, K1, 0.2, grid)
    exact = field.evaluate(grid.points())[0]
    fixed, d = mean_correct(mf, field)
    assert np.sum(fixed.values - exact) * grid.cell_volume == pytest.approx(0.0, abs=1e-13)
    assert abs(d[0]) < 1e-3
    assert np.isfinite(energy(fixed, mm))


def test_empty_field(mm1):
    field = PiecewiseField(mm1.layout, Box((-1.0,), (1.0,)), 0, [], [[1.0]])
    tr = epsilon_scan(field, mm1)
    assert tr.extrapolated == 0.0 and all(r["energy"] == 0.0 for r in tr.rows)


def test_extrapolate():
    eps = [0.1, 0.05, 0.025]
    I0, rate = extrapolate(eps, [2.0 + 3.0 * e for e in eps])
    assert I0 == pytest.approx(2.0, abs=1e-12)
    assert rate == pytest.approx(1.0, abs=1e-9)
    I0, rate = extrapolate(eps, [1.0, 1.0, 1.0])
    assert I0 == pytest.approx(1.0, abs=1e-14) and rate is None
