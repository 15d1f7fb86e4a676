import numpy as np
import pytest

from gammacell.fields import Layout
from gammacell.functionals import (AvilesGiga, DensityError, ModicaMortola, PolynomialCustom, TwoGradientWell,
                                   evaluate, gradient, make_density)
from gammacell.oracles import density_gradient_check


def _catalog():
    lay_div = Layout(N=2, d=1)
    div_terms = [(1, {f"d{c}_{a}": 2}) for c in range(2) for a in range(2)]
    div_terms += [(1, {}), (-2, {"v0": 2}), (-2, {"v1": 2}), (1, {"v0": 4}), (1, {"v1": 4}), (2, {"v0": 2, "v1": 2})]
    c2_terms = [(1, {"dd0_0_0": 2}), (1, {"d0_0": 2}), (1, {}), (-2, {"v0": 2}), (1, {"v0": 4})]
    return [ModicaMortola(1), ModicaMortola(2, m=2, scale=2.0), AvilesGiga(2), AvilesGiga(3),
            TwoGradientWell(2, [[0.6, 0.8]], [[0.0, 0.0]]), PolynomialCustom(lay_div, 1, div_terms),
            PolynomialCustom(Layout(N=1, m=1), 2, c2_terms)]


def _zero(d, v):
    lay = d.layout
    P = v.shape[0]
    D2 = np.zeros((P, lay.size, lay.N, lay.N)) if d.order == 2 else None
    return v, np.zeros((P, lay.size, lay.N)), None, D2


def test_modica_mortola_values(mm1):
    v = np.array([[1.0], [0.0], [-1.0]])
    assert evaluate(mm1, *_zero(mm1, v)).tolist() == [0.0, 1.0, 0.0]


def test_modica_mortola_gradient_value(mm1):
    v = np.array([[0.5]])
    gv, g1, g2 = gradient(mm1, *_zero(mm1, v))
    assert gv[0, 0] == pytest.approx(-1.5, abs=1e-15)
    assert np.all(g1 == 0) and g2 is None


def test_aviles_giga_eikonal_well():
    ag = AvilesGiga(2)
    v = np.array([[0.6, 0.8], [1.0, 0.0]])
    assert np.all(evaluate(ag, *_zero(ag, v)) == 0.0)


@pytest.mark.parametrize("density", _catalog(), ids=lambda d: d.name)
def test_gradient_matches_finite_differences(density):
    rep = density_gradient_check(density, n_points=1000, seed=3)
    assert rep.passed, rep.test


@pytest.mark.parametrize("density", _catalog(), ids=lambda d: d.name)
def test_gradient_vanishes_on_zero_set(density):
    lay = density.layout
    if isinstance(density, ModicaMortola):
        v = np.eye(lay.m)[:1]
    elif isinstance(density, AvilesGiga):
        v = np.eye(lay.N)[:1]
    elif isinstance(density, TwoGradientWell):
        v = np.array([[0.6, 0.8]])
    elif lay.d:
        v = np.array([[0.0, 1.0]])
    else:
        v = np.array([[1.0]])
    args = _zero(density, v)
    assert evaluate(density, *args)[0] == 0.0
    gv, g1, g2 = gradient(density, *args)
    assert np.all(gv == 0) and np.all(g1 == 0)
    assert g2 is None or np.all(g2 == 0)


@pytest.mark.parametrize("density", _catalog(), ids=lambda d: d.name)
def test_nonnegative_and_deterministic(density, rng):
    lay = density.layout
    P = 500
    v = rng.uniform(-2, 2, (P, lay.size))
    D1 = rng.uniform(-2, 2, (P, lay.size, lay.N))
    D2 = rng.uniform(-2, 2, (P, lay.size, lay.N, lay.N)) if density.order == 2 else None
    a = evaluate(density, v, D1, None, D2)
    b = evaluate(density, v.copy(), D1.copy(), None, None if D2 is None else D2.copy())
    assert np.all(a >= 0)
    assert np.array_equal(a, b)


def test_shape_mismatch(mm1):
    with pytest.raises(DensityError):
        mm1.value(np.zeros((3, 1)), np.zeros((3, 2, 1)))


def test_two_well_requires_rank_one():
    with pytest.raises(DensityError):
        TwoGradientWell(2, [[1.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]])


def test_negative_polynomial_rejected():
    with pytest.raises(DensityError):
        PolynomialCustom(Layout(N=1, m=1), 1, [(-1.0, {"v0": 2})])


def test_make_density_round_trip():
    for d in _catalog():
        spec = d.to_dict()
        d2 = make_density(spec)
        assert d2.to_dict() == spec
    with pytest.raises(DensityError):
        make_density({"name": "unknown"})
