import numpy as np
import pytest

from conftest import catalog_problem
from gammacell.cell1d import optimize_e1
from gammacell.cellnd import (STRUCTURE_TOL, CellProblemND, LatticeBasis, basis_invariance_check, gap_search,
                              optimize_eper, r_l_equivalence_check)
from gammacell.fields import CompositeJump
from gammacell.oracles import fd_gradient_check

L_SHORT = (0.5, 0.25, 0.125)


def test_lattice_basis_validation():
    with pytest.raises(ValueError):
        LatticeBasis([1.0, 1.0], [[1.0, -1.0]])
    with pytest.raises(ValueError):
        LatticeBasis([1.0, 0.0], [[1.0, 1.0]])
    with pytest.raises(ValueError):
        LatticeBasis([1.0, 0.0, 0.0], [[0.0, 1.0, 0.0], [0.0, 2.0, 0.0]])
    b = LatticeBasis.orthonormal([0.0, 0.6, 0.8])
    assert abs(abs(b.det) - 1.0) < 1e-12
    assert abs(b.dilated(2).det) == pytest.approx(4.0)
    assert abs(b.sheared().det) == pytest.approx(1.0)


def test_grid_guard():
    d, j = catalog_problem("mm2_step")
    with pytest.raises(ValueError):
        optimize_eper(d, j, grid=(8, 8))
    with pytest.raises(ValueError):
        optimize_eper(d, j, grid=(33, 32))


@pytest.mark.parametrize("name", ["mm2_tilted_partial", "tw2_scalar", "ag2_alpha08"])
def test_eper_below_e1_with_kick(name):
    d, j = catalog_problem(name)
    r = optimize_eper(d, j, grid=(32, 32), l_grid=L_SHORT, kick=0.05, seed=3)
    assert r.value <= r.e1_value + 1e-6
    assert max(r.max_curl_residual, r.max_div_residual) <= STRUCTURE_TOL
    assert r.seed == 3


def test_e1_value_matches_cell1d():
    d, j = catalog_problem("mm2_tilted_partial")
    r = optimize_eper(d, j, grid=(32, 32), l_grid=L_SHORT)
    b = LatticeBasis.orthonormal(j.nu)
    vals = []
    for L in L_SHORT:
        p1 = CellProblemND(d, j, b, (32, 32), L).one_d()
        vals.append(p1.solve().fun)
    assert r.e1_value == pytest.approx(min(vals), rel=1e-10)
    assert r.e1_value >= optimize_e1(d, j, l_grid=L_SHORT).value


def test_zero_jump():
    d, _ = catalog_problem("mm2_step")
    j = CompositeJump.build(d.layout, [1.0, 0.0], [1.0], [1.0])
    assert optimize_eper(d, j, grid=(16, 16), l_grid=L_SHORT).value == pytest.approx(0.0, abs=1e-12)


def test_three_dimensional_shear_invariance():
    d, j = catalog_problem("mm3_step")
    b = LatticeBasis.orthonormal(j.nu)
    rep = basis_invariance_check(d, j, b, b.sheared(), grid=(16, 16, 16), l_grid=L_SHORT)
    assert rep["passed"] and rep["conclusive"]


def test_permutation_invariance_3d():
    d, j = catalog_problem("mm3_step")
    b = LatticeBasis.orthonormal(j.nu)
    rep = basis_invariance_check(d, j, b, b.permuted([1, 0]), grid=(16, 16, 16), l_grid=L_SHORT)
    assert rep["passed"]


def test_basis_must_share_normal():
    d, j = catalog_problem("mm2_step")
    with pytest.raises(ValueError):
        basis_invariance_check(d, j, LatticeBasis.orthonormal([1.0, 0.0]), LatticeBasis.orthonormal([0.0, 1.0]))


@pytest.mark.parametrize("cls", ["relaxed", "clamped"])
def test_gradient_finite_differences(cls, rng):
    d, j = catalog_problem("ag2_tilted_alpha05")
    prob = CellProblemND(d, j, LatticeBasis.orthonormal(j.nu), (16, 16), 0.5, cls=cls)
    x = 0.05 * rng.standard_normal(prob.param.size)
    rep = fd_gradient_check(prob.objective, x, 1e-6, coords=range(0, prob.param.size, 11))
    assert rep.passed, rep.test


def test_structure_residuals_after_kick(rng):
    d, j = catalog_problem("div2_custom")
    prob = CellProblemND(d, j, LatticeBasis.orthonormal(j.nu), (16, 16), 0.5)
    x = prob.kick(np.zeros(prob.param.size), 0.1, 0)
    curl, div = prob.residuals(x)
    assert curl <= STRUCTURE_TOL and div <= STRUCTURE_TOL
    assert prob.perturbation_norm(x) > 0


def test_r_l_equivalence():
    d, j = catalog_problem("mm2_step")
    rep = r_l_equivalence_check(d, j, grid=(32, 32), L=0.125, K=2)
    assert rep["monotone"] and rep["class_agree"] and rep["conclusive"]
    assert rep["compressed_start"] == pytest.approx(rep["R_KL"], rel=1e-12)
    with pytest.raises(ValueError):
        r_l_equivalence_check(d, j, grid=(32, 32), L=0.75, K=2)


def test_gap_search_reports():
    d, j = catalog_problem("mm2_step")
    out = gap_search(d, j, schedule=[(16, 16)], l_grid=L_SHORT)
    assert out["gap"] >= -1e-6
    assert len(out["runs"]) == 1


def test_deterministic_kick():
    d, j = catalog_problem("tw2_scalar")
    a = optimize_eper(d, j, grid=(16, 16), l_grid=L_SHORT, kick=0.05, seed=1)
    b = optimize_eper(d, j, grid=(16, 16), l_grid=L_SHORT, kick=0.05, seed=1)
    assert a.to_dict() == b.to_dict()
