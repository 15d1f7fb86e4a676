import numpy as np
import pytest

from gammacell.fields import CompositeJump
from gammacell.functionals import AvilesGiga
from gammacell.mollifier import Kernel
from gammacell.oracles import (OracleReport, aviles_giga_e1, brute_force_e1, fd_gradient_check,
                               geodesic_e1_scalar, operator_self_test, slice_profile_reference)


def test_report_relative_tolerance():
    assert OracleReport("a", 10.0, 10.05, 0.01).passed
    assert not OracleReport("a", 10.0, 10.2, 0.01).passed


@pytest.mark.parametrize("grid", [(64, 64), (16, 16, 16)])
def test_operator_identities(grid):
    rep = operator_self_test(grid)
    assert rep.passed, rep.details


def test_fd_check_quadratic(rng):
    A = rng.standard_normal((6, 6))
    A = A @ A.T
    f = lambda x: (0.5 * x @ A @ x, A @ x)
    assert fd_gradient_check(f, rng.standard_normal(6), 1e-5).passed


def test_fd_check_detects_wrong_gradient(rng):
    f = lambda x: (float(np.sum(np.sin(x))), np.cos(x) * 1.01)
    rep = fd_gradient_check(f, rng.standard_normal(5), 1e-6)
    assert not rep.passed and rep.test > 1e-3


def test_fd_step_guard():
    with pytest.raises(ValueError):
        fd_gradient_check(lambda x: (0.0, x), np.zeros(2), 1e-2)


def test_geodesic_modica_mortola():
    assert geodesic_e1_scalar(lambda u: (1 - u * u) ** 2, -1.0, 1.0) == pytest.approx(8.0 / 3.0, abs=1e-10)
    assert geodesic_e1_scalar(lambda u: (1 - u * u) ** 2, 0.5, 0.5) == 0.0


def test_slice_reference_one_dimension():
    k = Kernel("bump", 1)
    assert slice_profile_reference("bump", 1, 0.1) == pytest.approx(float(k.omega(0.1)), rel=1e-10)


def test_brute_force_modica_mortola(mm1, mm_jump1):
    assert brute_force_e1(mm1, mm_jump1, 4096) == pytest.approx(8.0 / 3.0, rel=5e-4)


def test_brute_force_aviles_giga():
    ag = AvilesGiga(2)
    jump = CompositeJump.build(ag.layout, [1.0, 0.0], [0.8, 0.6], [-0.8, 0.6])
    assert brute_force_e1(ag, jump, 4096) == pytest.approx(aviles_giga_e1(0.8), rel=1e-3)
