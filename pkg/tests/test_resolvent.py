import math

import numpy as np
import pytest

from sflow.domain import numkernel as nk
from sflow.domain.constants import ParameterRangeError
from sflow.domain.cyclic import B_cochain, b_cochain
from sflow.domain.triples import SpectralTripleRep, circle_triple, double_up
from sflow.services import resolvent as rv
from sflow.services.property_suites import random_operand, random_triple

TOL_ORACLE = 1e-8
TOL_QUAD = 1e-6


def diag_triple():
    D = np.diag([-2.0, -1.0, 0.0, 1.0, 3.0])
    return SpectralTripleRep(D=D, gens={}, weights=nk.TraceWeights([1, 1, 0.5, 0.5, 2]), label="diag")


def rel_diff(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


@pytest.mark.parametrize("mu, beta, n, expected", [
    (2.0, 1.5, 1, 2 ** -1.5),
    (2.0, 1.5, 2, -1.5 * 2 ** -2.5),
    (4.0, 1.0, 3, 4.0 ** -3),
    (5.0, 2.5 + 1j, 2, -(2.5 + 1j) * 5.0 ** (-3.5 - 1j)),
])
def test_scalar_cauchy_oracle(mu, beta, n, expected):
    assert abs(rv.scalar_cauchy_oracle(mu, beta, n) - expected) <= TOL_ORACLE


def test_scalar_cauchy_oracle_guards():
    with pytest.raises(ParameterRangeError):
        rv.scalar_cauchy_oracle(0.5, 1.5, 1)
    with pytest.raises(ParameterRangeError):
        rv.scalar_cauchy_oracle(2.0, 1.5, 0)


@pytest.mark.parametrize("mu, m, beta, expected", [
    (0.0, 1, 2.0, 0.5),
    (3.0, 3, 4.0, math.gamma(2) * math.gamma(2) / (2 * math.gamma(4)) * 10.0 ** -2),
    (1.0, 2, 2.5, math.gamma(1.5) * math.gamma(1) / (2 * math.gamma(2.5)) * 2.0 ** -1),
])
def test_scalar_laplace_oracle(mu, m, beta, expected):
    assert abs(rv.scalar_laplace_oracle(mu, m, beta) - expected) <= TOL_ORACLE


def test_laplace_closed_form_arctan():
    assert rv.laplace_closed_form(0.0, 0, 1.0) == pytest.approx(math.pi / 2, rel=1e-12)


def test_scalar_laplace_oracle_guard():
    with pytest.raises(ParameterRangeError):
        rv.scalar_laplace_oracle(0.0, 1, 1.0)


def test_expectation_single_pole():
    t = SpectralTripleRep(D=np.zeros((1, 1)), gens={}, weights=nk.TraceWeights([1.0]))
    params = rv.ExpectationParams(m=0, s=0.0, r=1.5, p_eff=1.0)
    assert abs(rv.expectation(t, [np.eye(1)], params) - 1.0) <= TOL_ORACLE


def test_expectation_zero_operand():
    t = diag_triple()
    params = rv.ExpectationParams(m=1, s=0.3, r=1.0, p_eff=1.0)
    assert rv.expectation(t, [np.zeros((5, 5)), np.eye(5)], params) == 0


@pytest.mark.parametrize("m, s", [(0, 0.0), (1, 0.5), (2, 1.5)])
def test_expectation_commuting_closed_form(rng, m, s):
    t = diag_triple()
    ops = [np.diag(rng.standard_normal(5) + 1j * rng.standard_normal(5)) for _ in range(m + 1)]
    params = rv.ExpectationParams(m=m, s=s, r=1.0 + 0.5j, p_eff=1.0)
    value = rv.expectation(t, ops, params)
    closed = rv.commuting_expectation(t, ops, params)
    assert rel_diff(value, closed) <= TOL_ORACLE


def test_expectation_params_validation():
    with pytest.raises(ParameterRangeError):
        rv.ExpectationParams(m=-1, s=0.0, r=1.0, p_eff=1.0)
    with pytest.raises(ParameterRangeError):
        rv.ExpectationParams(m=0, s=-1.0, r=1.0, p_eff=1.0)
    with pytest.raises(ParameterRangeError):
        rv.expectation(diag_triple(), [np.eye(5)], rv.ExpectationParams(m=1, s=0.0, r=1.0, p_eff=1.0))


def test_phi_vanishes_on_identities():
    t = circle_triple(4, "circulant")
    one = np.eye(t.dimension)
    assert rv.phi_r(t, 1, 1.0, [one, one]) == 0


def test_phi_linear_in_first_argument(rng):
    t = circle_triple(4)
    a0, a1 = random_operand(rng, 9), random_operand(rng, 9)
    base = rv.phi_r(t, 1, 1.0, [a0, a1])
    doubled = rv.phi_r(t, 1, 1.0, [2 * a0, a1])
    assert abs(base) > 0
    assert abs(doubled - 2 * base) <= 1e-9 * abs(base)


def test_phi_guards():
    t = circle_triple(2, "circulant")
    one = np.eye(t.dimension)
    with pytest.raises(ParameterRangeError):
        rv.phi_r(t, 2, 1.0, [one, one, one])
    with pytest.raises(ParameterRangeError):
        rv.phi_r(t, 1, -0.5, [one, one])
    with pytest.raises(ParameterRangeError):
        rv.phi_r(t, 1, 1.0, [one])


def test_phi_s_methods_agree(rng):
    t = circle_triple(3)
    args = [random_operand(rng, 7), random_operand(rng, 7)]
    laplace = rv.phi_r(t, 1, 1.5, args, method="laplace")
    nested = rv.phi_r(t, 1, 1.5, args, method="quadrature")
    assert rel_diff(laplace, nested) <= 1e-5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cocycle_identity(seed):
    rng = np.random.default_rng(seed)
    t = random_triple(rng, 4, 3.0)
    a = [random_operand(rng, 4) for _ in range(3)]
    b_part = b_cochain(rv.phi_cochain(t, 1, 2.0, p_eff=3.0))(*a)
    B_part = B_cochain(rv.phi_cochain(t, 3, 2.0, p_eff=3.0))(*a)
    scale = max(abs(b_part), abs(B_part))
    assert abs(b_part + B_part) <= 1e-7 * scale
    assert abs(B_cochain(rv.phi_cochain(t, 1, 2.0, p_eff=3.0))(a[0])) <= 1e-9


def test_cocycle_defect_on_identities():
    t = random_triple(np.random.default_rng(4), 4, 3.0)
    one = np.eye(4)
    assert abs(rv.cocycle_defect(t, 1, 2.0, [one, one, one], p_eff=3.0)) <= 1e-12


@pytest.mark.parametrize("s, lam, M", [
    (2.0, complex(0.25, 3.0), 5),
    (0.7, complex(0.25, -1.0), 0),
    (1.0, complex(0.25, 10.0), 3),
])
def test_resolvent_expansion(s, lam, M):
    dt = double_up(circle_triple(16), "u")
    n = dt.dimension
    Dt = dt.dense("Dt")
    RT = np.linalg.inv(lam * np.eye(n) - (1 + s * s) * np.eye(n) - Dt @ Dt - s * dt.dense("anti"))
    assert rv.resolvent_expansion_check(dt, s, lam, M) <= 1e-12 * nk.op_norm(RT)


def test_resolvent_expansion_at_zero_s():
    dt = double_up(circle_triple(4, "circulant"), "u")
    assert rv.resolvent_expansion_check(dt, 0.0, complex(0.25, 1.0), 2) == 0


def test_s_exponent_shift():
    t = circle_triple(8)
    u = t.generator("u")
    ops = [u.conj().T, t.commutator(u)]
    lhs, rhs = rv.s_exponent_shift(t, ops, 1, 1, 3.0)
    assert rel_diff(lhs, rhs) <= TOL_QUAD
    zero = rv.s_exponent_shift(t, [np.zeros_like(u), u], 1, 1, 3.0)
    assert zero == (0, 0)


def test_s_exponent_shift_commuting_scalar():
    t = diag_triple()
    lhs, rhs = rv.s_exponent_shift(t, [np.eye(5)], 0, 2, 2.0)
    assert rel_diff(lhs, rhs) <= TOL_QUAD


@pytest.mark.parametrize("j", [1, 2])
def test_commutator_identity(rng, j):
    t = random_triple(rng, 4, 3.0)
    ops = [random_operand(rng, 4) for _ in range(3)]
    params = rv.ExpectationParams(m=2, s=0.8, r=1.0, p_eff=3.0)
    lhs, rhs = rv.commutator_identity(t, ops, j, params)
    assert rel_diff(lhs, rhs) <= TOL_ORACLE / 10


@pytest.mark.parametrize("m, k", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_cyclicity(rng, m, k):
    t = random_triple(rng, 4, 3.0)
    ops = [random_operand(rng, 4) for _ in range(m + 1)]
    a, b = rv.cyclicity_check(t, ops, k, 1.0)
    assert rel_diff(a, b) <= TOL_QUAD


@pytest.mark.parametrize("k", [0, 2])
def test_even_doubled_words_vanish(k):
    dt = double_up(circle_triple(3, "circulant"), "u")
    assert abs(rv.doubled_expectation(dt, k, 0.5, 1.0, 1.0)) <= 1e-10
