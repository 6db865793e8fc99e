import math

import numpy as np
import pytest

from sflow.domain.constants import ParameterRangeError
from sflow.domain.cyclic import B_cochain, CochainEval, b_cochain
from sflow.domain.triples import circle_triple, double_up, generator_power, power_name, weighted_sum_triple
from sflow.services import zeta
from sflow.services.flow import doubled_flow
from sflow.services.property_suites import random_operand, random_triple, random_unitary
from sflow.services.zeta import CIRCLE, FINITE, ZetaContinuationError, ZetaSeries

TOL_ZETA = 1e-9
TOL_RES = 1e-6
TOL_FLOW = 1e-4


def winding(N, w):
    return generator_power(circle_triple(N), "u", w), power_name("u", w)


def direct_sum(sigma, j=0, cutoff=100_000):
    n = np.arange(-cutoff, cutoff + 1, dtype=float)
    return float(np.sum(n ** j * (1 + n * n) ** (-sigma)))


@pytest.mark.parametrize("s, expected", [(2, math.pi ** 2 / 6), (0, -0.5), (-1, -1 / 12)])
def test_riemann_zeta(s, expected):
    assert abs(zeta.riemann_zeta(s) - expected) <= 1e-12


def test_riemann_zeta_pole():
    with pytest.raises(ParameterRangeError):
        zeta.riemann_zeta(1)


def test_full_line_sum_matches_partial_sum():
    assert abs(zeta.full_line_sum(2.0) - direct_sum(2.0)) <= TOL_ZETA


def test_moment_sums():
    assert zeta.moment_sum(3, 2.0) == 0
    assert abs(zeta.moment_sum(2, 3.0) - direct_sum(3.0, j=2)) <= TOL_ZETA


def test_full_line_sum_residue_at_half():
    laurent = zeta.res_extract(lambda z: zeta.full_line_sum(0.5 + z), 0.0, 0)
    assert abs(laurent.residues[0] - 1) <= TOL_RES


def test_binomial_reduction_too_short():
    with pytest.raises(ZetaContinuationError) as info:
        zeta.full_line_sum(0.3, k_terms=0)
    assert info.value.required_terms > 1


def test_circle_zeta_series():
    assert zeta.circle_zeta(ZetaSeries(CIRCLE, 0.5), 2.0) == 0
    c = ZetaSeries(CIRCLE, 0.0, 1.0, head={0: 2.0}, tail=(1.0,))
    assert abs(zeta.circle_zeta(c, 2.0) - (direct_sum(2.0) + 2)) <= TOL_ZETA
    scaled = ZetaSeries(CIRCLE, 1.0, 0.5, tail=(1.0,))
    assert abs(scaled.value(1.0) - 0.5 * direct_sum(2.0)) <= TOL_ZETA


def test_finite_series_is_a_plain_sum():
    c = ZetaSeries(FINITE, 0.5, finite_coeffs=(1.0, 2.0), finite_bases=(0.0, 1.0))
    assert abs(zeta.circle_zeta(c, 0.5) - 2.0) <= 1e-14
    with pytest.raises(ValueError):
        ZetaSeries("banded", 0.5)


@pytest.mark.parametrize("f, j_max, expected", [
    (lambda z: 1 / z, 2, [1, 0, 0]),
    (lambda z: 3 / z ** 2, 1, [0, 3]),
])
def test_res_extract_poles(f, j_max, expected):
    laurent = zeta.res_extract(f, 0.0, j_max)
    for j, value in enumerate(expected):
        assert abs(laurent.residues[j] - value) <= 1e-10


def test_res_extract_guard_and_json():
    with pytest.raises(ParameterRangeError):
        zeta.res_extract(lambda z: 1 / z, 0.0, -1)
    data = zeta.laurent_to_json(zeta.res_extract(lambda z: 1 / z + 2, 0.0, 1))
    assert set(data) == {"criticalPoint", "residues", "regularPart0", "radius", "nodes"}
    assert data["residues"]["0"][0] == pytest.approx(1, abs=1e-10)
    assert data["regularPart0"][0] == pytest.approx(2, abs=1e-10)


def test_compile_series_kinds(rng):
    t, name = winding(16, 1)
    u = t.generator(name)
    series = zeta.compile_series(t, [u.conj().T, t.commutator(u)], 0.5)
    assert [c.kind for c in series] == [CIRCLE]
    assert series[0].tail[0] == pytest.approx(1, abs=1e-9)
    assert not series[0].head

    dense = zeta.compile_series(t, [random_operand(rng, t.dimension)], 0.5)
    assert [c.kind for c in dense] == [FINITE]

    finite = zeta.compile_series(random_triple(rng), [np.eye(4)], 0.5)
    assert [c.kind for c in finite] == [FINITE]


def test_compile_series_needs_a_tail_window():
    t = circle_triple(4)
    with pytest.raises(ZetaContinuationError):
        zeta.compile_series(t, [np.eye(t.dimension)], 0.5)


def test_residue_phi_on_circle():
    t, name = winding(32, 2)
    u = t.generator(name)
    value = zeta.residue_phi(t, 1, [u.conj().T, u])
    assert abs(value - zeta.sqrt_2pi_i() * 2) <= TOL_FLOW


def test_residue_phi_trivial_cases(rng):
    t = circle_triple(16)
    one = np.eye(t.dimension)
    assert zeta.residue_phi(t, 1, [one, one]) == 0
    finite = random_triple(rng)
    assert zeta.residue_phi(finite, 1, [random_operand(rng, 4), random_operand(rng, 4)]) == 0
    with pytest.raises(ParameterRangeError):
        zeta.residue_phi(t, 2, [one, one, one])
    with pytest.raises(ParameterRangeError):
        zeta.residue_phi(t, 1, [one])


@pytest.mark.parametrize("w", range(-3, 4))
def test_residue_flows_count_winding(w):
    t, name = winding(64, w)
    cocycle = zeta.sf_residue_cocycle(t, name)
    summed = zeta.sf_zeta_sum_residue(t, name)
    assert abs(cocycle - w) <= TOL_FLOW
    assert abs(summed - cocycle) <= 1e-8
    assert abs(zeta.low_dim_flow(t, name) - w) <= TOL_FLOW


def test_tau_functionals_at_shifted_critical_point():
    t, name = winding(64, 1)
    u = t.generator(name)
    laurent = zeta.tau_functionals(t, [u.conj().T, t.commutator(u)], 0.5, 1, p_eff=3.0)
    assert laurent.critical_point == -1
    assert abs(laurent.residues[0] - 1) <= TOL_RES
    assert abs(laurent.residues[1]) <= TOL_RES


@pytest.mark.parametrize("w", [-2, 1, 2])
def test_residue_flows_with_p_three(w):
    t, name = winding(64, w)
    cocycle = zeta.sf_residue_cocycle(t, name, p_eff=3.0)
    assert abs(cocycle - w) <= TOL_FLOW
    assert abs(zeta.sf_zeta_sum_residue(t, name, p_eff=3.0) - cocycle) <= 1e-8


def test_residue_cocycle_property_with_p_three():
    t, name = winding(64, 1)
    u = t.generator(name)
    us = u.conj().T
    phi1 = CochainEval(1, lambda *a: zeta.residue_phi(t, 1, a, p_eff=3.0))
    phi3 = CochainEval(3, lambda *a: zeta.residue_phi(t, 3, a, p_eff=3.0))
    for args in [(us, us, u @ u), (u, us, u)]:
        assert abs(b_cochain(phi1)(*args) + B_cochain(phi3)(*args)) <= 1e-6


def test_residue_flow_weighted_sum():
    t = weighted_sum_triple(circle_triple(32), circle_triple(32), 1.0, 0.5)
    assert abs(zeta.sf_residue_cocycle(t, "u") - 1.5) <= TOL_FLOW
    assert abs(zeta.low_dim_flow(t, "u") - 1.5) <= TOL_FLOW


def test_residue_flow_of_identity():
    t = circle_triple(16).with_generator("one", np.eye(33))
    assert zeta.sf_residue_cocycle(t, "one") == 0
    assert zeta.sf_zeta_sum_residue(t, "one") == 0
    assert zeta.low_dim_flow(t, "one") == 0


def test_residue_flow_on_finite_triple(rng):
    t = random_triple(rng).with_generator("u", random_unitary(rng, 4))
    assert zeta.sf_residue_cocycle(t, "u") == 0
    assert zeta.sf_zeta_sum_residue(t, "u") == 0


def test_low_dim_flow_range():
    t = circle_triple(16)
    with pytest.raises(ParameterRangeError):
        zeta.low_dim_flow(t, "u", p_eff=2.0)


def test_residue_rescaling():
    t, name = winding(32, 1)
    halved, direct = zeta.residue_rescaling_check(t, name)
    assert abs(halved - direct) <= TOL_RES
    assert abs(direct - 1) <= TOL_FLOW


def test_zeta_sum_at_real_point():
    t, name = winding(64, 1)
    value = zeta.zeta_sum_at(t, name, 1.0)
    assert abs(value - zeta.full_line_sum(1.5).real) <= TOL_ZETA
    with pytest.raises(ParameterRangeError):
        zeta.zeta_sum_at(t, name, 0.5)


def test_zeta_sum_against_doubled_flow():
    # c_beta(3/2) = 2
    t, name = winding(64, 1)
    value = zeta.zeta_sum_at(t, name, 1.0)
    doubled = doubled_flow(double_up(t, name), r=1.0).value
    assert abs(value - 2 * doubled) <= 2.5e-2 * abs(value)


def test_term_table():
    t, name = winding(64, -2)
    rows = zeta.term_table(t, name)
    assert rows
    assert set(rows[0]) == {"m", "k", "j", "coefficient", "tau", "contribution"}
    total = sum(row["contribution"] for row in rows)
    assert abs(total - zeta.sf_residue_cocycle(t, name)) <= 1e-8


def test_critical_point():
    assert zeta.critical_point(1.0) == 0
    assert zeta.critical_point(3.0) == -1
