from dataclasses import replace

import numpy as np
import pytest

from sflow.config.settings import settings
from sflow.domain import numkernel as nk
from sflow.domain.constants import ParameterRangeError, c_beta
from sflow.domain.triples import (
    NonUnitaryError, SpectralTripleRep, circle_triple, double_up, generator_power, power_name,
    weighted_sum_triple,
)
from sflow.services import flow
from sflow.services.flow import CrossingNotStableError, FlowMethod, FlowPath, FlowReport, KernelPrecisionError
from sflow.services.property_suites import random_hermitian, random_unitary

TOL_FLOW = 1e-2
WINDINGS = range(-3, 4)


def winding(N, w, mode="plain"):
    """Circle triple carrying u^w, and the name of that generator."""
    return generator_power(circle_triple(N, mode), "u", w), power_name("u", w)


def crossing(t, name):
    return flow.crossing_flow(flow.linear_flow_path(t, name)).value


def test_flow_report_validation():
    with pytest.raises(ValueError):
        FlowReport(FlowMethod.CROSSING, 1.0, -1e-3)
    assert FlowReport(FlowMethod.DOUBLED, 1.0).to_json()["method"] == "doubled"


def test_flow_path_validation():
    D0, D1 = np.diag([-1.0, 1.0]), np.diag([1.0, 1.0])
    with pytest.raises(ParameterRangeError):
        FlowPath(D0, D1, steps=1)
    with pytest.raises(ParameterRangeError):
        FlowPath(D0, D1, sampler=lambda t: D0)
    path = FlowPath(D0, D1, sampler=lambda t: (1 - t) * D0 + t * D1)
    np.testing.assert_allclose(path.sample(0.5), np.diag([0.0, 1.0]))


def test_crossing_on_small_paths():
    assert flow.crossing_flow(FlowPath(np.diag([-1.0, 1.0]), np.diag([1.0, 1.0]))).value == 1
    assert flow.crossing_flow(FlowPath(np.diag([1.0, 1.0]), np.diag([-1.0, -2.0]))).value == -2
    D0 = np.array([[-1.0, 0.3], [0.3, 1.0]])
    D1 = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert flow.crossing_flow(FlowPath(D0, D1)).value == pytest.approx(1, abs=1e-9)
    weights = nk.TraceWeights([0.25, 1.0])
    assert flow.crossing_flow(FlowPath(np.diag([-1.0, 1.0]), np.diag([1.0, 1.0])), weights).value == 0.25


def test_crossing_without_refinements(monkeypatch):
    monkeypatch.setattr(settings, "crossing_max_refinements", 0)
    with pytest.raises(CrossingNotStableError) as info:
        flow.crossing_flow(FlowPath(np.diag([-1.0, 1.0]), np.diag([1.0, 1.0])))
    assert info.value.previous == info.value.current == 1


def test_constant_path_has_no_flow():
    t = circle_triple(16).with_generator("one", np.eye(33))
    assert crossing(t, "one") == 0


@pytest.mark.parametrize("w", WINDINGS)
def test_crossing_counts_winding(w):
    t, name = winding(64, w)
    report = flow.crossing_flow(flow.linear_flow_path(t, name), edge_margin=8)
    assert report.value == w
    assert report.method is FlowMethod.CROSSING


def test_crossing_weighted_sum():
    t = weighted_sum_triple(circle_triple(32), circle_triple(32), 1.0, 0.5)
    assert crossing(t, "u") == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("w1, w2", [(1, 1), (2, -3), (-1, -2)])
def test_crossing_additive_in_winding(w1, w2):
    values = [crossing(*winding(32, w)) for w in (w1, w2, w1 + w2)]
    assert values[2] == values[0] + values[1]


@pytest.mark.parametrize("w", [1, 2, 3])
def test_crossing_antisymmetric(w):
    assert crossing(*winding(32, w)) == -crossing(*winding(32, -w))


@pytest.mark.parametrize("w", WINDINGS)
def test_index_pup(w):
    t, name = winding(64, w)
    report = flow.index_pup(t, name, edge_margin=8)
    assert report.value == pytest.approx(w, abs=1e-9)
    assert report.diagnostics["index"] == pytest.approx(-w, abs=1e-9)


def test_index_pup_identity():
    t = circle_triple(8).with_generator("one", np.eye(17))
    assert flow.index_pup(t, "one").value == pytest.approx(0, abs=1e-12)


def test_index_pup_dead_zone():
    t = SpectralTripleRep(D=np.diag([0.0, 1.0]), gens={"u": np.diag([1.0, 1e-6])},
                          weights=nk.TraceWeights.uniform(2))
    with pytest.raises(KernelPrecisionError):
        flow.index_pup(t, "u")


@pytest.mark.parametrize("w", [-2, 0, 1, 3])
def test_cp_integral_opposite_orientation(w):
    t, name = winding(64, w)
    report = flow.cp_integral_flow(t, name, 3.0)
    assert abs(report.value + w) <= TOL_FLOW
    assert report.error_estimate >= 0


def test_cp_integral_scale_invariance():
    t, name = winding(64, 1)
    scaled = replace(t, D=2 * t.D)
    assert abs(flow.cp_integral_flow(scaled, name, 3.0).value - flow.cp_integral_flow(t, name, 3.0).value) <= TOL_FLOW


def test_cp_integral_guards():
    t = circle_triple(8)
    with pytest.raises(ParameterRangeError):
        flow.cp_integral_flow(t, "u", 1.0)
    with pytest.raises(ParameterRangeError):
        flow.cp_integral_flow_r(t, "u", 0.0)
    assert flow.cp_integral_flow_r(t, "u", 1.0).diagnostics["n"] == 3.0


def test_cp_integral_rejects_non_unitary():
    t = circle_triple(8).with_generator("a", 2 * np.eye(17))
    with pytest.raises(NonUnitaryError):
        flow.cp_integral_flow(t, "a", 3.0)


@pytest.mark.parametrize("w", [-3, -1, 0, 2])
def test_doubled_flow(w):
    t, name = winding(64, w)
    report = flow.doubled_flow(double_up(t, name), r=1.0)
    assert abs(report.value - w) <= TOL_FLOW


def test_doubled_flow_identity():
    t = circle_triple(8).with_generator("one", np.eye(17))
    assert abs(flow.doubled_flow(double_up(t, "one")).value) <= 1e-12


def test_doubled_flow_r_independence():
    t, name = winding(64, 1)
    dt = double_up(t, name)
    low = flow.doubled_flow(dt, r=0.75).value
    high = flow.doubled_flow(dt, r=1.5).value
    assert abs(low - high) <= 2e-2


def test_doubled_flow_rejects_nonpositive_r():
    dt = double_up(circle_triple(4, "circulant"), "u")
    with pytest.raises(ParameterRangeError):
        flow.doubled_flow(dt, r=0.0)


@pytest.mark.parametrize("w", WINDINGS)
def test_engine_agreement_at_large_cutoff(w):
    t, name = winding(256, w)
    assert crossing(t, name) == w
    assert flow.index_pup(t, name).value == pytest.approx(w, abs=1e-9)
    assert abs(flow.cp_integral_flow(t, name, 3.0).value + w) <= TOL_FLOW
    assert abs(flow.doubled_flow(double_up(t, name)).value - w) <= TOL_FLOW


def test_factor_two_identity():
    t, name = winding(64, 1)
    dt = double_up(t, name)
    value = flow.factor_two_integral(dt, 3.0)
    assert abs(value / (2 * c_beta(1.5)) - crossing(t, name)) <= 2e-2


@pytest.mark.parametrize("s", [0.0, 1.0, 2.5])
def test_rho_symmetry_on_circle(s):
    dt = double_up(circle_triple(8), "u")
    assert flow.rho_symmetry_check(dt, s, 3.0) <= 1e-10


def test_rho_symmetry_on_random_base(rng):
    D = random_hermitian(rng, 3, 2.0)
    t = SpectralTripleRep(D=D, gens={"u": random_unitary(rng, 3)}, weights=nk.TraceWeights.uniform(3))
    assert flow.rho_symmetry_check(double_up(t, "u"), 0.5, 3.0) <= 1e-10


def even_perturbation(dt, rng, scale=0.3):
    G = dt.dense("gamma")
    Y = random_hermitian(rng, dt.dimension, scale)
    return 0.5 * (Y + G @ Y @ G)


@pytest.fixture
def random_doubled(rng):
    D = random_hermitian(rng, 4, 2.0)
    t = SpectralTripleRep(D=D, gens={"u": random_unitary(rng, 4)}, weights=nk.TraceWeights.uniform(4))
    return double_up(t, "u")


def test_path_independence(random_doubled, rng):
    dt = random_doubled
    X0, X1, mid = (even_perturbation(dt, rng) for _ in range(3))
    assert flow.path_independence_check(dt, X0, X1, [], [mid], 3.0) <= 1e-6
    assert flow.path_independence_check(dt, X0, X1, [mid], [mid], 3.0) == 0


def test_path_integral_orientation_and_potential(random_doubled, rng):
    dt = random_doubled
    X0, X1 = even_perturbation(dt, rng), even_perturbation(dt, rng)
    forward = flow.path_integral(dt, [X0, X1], 3.0)
    backward = flow.path_integral(dt, [X1, X0], 3.0)
    assert abs(forward + backward) <= 1e-6
    potential = flow.one_potential(dt, X1, 3.0) - flow.one_potential(dt, X0, 3.0)
    assert abs(forward - potential) <= 1e-8


def test_path_integral_rejects_odd_perturbation(random_doubled, rng):
    dt = random_doubled
    G = dt.dense("gamma")
    Y = random_hermitian(rng, dt.dimension, 0.3)
    odd = 0.5 * (Y - G @ Y @ G)
    with pytest.raises(ParameterRangeError):
        flow.path_integral(dt, [np.zeros_like(odd), odd], 3.0)
