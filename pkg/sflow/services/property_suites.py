"""Seeded invariant suites for the cyclic, rewriting, resolvent and identity layers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from ..domain import numkernel as nk
from ..domain.constants import c_beta, gamma_fn, gamma_quotient_expansion
from ..domain.cyclic import (
    B_chain, B_cochain, Chain, CyclicError, TensorTerm, b_chain, b_cochain, boundary_witness,
)
from ..domain.ncexpand import (
    coefficient_table, expand_to_depth, numerical_instantiation, power_coefficients, resolvent_word,
    verify_binomial_lemma,
)
from ..domain.triples import SpectralTripleRep, circle_triple, double_up
from ..errors import SflowError
from . import flow, resolvent
from .experiment import EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE
from .report_formatter import write_suite_report

logger = logging.getLogger(__name__)

SUITES = ("cyclic", "ncexpand", "resolvent", "identities")


class UnknownSuiteError(SflowError, ValueError):
    """Raised for a suite name outside SUITES."""


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value)) and self.value <= self.threshold

    def to_json(self) -> Dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed, "detail": self.detail}


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def random_int_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    """Small integer entries, so chain identities hold in exact float arithmetic."""
    return (rng.integers(-2, 3, (n, n)) + 1j * rng.integers(-2, 3, (n, n))).astype(complex)


def random_chain(rng: np.random.Generator, n: int, max_degree: int, terms: int = 3) -> Chain:
    out = []
    for _ in range(terms):
        m = int(rng.integers(0, max_degree + 1))
        coeff = Fraction(int(rng.integers(1, 6)) * int(rng.choice([-1, 1])), int(rng.integers(1, 4)))
        out.append(TensorTerm(coeff, tuple(random_int_matrix(rng, n) for _ in range(m + 1))))
    return Chain(out)


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diagonal(R) / np.abs(np.diagonal(R)))


def random_hermitian(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (Z + Z.conj().T)


def random_triple(rng: np.random.Generator, n: int = 4, p: float = 3.0) -> SpectralTripleRep:
    return SpectralTripleRep(D=random_hermitian(rng, n, 2.0), gens={},
                             weights=nk.TraceWeights.uniform(n), p=p, label=f"random-{n}")


def random_operand(rng: np.random.Generator, n: int) -> np.ndarray:
    return 0.5 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def cyclic_suite(rng: np.random.Generator, chains: int = 50, max_degree: int = 6,
                 witness_degree: int = 5, unitaries: int = 5) -> List[Check]:
    checks = []
    for i in range(chains):
        c = random_chain(rng, 2, max_degree)
        bc, Bc = b_chain(c), B_chain(c)
        for name, value in (("b^2", b_chain(bc)), ("B^2", B_chain(Bc)), ("bB+Bb", b_chain(Bc) + B_chain(bc))):
            checks.append(Check(f"{name} chain {i}", 0.0 if value.is_zero() else float(len(value)), 0.0))
    for i in range(unitaries):
        u = random_unitary(rng, 3)
        try:
            boundary_witness(u, witness_degree)
            checks.append(Check(f"witness unitary {i}", 0.0, 0.0))
        except CyclicError as exc:
            checks.append(Check(f"witness unitary {i}", 1.0, 0.0, str(exc)))
    return checks


def ncexpand_suite(rng: np.random.Generator, m_max: int = 3, k_max: int = 4, instances: int = 20) -> List[Check]:
    checks = []
    table = coefficient_table(m_max, k_max)
    bad = [row for row in table if not row["match"]]
    checks.append(Check(f"collected coefficients = C(k) ({len(table)} rows)", float(len(bad)), 0.0,
                        "; ".join(f"m={r['m']} k={r['k']}: {r['coefficient']} vs {r['bigC']}" for r in bad[:5])))
    for n in range(1, 5):
        coeffs = power_coefficients(n, 4)
        wrong = sum(coeffs[j] != math.comb(n + j - 1, j) for j in range(5))
        checks.append(Check(f"R^{n} A binomials", float(wrong), 0.0))
        checks.append(Check(f"binomial sum identity n={n}",
                            float(sum(not verify_binomial_lemma(n, k) for k in range(5))), 0.0))
    dt = double_up(circle_triple(2, "circulant"), "u")
    n4 = dt.dimension
    for i in range(instances):
        m = int(rng.integers(1, m_max + 1))
        depth = int(rng.integers(0, 4))
        s = float(rng.uniform(0.1, 1.0))
        lam = complex(-1.0, float(rng.uniform(-3, 3)))
        operands = {j: random_operand(rng, n4) for j in range(1, m + 1)}
        word = resolvent_word(m)
        normal, remainder = expand_to_depth(m, depth)
        direct = numerical_instantiation(word, dt, s, lam, operands)
        expanded = numerical_instantiation(normal + remainder, dt, s, lam, operands)
        err = nk.op_norm(direct - expanded) / max(1e-300, nk.op_norm(direct))
        checks.append(Check(f"instantiation {i} (m={m}, M={depth})", err, 1e-10))
    return checks


def resolvent_suite(rng: np.random.Generator, triples: int = 10, p_eff: float = 3.0, r: float = 2.0) -> List[Check]:
    checks = []
    for i in range(triples):
        t = random_triple(rng, 4, p_eff)
        a = [random_operand(rng, 4) for _ in range(3)]
        phi1 = resolvent.phi_cochain(t, 1, r, p_eff=p_eff)
        phi3 = resolvent.phi_cochain(t, 3, r, p_eff=p_eff)
        b_part = b_cochain(phi1)(*a)
        B_part = B_cochain(phi3)(*a)
        scale = max(abs(b_part), abs(B_part), 1e-300)
        checks.append(Check(f"b phi_1 + B phi_3, triple {i}", abs(b_part + B_part) / scale, 1e-7))
        checks.append(Check(f"B phi_1, triple {i}", abs(B_cochain(phi1)(a[0])), 1e-9))
    for mu in (2.0, 5.0):
        for beta in (1.5, 2.5):
            for n in (1, 2, 3):
                try:
                    resolvent.scalar_cauchy_oracle(mu, beta, n)
                    checks.append(Check(f"Cauchy mu={mu} beta={beta} n={n}", 0.0, 1e-8))
                except resolvent.OracleDisagreementError as exc:
                    checks.append(Check(f"Cauchy mu={mu} beta={beta} n={n}", 1.0, 1e-8, str(exc)))
    for mu in (0.0, 3.0):
        for m in (0, 1, 3):
            beta = 4.0
            try:
                resolvent.scalar_laplace_oracle(mu, m, beta)
                checks.append(Check(f"Laplace mu={mu} m={m}", 0.0, 1e-8))
            except resolvent.OracleDisagreementError as exc:
                checks.append(Check(f"Laplace mu={mu} m={m}", 1.0, 1e-8, str(exc)))
    return checks


def _even_perturbation(dt, rng: np.random.Generator, scale: float) -> np.ndarray:
    G = dt.dense("gamma")
    Y = random_hermitian(rng, dt.dimension, scale)
    return 0.5 * (Y + G @ Y @ G)


def identities_suite(rng: np.random.Generator) -> List[Check]:
    checks = []
    checks.append(Check("Gamma(1/2) = sqrt(pi)", abs(gamma_fn(0.5) - math.sqrt(math.pi)), 1e-10))
    for beta in (1.0, 1.25, 2.5, 4.0):
        # x = tan(theta)
        quad = nk.gauss_kronrod(lambda th, b=beta: np.cos(th) ** (2 * b - 2), -math.pi / 2, math.pi / 2,
                                rel_tol=1e-13, abs_tol=1e-14)
        checks.append(Check(f"C_beta beta={beta}", abs(complex(quad.value).real - c_beta(beta)), 1e-9))
    for h in range(4):
        lhs, rhs = gamma_quotient_expansion(1.0, h, 0.3 + 0.2j)
        checks.append(Check(f"Gamma quotient h={h}", abs(lhs - rhs), 1e-10 * max(1.0, abs(lhs))))
    dt = double_up(circle_triple(3, "circulant"), "u")
    for name, value in dt.relation_defects().items():
        checks.append(Check(f"doubled relation {name}", value, 1e-12))
    for s in (0.0, 0.5, 2.0):
        checks.append(Check(f"rho symmetry s={s}", flow.rho_symmetry_check(dt, s, 3.0), 1e-10))
    X0 = np.zeros((dt.dimension, dt.dimension), dtype=complex)
    X1 = _even_perturbation(dt, rng, 0.3)
    mid_a = _even_perturbation(dt, rng, 0.3)
    mid_b = _even_perturbation(dt, rng, 0.3)
    checks.append(Check("path independence", flow.path_independence_check(dt, X0, X1, [mid_a], [mid_b], 3.0), 1e-6))
    for M in (0, 2, 4):
        checks.append(Check(f"resolvent expansion M={M}",
                            resolvent.resolvent_expansion_check(dt, 0.7, complex(-1.0, 2.0), M), 1e-10))
    return checks


SUITE_RUNNERS: Dict[str, Callable[[np.random.Generator], List[Check]]] = {
    "cyclic": cyclic_suite,
    "ncexpand": ncexpand_suite,
    "resolvent": resolvent_suite,
    "identities": identities_suite,
}


def run_suite(name: str, seed: int) -> List[Check]:
    if name not in SUITE_RUNNERS:
        raise UnknownSuiteError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    rng = np.random.default_rng(seed)
    logger.info(f"running {name} suite with seed {seed}")
    checks = SUITE_RUNNERS[name](rng)
    failed = [c for c in checks if not c.passed]
    for c in failed:
        logger.warning(f"{name}: {c.name} failed ({c.value:.3e} > {c.threshold:g}) {c.detail}")
    logger.info(f"{name} suite: {len(checks) - len(failed)}/{len(checks)} checks passed")
    return checks


def run_property_suite(name: str, seed: int, out: Optional[Union[str, Path]] = None) -> int:
    """Run a suite, write its JSON report and return the process exit code."""
    try:
        checks = run_suite(name, seed)
    except UnknownSuiteError as exc:
        logger.error(str(exc))
        return EXIT_USAGE
    except SflowError as exc:
        logger.error(f"{name} suite aborted: {exc}")
        return EXIT_USAGE
    if out:
        report = [c.to_json() for c in checks]
        if name == "ncexpand":
            report.append({"name": "coefficient table", "passed": True, "table": coefficient_table(3, 4)})
        write_suite_report(report, out, name, seed)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_TOLERANCE
