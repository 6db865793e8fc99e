"""Zeta functions of circle-type operators, residue extraction and the residue formulas for spectral flow."""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np

from ..config.settings import settings
from ..domain.constants import (
    MultiIndex, ParameterRangeError, alpha, multi_indices, n_cap, sigma_coeffs, sqrt_2pi_i,
)
from ..domain import numkernel as nk
from ..domain.cyclic import chern_terms
from ..domain.triples import SpectralTripleRep, iterated_comm
from ..errors import SflowError

logger = logging.getLogger(__name__)

CIRCLE = "circleDiagonal"
FINITE = "finiteMatrix"
FIT_TOL = 1e-9
MAX_TAIL_DEGREE = 8


class ZetaContinuationError(SflowError):
    """Raised when the binomial reduction needs more terms than configured."""

    def __init__(self, message: str, required_terms: int):
        self.required_terms = required_terms
        super().__init__(f"{message}; need about {required_terms} binomial terms")


class ResidueNotStableError(SflowError):
    """Raised when contour residues keep changing under node doubling."""


class NonRealFlowError(SflowError):
    """Raised when a spectral flow evaluates to a number with a sizeable imaginary part."""


@dataclass(frozen=True)
class ZetaSeries:
    """s -> scale * sum_n c_n (1+n^2)^-(offset+s).

    For circleDiagonal series c_n = P(n) + head[n] with P a polynomial (tail, low order first)
    and finitely many head corrections. For finiteMatrix series the sum runs over the
    eigenvalues in `finite_bases` with coefficients `finite_coeffs`.
    """
    kind: str
    offset: complex
    scale: complex = 1.0
    head: Dict[int, complex] = field(default_factory=dict)
    tail: Tuple[complex, ...] = ()
    finite_coeffs: Tuple[complex, ...] = ()
    finite_bases: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (CIRCLE, FINITE):
            raise ValueError(f"unknown zeta series kind {self.kind!r}")

    @property
    def is_zero(self) -> bool:
        if self.kind == FINITE:
            return not any(self.finite_coeffs)
        return self.scale == 0 or (not any(self.tail) and not any(self.head.values()))

    def value(self, s: complex, k_terms: Optional[int] = None) -> complex:
        return circle_zeta(self, s, k_terms)


@dataclass
class LaurentData:
    critical_point: complex
    residues: Dict[int, complex]
    regular_part0: complex
    radius: float = 0.0
    nodes: int = 0


# ---------------------------------------------------------------------------
# Riemann and Hurwitz zeta
# ---------------------------------------------------------------------------

def riemann_zeta(s: complex) -> complex:
    if s == 1:
        raise ParameterRangeError("the Riemann zeta function has a pole at s = 1")
    return complex(mpmath.zeta(s))


def _hurwitz_bound(x: float, a: float) -> float:
    """Upper bound for zeta(x, a) with x > 1 real."""
    if x <= 1:
        return math.inf
    return a ** (-x) * (1 + a / (x - 1))


def _positive_sum(sigma: complex, k_terms: int) -> complex:
    """sum_{n>=1} (1+n^2)^-sigma by sum_k binom(-sigma, k) zeta(2 sigma + 2k, n0 + 1)."""
    n0 = settings.zeta_head_terms
    tol = settings.zeta_tol
    n = np.arange(1, n0 + 1, dtype=float)
    total = complex(np.sum((1 + n * n) ** (-sigma)))
    a = n0 + 1
    binom = 1.0 + 0j
    k = 0
    while True:
        arg = 2 * sigma + 2 * k
        if abs(arg - 1) < 1e-14:
            raise ParameterRangeError(f"pole of the continued sum at sigma = {sigma}")
        if binom != 0:
            total += binom * complex(mpmath.zeta(arg, a))
        binom *= (-sigma - k) / (k + 1)
        k += 1
        bound = 2 * abs(binom) * _hurwitz_bound(2 * sigma.real + 2 * k, a)
        if bound <= tol * max(1.0, abs(total)):
            return total
        if k > k_terms:
            required = k
            b = binom
            while required < 10_000:
                b *= (-sigma - required) / (required + 1)
                required += 1
                if 2 * abs(b) * _hurwitz_bound(2 * sigma.real + 2 * required, a) <= tol * max(1.0, abs(total)):
                    break
            logger.error(f"binomial reduction at sigma={sigma} needs {required} terms, have {k_terms}")
            raise ZetaContinuationError(f"remainder {bound:.3e} above tolerance at sigma={sigma}", required)


def full_line_sum(sigma: complex, k_terms: Optional[int] = None) -> complex:
    """sum_{n in Z} (1+n^2)^-sigma, continued to the whole plane minus the poles at 1/2 - k."""
    k_terms = settings.zeta_binomial_terms if k_terms is None else k_terms
    return 1 + 2 * _positive_sum(complex(sigma), k_terms)


def moment_sum(j: int, sigma: complex, k_terms: Optional[int] = None) -> complex:
    """sum_{n in Z} n^j (1+n^2)^-sigma, using n^(2i) = sum_l binom(i,l) (-1)^(i-l) (1+n^2)^l."""
    if j % 2:
        return 0j
    i = j // 2
    return sum(math.comb(i, l) * (-1) ** (i - l) * full_line_sum(sigma - l, k_terms) for l in range(i + 1))


def circle_zeta(c: ZetaSeries, s: complex, k_terms: Optional[int] = None) -> complex:
    sigma = complex(c.offset) + complex(s)
    if c.kind == FINITE:
        coeffs = np.asarray(c.finite_coeffs, dtype=complex)
        bases = np.asarray(c.finite_bases, dtype=float)
        return complex(c.scale * np.sum(coeffs * (1 + bases * bases) ** (-sigma)))
    if c.is_zero:
        return 0j
    total = 0j
    for n, h in c.head.items():
        total += h * (1 + n * n) ** (-sigma)
    for j, coeff in enumerate(c.tail):
        if coeff != 0:
            total += coeff * moment_sum(j, sigma, k_terms)
    return complex(c.scale * total)


# ---------------------------------------------------------------------------
# Operators to series
# ---------------------------------------------------------------------------

def _product(ops: Sequence[np.ndarray], n: int) -> np.ndarray:
    out = np.eye(n, dtype=complex)
    for A in ops:
        out = out @ np.asarray(A, dtype=complex)
    return out


def _fit_tail(n: np.ndarray, c: np.ndarray) -> Optional[np.ndarray]:
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    for degree in range(min(MAX_TAIL_DEGREE, n.size - 2) + 1):
        coeffs = np.polynomial.polynomial.polyfit(n, c, degree)
        resid = c - np.polynomial.polynomial.polyval(n, coeffs)
        if float(np.max(np.abs(resid))) <= FIT_TOL * scale:
            coeffs[np.abs(coeffs) <= FIT_TOL * scale] = 0.0
            return coeffs
    return None


def _finite_series(t: SpectralTripleRep, B: np.ndarray, offset: complex) -> ZetaSeries:
    dec = nk.eigh(t.D)
    V = dec.eigenvectors
    Bd = np.einsum("ji,jk,ki->i", V.conj(), (t.weights.values[:, None] * B), V)
    return ZetaSeries(FINITE, offset, 1.0, finite_coeffs=tuple(Bd), finite_bases=tuple(dec.eigenvalues.real))


def _circle_series(t: SpectralTripleRep, B: np.ndarray, offset: complex) -> Optional[List[ZetaSeries]]:
    diag_d = np.diagonal(t.D)
    if np.max(np.abs(t.D - np.diag(diag_d)), initial=0.0) > 0:
        return None
    out = []
    for block in t.circle_blocks:
        N = block.cutoff
        n = np.arange(-N, N + 1)
        if np.max(np.abs(diag_d[block.start:block.stop] - n)) > 0:
            return None
        if block.weight == 0:
            continue
        inner, outer = N // 4, N // 2
        w = t.weights.values[block.start:block.stop] / block.weight
        c = w * np.diagonal(B)[block.start:block.stop]
        fit = (np.abs(n) > inner) & (np.abs(n) <= outer)
        if np.count_nonzero(fit) < 4:
            raise ZetaContinuationError(f"cutoff {N} too small to read a polynomial tail", 0)
        coeffs = _fit_tail(n[fit].astype(float), c[fit])
        if coeffs is None:
            return None
        head = {}
        core = np.abs(n) <= inner
        resid = c[core] - np.polynomial.polynomial.polyval(n[core].astype(float), coeffs)
        scale = max(1.0, float(np.max(np.abs(c))))
        for k, d in zip(n[core], resid):
            if abs(d) > FIT_TOL * scale:
                head[int(k)] = complex(d)
        out.append(ZetaSeries(CIRCLE, offset, block.weight, head, tuple(complex(x) for x in coeffs)))
    return out


def compile_series(t: SpectralTripleRep, ops: Sequence[np.ndarray], offset: complex) -> List[ZetaSeries]:
    """Series for z -> tau(A_0 ... A_m (1+D^2)^-(offset+z)); one circleDiagonal series per circle block."""
    B = _product(ops, t.dimension)
    if t.is_circle_type:
        series = _circle_series(t, B, offset)
        if series is not None:
            return series
        logger.warning(f"operator on {t.label!r} has no polynomial diagonal; treating its zeta function as entire")
    return [_finite_series(t, B, offset)]


def zeta_value(series: Sequence[ZetaSeries], s: complex) -> complex:
    return sum((circle_zeta(c, s) for c in series), 0j)


def _has_poles(series: Sequence[ZetaSeries]) -> bool:
    return any(c.kind == CIRCLE and not c.is_zero for c in series)


# ---------------------------------------------------------------------------
# Residues
# ---------------------------------------------------------------------------

def _ring(f: Callable[[complex], complex], z0: complex, radius: float, j_max: int) -> Tuple[Dict[int, complex], complex, int]:
    tol = settings.residue_tol
    n = 16
    theta = 2 * np.pi * np.arange(n) / n
    values = np.array([f(z0 + radius * cmath.exp(1j * th)) for th in theta], dtype=complex)
    previous = None
    while True:
        theta = 2 * np.pi * np.arange(n) / n
        w = radius * np.exp(1j * theta)
        residues = {j: complex(np.mean(values * w ** (j + 1))) for j in range(j_max + 1)}
        regular = complex(np.mean(values))
        current = np.array(list(residues.values()) + [regular])
        if previous is not None and float(np.max(np.abs(current - previous))) <= tol:
            return residues, regular, n
        if 2 * n > settings.residue_max_nodes:
            raise ResidueNotStableError(
                f"residues at {z0} on radius {radius:g} still moving at {n} nodes")
        previous = current
        mid = 2 * np.pi * (np.arange(n) + 0.5) / n
        new = np.array([f(z0 + radius * cmath.exp(1j * th)) for th in mid], dtype=complex)
        merged = np.empty(2 * n, dtype=complex)
        merged[0::2] = values
        merged[1::2] = new
        values = merged
        n *= 2


def res_extract(f: Callable[[complex], complex], z0: complex, j_max: int,
                radius: Optional[float] = None) -> LaurentData:
    """tau_j = (1/2 pi i) contour integral of f(z) (z - z0)^j on |z - z0| = radius, trapezoidal rule."""
    if j_max < 0:
        raise ParameterRangeError(f"jMax must be >= 0, got {j_max}")
    radius = settings.residue_radius if radius is None else radius
    for attempt in range(3):
        try:
            residues, regular, nodes = _ring(f, z0, radius, j_max)
            return LaurentData(complex(z0), residues, regular, radius, nodes)
        except ResidueNotStableError as exc:
            logger.warning(f"{exc}; halving the radius")
            radius /= 2
    logger.error(f"residue extraction at {z0} failed on every radius")
    raise ResidueNotStableError(f"residues at {z0} did not stabilise; the singularity may be essential")


def laurent_to_json(data: LaurentData) -> Dict:
    return {
        "criticalPoint": [data.critical_point.real, data.critical_point.imag],
        "residues": {str(j): [v.real, v.imag] for j, v in sorted(data.residues.items())},
        "regularPart0": [data.regular_part0.real, data.regular_part0.imag],
        "radius": data.radius,
        "nodes": data.nodes,
    }


def critical_point(p: float) -> float:
    return (1 - p) / 2


def tau_functionals(t: SpectralTripleRep, ops: Sequence[np.ndarray], offset: complex, j_max: int,
                    p_eff: Optional[float] = None) -> LaurentData:
    """tau_j = res_{z=c} (z - c)^j zeta_b(z - c) of b = A_0...A_m (1+D^2)^-offset, c = (1-p)/2."""
    c = critical_point(t.p if p_eff is None else p_eff)
    series = compile_series(t, ops, offset)
    if not _has_poles(series):
        return LaurentData(complex(c), {j: 0j for j in range(j_max + 1)}, zeta_value(series, 0.0))
    return res_extract(lambda z: zeta_value(series, z - c), c, j_max)


# ---------------------------------------------------------------------------
# Residue cocycle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Term:
    m: int
    k: MultiIndex
    h: int
    coeff: float
    series: Tuple[ZetaSeries, ...]


def _terms(t: SpectralTripleRep, m: int, args: Sequence[np.ndarray], p_eff: float) -> List[_Term]:
    top = 2 * n_cap(p_eff) - 1 - m
    if top < 0:
        return []
    a0 = np.asarray(args[0], dtype=complex)
    comms = [t.commutator(np.asarray(a, dtype=complex)) for a in args[1:]]
    out = []
    for k in multi_indices(m, top):
        ops = [a0] + [iterated_comm(t, c, kj) for c, kj in zip(comms, k.parts)]
        sign = -1 if k.order % 2 else 1
        series = compile_series(t, ops, k.order + m / 2)
        out.append(_Term(m, k, k.order + (m - 1) // 2, sign * float(alpha(k)), tuple(series)))
    return out


def residue_phi(t: SpectralTripleRep, m: int, args: Sequence[np.ndarray], j_max: Optional[int] = None,
                p_eff: Optional[float] = None) -> complex:
    """phi_m(a_0..a_m) = sqrt(2 pi i) sum_k (-1)^|k| alpha(k) sum_j sigma_{h,j} tau_j(a_0 [D,a_1]^(k_1) ... (1+D^2)^(-|k|-m/2))."""
    if m < 1 or m % 2 == 0:
        raise ParameterRangeError(f"residue cocycle has odd degree, got {m}")
    if len(args) != m + 1:
        raise ParameterRangeError(f"phi_{m} takes {m + 1} arguments, got {len(args)}")
    p_eff = t.p if p_eff is None else p_eff
    c = critical_point(p_eff)
    total = 0j
    for term in _terms(t, m, args, p_eff):
        if not _has_poles(term.series):
            continue
        h = term.h if j_max is None else min(term.h, j_max)
        laurent = res_extract(lambda z, s=term.series: zeta_value(s, z - c), c, h)
        sig = sigma_coeffs(term.h).coeffs
        total += term.coeff * sum(float(sig[j]) * laurent.residues[j] for j in range(h + 1))
    return sqrt_2pi_i() * total


def _require_real(value: complex, what: str) -> float:
    if abs(value.imag) > 1e-8:
        logger.error(f"{what} has imaginary part {value.imag:.3e}")
        raise NonRealFlowError(f"{what} = {value} is not real")
    return float(value.real)


def sf_residue_cocycle(t: SpectralTripleRep, u_name: str, p_eff: Optional[float] = None) -> float:
    """(1/sqrt(2 pi i)) sum_m phi_m(Ch_m(u))."""
    p_eff = t.p if p_eff is None else p_eff
    u = t.generator(u_name)
    total = 0j
    for term in chern_terms(u, 2 * n_cap(p_eff) - 1):
        total += float(term.coeff) * residue_phi(t, term.degree, term.factors, p_eff=p_eff)
    value = _require_real(total / sqrt_2pi_i(), "residue cocycle flow")
    logger.info(f"residue cocycle flow on {t.label!r} along {u_name!r}: {value:.10g}")
    return value


def _zeta_sum_terms(t: SpectralTripleRep, u_name: str, p_eff: float) -> List[Tuple[float, _Term]]:
    u = t.generator(u_name)
    out = []
    for chern in chern_terms(u, 2 * n_cap(p_eff) - 1):
        for term in _terms(t, chern.degree, chern.factors, p_eff):
            out.append((float(chern.coeff), term))
    return out


def _zeta_sum_function(t: SpectralTripleRep, u_name: str, p_eff: float) -> Tuple[Callable[[complex], complex], bool]:
    c = critical_point(p_eff)
    terms = _zeta_sum_terms(t, u_name, p_eff)

    def F(r):
        total = 0j
        for chern_coeff, term in terms:
            poly = sigma_coeffs(term.h).evaluate(r - c)
            total += chern_coeff * term.coeff * poly * zeta_value(term.series, r - c)
        return total

    return F, any(_has_poles(term.series) for _, term in terms)


def sf_zeta_sum_residue(t: SpectralTripleRep, u_name: str, p_eff: Optional[float] = None) -> float:
    """Residue at r = c = (1-p)/2 of the summed zeta functions, each evaluated at r - c."""
    p_eff = t.p if p_eff is None else p_eff
    F, has_poles = _zeta_sum_function(t, u_name, p_eff)
    if not has_poles:
        return 0.0
    laurent = res_extract(F, critical_point(p_eff), 0)
    return _require_real(laurent.residues[0], "zeta-sum flow")


def zeta_sum_at(t: SpectralTripleRep, u_name: str, r: float, p_eff: Optional[float] = None) -> float:
    """The summed zeta functions at a real point r right of the critical line, where no continuation is needed."""
    p_eff = t.p if p_eff is None else p_eff
    if r <= critical_point(p_eff) + 0.5:
        raise ParameterRangeError(f"the zeta sum converges only for r > {critical_point(p_eff) + 0.5:g}, got {r}")
    F, _ = _zeta_sum_function(t, u_name, p_eff)
    return float(F(complex(r)).real)


def term_table(t: SpectralTripleRep, u_name: str, p_eff: Optional[float] = None) -> List[Dict]:
    """One row per (m, k, j) with its coefficient, tau_j and contribution to the flow."""
    p_eff = t.p if p_eff is None else p_eff
    c = critical_point(p_eff)
    rows = []
    for chern_coeff, term in _zeta_sum_terms(t, u_name, p_eff):
        if _has_poles(term.series):
            residues = res_extract(lambda z, s=term.series: zeta_value(s, z - c), c, term.h).residues
        else:
            residues = {j: 0j for j in range(term.h + 1)}
        sig = sigma_coeffs(term.h).coeffs
        for j in range(term.h + 1):
            coeff = chern_coeff * term.coeff * float(sig[j])
            rows.append({
                "m": term.m,
                "k": "-".join(str(x) for x in term.k.parts),
                "j": j,
                "coefficient": coeff,
                "tau": residues[j].real,
                "contribution": (coeff * residues[j]).real,
            })
    return rows


# ---------------------------------------------------------------------------
# Low dimensions
# ---------------------------------------------------------------------------

def _low_dim_series(t: SpectralTripleRep, u_name: str) -> List[ZetaSeries]:
    u = t.generator(u_name)
    us = u.conj().T
    B = -0.5 * (u @ t.commutator(us) - us @ t.commutator(u))
    return compile_series(t, [B], 0.5)


def low_dim_flow(t: SpectralTripleRep, u_name: str, p_eff: Optional[float] = None) -> float:
    """res_{z=0} tau((-1/2)(u[D,u*] - u*[D,u]) (1+D^2)^(-1/2-z)), valid for 1 <= p < 2."""
    p_eff = t.p if p_eff is None else p_eff
    if not 1 <= p_eff < 2:
        raise ParameterRangeError(f"low-dimensional formula needs 1 <= p < 2, got {p_eff}")
    series = _low_dim_series(t, u_name)
    if not _has_poles(series):
        return 0.0
    laurent = res_extract(lambda z: zeta_value(series, z), 0.0, 0)
    return _require_real(laurent.residues[0], "low-dimensional flow")


def residue_rescaling_check(t: SpectralTripleRep, u_name: str) -> Tuple[complex, complex]:
    """(1/2) res_{z=0} f(z/2) and res_{z=0} f(z) for the low-dimensional zeta function f."""
    series = _low_dim_series(t, u_name)
    if not _has_poles(series):
        return 0j, 0j
    halved = res_extract(lambda z: zeta_value(series, z / 2), 0.0, 0).residues[0]
    direct = res_extract(lambda z: zeta_value(series, z), 0.0, 0).residues[0]
    return 0.5 * halved, direct
