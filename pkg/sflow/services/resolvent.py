"""Resolvent expectations, the resolvent cocycle and the scalar contour oracles.

Expectations are evaluated in an eigenbasis of D, where every resolvent
R_s(lam) = (lam - (1 + s^2 + D^2))^-1 is diagonal, so the integrand at a batch of
contour nodes is a chain of column scalings and matrix products.

Integrals over s in [0, inf) are computed in one of two ways:

* ``laplace`` (default): the s-integral is taken inside the contour integral,
  using int_0^inf s^k (x + s^2)^-beta ds = G(k, beta) x^((k+1)/2 - beta), which
  leaves a single line integral with exponent beta - (k+1)/2;
* ``quadrature``: nested half-line quadrature in s over line integrals in lam,
  with the commuting-case closed form (scaled by the operator norms) as the
  tail majorant.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import settings
from ..domain import numkernel as nk
from ..domain.constants import ParameterRangeError, gamma_fn, script_c
from ..domain.cyclic import CochainEval, B_cochain, b_cochain
from ..domain.numkernel import ContourSpec, QuadResult
from ..domain.triples import DoubledTriple, SpectralTripleRep
from ..errors import SflowError

logger = logging.getLogger(__name__)

S_METHODS = ("laplace", "quadrature")
_CHUNK_ENTRIES = 1 << 21
# contour tolerance scale for identity checks
IDENTITY_TOL_FACTOR = 1e-2


class OracleDisagreementError(SflowError):
    """Raised when a quadrature and its closed form disagree; usually the contour settings are too coarse."""


@dataclass(frozen=True)
class ExpectationParams:
    m: int
    s: float
    r: complex
    p_eff: float
    contour: Optional[ContourSpec] = None

    def __post_init__(self):
        if self.m < 0:
            raise ParameterRangeError(f"expectation order must be >= 0, got {self.m}")
        if self.s < 0:
            raise ParameterRangeError(f"s must be >= 0, got {self.s}")
        if self.p_eff <= 0:
            raise ParameterRangeError(f"pEff must be positive, got {self.p_eff}")

    @property
    def beta(self) -> complex:
        return self.p_eff / 2 + complex(self.r)

    def spec(self) -> ContourSpec:
        return self.contour or ContourSpec.from_settings()


@dataclass(frozen=True)
class _Frame:
    """Eigenbasis of the Dirac operator together with the trace prefactor P (tau(X) = tr(P X))."""
    d2: np.ndarray
    basis: np.ndarray
    prefactor: np.ndarray
    weight_total: float

    @classmethod
    def of_triple(cls, t: SpectralTripleRep) -> "_Frame":
        dec = nk.eigh(t.D)
        V = dec.eigenvectors
        P = V.conj().T @ (t.weights.values[:, None] * V)
        return cls(dec.eigenvalues ** 2, V, P, t.weights.total)

    @classmethod
    def of_doubled(cls, dt: DoubledTriple) -> "_Frame":
        dec = nk.eigh(dt.dense("Dt"))
        V = dec.eigenvectors
        w = dt.weights4.values
        P = 0.5 * V.conj().T @ (w[:, None] * dt.dense("gamma")) @ V
        return cls(dec.eigenvalues ** 2, V, P, 0.5 * dt.weights4.total)

    @property
    def dimension(self) -> int:
        return self.d2.size

    def rotate(self, ops: Sequence[np.ndarray]) -> List[np.ndarray]:
        V = self.basis
        out = []
        for A in ops:
            A = np.asarray(A.toarray() if hasattr(A, "toarray") else A, dtype=complex)
            if A.shape != (self.dimension, self.dimension):
                raise nk.DimensionMismatchError(
                    f"operand of shape {A.shape} for dimension {self.dimension}")
            out.append(V.conj().T @ A @ V)
        return out


def _resolvent_trace(P: np.ndarray, ops: Sequence[np.ndarray], r: np.ndarray) -> np.ndarray:
    """tr(P A_0 R A_1 R ... A_m R) for each row of r, R = diag(r)."""
    B0 = P @ ops[0]
    if len(ops) == 1:
        return r @ np.diagonal(B0)
    acc = B0[None, :, :] * r[:, None, :]
    for A in ops[1:-1]:
        acc = (acc @ A) * r[:, None, :]
    return np.einsum("nij,ji,ni->n", acc, ops[-1], r)


def _line_integrand(frame: _Frame, ops: Sequence[np.ndarray], beta: complex, shift: float) -> Callable:
    q = shift + frame.d2
    chunk = max(1, _CHUNK_ENTRIES // max(1, frame.dimension ** 2))

    def f(lam):
        lam = np.asarray(lam, dtype=complex).ravel()
        out = np.empty(lam.size, dtype=complex)
        for start in range(0, lam.size, chunk):
            node = lam[start:start + chunk]
            r = 1.0 / (node[:, None] - q[None, :])
            out[start:start + chunk] = np.exp(-beta * np.log(node)) * _resolvent_trace(frame.prefactor, ops, r)
        return out

    return f


def _norm_product(ops: Sequence[np.ndarray]) -> float:
    return float(np.prod([nk.op_norm(A) for A in ops]))


def _commuting_magnitude(beta: complex, m: int) -> float:
    """|Gamma(beta+m) / (Gamma(beta) m!)|."""
    return abs(gamma_fn(beta + m) / gamma_fn(beta)) / math.factorial(m)


def _line_value(frame: _Frame, ops: Sequence[np.ndarray], beta: complex, shift: float,
                spec: ContourSpec, *, auto_extend: bool = True) -> QuadResult:
    m = len(ops) - 1
    scale = frame.weight_total * _norm_product(ops) * _commuting_magnitude(beta, m) * shift ** (-(beta.real + m))
    if scale == 0.0:
        return QuadResult(0j, 0.0, 0)
    f = _line_integrand(frame, ops, beta, shift)
    return nk.quad_vertical_line(f, spec, beta.real + m + 1,
                                 abs_tol=spec.rel_tol * scale, auto_extend=auto_extend)


def _check_params(ops: Sequence, params: ExpectationParams) -> None:
    if len(ops) != params.m + 1:
        raise ParameterRangeError(f"order-{params.m} expectation takes {params.m + 1} operands, got {len(ops)}")


# ---------------------------------------------------------------------------
# Expectations
# ---------------------------------------------------------------------------

def expectation(t: SpectralTripleRep, ops: Sequence[np.ndarray], params: ExpectationParams) -> complex:
    """<A_0, ..., A_m>_{m,s,r} = tau((1/2 pi i) int_l lam^(-p/2-r) A_0 R_s(lam) A_1 ... A_m R_s(lam) dlam)."""
    _check_params(ops, params)
    frame = _Frame.of_triple(t)
    res = _line_value(frame, frame.rotate(ops), params.beta, 1.0 + params.s ** 2, params.spec())
    return complex(res.value)


def commuting_expectation(t: SpectralTripleRep, ops: Sequence[np.ndarray], params: ExpectationParams) -> complex:
    """(-1)^m Gamma(beta+m)/(Gamma(beta) m!) tau(A_0...A_m (1+D^2+s^2)^(-beta-m)), valid when every A_i commutes with D."""
    _check_params(ops, params)
    beta, m = params.beta, params.m
    prod = np.eye(t.dimension, dtype=complex)
    for A in ops:
        prod = prod @ np.asarray(A, dtype=complex)
    power = nk.func_calc(t.D, lambda x: (1 + params.s ** 2 + x * x) ** (-(beta + m)))
    coeff = (-1) ** m * gamma_fn(beta + m) / (gamma_fn(beta) * math.factorial(m))
    return complex(coeff * t.tau(prod @ power))


def _laplace_factor(k: int, beta: complex) -> complex:
    """int_0^inf s^k (x + s^2)^-beta ds = factor * x^((k+1)/2 - beta)."""
    half = (k + 1) / 2
    return gamma_fn(half) * gamma_fn(beta - half) / (2 * gamma_fn(beta))


def _s_integral(frame: _Frame, ops: Sequence[np.ndarray], k: int, beta: complex,
                spec: ContourSpec, method: str) -> complex:
    m = len(ops) - 1
    if method not in S_METHODS:
        raise ParameterRangeError(f"unknown s-integration method {method!r}")
    if k < 0:
        raise ParameterRangeError(f"s exponent must be >= 0, got {k}")
    if 2 * (beta.real + m) <= k + 1:
        raise ParameterRangeError(
            f"s-integral diverges: 2(Re beta + m) = {2 * (beta.real + m):.4g} <= k + 1 = {k + 1}")
    gamma_exp = beta - (k + 1) / 2
    if method == "laplace" and gamma_exp.real > 0:
        res = _line_value(frame, ops, gamma_exp, 1.0, spec)
        return complex(_laplace_factor(k, beta) * res.value)
    if method == "laplace":
        logger.debug(f"Re(beta - (k+1)/2) = {gamma_exp.real:.3g} <= 0, using nested quadrature")

    mag = frame.weight_total * _norm_product(ops) * _commuting_magnitude(beta, m)
    if mag == 0.0:
        return 0j
    decay = 2 * (beta.real + m) - k

    def g(s_nodes):
        s_nodes = np.asarray(s_nodes, dtype=float).ravel()
        out = np.empty(s_nodes.size, dtype=complex)
        for i, s in enumerate(s_nodes):
            out[i] = s ** k * _line_value(frame, ops, beta, 1.0 + s * s, spec).value
        return out

    def tail(S):
        return mag * S ** (1 - decay) / (decay - 1)

    return complex(nk.quad_half_line(g, tail, abs_tol=settings.half_line_rel_tol * mag).value)


def s_integral(t: SpectralTripleRep, ops: Sequence[np.ndarray], k: int, r: complex, *,
               p_eff: Optional[float] = None, contour: Optional[ContourSpec] = None,
               method: str = "laplace") -> complex:
    """int_0^inf s^k <A_0, ..., A_m>_{m,s,r} ds."""
    p_eff = t.p if p_eff is None else p_eff
    frame = _Frame.of_triple(t)
    spec = contour or ContourSpec.from_settings()
    return _s_integral(frame, frame.rotate(ops), k, p_eff / 2 + complex(r), spec, method)


# ---------------------------------------------------------------------------
# Resolvent cocycle
# ---------------------------------------------------------------------------

def phi_r(t: SpectralTripleRep, m: int, r: complex, args: Sequence[np.ndarray], *,
          p_eff: Optional[float] = None, contour: Optional[ContourSpec] = None,
          method: str = "laplace") -> complex:
    """phi_m^r(a_0, ..., a_m) = C(m) int_0^inf s^m <a_0, [D,a_1], ..., [D,a_m]>_{m,s,r} ds."""
    if m < 1 or m % 2 == 0:
        raise ParameterRangeError(f"resolvent cocycle has odd degree, got {m}")
    if len(args) != m + 1:
        raise ParameterRangeError(f"phi_{m} takes {m + 1} arguments, got {len(args)}")
    if complex(r).real <= (1 - m) / 2:
        raise ParameterRangeError(f"phi_{m}^r needs Re r > {(1 - m) / 2:g}, got {r}")
    ops = [np.asarray(args[0], dtype=complex)] + [t.commutator(np.asarray(a, dtype=complex)) for a in args[1:]]
    return complex(script_c(m) * s_integral(t, ops, m, r, p_eff=p_eff, contour=contour, method=method))


def phi_cochain(t: SpectralTripleRep, m: int, r: complex, **kwargs) -> CochainEval:
    return CochainEval(m, lambda *args: phi_r(t, m, r, args, **kwargs))


def cocycle_defect(t: SpectralTripleRep, m: int, r: complex, args: Sequence[np.ndarray],
                   **kwargs) -> complex:
    """(B phi_{m+2}^r + b phi_m^r)(a_0, ..., a_{m+1})."""
    if len(args) != m + 2:
        raise ParameterRangeError(f"defect of degree {m} takes {m + 2} arguments, got {len(args)}")
    b_part = b_cochain(phi_cochain(t, m, r, **kwargs))(*args)
    B_part = B_cochain(phi_cochain(t, m + 2, r, **kwargs))(*args)
    logger.debug(f"cocycle defect m={m}: b-part {b_part:.6g}, B-part {B_part:.6g}")
    return b_part + B_part


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------

def resolvent_expansion_check(dt: DoubledTriple, s: float, lam: complex, M: int) -> float:
    """|| R~ - sum_{m<=M} (R s{D~,q})^m R - (R s{D~,q})^(M+1) R~ ||."""
    if M < 0:
        raise ParameterRangeError(f"expansion depth must be >= 0, got {M}")
    n = dt.dimension
    eye = np.eye(n, dtype=complex)
    Dt = dt.dense("Dt")
    Q = (1 + s * s) * eye + Dt @ Dt
    R = np.linalg.inv(lam * eye - Q)
    RT = np.linalg.inv(lam * eye - Q - s * dt.dense("anti"))
    step = R @ (s * dt.dense("anti"))
    rhs = np.zeros_like(R)
    power = eye
    for _ in range(M + 1):
        rhs += power @ R
        power = power @ step
    rhs += power @ RT
    return nk.op_norm(RT - rhs)


def s_exponent_shift(t: SpectralTripleRep, ops: Sequence[np.ndarray], m: int, k: int, r: complex, *,
                     p_eff: Optional[float] = None, contour: Optional[ContourSpec] = None,
                     method: str = "laplace") -> Tuple[complex, complex]:
    """k int s^(k-1) <A_0..A_m> ds and -2 sum_j int s^(k+1) <.., A_j, 1, A_{j+1}, ..> ds."""
    if k < 1:
        raise ParameterRangeError(f"s exponent shift needs k >= 1, got {k}")
    if len(ops) != m + 1:
        raise ParameterRangeError(f"expected {m + 1} operands, got {len(ops)}")
    p_eff = t.p if p_eff is None else p_eff
    frame = _Frame.of_triple(t)
    spec = contour or ContourSpec.from_settings()
    rotated = frame.rotate(ops)
    beta = p_eff / 2 + complex(r)
    lhs = k * _s_integral(frame, rotated, k - 1, beta, spec, method)
    one = np.eye(frame.dimension, dtype=complex)
    rhs = 0j
    for j in range(m + 1):
        inserted = rotated[:j + 1] + [one] + rotated[j + 1:]
        rhs += _s_integral(frame, inserted, k + 1, beta, spec, method)
    return complex(lhs), complex(-2 * rhs)


def commutator_identity(t: SpectralTripleRep, ops: Sequence[np.ndarray], j: int,
                        params: ExpectationParams) -> Tuple[complex, complex]:
    """-<.., [D^2, A_j], ..> and <.., A_{j-1} A_j, ..> - <.., A_j A_{j+1}, ..>; j = m wraps A_m A_0 to the front."""
    _check_params(ops, params)
    m = params.m
    if not 1 <= j <= m:
        raise ParameterRangeError(f"commutator position must lie in 1..{m}, got {j}")
    spec = params.spec()
    params = replace(params, contour=replace(spec, rel_tol=spec.rel_tol * IDENTITY_TOL_FACTOR))
    ops = [np.asarray(A, dtype=complex) for A in ops]
    D2 = t.D @ t.D
    replaced = ops[:j] + [D2 @ ops[j] - ops[j] @ D2] + ops[j + 1:]
    lhs = -expectation(t, replaced, params)
    lower = ExpectationParams(m - 1, params.s, params.r, params.p_eff, params.contour)
    left = ops[:j - 1] + [ops[j - 1] @ ops[j]] + ops[j + 1:]
    if j < m:
        right = ops[:j] + [ops[j] @ ops[j + 1]] + ops[j + 2:]
    else:
        right = [ops[m] @ ops[0]] + ops[1:m]
    rhs = expectation(t, left, lower) - expectation(t, right, lower)
    return lhs, rhs


def cyclicity_check(t: SpectralTripleRep, ops: Sequence[np.ndarray], k: int, r: complex, *,
                    p_eff: Optional[float] = None, contour: Optional[ContourSpec] = None) -> Tuple[complex, complex]:
    """int s^k <A_0, ..., A_m> ds and int s^k <A_m, A_0, ..., A_{m-1}> ds."""
    ops = list(ops)
    rotated = [ops[-1]] + ops[:-1]
    kwargs = dict(p_eff=p_eff, contour=contour)
    return s_integral(t, ops, k, r, **kwargs), s_integral(t, rotated, k, r, **kwargs)


def doubled_expectation(dt: DoubledTriple, k: int, s: float, r: complex, p_eff: float,
                        contour: Optional[ContourSpec] = None) -> complex:
    """(1/2 pi i) int_l lam^(-p/2-r) S tau(q (R s{D~,q})^k R) dlam."""
    if k < 0:
        raise ParameterRangeError(f"word length must be >= 0, got {k}")
    params = ExpectationParams(k, s, r, p_eff, contour)
    frame = _Frame.of_doubled(dt)
    ops = frame.rotate([dt.dense("q")] + [s * dt.dense("anti")] * k)
    return complex(_line_value(frame, ops, params.beta, 1.0 + s * s, params.spec()).value)


# ---------------------------------------------------------------------------
# Scalar oracles
# ---------------------------------------------------------------------------

def cauchy_closed_form(mu: float, beta: complex, n: int) -> complex:
    """(1/(n-1)!) d^(n-1)/dlam^(n-1) lam^-beta at mu."""
    beta = complex(beta)
    coeff = 1.0 + 0j
    for i in range(n - 1):
        coeff *= -beta - i
    return coeff / math.factorial(n - 1) * mu ** (-beta - n + 1)


def scalar_cauchy_oracle(mu: float, beta: complex, n: int, contour: Optional[ContourSpec] = None) -> complex:
    """(1/2 pi i) int_l lam^-beta (lam - mu)^-n dlam, checked against the derivative formula."""
    if mu < 1:
        raise ParameterRangeError(f"pole must lie at mu >= 1, got {mu}")
    if n < 1:
        raise ParameterRangeError(f"pole order must be >= 1, got {n}")
    beta = complex(beta)
    spec = contour or ContourSpec.from_settings()

    def f(lam):
        lam = np.asarray(lam, dtype=complex)
        return np.exp(-beta * np.log(lam)) / (lam - mu) ** n

    closed = cauchy_closed_form(mu, beta, n)
    value = complex(nk.quad_vertical_line(f, spec, beta.real + n,
                                          abs_tol=spec.rel_tol * max(1.0, abs(closed)), auto_extend=True).value)
    if abs(value - closed) > 1e-8 * max(1.0, abs(closed)):
        logger.error(f"Cauchy oracle mismatch: quadrature {value} vs closed form {closed}")
        raise OracleDisagreementError(
            f"contour value {value} disagrees with {closed}; check a={spec.a}, vMax={spec.v_max}")
    return value


def laplace_closed_form(mu: float, m: int, beta: complex) -> complex:
    """Gamma((m+1)/2) Gamma(beta-(m+1)/2) / (2 Gamma(beta)) (1+mu^2)^(-beta+(m+1)/2)."""
    half = (m + 1) / 2
    return _laplace_factor(m, complex(beta)) * (1 + mu * mu) ** (-complex(beta) + half)


def scalar_laplace_oracle(mu: float, m: int, beta: complex) -> complex:
    """int_0^inf s^m (1+s^2+mu^2)^-beta ds in Gamma form, checked by quadrature."""
    beta = complex(beta)
    if m < 0:
        raise ParameterRangeError(f"m must be >= 0, got {m}")
    if beta.real <= (m + 1) / 2:
        raise ParameterRangeError(f"Laplace integral needs Re(beta) > {(m + 1) / 2:g}, got {beta}")
    closed = complex(laplace_closed_form(mu, m, beta))
    c = 1 + mu * mu
    decay = 2 * beta.real - m

    def g(s):
        return s ** m * (c + s * s) ** (-beta)

    value = complex(nk.quad_half_line(g, lambda S: S ** (1 - decay) / (decay - 1),
                                      rel_tol=1e-11, abs_tol=1e-12 * abs(closed)).value)
    if abs(value - closed) > 1e-8 * max(1.0, abs(closed)):
        logger.error(f"Laplace oracle mismatch: quadrature {value} vs Gamma form {closed}")
        raise OracleDisagreementError(f"half-line value {value} disagrees with {closed}")
    return closed
