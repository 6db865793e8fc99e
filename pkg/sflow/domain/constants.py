"""Combinatorial constants and special functions of the local index formula."""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Tuple

import numpy as np
from scipy import special

from ..config.settings import settings
from ..errors import SflowError

logger = logging.getLogger(__name__)


class GammaPoleError(SflowError):
    """Raised when Gamma is evaluated at a nonpositive integer."""


class ParameterRangeError(SflowError, ValueError):
    """Raised when an argument lies outside the documented range."""


@dataclass(frozen=True)
class MultiIndex:
    """k = (k_1, ..., k_m) with nonnegative parts."""
    parts: Tuple[int, ...]

    def __post_init__(self):
        parts = tuple(int(k) for k in self.parts)
        if any(k < 0 for k in parts):
            raise ParameterRangeError(f"multi-index parts must be nonnegative, got {parts}")
        object.__setattr__(self, "parts", parts)

    @property
    def m(self) -> int:
        return len(self.parts)

    @property
    def order(self) -> int:
        """|k| = k_1 + ... + k_m."""
        return sum(self.parts)

    @classmethod
    def of(cls, *parts: int) -> "MultiIndex":
        return cls(tuple(parts))


def multi_indices(m: int, max_order: int):
    """All k with m parts and |k| <= max_order, in lexicographic order."""
    def rec(prefix, remaining, slots):
        if slots == 0:
            yield MultiIndex(tuple(prefix))
            return
        for k in range(remaining + 1):
            yield from rec(prefix + [k], remaining - k, slots - 1)
    yield from rec([], max_order, m)


def _as_index(k) -> MultiIndex:
    return k if isinstance(k, MultiIndex) else MultiIndex(tuple(k))


def alpha(k) -> Fraction:
    """alpha(k) = 1 / (k_1!...k_m! (k_1+1)(k_1+k_2+2)...(|k|+m))."""
    k = _as_index(k)
    if k.m == 0:
        raise ParameterRangeError("alpha needs a nonempty multi-index")
    denom = 1
    partial = 0
    for i, part in enumerate(k.parts, start=1):
        partial += part
        denom *= math.factorial(part) * (partial + i)
    return Fraction(1, denom)


@dataclass(frozen=True)
class SymCoeffs:
    """Coefficients of prod_{j<h}(z + j + 1/2) = sum_j sigma_{h,j} z^j."""
    h: int
    coeffs: Tuple[Fraction, ...]

    def evaluate(self, z: complex) -> complex:
        return sum(complex(c) * z ** j for j, c in enumerate(self.coeffs))


def sigma_coeffs(h: int) -> SymCoeffs:
    if h < 0:
        raise ParameterRangeError(f"h must be >= 0, got {h}")
    poly = [Fraction(1)]
    for j in range(h):
        shift = Fraction(2 * j + 1, 2)
        nxt = [Fraction(0)] * (len(poly) + 1)
        for i, c in enumerate(poly):
            nxt[i] += c * shift
            nxt[i + 1] += c
        poly = nxt
    return SymCoeffs(h=h, coeffs=tuple(poly))


def elementary_symmetric(values: Sequence[Fraction], k: int) -> Fraction:
    """e_k(values) by the standard one-variable-at-a-time recursion."""
    e = [Fraction(1)] + [Fraction(0)] * len(values)
    for v in values:
        for i in range(len(values), 0, -1):
            e[i] += e[i - 1] * v
    return e[k] if 0 <= k <= len(values) else Fraction(0)


def big_c(k) -> Fraction:
    """C(k) = (|k| + m)! alpha(k)."""
    k = _as_index(k)
    return math.factorial(k.order + k.m) * alpha(k)


def sqrt_2pi_i() -> complex:
    """The configured branch of sqrt(2 pi i)."""
    sign = 1 if settings.sqrt_branch_sign >= 0 else -1
    return sign * math.sqrt(2 * math.pi) * cmath.exp(1j * math.pi / 4)


def gamma_fn(z: complex) -> complex:
    z = complex(z)
    if z.imag == 0 and z.real <= 0 and z.real == math.floor(z.real):
        raise GammaPoleError(f"Gamma has a pole at {z.real:g}")
    return complex(special.gamma(z))


def script_c(m: int) -> complex:
    """C(m) = -2 sqrt(2 pi i) / Gamma((m+1)/2) for odd m."""
    if m < 1 or m % 2 == 0:
        raise ParameterRangeError(f"script C is defined for odd m >= 1, got {m}")
    return -2 * sqrt_2pi_i() / gamma_fn((m + 1) / 2)


def c_beta(beta: complex) -> complex:
    """C_beta = integral of (1+x^2)^(-beta) over the real line."""
    beta = complex(beta)
    if beta.real <= 0.5:
        raise ParameterRangeError(f"C_beta needs Re(beta) > 1/2, got {beta}")
    value = gamma_fn(beta - 0.5) * math.sqrt(math.pi) / gamma_fn(beta)
    return value.real if beta.imag == 0 else value


def n_cap(p: float) -> int:
    """N = [p/2] + 1."""
    if p < 1:
        raise ParameterRangeError(f"spectral dimension must be >= 1, got {p}")
    return int(math.floor(p / 2)) + 1


def gamma_quotient_expansion(p: float, h: int, z: complex) -> Tuple[complex, complex]:
    """Both sides of Gamma(p/2+h+z)/Gamma(p/2+z) = sum_j (z-(1-p)/2)^j sigma_{h,j}."""
    lhs = gamma_fn(p / 2 + h + z) / gamma_fn(p / 2 + z)
    rhs = sigma_coeffs(h).evaluate(z - (1 - p) / 2)
    return lhs, rhs


def binom_series(s: complex, count: int) -> np.ndarray:
    """binom(-s, k) for k = 0..count-1."""
    out = np.empty(count, dtype=complex)
    acc = 1.0 + 0j
    for k in range(count):
        out[k] = acc
        acc *= (-s - k) / (k + 1)
    return out
