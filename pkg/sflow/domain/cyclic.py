"""Normalized (b, B) bicomplex over concrete matrix algebras."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np

from ..errors import SflowError

logger = logging.getLogger(__name__)

SCALAR_TOL = 1e-12
KEY_DECIMALS = 9
ZERO_TEST_DRAWS = 4
ZERO_TEST_SEED = 20240611
ZERO_TEST_TOL = 1e-9

Coeff = Union[int, Fraction]


class CyclicError(SflowError):
    """Raised on degree gaps or failed internal consistency checks."""


def _key(a: np.ndarray) -> bytes:
    rounded = np.round(np.asarray(a, dtype=complex), KEY_DECIMALS) + 0.0
    return rounded.shape[0].to_bytes(4, "little") + rounded.tobytes()


def trace_free(a: np.ndarray) -> np.ndarray:
    """a - (tr(a)/n) I, the representative of a modulo scalars."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    return a - (np.trace(a) / n) * np.eye(n, dtype=complex)


def is_scalar_identity(a: np.ndarray, tol: float = SCALAR_TOL) -> bool:
    """True when a = c * I for some scalar c."""
    a = np.asarray(a)
    return bool(np.max(np.abs(trace_free(a))) <= tol * max(1.0, float(np.max(np.abs(a)))))


@dataclass(frozen=True)
class TensorTerm:
    coeff: Fraction
    factors: Tuple[np.ndarray, ...]

    @property
    def degree(self) -> int:
        return len(self.factors) - 1

    def key(self) -> Tuple[bytes, ...]:
        return tuple(_key(a) for a in self.factors)


class Chain:
    """Graded sum of tensor terms with exact rational coefficients.

    Terms with a scalar factor in any position >= 1 are dropped on insertion. Zero tests
    work modulo scalars in those positions: each degree is paired with random trace-free
    functionals, so a (x) (b + cI) and a (x) b compare equal.
    """

    def __init__(self, terms: Iterable[TensorTerm] = ()):
        self._terms: Dict[int, Dict[Tuple[bytes, ...], TensorTerm]] = {}
        for term in terms:
            self._add(term)

    def _add(self, term: TensorTerm) -> None:
        if term.coeff == 0:
            return
        if any(is_scalar_identity(a) for a in term.factors[1:]):
            return
        bucket = self._terms.setdefault(term.degree, {})
        key = term.key()
        if key in bucket:
            coeff = bucket[key].coeff + term.coeff
            if coeff == 0:
                del bucket[key]
            else:
                bucket[key] = TensorTerm(coeff, bucket[key].factors)
        else:
            bucket[key] = term
        if not bucket:
            del self._terms[term.degree]

    @classmethod
    def of(cls, coeff: Coeff, *factors: np.ndarray) -> "Chain":
        return cls([TensorTerm(Fraction(coeff), tuple(np.asarray(a, dtype=complex) for a in factors))])

    def degrees(self) -> List[int]:
        return sorted(self._terms)

    def terms(self, degree: int = None) -> List[TensorTerm]:
        if degree is not None:
            return list(self._terms.get(degree, {}).values())
        return [t for m in self.degrees() for t in self._terms[m].values()]

    def component(self, degree: int) -> "Chain":
        return Chain(self.terms(degree))

    def is_zero(self) -> bool:
        return all(self._vanishes(m) for m in self.degrees())

    def _vanishes(self, degree: int) -> bool:
        terms = self.terms(degree)
        n = terms[0].factors[0].shape[0]
        coeffs = np.array([float(t.coeff) for t in terms])
        rng = np.random.default_rng(ZERO_TEST_SEED)
        for _ in range(ZERO_TEST_DRAWS):
            xi = rng.standard_normal((degree + 1, n, n)) + 1j * rng.standard_normal((degree + 1, n, n))
            xi[1:] -= (np.trace(xi[1:], axis1=1, axis2=2) / n)[:, None, None] * np.eye(n)
            values = np.array([np.prod([np.sum(x * a) for x, a in zip(xi, t.factors)]) for t in terms])
            if abs(coeffs @ values) > ZERO_TEST_TOL * float(np.abs(coeffs) @ np.abs(values)):
                return False
        return True

    def __iter__(self) -> Iterator[TensorTerm]:
        return iter(self.terms())

    def __len__(self) -> int:
        return sum(len(b) for b in self._terms.values())

    def __add__(self, other: "Chain") -> "Chain":
        return Chain(list(self) + list(other))

    def __neg__(self) -> "Chain":
        return self.scale(-1)

    def __sub__(self, other: "Chain") -> "Chain":
        return self + (-other)

    def scale(self, c: Coeff) -> "Chain":
        return Chain(TensorTerm(t.coeff * Fraction(c), t.factors) for t in self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Chain):
            return NotImplemented
        return (self - other).is_zero()

    def __repr__(self) -> str:
        return f"Chain(degrees={self.degrees()}, terms={len(self)})"


def b_chain(c: Chain) -> Chain:
    """b(a0..am) = sum_{j<m} (-1)^j (.., a_j a_{j+1}, ..) + (-1)^m (a_m a0, a1, .., a_{m-1})."""
    out: List[TensorTerm] = []
    for term in c:
        f, m = term.factors, term.degree
        if m == 0:
            continue
        for j in range(m):
            merged = f[:j] + (f[j] @ f[j + 1],) + f[j + 2:]
            out.append(TensorTerm(term.coeff * (-1) ** j, merged))
        out.append(TensorTerm(term.coeff * (-1) ** m, (f[m] @ f[0],) + f[1:m]))
    return Chain(out)


def B_chain(c: Chain) -> Chain:
    """B(a0..am) = sum_j (-1)^(m j) (1, a_j, .., a_m, a0, .., a_{j-1})."""
    out: List[TensorTerm] = []
    for term in c:
        f, m = term.factors, term.degree
        one = np.eye(f[0].shape[0], dtype=complex)
        for j in range(m + 1):
            out.append(TensorTerm(term.coeff * (-1) ** (m * j), (one,) + f[j:] + f[:j]))
    return Chain(out)


def _require_unitary(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    eye = np.eye(u.shape[0])
    if max(np.max(np.abs(u.conj().T @ u - eye)), np.max(np.abs(u @ u.conj().T - eye))) > 1e-10:
        raise CyclicError("Chern character needs a unitary")
    return u


def chern_terms(u: np.ndarray, m_max: int) -> List[TensorTerm]:
    """(-1)^j j! (u*, u, ..., u*, u) for every odd degree 2j+1 <= m_max, without a unitarity check."""
    if m_max < 1 or m_max % 2 == 0:
        raise CyclicError(f"Chern chains have odd degree, got {m_max}")
    u = np.asarray(u, dtype=complex)
    us = u.conj().T
    return [TensorTerm(Fraction((-1) ** j * math.factorial(j)), (us, u) * (j + 1))
            for j in range((m_max - 1) // 2 + 1)]


def chern_chain(u: np.ndarray, m_max: int) -> Chain:
    """Ch_{2j+1}(u) = (-1)^j j! u* x u x ... x u* x u for 2j+1 <= m_max."""
    if m_max < 1 or m_max % 2 == 0:
        raise CyclicError(f"Chern chains have odd degree, got {m_max}")
    return Chain(chern_terms(_require_unitary(u), m_max))


def boundary_witness(u: np.ndarray, m_max: int) -> Chain:
    """z with (b + B) z = Ch(u*) + Ch(u) through degree m_max."""
    u = _require_unitary(u)
    us = u.conj().T
    one = np.eye(u.shape[0], dtype=complex)
    terms = []
    for j in range((m_max - 1) // 2 + 1):
        coeff = Fraction((-1) ** j * math.factorial(j))
        terms.append(TensorTerm(coeff, (one,) + (us, u) * (j + 1)))
    z = Chain(terms)
    lhs = truncate(b_chain(z) + B_chain(z), m_max)
    rhs = chern_chain(us, m_max) + chern_chain(u, m_max)
    if lhs != rhs:
        logger.error(f"boundary witness check failed through degree {m_max}")
        raise CyclicError("(b + B) z differs from Ch(u*) + Ch(u)")
    return z


def truncate(c: Chain, m_max: int) -> Chain:
    return Chain(t for t in c if t.degree <= m_max)


# ---------------------------------------------------------------------------
# Cochains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CochainEval:
    degree: int
    evaluator: Callable[..., complex]

    def __call__(self, *args: np.ndarray) -> complex:
        if len(args) != self.degree + 1:
            raise CyclicError(f"degree-{self.degree} cochain takes {self.degree + 1} arguments, got {len(args)}")
        return complex(self.evaluator(*args))


def b_cochain(phi: CochainEval) -> CochainEval:
    m = phi.degree

    def evaluate(*a):
        total = 0j
        for j in range(m + 1):
            total += (-1) ** j * phi(*(a[:j] + (a[j] @ a[j + 1],) + a[j + 2:]))
        total += (-1) ** (m + 1) * phi(a[m + 1] @ a[0], *a[1:m + 1])
        return total

    return CochainEval(m + 1, evaluate)


def B_cochain(phi: CochainEval) -> CochainEval:
    m = phi.degree
    if m == 0:
        raise CyclicError("B is not defined on degree-0 cochains")

    def evaluate(*a):
        one = np.eye(a[0].shape[0], dtype=complex)
        return sum((-1) ** ((m - 1) * j) * phi(one, *(a[j:] + a[:j])) for j in range(m))

    return CochainEval(m - 1, evaluate)


def pair(phi: Union[Sequence[CochainEval], Mapping[int, CochainEval]], c: Chain) -> complex:
    """<phi, c> = sum_m phi_m(c_m)."""
    by_degree = dict(phi) if isinstance(phi, Mapping) else {p.degree: p for p in phi}
    total = 0j
    for m in c.degrees():
        if m not in by_degree:
            raise CyclicError(f"cochain has no degree-{m} component")
        for term in c.terms(m):
            total += float(term.coeff) * by_degree[m](*term.factors)
    return total


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def chain_to_json(c: Chain) -> Dict[str, List[Dict]]:
    out: Dict[str, List[Dict]] = {}
    for m in c.degrees():
        out[str(m)] = [
            {
                "coeff": str(t.coeff),
                "factors": [np.stack([a.real, a.imag], axis=-1).tolist() for a in t.factors],
            }
            for t in c.terms(m)
        ]
    return out


def chain_from_json(data: Mapping[str, List[Dict]]) -> Chain:
    terms = []
    for entries in data.values():
        for entry in entries:
            factors = tuple(np.asarray(f)[..., 0] + 1j * np.asarray(f)[..., 1] for f in entry["factors"])
            terms.append(TensorTerm(Fraction(entry["coeff"]), factors))
    return Chain(terms)
