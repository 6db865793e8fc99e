"""Exact rewriting of resolvent words R A_1 R A_2 ... R A_m R~ into normal form."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import SflowError
from .constants import MultiIndex, big_c, multi_indices

logger = logging.getLogger(__name__)


class NCExpandError(SflowError):
    """Raised when a word cannot be instantiated."""


@dataclass(frozen=True, order=True)
class NCSymbol:
    """R, Rtilde or A(i, j) = j-fold [Q, A_i]."""
    kind: str
    i: int = 0
    j: int = 0

    def __post_init__(self):
        if self.kind not in ("A", "R", "Rtilde"):
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.kind == "A" and (self.i < 1 or self.j < 0):
            raise ValueError(f"A-symbol needs i >= 1 and j >= 0, got ({self.i}, {self.j})")

    def __str__(self) -> str:
        return f"A({self.i},{self.j})" if self.kind == "A" else self.kind


R = NCSymbol("R")
RT = NCSymbol("Rtilde")


def A(i: int, j: int = 0) -> NCSymbol:
    return NCSymbol("A", i, j)


Word = Tuple[NCSymbol, ...]


class NCPoly:
    """Free noncommutative polynomial with exact rational coefficients."""

    def __init__(self, words: Optional[Mapping[Word, Fraction]] = None):
        self._words: Dict[Word, Fraction] = {}
        for word, coeff in (words or {}).items():
            self._add(word, coeff)

    def _add(self, word: Word, coeff) -> None:
        total = self._words.get(word, Fraction(0)) + Fraction(coeff)
        if total == 0:
            self._words.pop(word, None)
        else:
            self._words[word] = total

    @classmethod
    def word(cls, *symbols: NCSymbol, coeff=1) -> "NCPoly":
        return cls({tuple(symbols): Fraction(coeff)})

    def items(self) -> List[Tuple[Word, Fraction]]:
        return sorted(self._words.items())

    def coefficient(self, *symbols: NCSymbol) -> Fraction:
        return self._words.get(tuple(symbols), Fraction(0))

    def __len__(self) -> int:
        return len(self._words)

    def __add__(self, other: "NCPoly") -> "NCPoly":
        out = NCPoly(self._words)
        for word, coeff in other._words.items():
            out._add(word, coeff)
        return out

    def __sub__(self, other: "NCPoly") -> "NCPoly":
        return self + NCPoly({w: -c for w, c in other._words.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, NCPoly) and self._words == other._words

    def is_zero(self) -> bool:
        return not self._words

    def __repr__(self) -> str:
        return format_poly(self)


def _first_rule_site(word: Word) -> int:
    for pos in range(len(word) - 1):
        if word[pos].kind == "R" and word[pos + 1].kind == "A":
            return pos
    return -1


def _apply_rule(word: Word, pos: int) -> List[Word]:
    a = word[pos + 1]
    head, tail = word[:pos], word[pos + 2:]
    return [head + (a, R) + tail, head + (R, A(a.i, a.j + 1), R) + tail]


def derivation_order(word: Word) -> int:
    return sum(s.j for s in word if s.kind == "A")


def is_normal(word: Word) -> bool:
    return _first_rule_site(word) < 0


def rewrite_step(p: NCPoly) -> NCPoly:
    """R A(i,j) -> A(i,j) R + R A(i,j+1) R at the leftmost site of every word."""
    out = NCPoly()
    for word, coeff in p.items():
        pos = _first_rule_site(word)
        if pos < 0:
            out._add(word, coeff)
            continue
        for new in _apply_rule(word, pos):
            out._add(new, coeff)
    return out


def expand_word(p: NCPoly, M: int) -> Tuple[NCPoly, NCPoly]:
    """Rewrite to normal form; words whose derivation order exceeds M go to the remainder."""
    normal, remainder = NCPoly(), NCPoly()
    pending = p
    while not pending.is_zero():
        nxt = NCPoly()
        for word, coeff in pending.items():
            if derivation_order(word) > M:
                remainder._add(word, coeff)
            elif is_normal(word):
                normal._add(word, coeff)
            else:
                nxt._add(word, coeff)
        pending = rewrite_step(nxt) if not nxt.is_zero() else nxt
    return normal, remainder


def resolvent_word(m: int) -> NCPoly:
    """R A(1,0) R A(2,0) ... R A(m,0) Rtilde."""
    if m < 1:
        raise ValueError(f"need at least one operand, got m={m}")
    symbols: List[NCSymbol] = []
    for i in range(1, m + 1):
        symbols += [R, A(i, 0)]
    return NCPoly.word(*symbols, RT)


def expand_to_depth(m: int, M: int) -> Tuple[NCPoly, NCPoly]:
    if M < 0:
        raise ValueError(f"depth must be >= 0, got {M}")
    normal, remainder = expand_word(resolvent_word(m), M)
    logger.debug(f"expanded m={m} to depth {M}: {len(normal)} normal words, {len(remainder)} remainder words")
    return normal, remainder


def normal_word(k: MultiIndex) -> Word:
    """A(1,k_1) ... A(m,k_m) R^(m+|k|) Rtilde."""
    return tuple(A(i, kj) for i, kj in enumerate(k.parts, start=1)) + (R,) * (k.m + k.order) + (RT,)


def collected_coefficients(m: int, M: int) -> Dict[MultiIndex, Fraction]:
    normal, _ = expand_to_depth(m, M)
    return {k: normal.coefficient(*normal_word(k)) for k in multi_indices(m, M)}


def coefficient_table(m_max: int, k_max: int) -> List[Dict]:
    rows = []
    for m in range(1, m_max + 1):
        coeffs = collected_coefficients(m, k_max)
        for k, coeff in coeffs.items():
            expected = big_c(k)
            rows.append({
                "m": m,
                "k": list(k.parts),
                "coefficient": str(coeff),
                "bigC": str(expected),
                "match": coeff == expected,
            })
    return rows


def power_coefficients(n: int, M: int) -> Dict[int, Fraction]:
    """Coefficients of A(1,j) R^(n+j) in the normal form of R^n A(1,0)."""
    normal, _ = expand_word(NCPoly.word(*((R,) * n), A(1, 0)), M)
    return {j: normal.coefficient(A(1, j), *((R,) * (n + j))) for j in range(M + 1)}


def verify_binomial_lemma(n: int, k: int) -> bool:
    """sum_{j=1}^n binom(j+k-1, k) == binom(n+k, k+1)."""
    if n < 1 or k < 0:
        raise ValueError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    return sum(math.comb(j + k - 1, k) for j in range(1, n + 1)) == math.comb(n + k, k + 1)


def format_poly(p: NCPoly) -> str:
    if p.is_zero():
        return "0"
    parts = []
    for word, coeff in p.items():
        body = "".join(str(s) for s in word) or "1"
        parts.append(body if coeff == 1 else f"{coeff}*{body}")
    return " + ".join(parts)


def numerical_instantiation(p: NCPoly, dt, s: float, lam: complex,
                            operands: Mapping[int, np.ndarray]) -> np.ndarray:
    """Evaluate p with Q = 1 + s^2 + D~^2, R = (lam - Q)^-1, Rtilde = (lam - Q - s{D~,q})^-1."""
    n = dt.dimension
    eye = np.eye(n, dtype=complex)
    Dt = dt.dense("Dt")
    Q = (1 + s * s) * eye + Dt @ Dt
    R_mat = np.linalg.inv(lam * eye - Q)
    RT_mat = np.linalg.inv(lam * eye - Q - s * dt.dense("anti"))
    cache: Dict[Tuple[int, int], np.ndarray] = {}

    def operand(i: int, j: int) -> np.ndarray:
        if (i, j) not in cache:
            if j == 0:
                if i not in operands:
                    raise NCExpandError(f"no operand registered for A_{i}")
                cache[(i, j)] = np.asarray(operands[i], dtype=complex)
            else:
                prev = operand(i, j - 1)
                cache[(i, j)] = Q @ prev - prev @ Q
        return cache[(i, j)]

    out = np.zeros((n, n), dtype=complex)
    for word, coeff in p.items():
        acc = eye
        for sym in word:
            if sym.kind == "R":
                acc = acc @ R_mat
            elif sym.kind == "Rtilde":
                acc = acc @ RT_mat
            else:
                acc = acc @ operand(sym.i, sym.j)
        out += float(coeff) * acc
    return out
