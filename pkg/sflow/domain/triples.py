"""Finite spectral triples, the fourfold doubling and the trace-norm tail bound."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import sparse

from ..config.settings import settings
from ..errors import SflowError
from . import numkernel as nk

logger = logging.getLogger(__name__)

SIGMA_1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_3 = np.array([[1, 0], [0, -1]], dtype=complex)
TRUNCATION_MODES = ("plain", "circulant", "dense", "mixed")


class TripleConstructionError(SflowError, ValueError):
    """Raised when a triple violates its structural invariants."""


class NonUnitaryError(SflowError, ValueError):
    """Raised when a generator that must be unitary is not."""


class TailBoundPreconditionError(SflowError, ValueError):
    """Raised when the trace-norm tail bound is used outside its hypothesis."""


@dataclass(frozen=True)
class CircleBlock:
    """A diagonal block of D = diag(-N..N) carrying the circle model."""
    start: int
    cutoff: int
    weight: float = 1.0

    @property
    def size(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class SpectralTripleRep:
    D: np.ndarray
    gens: Mapping[str, np.ndarray]
    weights: nk.TraceWeights
    p: float = 1.0
    label: str = ""
    truncation_mode: str = "dense"
    circle_blocks: Tuple[CircleBlock, ...] = ()

    def __post_init__(self):
        D = nk.as_hermitian(self.D)
        n = D.shape[0]
        weights = self.weights if isinstance(self.weights, nk.TraceWeights) else nk.TraceWeights(self.weights)
        if len(weights) != n:
            raise TripleConstructionError(f"{len(weights)} weights for dimension {n}")
        gens = {}
        for name, a in self.gens.items():
            a = np.asarray(a, dtype=complex)
            if a.shape != (n, n):
                raise TripleConstructionError(f"generator {name!r} has shape {a.shape}, expected {(n, n)}")
            gens[name] = a
        if self.p < 1:
            raise TripleConstructionError(f"spectral dimension must be >= 1, got {self.p}")
        if self.truncation_mode not in TRUNCATION_MODES:
            raise TripleConstructionError(f"unknown truncation mode {self.truncation_mode!r}")
        w = weights.values
        comm = np.max(np.abs(w[:, None] * D - D * w[None, :])) if n else 0.0
        if comm > settings.commutation_tol * max(1.0, float(np.max(np.abs(D))) if n else 1.0):
            raise TripleConstructionError(f"weight operator does not commute with D (defect {comm:.3e})")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "gens", gens)
        object.__setattr__(self, "weights", weights)

    @property
    def dimension(self) -> int:
        return self.D.shape[0]

    @property
    def is_circle_type(self) -> bool:
        return bool(self.circle_blocks)

    def generator(self, name: str) -> np.ndarray:
        try:
            return self.gens[name]
        except KeyError:
            raise TripleConstructionError(f"triple {self.label!r} has no generator {name!r}") from None

    def commutator(self, a: np.ndarray) -> np.ndarray:
        """[D, a]."""
        return self.D @ a - a @ self.D

    def tau(self, X) -> complex:
        return nk.trace_tau(X, self.weights)

    def default_edge_margin(self) -> int:
        if not self.circle_blocks or self.truncation_mode == "dense":
            return 0
        return max(1, min(b.cutoff for b in self.circle_blocks) // 8)

    def edge_mask(self, margin: Optional[int] = None) -> np.ndarray:
        """True on the `margin` outermost indices of every circle block."""
        margin = self.default_edge_margin() if margin is None else margin
        mask = np.zeros(self.dimension, dtype=bool)
        if margin <= 0:
            return mask
        blocks = self.circle_blocks or (CircleBlock(0, (self.dimension - 1) // 2),)
        for b in blocks:
            stop = min(b.stop, self.dimension)
            mask[b.start:b.start + margin] = True
            mask[max(b.start, stop - margin):stop] = True
        return mask

    def unitarity_defect(self, name: str, margin: Optional[int] = None) -> float:
        """max |u*u - 1|, |uu* - 1|, restricted to non-edge indices for plain truncations."""
        u = self.generator(name)
        eye = np.eye(self.dimension)
        left = u.conj().T @ u - eye
        right = u @ u.conj().T - eye
        if self.truncation_mode in ("plain", "mixed"):
            keep = ~self.edge_mask(self.default_edge_margin() if margin is None else margin)
            left = left[np.ix_(keep, keep)]
            right = right[np.ix_(keep, keep)]
        return float(max(np.max(np.abs(left), initial=0.0), np.max(np.abs(right), initial=0.0)))

    def require_unitary(self, name: str) -> np.ndarray:
        defect = self.unitarity_defect(name)
        if defect > settings.unitary_tol:
            raise NonUnitaryError(f"generator {name!r} of {self.label!r} is not unitary (defect {defect:.3e})")
        return self.generator(name)

    def with_generator(self, name: str, a: np.ndarray) -> "SpectralTripleRep":
        gens = dict(self.gens)
        gens[name] = a
        return replace(self, gens=gens)


def circle_triple(N: int, truncation_mode: str = "plain", p: float = 1.0) -> SpectralTripleRep:
    """D = diag(-N..N) with u the shift e_n -> e_{n+1}."""
    if N < 1:
        raise TripleConstructionError(f"cutoff must be >= 1, got {N}")
    if truncation_mode not in ("plain", "circulant"):
        raise TripleConstructionError(f"circle truncation must be plain or circulant, got {truncation_mode!r}")
    dim = 2 * N + 1
    u = np.eye(dim, k=-1, dtype=complex)
    if truncation_mode == "circulant":
        u[0, dim - 1] = 1.0
    return SpectralTripleRep(
        D=np.diag(np.arange(-N, N + 1)).astype(complex),
        gens={"u": u},
        weights=nk.TraceWeights.uniform(dim),
        p=p,
        label=f"circle-{truncation_mode}-N{N}",
        truncation_mode=truncation_mode,
        circle_blocks=(CircleBlock(0, N),),
    )


def weighted_sum_triple(t1: SpectralTripleRep, t2: SpectralTripleRep,
                        w1: float, w2: float) -> SpectralTripleRep:
    if set(t1.gens) != set(t2.gens):
        raise TripleConstructionError(f"generator names differ: {sorted(t1.gens)} vs {sorted(t2.gens)}")
    n1 = t1.dimension

    def block(a, b):
        out = np.zeros((n1 + b.shape[0],) * 2, dtype=complex)
        out[:n1, :n1] = a
        out[n1:, n1:] = b
        return out

    blocks = tuple(replace(b, weight=b.weight * w1) for b in t1.circle_blocks)
    blocks += tuple(replace(b, start=b.start + n1, weight=b.weight * w2) for b in t2.circle_blocks)
    if bool(t1.circle_blocks) != bool(t2.circle_blocks):
        blocks = ()
    mode = t1.truncation_mode if t1.truncation_mode == t2.truncation_mode else "mixed"
    return SpectralTripleRep(
        D=block(t1.D, t2.D),
        gens={name: block(t1.gens[name], t2.gens[name]) for name in t1.gens},
        weights=nk.TraceWeights(np.concatenate([w1 * t1.weights.values, w2 * t2.weights.values])),
        p=max(t1.p, t2.p),
        label=f"{t1.label}[{w1:g}]+{t2.label}[{w2:g}]",
        truncation_mode=mode,
        circle_blocks=blocks,
    )


def power_name(name: str, w: int) -> str:
    return f"{name}^{w}"


def generator_power(t: SpectralTripleRep, name: str, w: int) -> SpectralTripleRep:
    """Adds u^w (u*^|w| for w < 0) under the name 'u^w'."""
    u = t.generator(name)
    base = u if w >= 0 else u.conj().T
    return t.with_generator(power_name(name, w), np.linalg.matrix_power(base, abs(int(w))))


def iterated_comm(t: SpectralTripleRep, T: np.ndarray, n: int) -> np.ndarray:
    """T^(n) = [D^2, [D^2, ... [D^2, T]]]."""
    if n < 0:
        raise ValueError(f"commutator depth must be >= 0, got {n}")
    D2 = t.D @ t.D
    out = np.asarray(T, dtype=complex)
    for _ in range(n):
        out = D2 @ out - out @ D2
    return out


def tail_bound_big(t: SpectralTripleRep, norm_a: float, p_eff: float, r_re: float,
                   eps: float, s: float, *, strict: bool = True) -> float:
    """C_{p+eps} (1/2 + s^2 - s|A|)^(-Re r + eps) bounding the trace norm of (1+D^2+s^2+sA)^(-p/2-r)."""
    if strict and norm_a >= math.sqrt(2):
        raise TailBoundPreconditionError(f"tail bound needs |A| < sqrt(2), got {norm_a:.4g}")
    if r_re <= 0 or eps <= 0:
        raise TailBoundPreconditionError(f"tail bound needs Re r > 0 and eps > 0, got r={r_re}, eps={eps}")
    base = 0.5 + s * s - s * norm_a
    if base <= 0:
        raise TailBoundPreconditionError(f"1/2 + s^2 - s|A| = {base:.3e} is not positive at s={s}")
    return _c_p_eps(t, p_eff, eps) * base ** (-r_re + eps)


def _c_p_eps(t: SpectralTripleRep, p_eff: float, eps: float) -> float:
    # positive and commuting with W, so the trace norm is the weighted trace
    f = nk.func_calc(t.D, lambda x: (0.5 + x * x) ** (-(p_eff / 2 + eps)))
    return float(t.tau(f).real)


# ---------------------------------------------------------------------------
# Fourfold doubling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoubledTriple:
    """D~ = s2 x 1 x D, q = s3 x [[0, -iu*], [iu, 0]], Gamma = s2 x s3 x 1, rho = s2 x 1 x 1."""
    base: SpectralTripleRep
    u_name: str
    Dt: sparse.csr_matrix
    q: sparse.csr_matrix
    gamma: sparse.csr_matrix
    rho: sparse.csr_matrix
    anti: sparse.csr_matrix
    weights4: nk.TraceWeights

    @property
    def dimension(self) -> int:
        return self.Dt.shape[0]

    def supertrace(self, X) -> complex:
        """S tau(X) = tau(Gamma X) / 2."""
        GX = self.gamma @ X
        return 0.5 * nk.trace_tau(GX, self.weights4)

    def dense(self, name: str) -> np.ndarray:
        return getattr(self, name).toarray()

    def relation_defects(self) -> Dict[str, float]:
        eye = sparse.identity(self.dimension, format="csr")
        q, g, rho, Dt = self.q, self.gamma, self.rho, self.Dt

        def size(M):
            M = sparse.csr_matrix(M)
            return float(abs(M).max()) if M.nnz else 0.0

        return {
            "q2": size(q @ q - eye),
            "gamma2": size(g @ g - eye),
            "rho2": size(rho @ rho - eye),
            "gamma_q": size(g @ q - q @ g),
            "gamma_Dt": size(g @ Dt - Dt @ g),
            "rho_gamma": size(rho @ g - g @ rho),
            "rho_q": size(rho @ q + q @ rho),
        }

    def path_operator(self, r: float, s: float) -> sparse.csr_matrix:
        """D_{r,s} = (1-r) D~ - r q D~ q + s q."""
        return ((1 - r) * self.Dt - r * (self.q @ self.Dt @ self.q) + s * self.q).tocsr()

    def flow_operator(self, s: float) -> sparse.csr_matrix:
        """1 + D~^2 + s {D~, q} + s^2."""
        eye = sparse.identity(self.dimension, format="csr")
        return ((1 + s * s) * eye + self.Dt @ self.Dt + s * self.anti).tocsr()


def anti_block_formula(t: SpectralTripleRep, u: np.ndarray) -> sparse.csr_matrix:
    """s1 x [[0, [D, u*]], [-[D, u], 0]]."""
    inner = sparse.bmat([[None, sparse.csr_matrix(t.commutator(u.conj().T))],
                         [sparse.csr_matrix(-t.commutator(u)), None]])
    return sparse.kron(SIGMA_1, inner, format="csr")


def double_up(t: SpectralTripleRep, u_name: str) -> DoubledTriple:
    u = t.require_unitary(u_name)
    n = t.dimension
    eye_n = sparse.identity(n, format="csr")
    D = sparse.csr_matrix(t.D)
    Dt = sparse.kron(SIGMA_2, sparse.kron(np.eye(2), D), format="csr")
    inner = sparse.bmat([[None, sparse.csr_matrix(-1j * u.conj().T)],
                         [sparse.csr_matrix(1j * u), None]])
    q = sparse.kron(SIGMA_3, inner, format="csr")
    gamma = sparse.kron(SIGMA_2, sparse.kron(SIGMA_3, eye_n), format="csr")
    rho = sparse.kron(SIGMA_2, sparse.kron(np.eye(2), eye_n), format="csr")
    anti = (Dt @ q + q @ Dt).tocsr()
    block = anti_block_formula(t, u)
    diff = anti - block
    defect = float(abs(diff).max()) if diff.nnz else 0.0
    if defect > 1e-10 * max(1.0, nk.op_norm(t.D)):
        raise TripleConstructionError(f"anticommutator disagrees with its block formula (defect {defect:.3e})")
    logger.debug(f"doubled {t.label!r} along {u_name!r}: dimension {4 * n}")
    return DoubledTriple(
        base=t, u_name=u_name, Dt=Dt, q=q, gamma=gamma, rho=rho, anti=anti,
        weights4=nk.TraceWeights(np.tile(t.weights.values, 4)),
    )


def supertrace_word(dt: DoubledTriple, s: float, lam: complex, k: int) -> complex:
    """S tau(q (R {D~,q})^k R) with R = (lam - (1 + s^2 + D~^2))^-1."""
    eye = np.eye(dt.dimension)
    Dt = dt.dense("Dt")
    R = np.linalg.inv(lam * eye - ((1 + s * s) * eye + Dt @ Dt))
    step = R @ dt.dense("anti")
    word = dt.dense("q")
    for _ in range(k):
        word = word @ step
    return complex(dt.supertrace(word @ R))


# ---------------------------------------------------------------------------
# JSON description
# ---------------------------------------------------------------------------

class CircleBlockModel(BaseModel):
    start: int
    cutoff: int
    weight: float = 1.0


class TripleDescription(BaseModel):
    """JSON form: complex entries are [re, im] pairs; D may be a diagonal list."""
    label: str = ""
    dimension: int
    D: Union[List[List[float]], List[List[List[float]]]]
    generators: Dict[str, List[List[List[float]]]] = Field(default_factory=dict)
    weights: Optional[List[float]] = None
    p: float = 1.0
    truncationMode: Literal["plain", "circulant", "dense", "mixed"] = "dense"
    circleBlocks: List[CircleBlockModel] = Field(default_factory=list)


def _encode(M: np.ndarray) -> List:
    M = np.asarray(M, dtype=complex)
    return np.stack([M.real, M.imag], axis=-1).tolist()


def _decode(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def triple_to_json(t: SpectralTripleRep) -> Dict:
    diagonal = np.allclose(t.D, np.diag(np.diag(t.D)), atol=0.0)
    desc = TripleDescription(
        label=t.label,
        dimension=t.dimension,
        D=_encode(np.diag(t.D)) if diagonal else _encode(t.D),
        generators={name: _encode(a) for name, a in t.gens.items()},
        weights=t.weights.values.tolist(),
        p=t.p,
        truncationMode=t.truncation_mode,
        circleBlocks=[CircleBlockModel(start=b.start, cutoff=b.cutoff, weight=b.weight) for b in t.circle_blocks],
    )
    return desc.model_dump()


def triple_from_json(data: Union[Dict, str, Path]) -> SpectralTripleRep:
    if isinstance(data, Path):
        data = json.loads(data.read_text(encoding="utf-8"))
    elif isinstance(data, str):
        data = json.loads(data)
    desc = TripleDescription.model_validate(data)
    D = _decode(desc.D)
    if D.ndim == 1:
        D = np.diag(D)
    if D.shape != (desc.dimension, desc.dimension):
        raise TripleConstructionError(f"D has shape {D.shape}, declared dimension {desc.dimension}")
    weights = desc.weights if desc.weights is not None else [1.0] * desc.dimension
    return SpectralTripleRep(
        D=D,
        gens={name: _decode(a) for name, a in desc.generators.items()},
        weights=nk.TraceWeights(weights),
        p=desc.p,
        label=desc.label,
        truncation_mode=desc.truncationMode,
        circle_blocks=tuple(CircleBlock(b.start, b.cutoff, b.weight) for b in desc.circleBlocks),
    )
