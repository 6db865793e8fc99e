"""Dense linear algebra, weighted traces and the quadrature engines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from ..config.settings import settings
from ..errors import SflowError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, sparse.spmatrix]


class NotHermitianError(SflowError, ValueError):
    """Raised when a matrix that must be Hermitian is not."""


class EigenSolverError(SflowError):
    """Raised when the Hermitian eigensolver does not converge."""


class FunctionalCalculusDomainError(SflowError, ValueError):
    """Raised when f is undefined at an eigenvalue."""

    def __init__(self, eigenvalue: float, message: str = ""):
        self.eigenvalue = eigenvalue
        super().__init__(message or f"function undefined at eigenvalue {eigenvalue!r}")


class DimensionMismatchError(SflowError, ValueError):
    """Raised when operand shapes disagree."""


class QuadratureError(SflowError):
    """Raised when adaptive quadrature exhausts its subdivision budget."""


class ContourTruncationError(SflowError):
    """Raised when the analytic tail beyond vMax is above tolerance."""

    def __init__(self, message: str, suggested_v_max: float):
        self.suggested_v_max = suggested_v_max
        super().__init__(f"{message}; suggested vMax={suggested_v_max:.6g}")


class HalfLineTailError(SflowError):
    """Raised when the tail majorant never falls below tolerance."""


# ---------------------------------------------------------------------------
# Matrices and traces
# ---------------------------------------------------------------------------

def as_hermitian(H, tol: Optional[float] = None) -> np.ndarray:
    """Validate and return H as a complex ndarray."""
    H = np.asarray(H.toarray() if sparse.issparse(H) else H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {H.shape}")
    tol = settings.hermitian_tol if tol is None else tol
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    defect = float(np.max(np.abs(H - H.conj().T))) if H.size else 0.0
    if defect > tol * scale:
        raise NotHermitianError(f"matrix is not Hermitian: max |H - H*| = {defect:.3e}")
    return H


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.conj().T


def eigh(H) -> EigenDecomposition:
    H = as_hermitian(H)
    try:
        vals, vecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        logger.error(f"eigh failed on a {H.shape[0]}x{H.shape[0]} matrix: {exc}")
        raise EigenSolverError(str(exc)) from exc
    return EigenDecomposition(eigenvalues=vals, eigenvectors=vecs)


def eigh_stacked(H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a stack of Hermitian blocks with shape (..., k, k)."""
    try:
        return np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        logger.error(f"stacked eigh failed for shape {H.shape}: {exc}")
        raise EigenSolverError(str(exc)) from exc


def _apply_scalar(f: Callable, x: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            values = np.asarray(f(x), dtype=complex)
        if values.shape != x.shape:
            values = np.broadcast_to(values, x.shape).astype(complex)
    except (ValueError, ZeroDivisionError, ArithmeticError, TypeError):
        values = None
    if values is not None and np.all(np.isfinite(values)):
        return values
    for lam in x.ravel():
        try:
            v = complex(f(float(lam)))
        except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
            raise FunctionalCalculusDomainError(float(lam)) from exc
        if not np.isfinite(v):
            raise FunctionalCalculusDomainError(float(lam))
    raise FunctionalCalculusDomainError(float("nan"), "function produced non-finite values")


def func_calc(H, f: Callable) -> np.ndarray:
    """f(H) = V diag(f(lambda_i)) V*."""
    dec = eigh(H)
    fx = _apply_scalar(f, dec.eigenvalues)
    V = dec.eigenvectors
    return (V * fx) @ V.conj().T


def func_calc_stacked(H: np.ndarray, f: Callable) -> np.ndarray:
    vals, vecs = eigh_stacked(H)
    fx = _apply_scalar(f, vals)
    return np.einsum("...ij,...j,...kj->...ik", vecs, fx, vecs.conj())


@dataclass(frozen=True)
class TraceWeights:
    """Diagonal positive weight operator W modelling a semifinite trace."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if np.any(values < 0):
            raise ValueError("trace weights must be nonnegative")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @classmethod
    def uniform(cls, n: int) -> "TraceWeights":
        return cls(np.ones(n))


def weight_vector(w, n: int) -> np.ndarray:
    values = w.values if isinstance(w, TraceWeights) else np.asarray(w, dtype=float).ravel()
    if values.size != n:
        raise DimensionMismatchError(f"{values.size} weights for dimension {n}")
    return values


def trace_tau(X, w) -> complex:
    """tau(X) = sum_i w_i X_ii."""
    diag = X.diagonal() if sparse.issparse(X) else np.diagonal(np.asarray(X))
    return complex(np.dot(weight_vector(w, diag.size), diag))


def trace_norm(X, w) -> float:
    """tau(|X|) with |X| = sqrt(X* X)."""
    X = np.asarray(X.toarray() if sparse.issparse(X) else X, dtype=complex)
    if not X.size:
        return 0.0
    abs_x = func_calc(X.conj().T @ X, lambda x: np.sqrt(np.clip(x, 0.0, None)))
    return float(trace_tau(abs_x, w).real)


def op_norm(X) -> float:
    X = np.asarray(X.toarray() if sparse.issparse(X) else X)
    return float(np.linalg.norm(X, 2)) if X.size else 0.0


# ---------------------------------------------------------------------------
# Block structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockPartition:
    """Connected components of the joint sparsity pattern of several matrices."""
    dimension: int
    blocks: Tuple[np.ndarray, ...]
    _groups: Tuple[np.ndarray, ...] = field(default=(), repr=False)

    @classmethod
    def from_matrices(cls, *matrices: ArrayLike, tol: float = 0.0) -> "BlockPartition":
        n = matrices[0].shape[0]
        pattern = sparse.csr_matrix((n, n), dtype=bool)
        for M in matrices:
            if sparse.issparse(M):
                mask = sparse.csr_matrix(abs(M) > tol)
            else:
                mask = sparse.csr_matrix(np.abs(np.asarray(M)) > tol)
            pattern = pattern + mask
        count, labels = connected_components(pattern, directed=False)
        order = np.argsort(labels, kind="stable")
        bounds = np.flatnonzero(np.diff(labels[order])) + 1
        blocks = sorted((np.sort(b) for b in np.split(order, bounds)), key=lambda b: int(b[0]))
        by_size: Dict[int, List[np.ndarray]] = {}
        for b in blocks:
            by_size.setdefault(b.size, []).append(b)
        groups = tuple(np.stack(by_size[k]) for k in sorted(by_size))
        logger.debug(f"block partition: dimension {n}, {count} blocks, sizes {sorted(by_size)}")
        return cls(dimension=n, blocks=tuple(blocks), _groups=groups)

    @property
    def groups(self) -> Tuple[np.ndarray, ...]:
        """Index arrays of shape (nb, k), one per block size."""
        return self._groups

    @staticmethod
    def stack(M: ArrayLike, group: np.ndarray) -> np.ndarray:
        nb, k = group.shape
        rows = np.repeat(group, k, axis=1).ravel()
        cols = np.tile(group, (1, k)).ravel()
        if sparse.issparse(M):
            values = np.asarray(M.tocsr()[rows, cols]).ravel()
        else:
            values = np.asarray(M)[rows, cols]
        return values.astype(complex).reshape(nb, k, k)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG7 = np.array([
    0.0, 0.129484966168869693270611432679082, 0.0, 0.279705391489276667901467771423780,
    0.0, 0.381830050505118944950369775488975, 0.0, 0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS = np.concatenate([_WG7[:-1], _WG7[::-1]])


@dataclass(frozen=True)
class QuadResult:
    value: Union[complex, np.ndarray]
    error: float
    intervals: int = 0


def _gk_apply(f: Callable, lo: np.ndarray, hi: np.ndarray):
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = centre[:, None] + half[:, None] * NODES[None, :]
    values = np.asarray(f(x.ravel()))
    values = values.reshape((lo.size, NODES.size) + values.shape[1:])
    scale = half.reshape((lo.size,) + (1,) * (values.ndim - 2))
    kron = np.tensordot(values, KRONROD, axes=([1], [0])) * scale
    gauss = np.tensordot(values, GAUSS, axes=([1], [0])) * scale
    err = np.abs(kron - gauss).reshape(lo.size, -1).max(axis=1)
    mag = np.abs(np.tensordot(np.abs(values), KRONROD, axes=([1], [0])) * np.abs(scale))
    return kron, err, mag.reshape(lo.size, -1).max(axis=1)


def gauss_kronrod(f: Callable, a: float, b: float, *, rel_tol: float = 1e-10,
                  abs_tol: float = 0.0, max_subdiv: int = 200,
                  points: Sequence[float] = ()) -> QuadResult:
    """Adaptive 15-point Gauss-Kronrod quadrature of a vectorised integrand.

    f receives a 1-D array of nodes and returns values of shape (n,) or (n, ...).
    The per-interval error is |K15 - G7|; intervals whose error exceeds their share
    of the target are bisected until the total error meets max(abs_tol, rel_tol*|I|).
    """
    if a == b:
        return QuadResult(0 * np.asarray(f(np.array([a])))[0], 0.0, 0)
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    edges = np.unique(np.concatenate([[a], [p for p in points if a < p < b], [b]]))
    lo, hi = edges[:-1].astype(float), edges[1:].astype(float)
    kron, err, mag = _gk_apply(f, lo, hi)
    while True:
        order = np.argsort(lo, kind="stable")
        total = kron[order].sum(axis=0)
        total_err = float(err.sum())
        target = max(abs_tol, rel_tol * float(np.max(np.abs(total))),
                     64 * np.finfo(float).eps * float(mag.sum()))
        if total_err <= target:
            break
        if lo.size >= max_subdiv:
            logger.error(f"quadrature on [{a:g}, {b:g}] stalled: error {total_err:.3e} > {target:.3e}")
            raise QuadratureError(
                f"no convergence on [{a:g}, {b:g}] after {lo.size} intervals "
                f"(error {total_err:.3e}, target {target:.3e})"
            )
        bad = err > target / lo.size
        if not np.any(bad):
            bad = err == err.max()
        mid = 0.5 * (lo[bad] + hi[bad])
        new_lo = np.concatenate([lo[bad], mid])
        new_hi = np.concatenate([mid, hi[bad]])
        nk, ne, nm = _gk_apply(f, new_lo, new_hi)
        keep = ~bad
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        kron = np.concatenate([kron[keep], nk])
        err = np.concatenate([err[keep], ne])
        mag = np.concatenate([mag[keep], nm])
    return QuadResult(sign * total, total_err, int(lo.size))


@dataclass(frozen=True)
class ContourSpec:
    """The vertical line l = {a + iv : |v| <= vMax}."""
    a: float = 0.25
    v_max: float = 200.0
    rel_tol: float = 1e-10
    max_subdiv: int = 400
    mode: str = "adaptive"
    tan_nodes: int = 256

    def __post_init__(self):
        if not 0.0 < self.a < 0.5:
            raise ValueError(f"contour abscissa must lie in (0, 1/2), got {self.a}")
        if self.v_max <= 0:
            raise ValueError(f"vMax must be positive, got {self.v_max}")
        if self.mode not in ("adaptive", "tan"):
            raise ValueError(f"unknown contour mode {self.mode!r}")

    @classmethod
    def from_settings(cls, **overrides) -> "ContourSpec":
        values = dict(a=settings.contour_a, v_max=settings.contour_v_max,
                      rel_tol=settings.contour_rel_tol, max_subdiv=settings.contour_max_subdiv)
        values.update(overrides)
        return cls(**values)

    def with_v_max(self, v_max: float) -> "ContourSpec":
        return ContourSpec(self.a, v_max, self.rel_tol, self.max_subdiv, self.mode, self.tan_nodes)


def _geometric_points(limit: float, start: float = 1.0) -> List[float]:
    pts = []
    x = start
    while x < limit:
        pts.append(x)
        x *= 2.0
    return pts


def _line_tan(f: Callable, spec: ContourSpec) -> QuadResult:
    def integral(n):
        theta, w = np.polynomial.legendre.leggauss(n)
        theta = theta * (np.pi / 2)
        v = np.tan(theta)
        vals = np.asarray(f(spec.a + 1j * v))
        jac = (np.pi / 2) / np.cos(theta) ** 2
        weights = (w * jac).reshape((n,) + (1,) * (vals.ndim - 1))
        return -(vals * weights).sum(axis=0) / (2 * np.pi)

    fine = integral(spec.tan_nodes)
    coarse = integral(spec.tan_nodes // 2)
    return QuadResult(fine, float(np.max(np.abs(fine - coarse))), spec.tan_nodes)


def quad_vertical_line(f: Callable, spec: ContourSpec, decay: float, *,
                       abs_tol: float = 0.0, auto_extend: bool = False) -> QuadResult:
    """(1/2 pi i) * integral of f over l, oriented so poles right of l count positively.

    f receives a complex array of nodes on l. `decay` is the exponent d with
    |f(a+iv)| = O(|v|^-d); the neglected tail is bounded by C V^(1-d) / (pi (d-1)).
    """
    if spec.mode == "tan":
        return _line_tan(f, spec)
    if decay <= 1:
        raise ValueError(f"line integrand must decay faster than 1/|v|, got exponent {decay}")
    v_max = spec.v_max
    for attempt in range(settings.contour_max_extensions + 1):
        pts = _geometric_points(v_max)
        points = sorted([-p for p in pts] + [0.0] + pts)
        res = gauss_kronrod(lambda v: f(spec.a + 1j * v), -v_max, v_max,
                            rel_tol=spec.rel_tol, abs_tol=abs_tol * 2 * np.pi,
                            max_subdiv=spec.max_subdiv, points=points)
        value = -res.value / (2 * np.pi)
        ends = np.asarray(f(np.array([spec.a + 1j * v_max, spec.a - 1j * v_max])))
        const = float(np.max(np.abs(ends))) * v_max ** decay
        tail = const * v_max ** (1 - decay) / (np.pi * (decay - 1))
        target = max(spec.rel_tol * float(np.max(np.abs(value))), abs_tol)
        if tail <= target:
            return QuadResult(value, res.error / (2 * np.pi) + tail, res.intervals)
        suggested = 1.5 * (const / (np.pi * (decay - 1) * max(target, 1e-300))) ** (1.0 / (decay - 1))
        if not auto_extend:
            raise ContourTruncationError(
                f"line truncation too small: tail {tail:.3e} above {target:.3e}", suggested)
        logger.debug(f"extending contour height from {v_max:.4g} to {suggested:.4g} (attempt {attempt + 1})")
        v_max = suggested
    raise ContourTruncationError("contour height still too small after extensions", v_max)


def quad_half_line(g: Callable, tail: Callable[[float], float], *,
                   rel_tol: Optional[float] = None, abs_tol: float = 0.0,
                   s_start: Optional[float] = None, max_doublings: Optional[int] = None,
                   max_subdiv: int = 400) -> QuadResult:
    """Integral of g over [0, inf); tail(S) must majorise |integral over [S, inf)|."""
    rel_tol = settings.half_line_rel_tol if rel_tol is None else rel_tol
    S = settings.half_line_start if s_start is None else s_start
    max_doublings = settings.half_line_max_doublings if max_doublings is None else max_doublings
    res = gauss_kronrod(g, 0.0, S, rel_tol=rel_tol, abs_tol=abs_tol,
                        max_subdiv=max_subdiv, points=_geometric_points(S, 0.5))
    value, error, intervals = res.value, res.error, res.intervals
    for _ in range(max_doublings + 1):
        bound = float(tail(S))
        target = max(rel_tol * float(np.max(np.abs(value))), abs_tol)
        if bound <= target:
            return QuadResult(value, error + bound, intervals)
        piece = gauss_kronrod(g, S, 2 * S, rel_tol=rel_tol,
                              abs_tol=max(abs_tol, 0.1 * target), max_subdiv=max_subdiv)
        value = value + piece.value
        error += piece.error
        intervals += piece.intervals
        S *= 2
    logger.error(f"half-line tail still {bound:.3e} at S={S:g}")
    raise HalfLineTailError(f"tail majorant {bound:.3e} never fell below tolerance (S={S:g})")
