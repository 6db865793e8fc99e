"""Spectral flow engines: eigenvalue crossings, the PuP index, the integral formula and the doubled flow."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse, special

from ..config.settings import settings
from ..domain import numkernel as nk
from ..domain.constants import ParameterRangeError, c_beta
from ..domain.triples import DoubledTriple, SpectralTripleRep, tail_bound_big
from ..errors import SflowError

logger = logging.getLogger(__name__)

_CHUNK_ENTRIES = 1 << 22


class CrossingNotStableError(SflowError):
    """Raised when refining the crossing grid keeps changing the count."""

    def __init__(self, previous: float, current: float, steps: int):
        self.previous = previous
        self.current = current
        self.steps = steps
        super().__init__(f"crossing count not stable at {steps} steps: {previous!r} vs {current!r}")


class KernelPrecisionError(SflowError):
    """Raised when a singular value falls inside the kernel dead zone."""


class FlowMethod(str, Enum):
    CROSSING = "crossing"
    INDEX_PUP = "indexPuP"
    CP_INTEGRAL = "cpIntegral"
    DOUBLED = "doubled"


@dataclass
class FlowReport:
    method: FlowMethod
    value: float
    error_estimate: float = 0.0
    diagnostics: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.error_estimate < 0:
            raise ValueError(f"error estimate must be >= 0, got {self.error_estimate}")

    def to_json(self) -> Dict:
        return {
            "method": self.method.value,
            "value": self.value,
            "errorEstimate": self.error_estimate,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class FlowPath:
    """t -> D_t on [0, 1]; linear unless a sampler is given."""
    D0: np.ndarray
    D1: np.ndarray
    sampler: Optional[Callable[[float], np.ndarray]] = None
    steps: int = 16
    triple: Optional[SpectralTripleRep] = None

    def __post_init__(self):
        D0 = nk.as_hermitian(self.D0)
        D1 = nk.as_hermitian(self.D1)
        if D0.shape != D1.shape:
            raise nk.DimensionMismatchError(f"endpoints have shapes {D0.shape} and {D1.shape}")
        if self.steps < 2:
            raise ParameterRangeError(f"a flow path needs at least 2 steps, got {self.steps}")
        object.__setattr__(self, "D0", D0)
        object.__setattr__(self, "D1", D1)
        if self.sampler is not None:
            for t, D in ((0.0, D0), (1.0, D1)):
                gap = float(np.max(np.abs(np.asarray(self.sampler(t)) - D)))
                if gap > 1e-12:
                    raise ParameterRangeError(f"sampler({t:g}) misses the endpoint by {gap:.3e}")

    def sample(self, t: float) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(t), dtype=complex)
        return (1 - t) * self.D0 + t * self.D1


def linear_flow_path(t: SpectralTripleRep, u_name: str, steps: Optional[int] = None) -> FlowPath:
    """D -> u* D u."""
    u = t.generator(u_name)
    D1 = u.conj().T @ t.D @ u
    return FlowPath(t.D, 0.5 * (D1 + D1.conj().T), steps=steps or settings.crossing_initial_steps, triple=t)


def _interior_weights(t: SpectralTripleRep, edge_margin: Optional[int]) -> np.ndarray:
    return np.where(t.edge_mask(edge_margin), 0.0, t.weights.values)


def _edge_filtered_mass(Y: np.ndarray, w: np.ndarray, edge: np.ndarray, threshold: float) -> float:
    """tau-dimension of span(Y) over directions with at most `threshold` mass on edge indices."""
    if Y.shape[1] == 0:
        return 0.0
    if not edge.any():
        return float(np.sum(w[:, None] * np.abs(Y) ** 2))
    mass = Y.conj().T @ (edge[:, None] * Y)
    mu, c = np.linalg.eigh(0.5 * (mass + mass.conj().T))
    Z = Y @ c[:, mu <= threshold]
    return float(np.sum(w[:, None] * np.abs(Z) ** 2))


# ---------------------------------------------------------------------------
# Crossing engine
# ---------------------------------------------------------------------------

def _crossing_count(path: FlowPath, weights: np.ndarray, edge: np.ndarray, steps: int) -> Tuple[float, int]:
    ts = np.linspace(0.0, 1.0, steps + 1)
    samples = [path.sample(t) for t in ts]
    partition = nk.BlockPartition.from_matrices(*samples)
    threshold = settings.edge_mass_threshold
    scale = max(1.0, nk.op_norm(path.D0), nk.op_norm(path.D1))
    zero_tol = 1e-12 * scale
    total = 0.0
    windows = 0
    for group in partition.groups:
        stacks = np.stack([partition.stack(S, group) for S in samples])
        vals, vecs = nk.eigh_stacked(stacks)
        gaps = np.linalg.norm(stacks[1:] - stacks[:-1], ord=2, axis=(-2, -1))
        delta = gaps * (1 + 1e-4) + 1e-12
        near = np.abs(vals[:-1]) <= delta[..., None]
        for i, b in zip(*np.nonzero(near.any(axis=-1))):
            win = near[i, b]
            idx = group[b]
            w, e = weights[idx], edge[idx]
            after = win & (vals[i + 1, b] >= -zero_tol)
            before = win & (vals[i, b] >= -zero_tol)
            total += (_edge_filtered_mass(vecs[i + 1, b][:, after], w, e, threshold)
                      - _edge_filtered_mass(vecs[i, b][:, before], w, e, threshold))
            windows += 1
    return total, windows


def crossing_flow(path: FlowPath, weights=None, edge_margin: Optional[int] = None) -> FlowReport:
    """Weighted net count of eigenvalues crossing into [0, inf) along the path, refined until stable."""
    n = path.D0.shape[0]
    if weights is None:
        weights = path.triple.weights if path.triple is not None else nk.TraceWeights.uniform(n)
    w = nk.weight_vector(weights, n)
    if path.triple is not None:
        edge = path.triple.edge_mask(edge_margin)
    else:
        edge = np.zeros(n, dtype=bool)
        if edge_margin:
            edge[:edge_margin] = True
            edge[n - edge_margin:] = True
    steps = path.steps
    previous, _ = _crossing_count(path, w, edge, steps)
    last = previous
    for refinement in range(1, settings.crossing_max_refinements + 1):
        steps *= 2
        current, windows = _crossing_count(path, w, edge, steps)
        logger.debug(f"crossing refinement {refinement}: {steps} steps, value {current:.12g}, {windows} windows")
        if abs(current - previous) <= 1e-9 * max(1.0, abs(current)):
            return FlowReport(FlowMethod.CROSSING, float(current), abs(current - previous),
                              {"steps": steps, "refinements": refinement, "windows": windows})
        previous, last = current, previous
    logger.error(f"crossing flow did not stabilise after {settings.crossing_max_refinements} refinements")
    raise CrossingNotStableError(last, previous, steps)


# ---------------------------------------------------------------------------
# Index engine
# ---------------------------------------------------------------------------

def index_pup(t: SpectralTripleRep, u_name: str, edge_margin: Optional[int] = None) -> FlowReport:
    """Weighted index of PuP on PH with P = chi_[0,inf)(D); sf(D, u*Du) = -index."""
    u = t.generator(u_name)
    dec = nk.eigh(t.D)
    Vp = dec.eigenvectors[:, dec.eigenvalues >= -1e-12 * max(1.0, nk.op_norm(t.D))]
    T = Vp.conj().T @ u @ Vp
    left, sv, right_h = np.linalg.svd(T)
    low, high = settings.kernel_dead_zone_low, settings.kernel_dead_zone_high
    ambiguous = sv[(sv >= low) & (sv <= high)]
    if ambiguous.size:
        logger.error(f"{ambiguous.size} singular values of PuP in the dead zone [{low:g}, {high:g}]")
        raise KernelPrecisionError(f"singular values {ambiguous.tolist()} inside [{low:g}, {high:g}]")
    zero = sv < low
    kernel = Vp @ right_h.conj().T[:, zero]
    cokernel = Vp @ left[:, zero]
    edge = t.edge_mask(edge_margin)
    w = t.weights.values
    threshold = settings.edge_mass_threshold
    dim_ker = _edge_filtered_mass(kernel, w, edge, threshold)
    dim_coker = _edge_filtered_mass(cokernel, w, edge, threshold)
    index = dim_ker - dim_coker
    logger.info(f"index of PuP on {t.label!r}: ker {dim_ker:g}, coker {dim_coker:g}")
    return FlowReport(FlowMethod.INDEX_PUP, float(-index), 0.0,
                      {"index": float(index), "kernel": dim_ker, "cokernel": dim_coker,
                       "smallestSingularValue": float(sv.min()) if sv.size else None})


# ---------------------------------------------------------------------------
# Integral formula
# ---------------------------------------------------------------------------

def _stacked_trace(prefactor: np.ndarray, F: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_b tr(W_b P_b F_b) for F of shape (nodes, nb, k, k)."""
    return np.einsum("bij,nbji,bi->n", prefactor, F, w)


def _chunked(nodes: np.ndarray, block_entries: int) -> List[slice]:
    size = max(1, _CHUNK_ENTRIES // max(1, block_entries))
    return [slice(i, i + size) for i in range(0, nodes.size, size)]


def cp_integral_flow(t: SpectralTripleRep, u_name: str, n: float,
                     edge_margin: Optional[int] = None) -> FlowReport:
    """(1/C_{n/2}) int_0^1 tau(u[D,u*] (1 + (D + t u[D,u*])^2)^(-n/2)) dt, which is sf(D, u D u*)."""
    if n <= t.p:
        raise ParameterRangeError(f"integral formula needs n > p = {t.p:g}, got {n}")
    u = t.require_unitary(u_name)
    X = u @ t.commutator(u.conj().T)
    X = 0.5 * (X + X.conj().T)
    w = _interior_weights(t, edge_margin)
    partition = nk.BlockPartition.from_matrices(t.D, X)
    pieces = []
    for group in partition.groups:
        pieces.append((partition.stack(t.D, group), partition.stack(X, group), w[group]))

    def integrand(nodes):
        nodes = np.asarray(nodes, dtype=float).ravel()
        out = np.zeros(nodes.size, dtype=complex)
        for SD, SX, wg in pieces:
            for sl in _chunked(nodes, SD.size):
                M = SD[None] + nodes[sl, None, None, None] * SX[None]
                F = nk.func_calc_stacked(M, lambda x: (1 + x * x) ** (-n / 2))
                out[sl] += _stacked_trace(SX, F, wg)
        return out

    res = nk.gauss_kronrod(integrand, 0.0, 1.0, rel_tol=settings.interval_rel_tol,
                           abs_tol=1e-12 * max(1.0, float(np.sum(w))),
                           max_subdiv=settings.interval_max_subdiv)
    norm = c_beta(n / 2)
    value = complex(res.value) / norm
    logger.info(f"integral formula on {t.label!r}, n={n:g}: {value.real:.10g}")
    return FlowReport(FlowMethod.CP_INTEGRAL, float(value.real), res.error / norm,
                      {"n": n, "intervals": res.intervals, "blocks": len(partition.blocks),
                       "imag": float(value.imag)})


def cp_integral_flow_r(t: SpectralTripleRep, u_name: str, r: float,
                       edge_margin: Optional[int] = None) -> FlowReport:
    """The integral formula with n = p + 2r."""
    if r <= 0:
        raise ParameterRangeError(f"r must be positive, got {r}")
    return cp_integral_flow(t, u_name, t.p + 2 * r, edge_margin)


# ---------------------------------------------------------------------------
# Doubled flow
# ---------------------------------------------------------------------------

def _doubled_weights(dt: DoubledTriple, edge_margin: Optional[int]) -> np.ndarray:
    return np.tile(_interior_weights(dt.base, edge_margin), 4)


def doubled_flow(dt: DoubledTriple, p_eff: Optional[float] = None, r: float = 1.0,
                 edge_margin: Optional[int] = None) -> FlowReport:
    """(1/C_{p/2+r}) int_0^inf S tau(q (1 + D~^2 + s{D~,q} + s^2)^(-p/2-r)) ds, which is sf(D, u*Du)."""
    if r <= 0:
        raise ParameterRangeError(f"r must be positive, got {r}")
    p_eff = dt.base.p if p_eff is None else p_eff
    beta = p_eff / 2 + r
    n4 = dt.dimension
    base = (sparse.identity(n4, format="csr", dtype=complex) + dt.Dt @ dt.Dt).tocsr()
    partition = nk.BlockPartition.from_matrices(base, dt.anti)
    gq = (dt.gamma @ dt.q).tocsr()
    w4 = _doubled_weights(dt, edge_margin)
    pieces = []
    norm_anti = 0.0
    for group in partition.groups:
        SA = partition.stack(dt.anti, group)
        norm_anti = max(norm_anti, float(np.max(np.linalg.norm(SA, ord=2, axis=(-2, -1)))))
        pieces.append((partition.stack(base, group), SA, partition.stack(gq, group), w4[group]))
    norm_q = nk.op_norm(dt.base.generator(dt.u_name))
    weight_total = float(np.sum(w4)) / 4

    def integrand(nodes):
        nodes = np.asarray(nodes, dtype=float).ravel()
        out = np.zeros(nodes.size, dtype=complex)
        for SB, SA, SG, wg in pieces:
            eye = np.eye(SB.shape[-1])
            for sl in _chunked(nodes, SB.size):
                s = nodes[sl, None, None, None]
                X = SB[None] + s * SA[None] + (s * s) * eye
                F = nk.func_calc_stacked(X, lambda x: np.clip(x, 1e-300, None) ** (-beta))
                out[sl] += 0.5 * _stacked_trace(SG, F, wg)
        return out

    eps = settings.tail_eps
    rho = r - eps

    def tail(S):
        if S < 2 * norm_anti:
            return math.inf
        bound = 2 * weight_total * norm_q * 2 ** beta * S ** (1 - 2 * beta) / (2 * beta - 1)
        if rho > 0.5:
            c_base = tail_bound_big(dt.base, 0.0, p_eff, r, eps, 0.0) * 0.5 ** rho
            bound = min(bound, 2 * norm_q * c_base * 2 ** rho * S ** (1 - 2 * rho) / (2 * rho - 1))
        return bound

    try:
        res = nk.quad_half_line(integrand, tail, abs_tol=1e-12 * max(1.0, weight_total))
    except SflowError as exc:
        logger.error(f"doubled flow on {dt.base.label!r} failed: {exc}")
        raise
    norm = c_beta(beta)
    value = complex(res.value) / norm
    logger.info(f"doubled flow on {dt.base.label!r}, p={p_eff:g}, r={r:g}: {value.real:.10g}")
    return FlowReport(FlowMethod.DOUBLED, float(value.real), res.error / norm,
                      {"pEff": p_eff, "r": r, "intervals": res.intervals,
                       "blocks": len(partition.blocks), "imag": float(value.imag)})


# ---------------------------------------------------------------------------
# Path lemmas on the doubled triple
# ---------------------------------------------------------------------------

def factor_two_integral(dt: DoubledTriple, n: float, edge_margin: Optional[int] = None) -> float:
    """int_0^1 S tau(Ddot_r (1 + D_r^2)^(-n/2)) dr for D_r = (1-r) D~ - r q D~ q."""
    qdq = (dt.q @ dt.Dt @ dt.q).tocsr()
    ddot = (-dt.Dt - qdq).tocsr()
    prefactor = (dt.gamma @ ddot).tocsr()
    partition = nk.BlockPartition.from_matrices(dt.Dt, qdq)
    w4 = _doubled_weights(dt, edge_margin)
    pieces = [(partition.stack(dt.Dt, g), partition.stack(ddot, g), partition.stack(prefactor, g), w4[g])
              for g in partition.groups]

    def integrand(nodes):
        nodes = np.asarray(nodes, dtype=float).ravel()
        out = np.zeros(nodes.size, dtype=complex)
        for SD, SDot, SP, wg in pieces:
            for sl in _chunked(nodes, SD.size):
                M = SD[None] + nodes[sl, None, None, None] * SDot[None]
                F = nk.func_calc_stacked(M, lambda x: (1 + x * x) ** (-n / 2))
                out[sl] += 0.5 * _stacked_trace(SP, F, wg)
        return out

    res = nk.gauss_kronrod(integrand, 0.0, 1.0, rel_tol=settings.interval_rel_tol,
                           abs_tol=1e-12, max_subdiv=settings.interval_max_subdiv)
    return float(complex(res.value).real)


def potential_function(n: float) -> Callable[[np.ndarray], np.ndarray]:
    """F(x) = int_0^x (1+y^2)^(-n/2) dy = x 2F1(1/2, n/2; 3/2; -x^2)."""
    return lambda x: x * special.hyp2f1(0.5, n / 2, 1.5, -(x * x))


def one_potential(dt: DoubledTriple, X: np.ndarray, n: float) -> float:
    """S tau(F(D~ + X))."""
    M = dt.dense("Dt") + np.asarray(X, dtype=complex)
    return float(complex(dt.supertrace(nk.func_calc(M, potential_function(n)))).real)


def _require_even(dt: DoubledTriple, X: np.ndarray) -> np.ndarray:
    X = nk.as_hermitian(X)
    G = dt.dense("gamma")
    defect = float(np.max(np.abs(G @ X - X @ G)))
    if defect > 1e-10 * max(1.0, float(np.max(np.abs(X)))):
        raise ParameterRangeError(f"perturbation does not commute with the grading (defect {defect:.3e})")
    return X


def path_integral(dt: DoubledTriple, path: Sequence[np.ndarray], n: float) -> float:
    """Integral of X -> S tau(Xdot (1 + (D~+X)^2)^(-n/2)) along the polygon through `path`."""
    if len(path) < 2:
        raise ParameterRangeError("a path needs at least two vertices")
    vertices = [_require_even(dt, X) for X in path]
    Dt = dt.dense("Dt")
    GW = dt.dense("gamma") * dt.weights4.values[:, None]
    total = 0.0
    for X0, X1 in zip(vertices[:-1], vertices[1:]):
        dX = X1 - X0
        prefactor = GW @ dX

        def integrand(nodes, X0=X0, dX=dX, prefactor=prefactor):
            nodes = np.asarray(nodes, dtype=float).ravel()
            M = (Dt + X0)[None] + nodes[:, None, None] * dX[None]
            F = nk.func_calc_stacked(M, lambda x: (1 + x * x) ** (-n / 2))
            return 0.5 * np.einsum("ij,nji->n", prefactor, F)

        res = nk.gauss_kronrod(integrand, 0.0, 1.0, rel_tol=1e-12, abs_tol=1e-13,
                               max_subdiv=settings.interval_max_subdiv)
        total += complex(res.value).real
    return float(total)


def path_independence_check(dt: DoubledTriple, X0: np.ndarray, X1: np.ndarray,
                            path_a: Sequence[np.ndarray], path_b: Sequence[np.ndarray], n: float) -> float:
    """|int over path A - int over path B|; the paths list their interior vertices."""
    full_a = [X0, *path_a, X1]
    full_b = [X0, *path_b, X1]
    return abs(path_integral(dt, full_a, n) - path_integral(dt, full_b, n))


def rho_symmetry_check(dt: DoubledTriple, s: float, n: float) -> float:
    """|S tau(q (1 + D_{1,s}^2)^(-n/2)) + S tau(q (1 + D_{0,s}^2)^(-n/2))|."""
    q = dt.dense("q")
    sides = []
    for r in (1.0, 0.0):
        D = dt.path_operator(r, s).toarray()
        sides.append(dt.supertrace(q @ nk.func_calc(D, lambda x: (1 + x * x) ** (-n / 2))))
    return float(abs(sides[0] + sides[1]))
