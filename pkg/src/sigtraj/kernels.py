"""Static kernels and signature kernels on piecewise-linear paths.

A path is compared to another by lifting both into the feature space of a
static kernel k and taking the inner product of the lifted signatures. All
computations reduce to the matrix of lifted increment inner products

    A[i, j] = k(x_{i+1}, y_{j+1}) - k(x_{i+1}, y_j)
            - k(x_i, y_{j+1}) + k(x_i, y_j),

after which two variants are available:

* ``truncated``: the degree-d truncated inner product, computed exactly
  for piecewise-linear paths by a dynamic program over weakly increasing
  segment alignments with factorial run corrections.
* ``pde``: the untruncated kernel, obtained by integrating the hyperbolic
  equation d2K/dudv = A K over the grid with a second-order explicit
  update, optionally on a dyadically refined grid.

Gradients with respect to input vertices are exact gradients of the
implemented discrete schemes, accumulated by a reverse (adjoint) sweep and
chained through the increment matrix back to the vertices.

By default paths are augmented with a uniform order channel (vertex index
scaled to [0, 1]) before evaluation, which guarantees signature uniqueness
and keeps the kernel sensitive to traversal order even for loops. The
stored timestamps never enter, so reparametrizations of the inputs leave
every value bit-for-bit unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CapacityError, InvalidInputError, NumericError
from .paths import Path

__all__ = [
    "StaticKernelSpec",
    "SigKernelSpec",
    "static_eval",
    "sig_kernel",
    "truncated_sig_kernel",
    "pde_sig_kernel",
    "kernel_grad",
    "kernel_value_and_grads",
    "gram",
    "gram_to_csv",
    "pair_stats",
    "normalize_stats",
    "bandwidth_heuristic",
    "GRID_CELL_BUDGET",
]

GRID_CELL_BUDGET = 4_000_000


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StaticKernelSpec:
    """Pointwise kernel on state vectors: squared-exponential or linear."""

    kind: str = "squared-exponential"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("squared-exponential", "linear"):
            raise InvalidInputError(f"unknown static kernel kind: {self.kind!r}")
        if self.kind == "squared-exponential" and not self.bandwidth > 0:
            raise InvalidInputError("squared-exponential bandwidth must be positive")

    def with_bandwidth(self, sigma: float) -> "StaticKernelSpec":
        return replace(self, bandwidth=float(sigma))


@dataclass(frozen=True)
class SigKernelSpec:
    """Configuration of a signature kernel evaluation.

    variant selects the truncated dynamic program (degree matters) or the
    untruncated PDE solve (degree ignored). dyadic_refinement subdivides
    every segment 2**r times before the PDE solve. augment appends the
    order channel; normalize is honored by the optimizer-facing helpers
    (raw kernel values are returned by the low-level operations).
    """

    static: StaticKernelSpec = StaticKernelSpec()
    variant: str = "pde"
    degree: int = 4
    dyadic_refinement: int = 0
    augment: bool = True
    normalize: bool = True

    def __post_init__(self):
        if self.variant not in ("truncated", "pde"):
            raise InvalidInputError(f"unknown signature kernel variant: {self.variant!r}")
        if self.variant == "truncated" and self.degree < 1:
            raise InvalidInputError("truncated degree must be >= 1")
        if not 0 <= self.dyadic_refinement <= 6:
            raise InvalidInputError("dyadic_refinement must be in [0, 6]")


def static_eval(spec: StaticKernelSpec, x, y) -> float:
    """Evaluate the static kernel on a pair of same-dimension points."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInputError("points must have the same dimension")
    if spec.kind == "linear":
        return float(x @ y)
    d2 = float(np.sum((x - y) ** 2))
    return float(np.exp(-d2 / (2.0 * spec.bandwidth ** 2)))


# ---------------------------------------------------------------------------
# Lift: order-channel augmentation and dyadic refinement (batched)
# ---------------------------------------------------------------------------

def _lift(V: np.ndarray, spec: SigKernelSpec) -> np.ndarray:
    """Augment (P, s, c) vertex stacks with the order channel and refine."""
    P, s, c = V.shape
    if spec.augment:
        tau = np.broadcast_to(np.linspace(0.0, 1.0, s), (P, s))
        V = np.concatenate([V, tau[..., None]], axis=2)
    r = spec.dyadic_refinement
    if r > 0:
        R = 1 << r
        w = (np.arange(R) / R)[None, None, :, None]
        mid = V[:, :-1, None, :] * (1 - w) + V[:, 1:, None, :] * w
        V = np.concatenate([mid.reshape(P, (s - 1) * R, -1), V[:, -1:, :]], axis=1)
    return V


def _unlift_grads(dL: np.ndarray, spec: SigKernelSpec, s: int, c: int) -> np.ndarray:
    """Pull lifted-vertex gradients back to the raw (P, s, c) vertices."""
    P = dL.shape[0]
    r = spec.dyadic_refinement
    if r > 0:
        R = 1 << r
        w = (np.arange(R) / R)[None, None, :, None]
        body = dL[:, :-1, :].reshape(P, s - 1, R, -1)
        dV = np.zeros((P, s, dL.shape[2]))
        dV[:, :-1, :] += (body * (1 - w)).sum(axis=2)
        dV[:, 1:, :] += (body * w).sum(axis=2)
        dV[:, -1, :] += dL[:, -1, :]
    else:
        dV = dL
    if spec.augment:
        dV = dV[:, :, :c]     # order channel does not depend on vertex values
    return np.ascontiguousarray(dV)


# ---------------------------------------------------------------------------
# Increment inner-product matrices (batched) and their adjoints
# ---------------------------------------------------------------------------

def _point_gram(X: np.ndarray, Y: np.ndarray, static: StaticKernelSpec) -> np.ndarray:
    if static.kind == "linear":
        return np.einsum("pic,pjc->pij", X, Y)
    d2 = (np.sum(X ** 2, axis=2)[:, :, None]
          + np.sum(Y ** 2, axis=2)[:, None, :]
          - 2.0 * np.einsum("pic,pjc->pij", X, Y))
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * static.bandwidth ** 2))


def _increment_gram(X, Y, static):
    """A[p, i, j] for lifted stacks X (P, sx, c), Y (P, sy, c); returns (A, point gram)."""
    K = _point_gram(X, Y, static)
    A = K[:, 1:, 1:] - K[:, 1:, :-1] - K[:, :-1, 1:] + K[:, :-1, :-1]
    return A, K


def _increment_gram_vjp(dA, K, X, Y, static):
    """Chain cotangents on A back to the lifted vertices of both stacks."""
    dK = np.zeros_like(K)
    dK[:, 1:, 1:] += dA
    dK[:, 1:, :-1] -= dA
    dK[:, :-1, 1:] -= dA
    dK[:, :-1, :-1] += dA
    if static.kind == "linear":
        dX = np.einsum("pij,pjc->pic", dK, Y)
        dY = np.einsum("pij,pic->pjc", dK, X)
        return dX, dY
    s2 = static.bandwidth ** 2
    W = dK * K / s2
    # d/dx k = k (y - x)/s2 and symmetrically for y
    dX = np.einsum("pij,pjc->pic", W, Y) - W.sum(axis=2)[..., None] * X
    dY = np.einsum("pij,pic->pjc", W, X) - W.sum(axis=1)[..., None] * Y
    return dX, dY


# ---------------------------------------------------------------------------
# PDE variant: second-order explicit Goursat scheme and adjoint
# ---------------------------------------------------------------------------

def _pde_forward(A: np.ndarray) -> np.ndarray:
    """Solve the grid recurrence; returns the full (P, sx, sy) solution array."""
    P, nx, ny = A.shape
    F = 1.0 + A / 2.0 + A * A / 12.0
    G = 1.0 - A * A / 12.0
    K = np.ones((P, nx + 1, ny + 1))
    for d in range(2, nx + ny + 1):
        p_lo, p_hi = max(1, d - ny), min(nx, d - 1)
        if p_lo > p_hi:
            continue
        p = np.arange(p_lo, p_hi + 1)
        q = d - p
        K[:, p, q] = ((K[:, p, q - 1] + K[:, p - 1, q]) * F[:, p - 1, q - 1]
                      - K[:, p - 1, q - 1] * G[:, p - 1, q - 1])
    return K


def _pde_vjp(A: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Adjoint sweep of the grid recurrence for d(terminal corner)/dA."""
    P, nx, ny = A.shape
    F = 1.0 + A / 2.0 + A * A / 12.0
    G = 1.0 - A * A / 12.0
    dK = np.zeros_like(K)
    dK[:, nx, ny] = 1.0
    dA = np.zeros_like(A)
    for d in range(nx + ny, 1, -1):
        p_lo, p_hi = max(1, d - ny), min(nx, d - 1)
        if p_lo > p_hi:
            continue
        p = np.arange(p_lo, p_hi + 1)
        q = d - p
        g = dK[:, p, q]
        a = A[:, p - 1, q - 1]
        dA[:, p - 1, q - 1] += g * (
            (K[:, p, q - 1] + K[:, p - 1, q]) * (0.5 + a / 6.0)
            + K[:, p - 1, q - 1] * (a / 6.0))
        dK[:, p, q - 1] += g * F[:, p - 1, q - 1]
        dK[:, p - 1, q] += g * F[:, p - 1, q - 1]
        dK[:, p - 1, q - 1] -= g * G[:, p - 1, q - 1]
        dK[:, p, q] = 0.0
    return dA


# ---------------------------------------------------------------------------
# Truncated variant: exact dynamic program over weakly increasing segment
# alignments. State W[p, i, j, a-1, b-1] accumulates the weight of all
# alignment pairs whose current letters sit at segments (i, j) with run
# lengths (a, b); factorial corrections 1/r! per run are folded in
# incrementally as 1/a when a run extends to length a.
# ---------------------------------------------------------------------------

def _trunc_aggregates(W: np.ndarray):
    """Prefix aggregates of one level: run-marginals and exclusive prefix sums."""
    SB = W.sum(axis=4)
    SA = W.sum(axis=3)
    SAB = SB.sum(axis=3)
    EJ = np.zeros_like(SB)
    EJ[:, :, 1:, :] = np.cumsum(SB, axis=2)[:, :, :-1, :]
    EI = np.zeros_like(SA)
    EI[:, 1:, :, :] = np.cumsum(SA, axis=1)[:, :-1, :, :]
    cum2 = np.cumsum(np.cumsum(SAB, axis=1), axis=2)
    EIJ = np.zeros_like(SAB)
    EIJ[:, 1:, 1:] = cum2[:, :-1, :-1]
    return EJ, EI, EIJ


def _trunc_forward(A: np.ndarray, degree: int):
    """Levels are stored with trimmed run-state: level l only holds run
    lengths up to min(l, degree) per side."""
    P, nx, ny = A.shape
    d = degree
    W = A[..., None, None].copy()
    levels = [W]
    caches = []
    for lvl in range(1, degree):
        W = levels[-1]
        r = W.shape[3]
        rn = min(lvl + 1, d)
        EJ, EI, EIJ = _trunc_aggregates(W)
        caches.append((EJ, EI, EIJ))
        s = min(r, d - 1)          # source runs that can still extend
        arun = np.arange(2, s + 2, dtype=np.float64)
        Wn = np.zeros((P, nx, ny, rn, rn))
        Wn[..., 1:s + 1, 1:s + 1] = (W[..., :s, :s] * A[..., None, None]
                                     / (arun[:, None] * arun[None, :]))
        Wn[..., 1:s + 1, 0] = EJ[..., :s] * A[..., None] / arun
        Wn[..., 0, 1:s + 1] = EI[..., :s] * A[..., None] / arun
        Wn[..., 0, 0] = EIJ * A
        levels.append(Wn)
    vals = 1.0 + sum(W.sum(axis=(1, 2, 3, 4)) for W in levels)
    return vals, (levels, caches)


def _trunc_vjp(A: np.ndarray, cache) -> np.ndarray:
    levels, caches = cache
    d = len(levels)
    dA = np.zeros_like(A)
    dW = np.ones_like(levels[-1])      # every entry of the top level sums into the value
    for lvl in range(d - 1, 0, -1):
        W = levels[lvl - 1]
        EJ, EI, EIJ = caches[lvl - 1]
        r = W.shape[3]
        s = min(r, d - 1)
        arun = np.arange(2, s + 2, dtype=np.float64)
        coef = 1.0 / (arun[:, None] * arun[None, :])

        # dA from the four transition families
        dA += (dW[..., 1:s + 1, 1:s + 1] * W[..., :s, :s] * coef).sum(axis=(3, 4))
        dA += (dW[..., 1:s + 1, 0] * EJ[..., :s] / arun).sum(axis=3)
        dA += (dW[..., 0, 1:s + 1] * EI[..., :s] / arun).sum(axis=3)
        dA += dW[..., 0, 0] * EIJ

        # cotangents of the lower level: direct value term plus transitions
        dWlow = np.ones_like(W)
        dWlow[..., :s, :s] += dW[..., 1:s + 1, 1:s + 1] * A[..., None, None] * coef

        dEJ = np.zeros(W.shape[:3] + (r,))
        dEJ[..., :s] = dW[..., 1:s + 1, 0] * A[..., None] / arun
        suf = np.flip(np.cumsum(np.flip(dEJ, axis=2), axis=2), axis=2)
        dSB = np.zeros_like(dEJ)
        dSB[:, :, :-1, :] = suf[:, :, 1:, :]
        dWlow += dSB[..., :, None]

        dEI = np.zeros(W.shape[:3] + (r,))
        dEI[..., :s] = dW[..., 0, 1:s + 1] * A[..., None] / arun
        suf = np.flip(np.cumsum(np.flip(dEI, axis=1), axis=1), axis=1)
        dSA = np.zeros_like(dEI)
        dSA[:, :-1, :, :] = suf[:, 1:, :, :]
        dWlow += dSA[..., None, :]

        dEIJ = dW[..., 0, 0] * A
        suf2 = np.flip(np.flip(
            np.cumsum(np.cumsum(np.flip(np.flip(dEIJ, axis=1), axis=2), axis=1), axis=2),
            axis=1), axis=2)
        dSAB = np.zeros(W.shape[:3])
        dSAB[:, :-1, :-1] += suf2[:, 1:, 1:]
        dWlow += dSAB[..., None, None]

        dW = dWlow
    dA += dW[..., 0, 0]
    return dA


# ---------------------------------------------------------------------------
# Batched kernel evaluation on stacked equal-shape paths
# ---------------------------------------------------------------------------

def _check_grid(nx: int, ny: int) -> None:
    if (nx + 1) * (ny + 1) > GRID_CELL_BUDGET:
        raise CapacityError(
            f"kernel grid of {(nx + 1) * (ny + 1)} cells exceeds the budget "
            f"of {GRID_CELL_BUDGET}")


def kernel_batch(X: np.ndarray, Y: np.ndarray, spec: SigKernelSpec,
                 needs_grad: bool = False):
    """Evaluate the signature kernel on P stacked pairs.

    Parameters
    ----------
    X, Y : (P, s, c) vertex stacks (s may differ between X and Y)
    needs_grad : also return d(value)/d(vertices) for both stacks

    Returns
    -------
    vals : (P,) kernel values
    dX, dY : (P, s, c) vertex gradients (only when needs_grad)
    """
    if X.ndim != 3 or Y.ndim != 3 or X.shape[2] != Y.shape[2]:
        raise InvalidInputError("vertex stacks must be (P, s, c) with equal dim")
    P, sx, c = X.shape
    sy = Y.shape[1]
    LX, LY = _lift(X, spec), _lift(Y, spec)
    _check_grid(LX.shape[1] - 1, LY.shape[1] - 1)
    A, Kpts = _increment_gram(LX, LY, spec.static)
    if not np.all(np.isfinite(A)):
        raise NumericError("non-finite increment inner products in kernel grid")
    if spec.variant == "pde":
        K = _pde_forward(A)
        vals = K[:, -1, -1].copy()
        if not needs_grad:
            return vals
        dA = _pde_vjp(A, K)
    else:
        vals, cache = _trunc_forward(A, spec.degree)
        if not needs_grad:
            return vals
        dA = _trunc_vjp(A, cache)
    dLX, dLY = _increment_gram_vjp(dA, Kpts, LX, LY, spec.static)
    dX = _unlift_grads(dLX, spec, sx, c)
    dY = _unlift_grads(dLY, spec, sy, c)
    return vals, dX, dY


def _as_stack(path: Path) -> np.ndarray:
    return path.vertices[None, :, :]


def sig_kernel(x: Path, y: Path, spec: SigKernelSpec) -> float:
    """Signature kernel value for a single pair, dispatching on the variant."""
    if x.dim != y.dim:
        raise InvalidInputError("paths must share the state dimension")
    return float(kernel_batch(_as_stack(x), _as_stack(y), spec)[0])


def truncated_sig_kernel(x: Path, y: Path, spec: SigKernelSpec) -> float:
    """Degree-d truncated signature kernel (exact for piecewise-linear paths)."""
    if spec.variant != "truncated":
        spec = replace(spec, variant="truncated")
    return sig_kernel(x, y, spec)


def pde_sig_kernel(x: Path, y: Path, spec: SigKernelSpec) -> float:
    """Untruncated signature kernel via the second-order grid scheme."""
    if spec.variant != "pde":
        spec = replace(spec, variant="pde")
    return sig_kernel(x, y, spec)


def kernel_value_and_grads(x: Path, y: Path, spec: SigKernelSpec):
    """Kernel value with exact vertex gradients for both arguments."""
    if x.dim != y.dim:
        raise InvalidInputError("paths must share the state dimension")
    vals, dX, dY = kernel_batch(_as_stack(x), _as_stack(y), spec, needs_grad=True)
    return float(vals[0]), dX[0], dY[0]


def kernel_grad(y: Path, x: Path, spec: SigKernelSpec) -> np.ndarray:
    """Gradient of k(y, x) with respect to y's vertex coordinates.

    This is the exact gradient of the implemented discrete scheme (not of
    the continuum equation), accumulated by the adjoint sweep.
    """
    _, dY, _ = kernel_value_and_grads(y, x, spec)
    return dY


# ---------------------------------------------------------------------------
# Gram matrices and optimizer-facing pair statistics
# ---------------------------------------------------------------------------

def _pair_chunks(n_pairs: int, cells: int, budget: int = 2_000_000):
    step = max(1, budget // max(cells, 1))
    for lo in range(0, n_pairs, step):
        yield lo, min(n_pairs, lo + step)


def gram(paths, spec: SigKernelSpec) -> np.ndarray:
    """Symmetric matrix of kernel values; entries i <= j computed, mirrored."""
    n = len(paths)
    if n < 1:
        raise InvalidInputError("gram needs at least one path")
    dims = {p.dim for p in paths}
    if len(dims) != 1:
        raise InvalidInputError("all paths must share the state dimension")
    G = np.zeros((n, n))
    same_shape = len({p.n_vertices for p in paths}) == 1
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    if same_shape:
        V = np.stack([p.vertices for p in paths])
        s = V.shape[1]
        for lo, hi in _pair_chunks(len(pairs), s * s):
            idx = pairs[lo:hi]
            X = V[[i for i, _ in idx]]
            Y = V[[j for _, j in idx]]
            vals = kernel_batch(X, Y, spec)
            for (i, j), v in zip(idx, vals):
                G[i, j] = G[j, i] = v
    else:
        for i, j in pairs:
            G[i, j] = G[j, i] = sig_kernel(paths[i], paths[j], spec)
    return G


def gram_to_csv(G: np.ndarray) -> str:
    lines = [",".join(repr(float(v)) for v in row) for row in np.asarray(G)]
    return "\n".join(lines) + "\n"


def pair_stats(V: np.ndarray, spec: SigKernelSpec):
    """Kernel matrix and source-side gradients over stacked particle paths.

    Parameters
    ----------
    V : (n, s, c) decoded particle paths, equal shapes

    Returns
    -------
    K : (n, n) raw kernel values
    G : (n, n, s, c) with G[i, m] = d k(path_i, path_m) / d path_i
    """
    n, s, c = V.shape
    K = np.zeros((n, n))
    G = np.zeros((n, n, s, c))
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    for lo, hi in _pair_chunks(len(pairs), s * s):
        idx = pairs[lo:hi]
        X = V[[i for i, _ in idx]]
        Y = V[[j for _, j in idx]]
        vals, dX, dY = kernel_batch(X, Y, spec, needs_grad=True)
        for k, (i, j) in enumerate(idx):
            K[i, j] = K[j, i] = vals[k]
            G[i, j] = dX[k]
            G[j, i] = dY[k]
    return K, G


def normalize_stats(K: np.ndarray, G: np.ndarray | None = None):
    """Cosine-normalize kernel stats: Kn = K / sqrt(diag outer diag).

    When gradients are supplied they are transformed consistently:
    d/dpath_i of Kn[i, m] picks up the self-similarity correction through
    the normalizer.
    """
    diag = np.diag(K).copy()
    if np.any(diag <= 0):
        raise NumericError("kernel normalization requires positive self-similarity")
    scale = np.sqrt(np.outer(diag, diag))
    Kn = K / scale
    if G is None:
        return Kn
    n = K.shape[0]
    Gn = G / scale[:, :, None, None]
    self_grads = G[np.arange(n), np.arange(n)]        # (n, s, c)
    Gn -= (Kn[:, :, None, None] * self_grads[:, None, :, :]
           / diag[:, None, None, None])
    return Kn, Gn


# ---------------------------------------------------------------------------
# Bandwidth heuristics
# ---------------------------------------------------------------------------

def bandwidth_heuristic(particles, rule: str = "median"):
    """Kernel bandwidth from a stack of flattened particle vectors.

    median: sigma^2 = median of pairwise squared distances / (2 log(n+1)).
    silverman: sigma = (4 / (n (p + 2)))^(1/(p+4)) * mean per-coordinate std.

    Returns (sigma, degenerate) where degenerate flags the all-identical
    fallback sigma = 1.
    """
    X = np.asarray(particles, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("need at least two flattened particles")
    n, p = X.shape
    if rule == "median":
        d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
        med = float(np.median(d2[np.triu_indices(n, k=1)]))
        sig2 = med / (2.0 * np.log(n + 1.0))
        if not sig2 > 0:
            return 1.0, True
        return float(np.sqrt(sig2)), False
    if rule == "silverman":
        std = float(np.std(X, axis=0, ddof=1).mean())
        sigma = (4.0 / (n * (p + 2.0))) ** (1.0 / (p + 4.0)) * std
        if not sigma > 0:
            return 1.0, True
        return float(sigma), False
    raise InvalidInputError(f"unknown bandwidth rule: {rule!r}")
