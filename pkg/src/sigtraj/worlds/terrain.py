"""2D cost terrain built from a low-discrepancy Gaussian mixture.

Component centers follow the Halton sequence (bases 2 and 3) scaled to
the unit box, which spreads hills evenly while staying fully
deterministic for a given seed. The terrain cost of a path adds the
mixture density at every vertex to a weighted piecewise-linear length
penalty, and both terms carry analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..paths import Path

__all__ = ["halton_points", "TerrainField", "terrain_cost"]


def _radical_inverse(indices: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(len(indices), dtype=np.float64)
    denom = np.ones(len(indices), dtype=np.float64)
    n = indices.astype(np.int64).copy()
    while np.any(n > 0):
        denom *= base
        out += (n % base) / denom
        n //= base
    return out


def halton_points(n: int, start: int = 1, bases=(2, 3)) -> np.ndarray:
    """The Halton sequence points with indices start..start+n-1, one column per base."""
    if n < 0 or start < 0:
        raise InvalidInputError("need n >= 0 and start >= 0")
    idx = np.arange(start, start + n)
    return np.column_stack([_radical_inverse(idx, b) for b in bases])


@dataclass(frozen=True)
class TerrainField:
    """Isotropic Gaussian mixture over the unit box with uniform weights."""

    centers: np.ndarray           # (n_g, 2) in [0, 1]^2
    std: float
    seed: int = 0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        if not self.std > 0:
            raise InvalidInputError("terrain component std must be positive")
        object.__setattr__(self, "centers", c)

    @staticmethod
    def create(n_components: int = 15, std: float = 0.08, seed: int = 0) -> "TerrainField":
        """Deterministic field: centers are consecutive Halton points, offset by seed."""
        centers = halton_points(n_components, start=1 + seed * max(n_components, 1))
        return TerrainField(centers=centers, std=std, seed=seed)

    @property
    def n_components(self) -> int:
        return self.centers.shape[0]

    def density_and_grad(self, points: np.ndarray):
        """Mixture density and its gradient at (m, 2) query points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if self.n_components == 0:
            return np.zeros(len(pts)), np.zeros_like(pts)
        diff = pts[:, None, :] - self.centers[None, :, :]
        s2 = self.std ** 2
        comp = np.exp(-np.sum(diff * diff, axis=2) / (2.0 * s2))
        norm = 1.0 / (self.n_components * 2.0 * np.pi * s2)
        dens = comp.sum(axis=1) * norm
        grads = -(comp[:, :, None] * diff).sum(axis=1) * (norm / s2)
        return dens, grads

    def density(self, points: np.ndarray) -> np.ndarray:
        return self.density_and_grad(points)[0]

    def density_grid_csv(self, resolution: int = 64) -> str:
        """Density sampled on a uniform grid, one CSV row per y level."""
        axis = np.linspace(0.0, 1.0, resolution)
        xx, yy = np.meshgrid(axis, axis)
        dens = self.density(np.column_stack([xx.ravel(), yy.ravel()]))
        grid = dens.reshape(resolution, resolution)
        return "\n".join(",".join(repr(v) for v in row) for row in grid) + "\n"


def terrain_cost(field: TerrainField, path: Path, length_weight: float = 75.0):
    """Terrain traversal cost with analytic per-vertex gradient.

    cost = sum_t density(x_t) + length_weight * sum_t |x_t - x_{t-1}|.
    Zero-length segments contribute no length gradient.
    """
    if path.dim != 2:
        raise InvalidInputError("terrain cost is defined for 2D paths")
    v = path.vertices
    dens, dens_grad = field.density_and_grad(v)
    inc = np.diff(v, axis=0)
    seg_len = np.linalg.norm(inc, axis=1)
    cost = float(dens.sum() + length_weight * seg_len.sum())
    units = np.zeros_like(inc)
    nz = seg_len > 1e-12
    units[nz] = inc[nz] / seg_len[nz, None]
    grad = dens_grad.copy()
    grad[1:] += length_weight * units
    grad[:-1] -= length_weight * units
    return cost, grad
