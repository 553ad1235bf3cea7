"""Discretized paths and elementary path transforms.

A path is an ordered list of vertices in R^c with strictly increasing
timestamps. All downstream geometry (signatures, kernels, costs) treats
the path as the piecewise-linear interpolant of its vertices, so the
timestamps carry bookkeeping information only: operations that depend on
the traced curve alone are invariant to how the curve is clocked.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Path",
    "Warp",
    "time_reverse",
    "augment_time",
    "reparametrize",
    "subdivide",
    "path_to_csv",
    "path_from_csv",
    "path_to_json",
    "path_from_json",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Path:
    """A piecewise-linear path: s vertices in R^c at strictly increasing times.

    Attributes
    ----------
    times : (s,) array, strictly increasing
    vertices : (s, c) array, one row per vertex
    """

    times: np.ndarray
    vertices: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        vertices = np.asarray(self.vertices, dtype=np.float64)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        if vertices.ndim != 2:
            raise InvalidInputError("vertices must be a (s, c) array")
        if times.ndim != 1 or len(times) != len(vertices):
            raise InvalidInputError("times and vertices must have equal length")
        if len(times) < 2:
            raise InvalidInputError("a path needs at least two vertices")
        if vertices.shape[1] < 1:
            raise InvalidInputError("state dimension must be >= 1")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(vertices)):
            raise InvalidInputError("path contains non-finite values")
        if not np.all(np.diff(times) > 0):
            raise InvalidInputError("timestamps must be strictly increasing")
        object.__setattr__(self, "times", _freeze(times))
        object.__setattr__(self, "vertices", _freeze(vertices))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def increments(self) -> np.ndarray:
        """Per-segment displacement vectors, shape (s-1, c)."""
        return np.diff(self.vertices, axis=0)

    def total_variation(self) -> float:
        """Sum of segment lengths of the piecewise-linear interpolant."""
        return float(np.linalg.norm(self.increments(), axis=1).sum())

    @staticmethod
    def from_vertices(vertices, times=None) -> "Path":
        """Build a path, defaulting to unit-interval uniform timestamps."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        if times is None:
            times = np.linspace(0.0, 1.0, len(vertices))
        return Path(times=np.asarray(times, dtype=np.float64), vertices=vertices)


@dataclass(frozen=True)
class Warp:
    """A strictly increasing piecewise-linear time change on [a, b].

    Maps grid_times -> mapped_times with fixed endpoints: the warp fixes
    a and b and is evaluated by linear interpolation in between.
    """

    grid_times: np.ndarray
    mapped_times: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid_times, dtype=np.float64)
        m = np.asarray(self.mapped_times, dtype=np.float64)
        if g.ndim != 1 or g.shape != m.shape or len(g) < 2:
            raise InvalidInputError("warp grids must be equal-length 1D arrays")
        if not (np.all(np.diff(g) > 0) and np.all(np.diff(m) > 0)):
            raise InvalidInputError("warp must be strictly increasing")
        if not (np.isclose(g[0], m[0]) and np.isclose(g[-1], m[-1])):
            raise InvalidInputError("warp must fix the interval endpoints")
        object.__setattr__(self, "grid_times", _freeze(g))
        object.__setattr__(self, "mapped_times", _freeze(m))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        lo, hi = self.grid_times[0], self.grid_times[-1]
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise InvalidInputError("warp evaluated outside its domain")
        return np.interp(t, self.grid_times, self.mapped_times)

    def inverse(self) -> "Warp":
        return Warp(grid_times=self.mapped_times, mapped_times=self.grid_times)

    @staticmethod
    def identity(a: float, b: float) -> "Warp":
        g = np.array([a, b])
        return Warp(grid_times=g, mapped_times=g.copy())

    @staticmethod
    def from_function(fn, a: float, b: float, n_grid: int = 257) -> "Warp":
        """Tabulate a monotone callable into a piecewise-linear warp."""
        g = np.linspace(a, b, n_grid)
        m = np.asarray([fn(t) for t in g], dtype=np.float64)
        m[0], m[-1] = a, b
        return Warp(grid_times=g, mapped_times=m)


def time_reverse(path: Path) -> Path:
    """Traverse the path backwards; timestamps are remapped to stay increasing."""
    a, b = path.span
    new_times = a + b - path.times[::-1]
    return Path(times=new_times, vertices=path.vertices[::-1].copy())


def augment_time(path: Path) -> Path:
    """Append normalized time (t - a)/(b - a) as an extra, strictly monotone coordinate."""
    a, b = path.span
    tau = (path.times - a) / (b - a)
    return Path(times=path.times.copy(), vertices=np.column_stack([path.vertices, tau]))


def reparametrize(path: Path, warp: Warp) -> Path:
    """Re-clock the path through a monotone warp; vertices are untouched."""
    a, b = path.span
    wa, wb = float(warp.grid_times[0]), float(warp.grid_times[-1])
    if not (np.isclose(a, wa) and np.isclose(b, wb)):
        raise InvalidInputError("warp domain must equal the path time span")
    return Path(times=warp(path.times), vertices=path.vertices.copy())


def subdivide(path: Path, splits: int = 1) -> Path:
    """Insert `splits` evenly spaced extra vertices in every segment.

    The traced curve is unchanged, so every curve-level quantity
    (signature, kernel value, length) is preserved.
    """
    if splits < 0:
        raise InvalidInputError("splits must be >= 0")
    if splits == 0:
        return path
    k = splits + 1
    w = np.arange(k) / k                      # (k,) offsets within a segment
    t0, t1 = path.times[:-1], path.times[1:]
    v0, v1 = path.vertices[:-1], path.vertices[1:]
    times = (t0[:, None] * (1 - w) + t1[:, None] * w).ravel()
    verts = (v0[:, None, :] * (1 - w)[None, :, None]
             + v1[:, None, :] * w[None, :, None]).reshape(-1, path.dim)
    times = np.append(times, path.times[-1])
    verts = np.vstack([verts, path.vertices[-1]])
    return Path(times=times, vertices=verts)


# ---------------------------------------------------------------------------
# Serialization: CSV with header t,x1,...,xc and a JSON array-of-arrays form.
# ---------------------------------------------------------------------------

def path_to_csv(path: Path) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{i + 1}" for i in range(path.dim)])
    for t, row in zip(path.times, path.vertices):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return buf.getvalue()


def path_from_csv(text: str) -> Path:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and not r[0].lstrip().startswith("#")]
    if not rows or rows[0][0].strip() != "t":
        raise InvalidInputError("path CSV must start with header t,x1,...,xc")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if data.ndim != 2 or data.shape[1] < 2:
        raise InvalidInputError("path CSV needs a time column and one coordinate")
    return Path(times=data[:, 0], vertices=data[:, 1:])


def path_to_json(path: Path) -> str:
    rows = [[float(t)] + [float(v) for v in row]
            for t, row in zip(path.times, path.vertices)]
    return json.dumps(rows)


def path_from_json(text: str) -> Path:
    rows = np.asarray(json.loads(text), dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise InvalidInputError("path JSON must be an array of [t, x1, ..., xc] rows")
    return Path(times=rows[:, 0], vertices=rows[:, 1:])
