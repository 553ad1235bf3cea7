"""Natural cubic-spline trajectory parameterization.

A trajectory is described by a small number of knots: fixed endpoints at
the start and goal states plus a few free intermediate knots at fixed,
uniformly spaced knot times. Dense paths are produced by fitting a
natural cubic spline per state dimension (zero second derivative at both
ends) and sampling it at uniform parameters. For fixed knot times the
fit-and-sample map is linear in the knot values, so it is materialized
once per layout as a decimation matrix; gradient pullback to knot space
is a transpose product with that matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidInputError
from .paths import Path

__all__ = [
    "SplineTrajectory",
    "fit_and_decimate",
    "init_knots",
    "knot_gradient_pullback",
    "decimation_matrix",
]


@dataclass(frozen=True)
class SplineTrajectory:
    """Knot times and per-dimension knot values; first/last knots are the endpoints."""

    knot_times: np.ndarray
    knot_values: np.ndarray           # (n_knots, dim)

    def __post_init__(self):
        t = np.asarray(self.knot_times, dtype=np.float64)
        v = np.asarray(self.knot_values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or len(t) != len(v) or len(t) < 2:
            raise InvalidInputError("need matching knot times/values, at least two")
        if not np.all(np.diff(t) > 0):
            raise InvalidInputError("knot times must be strictly increasing")
        object.__setattr__(self, "knot_times", t)
        object.__setattr__(self, "knot_values", v)

    @property
    def n_knots(self) -> int:
        return len(self.knot_times)

    @property
    def n_intermediate(self) -> int:
        return self.n_knots - 2

    @property
    def dim(self) -> int:
        return self.knot_values.shape[1]

    def to_json_dict(self) -> dict:
        return {"times": self.knot_times.tolist(), "values": self.knot_values.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "SplineTrajectory":
        return SplineTrajectory(knot_times=np.asarray(d["times"]),
                                knot_values=np.asarray(d["values"]))

    @staticmethod
    def uniform(start, goal, intermediate_values, span=(0.0, 1.0)) -> "SplineTrajectory":
        """Knots at uniform times: start, the given intermediates, goal."""
        start = np.atleast_1d(np.asarray(start, dtype=np.float64))
        goal = np.atleast_1d(np.asarray(goal, dtype=np.float64))
        inter = np.asarray(intermediate_values, dtype=np.float64).reshape(-1, start.size)
        values = np.vstack([start[None, :], inter, goal[None, :]])
        times = np.linspace(span[0], span[1], len(values))
        return SplineTrajectory(knot_times=times, knot_values=values)


@lru_cache(maxsize=64)
def _decimation_matrix_cached(times_key: tuple, n_points: int) -> np.ndarray:
    times = np.asarray(times_key)
    n = len(times)
    dense = np.linspace(times[0], times[-1], n_points)
    D = np.empty((n_points, n))
    eye = np.eye(n)
    for k in range(n):
        D[:, k] = CubicSpline(times, eye[k], bc_type="natural")(dense)
    return D


def decimation_matrix(knot_times: np.ndarray, n_points: int) -> np.ndarray:
    """Matrix D with path_values = D @ knot_values; cached per layout."""
    if n_points < 2:
        raise InvalidInputError("need at least two sample points")
    times = np.asarray(knot_times, dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("duplicate or decreasing knot times")
    return _decimation_matrix_cached(tuple(times.tolist()), int(n_points))


def fit_and_decimate(traj: SplineTrajectory, n_points: int) -> Path:
    """Sample the natural cubic spline through the knots at uniform parameters.

    The result passes through every knot; the first and last vertices equal
    the endpoint knots exactly. With only two knots the spline degenerates
    to the straight line between them.
    """
    D = decimation_matrix(traj.knot_times, n_points)
    values = D @ traj.knot_values
    values[0] = traj.knot_values[0]
    values[-1] = traj.knot_values[-1]
    dense_times = np.linspace(traj.knot_times[0], traj.knot_times[-1], n_points)
    return Path(times=dense_times, vertices=values)


def knot_gradient_pullback(traj: SplineTrajectory, path_grad: np.ndarray,
                           n_points: int) -> np.ndarray:
    """Map a per-vertex path gradient to the free (intermediate) knots.

    Decimation is linear in knot values, so the pullback is D^T g with the
    endpoint rows dropped. Returns an (n_intermediate, dim) array.
    """
    g = np.asarray(path_grad, dtype=np.float64)
    if g.shape != (n_points, traj.dim):
        raise InvalidInputError("path gradient shape does not match the decimation")
    D = decimation_matrix(traj.knot_times, n_points)
    full = D.T @ g
    return full[1:-1]


def init_knots(start, goal, bounds, n_intermediate: int, strategy: str,
               rng: np.random.Generator, noise_scale: float = 0.1) -> SplineTrajectory:
    """Draw initial intermediate knots.

    uniform-random: i.i.d. uniform inside the bounds box.
    perturbed-line: linear interpolation start->goal plus Gaussian noise,
    clipped to the bounds.
    """
    start = np.atleast_1d(np.asarray(start, dtype=np.float64))
    goal = np.atleast_1d(np.asarray(goal, dtype=np.float64))
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in bounds)
    if np.any(hi <= lo):
        raise InvalidInputError("bounds box is empty")
    if np.any(start < lo) or np.any(start > hi) or np.any(goal < lo) or np.any(goal > hi):
        raise InvalidInputError("bounds must contain start and goal")
    if n_intermediate == 0:
        inter = np.zeros((0, start.size))
    elif strategy == "uniform-random":
        inter = rng.uniform(lo, hi, size=(n_intermediate, start.size))
    elif strategy == "perturbed-line":
        alphas = np.linspace(0.0, 1.0, n_intermediate + 2)[1:-1]
        line = start[None, :] + alphas[:, None] * (goal - start)[None, :]
        inter = line + noise_scale * rng.standard_normal(line.shape)
        inter = np.clip(inter, lo, hi)
    else:
        raise InvalidInputError(f"unknown init strategy: {strategy!r}")
    return SplineTrajectory.uniform(start, goal, inter)
