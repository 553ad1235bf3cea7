"""Planar articulated arm with differentiable workspace costs.

The arm is a chain of n revolute joints in the plane; body points sit at
the link ends. Workspace cost gradients (occupancy, end-effector length,
self-collision clearance) are pulled into joint space through the
analytic chain Jacobian, and joint-space gradients over a decimated
trajectory pull back further onto the spline knots.

Obstacle likelihood is an analytic field of Gaussian bumps over the
workspace; self-collision is penalized by a smooth hinge on the
clearance between non-adjacent link segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..splines import SplineTrajectory, fit_and_decimate, knot_gradient_pullback

__all__ = [
    "PlanarArm",
    "OccupancyField",
    "pull_gradient",
    "dyn_cost",
    "end_effector_length_cost",
    "occupancy_cost",
    "self_collision_cost",
    "arm_total_cost",
]


@dataclass(frozen=True)
class PlanarArm:
    """Chain of links in the plane; zero configuration lies along +x."""

    lengths: np.ndarray
    joint_lower: np.ndarray | None = None
    joint_upper: np.ndarray | None = None

    def __post_init__(self):
        L = np.atleast_1d(np.asarray(self.lengths, dtype=np.float64))
        if np.any(L <= 0):
            raise InvalidInputError("link lengths must be positive")
        object.__setattr__(self, "lengths", L)
        lo = self.joint_lower if self.joint_lower is not None else -np.pi * np.ones_like(L)
        hi = self.joint_upper if self.joint_upper is not None else np.pi * np.ones_like(L)
        object.__setattr__(self, "joint_lower", np.asarray(lo, dtype=np.float64))
        object.__setattr__(self, "joint_upper", np.asarray(hi, dtype=np.float64))

    @property
    def n_joints(self) -> int:
        return len(self.lengths)

    def within_limits(self, q: np.ndarray) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.joint_lower) and np.all(q <= self.joint_upper))

    def fk(self, q: np.ndarray) -> np.ndarray:
        """Body points (link ends), shape (n, 2)."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.n_joints,):
            raise InvalidInputError("configuration size must equal the joint count")
        theta = np.cumsum(q)
        steps = self.lengths[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
        return np.cumsum(steps, axis=0)

    def fk_batch(self, Q: np.ndarray) -> np.ndarray:
        """Body points for a stack of configurations, shape (m, n, 2)."""
        Q = np.asarray(Q, dtype=np.float64)
        theta = np.cumsum(Q, axis=1)
        steps = self.lengths[None, :, None] * np.stack(
            [np.cos(theta), np.sin(theta)], axis=2)
        return np.cumsum(steps, axis=1)

    def jacobians(self, q: np.ndarray) -> np.ndarray:
        """J[k] = d(body point k)/dq, shape (n, 2, n)."""
        theta = np.cumsum(np.asarray(q, dtype=np.float64))
        n = self.n_joints
        tangent = self.lengths[:, None] * np.column_stack([-np.sin(theta), np.cos(theta)])
        J = np.zeros((n, 2, n))
        for k in range(n):
            # body point k moves with every joint j <= k through links j..k
            for j in range(k + 1):
                J[k, :, j] = tangent[j:k + 1].sum(axis=0)
        return J


def pull_gradient(arm: PlanarArm, q: np.ndarray, workspace_grads: np.ndarray) -> np.ndarray:
    """Map per-body-point workspace gradients to joint space: sum_k J_k^T g_k."""
    g = np.asarray(workspace_grads, dtype=np.float64)
    if g.shape != (arm.n_joints, 2):
        raise InvalidInputError("need one 2D gradient per body point")
    J = arm.jacobians(q)
    return np.einsum("kcj,kc->j", J, g)


@dataclass(frozen=True)
class OccupancyField:
    """Analytic obstacle likelihood: unit-height Gaussian bumps in workspace."""

    centers: np.ndarray           # (m, 2)
    stds: np.ndarray              # (m,)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        s = np.broadcast_to(np.asarray(self.stds, dtype=np.float64), (len(c),)).copy()
        if np.any(s <= 0):
            raise InvalidInputError("occupancy stds must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "stds", s)

    @staticmethod
    def empty() -> "OccupancyField":
        return OccupancyField(centers=np.zeros((0, 2)), stds=np.ones(0))

    def value_and_grad(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if len(self.centers) == 0:
            return np.zeros(len(pts)), np.zeros_like(pts)
        diff = pts[:, None, :] - self.centers[None, :, :]
        comp = np.exp(-np.sum(diff * diff, axis=2) / (2.0 * self.stds ** 2))
        vals = comp.sum(axis=1)
        grads = -(comp[:, :, None] * diff / self.stds[None, :, None] ** 2).sum(axis=1)
        return vals, grads


# ---------------------------------------------------------------------------
# Cost terms over decimated configuration sequences
# ---------------------------------------------------------------------------

def dyn_cost(configs: np.ndarray, weights: np.ndarray, per_joint: bool = True):
    """Weighted penalty on consecutive configuration differences.

    per_joint: sum_i sum_j w_j |q_ij - q_{i-1,j}| (elementwise reading of
    the weighted norm). The alternative applies the scalar L2 norm per
    step and scales it by sum(w). Subgradient 0 at exact zero differences.
    """
    Q = np.asarray(configs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] < 2 or w.shape != (Q.shape[1],):
        raise InvalidInputError("need (p, n) configs and one weight per joint")
    diff = np.diff(Q, axis=0)
    grad = np.zeros_like(Q)
    if per_joint:
        cost = float(np.sum(w[None, :] * np.abs(diff)))
        # subgradient 0 at (numerically) zero differences
        s = np.where(np.abs(diff) > 1e-12, np.sign(diff), 0.0) * w[None, :]
    else:
        norms = np.linalg.norm(diff, axis=1)
        cost = float(w.sum() * norms.sum())
        s = np.zeros_like(diff)
        nz = norms > 1e-12
        s[nz] = w.sum() * diff[nz] / norms[nz, None]
    grad[1:] += s
    grad[:-1] -= s
    return cost, grad


def end_effector_length_cost(arm: PlanarArm, configs: np.ndarray):
    """Piecewise-linear length of the end-effector trace, joint-space gradient."""
    Q = np.asarray(configs, dtype=np.float64)
    pts = arm.fk_batch(Q)[:, -1, :]
    inc = np.diff(pts, axis=0)
    seg = np.linalg.norm(inc, axis=1)
    cost = float(seg.sum())
    units = np.zeros_like(inc)
    nz = seg > 1e-12
    units[nz] = inc[nz] / seg[nz, None]
    ee_grad = np.zeros_like(pts)
    ee_grad[1:] += units
    ee_grad[:-1] -= units
    grad = np.zeros_like(Q)
    for i in range(Q.shape[0]):
        if np.any(ee_grad[i]):
            g = np.zeros((arm.n_joints, 2))
            g[-1] = ee_grad[i]
            grad[i] = pull_gradient(arm, Q[i], g)
    return cost, grad


def occupancy_cost(arm: PlanarArm, occupancy: OccupancyField, configs: np.ndarray):
    """Sum of obstacle likelihood over all body points and configurations."""
    Q = np.asarray(configs, dtype=np.float64)
    pts = arm.fk_batch(Q)                      # (p, n, 2)
    vals, wgrads = occupancy.value_and_grad(pts.reshape(-1, 2))
    cost = float(vals.sum())
    wgrads = wgrads.reshape(Q.shape[0], arm.n_joints, 2)
    grad = np.zeros_like(Q)
    for i in range(Q.shape[0]):
        grad[i] = pull_gradient(arm, Q[i], wgrads[i])
    return cost, grad


def _segment_distance(p1, p2, p3, p4):
    """Closest distance between segments (p1, p2) and (p3, p4).

    Returns (dist, closest point parameters s, t) so the caller can apply
    the envelope rule for gradients.
    """
    d1 = p2 - p1
    d2 = p4 - p3
    r = p1 - p3
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    b, c = d1 @ d2, d1 @ r
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-14 else 0.0
    t = (b * s + f) / e if e > 1e-14 else 0.0
    if t < 0.0 or t > 1.0:
        t = np.clip(t, 0.0, 1.0)
        s = np.clip((b * t - c) / a, 0.0, 1.0) if a > 1e-14 else 0.0
    pa = p1 + s * d1
    pb = p3 + t * d2
    return float(np.linalg.norm(pa - pb)), float(s), float(t)


def self_collision_cost(arm: PlanarArm, configs: np.ndarray, clearance: float = 0.05):
    """Smooth hinge on pairwise clearance of non-adjacent link segments.

    penalty = sum over configs and link pairs of max(0, r_min - d)^2 where
    d is the segment-segment distance; gradients use the envelope rule at
    the closest points and pull back through the chain Jacobians.
    """
    Q = np.asarray(configs, dtype=np.float64)
    n = arm.n_joints
    cost = 0.0
    grad = np.zeros_like(Q)
    if n < 3:
        return 0.0, grad
    for i in range(Q.shape[0]):
        pts = arm.fk(Q[i])
        joints = np.vstack([np.zeros(2), pts])     # segment a is (joints[a], joints[a+1])
        wgrads = np.zeros((n, 2))
        touched = False
        for a in range(n):
            for b in range(a + 2, n):
                d, s, t = _segment_distance(joints[a], joints[a + 1],
                                            joints[b], joints[b + 1])
                if d >= clearance or d <= 1e-12:
                    continue
                cost += (clearance - d) ** 2
                u = (joints[a] + s * (joints[a + 1] - joints[a])
                     - joints[b] - t * (joints[b + 1] - joints[b]))
                u = u / d
                scale = -2.0 * (clearance - d)
                touched = True
                # distribute onto the segment endpoints; the base is fixed
                for idx, w in ((a - 1, 1.0 - s), (a, s), (b - 1, -(1.0 - t)), (b, -t)):
                    if idx >= 0:
                        wgrads[idx] += scale * w * u
        if touched:
            grad[i] = pull_gradient(arm, Q[i], wgrads)
    return float(cost), grad


def arm_total_cost(arm: PlanarArm, occupancy: OccupancyField, traj: SplineTrajectory,
                   n_points: int = 64, dyn_weights: np.ndarray | None = None,
                   clearance: float = 0.05):
    """Weighted arm trajectory cost with its gradient on the free knots.

    cost = 2.5 * length + 2.5 * dynamics + occupancy + 10 * self-collision,
    evaluated on the decimated configuration sequence. The joint-space
    gradient pulls back onto the intermediate spline knots.
    """
    if dyn_weights is None:
        dyn_weights = np.linspace(1.0, 0.7, arm.n_joints)
    path = fit_and_decimate(traj, n_points)
    Q = path.vertices
    c_len, g_len = end_effector_length_cost(arm, Q)
    c_dyn, g_dyn = dyn_cost(Q, dyn_weights)
    c_col, g_col = occupancy_cost(arm, occupancy, Q)
    c_scol, g_scol = self_collision_cost(arm, Q, clearance)
    cost = 2.5 * c_len + 2.5 * c_dyn + c_col + 10.0 * c_scol
    grad_q = 2.5 * g_len + 2.5 * g_dyn + g_col + 10.0 * g_scol
    knot_grad = knot_gradient_pullback(traj, grad_q, n_points)
    return cost, knot_grad
