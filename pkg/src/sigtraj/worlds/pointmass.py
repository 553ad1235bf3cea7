"""Point-mass navigation on an obstacle grid.

A holonomic double integrator with non-unit mass moves through a square
arena containing an evenly spaced grid of circular obstacles and solid
boundary walls. Collisions latch: once the mass touches anything its
position freezes for the rest of the episode, which models a crash.

The running cost is quadratic in the position error, speed and control
effort plus a large penalty on the step where a collision happens; the
terminal cost weighs the final position error heavily. The crash
indicator makes the total non-differentiable, which is why controllers
on this environment use sampled gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["PointMassEnv", "pointmass_running_cost", "pointmass_terminal_cost"]

COLLISION_PENALTY = 1.0e6


def pointmass_running_cost(pos, vel, u, goal, collided):
    """0.5 e'e + 0.25 v'v + 0.2 u'u + 1{collision} * penalty (broadcasts)."""
    e = pos - goal
    base = (0.5 * np.sum(e * e, axis=-1)
            + 0.25 * np.sum(vel * vel, axis=-1)
            + 0.2 * np.sum(u * u, axis=-1))
    return base + np.asarray(collided, dtype=np.float64) * COLLISION_PENALTY


def pointmass_terminal_cost(pos, vel, goal):
    """1000 e'e + 0.1 v'v at the end of a horizon."""
    e = pos - goal
    return 1000.0 * np.sum(e * e, axis=-1) + 0.1 * np.sum(vel * vel, axis=-1)


@dataclass
class PointMassEnv:
    """Double-integrator arena with circular obstacle grid and walls."""

    mass: float = 2.0
    dt: float = 0.05
    v_max: float = 5.0
    u_max: float = 10.0
    arena_halfwidth: float = 2.0
    obstacle_radius: float = 0.25
    obstacle_grid: int = 4                     # obstacles per side; 0 disables
    start: tuple = (-1.8, -1.8)
    goal: tuple = (1.8, 1.8)
    goal_radius: float = 0.1
    step_cap: int = 400

    pos: np.ndarray = field(init=False)
    vel: np.ndarray = field(init=False)
    crashed: bool = field(init=False, default=False)
    steps: int = field(init=False, default=0)

    def __post_init__(self):
        if self.obstacle_grid > 0:
            span = self.arena_halfwidth
            axis = np.linspace(-span, span, self.obstacle_grid + 2)[1:-1]
            xx, yy = np.meshgrid(axis, axis)
            self.obstacles = np.column_stack([xx.ravel(), yy.ravel()])
        else:
            self.obstacles = np.zeros((0, 2))
        self.reset()

    def reset(self):
        self.pos = np.asarray(self.start, dtype=np.float64).copy()
        self.vel = np.zeros(2)
        self.crashed = False
        self.steps = 0
        return self.pos.copy()

    def clone(self) -> "PointMassEnv":
        env = replace(self)
        env.pos = self.pos.copy()
        env.vel = self.vel.copy()
        env.crashed = self.crashed
        env.steps = self.steps
        return env

    # -- collision geometry -------------------------------------------------

    def in_collision(self, pos: np.ndarray) -> np.ndarray:
        """Boolean collision test, broadcasting over leading axes of pos."""
        pos = np.asarray(pos, dtype=np.float64)
        walls = np.any(np.abs(pos) > self.arena_halfwidth, axis=-1)
        if len(self.obstacles) == 0:
            return walls
        d2 = np.sum((pos[..., None, :] - self.obstacles) ** 2, axis=-1)
        return walls | np.any(d2 <= self.obstacle_radius ** 2, axis=-1)

    def at_goal(self) -> bool:
        return bool(np.linalg.norm(self.pos - np.asarray(self.goal)) <= self.goal_radius)

    # -- dynamics ------------------------------------------------------------

    def _advance(self, pos, vel, u):
        u = np.clip(u, -self.u_max, self.u_max)
        vel = vel + self.dt * u / self.mass
        speed = np.linalg.norm(vel, axis=-1, keepdims=True)
        over = speed > self.v_max
        vel = np.where(over, vel * (self.v_max / np.maximum(speed, 1e-12)), vel)
        return pos + self.dt * vel, vel

    def step(self, u) -> np.ndarray:
        """Semi-implicit Euler step with the crash latch."""
        self.steps += 1
        if self.crashed:
            return self.pos.copy()
        new_pos, new_vel = self._advance(self.pos, self.vel, np.asarray(u, dtype=np.float64))
        if bool(self.in_collision(new_pos)):
            self.vel = np.zeros(2)
            self.crashed = True        # position stays at the pre-step value
        else:
            self.pos, self.vel = new_pos, new_vel
        return self.pos.copy()

    # -- batched rollouts for sampling controllers ---------------------------

    def rollout_costs(self, pos0, vel0, controls: np.ndarray):
        """Total cost of candidate control sequences from a common state.

        controls has shape (B, H, 2). Returns (costs (B,), crashed (B,)).
        Rollouts replicate step(): crash latches freeze the position and the
        penalty is charged once, on the crashing step.
        """
        controls = np.asarray(controls, dtype=np.float64)
        B, H, _ = controls.shape
        pos = np.broadcast_to(np.asarray(pos0, dtype=np.float64), (B, 2)).copy()
        vel = np.broadcast_to(np.asarray(vel0, dtype=np.float64), (B, 2)).copy()
        crashed = np.zeros(B, dtype=bool)
        goal = np.asarray(self.goal, dtype=np.float64)
        costs = np.zeros(B)
        for t in range(H):
            u = np.clip(controls[:, t], -self.u_max, self.u_max)
            new_pos, new_vel = self._advance(pos, vel, u)
            col = self.in_collision(new_pos)
            hit = col & ~crashed
            ok = ~col & ~crashed
            pos = np.where(ok[:, None], new_pos, pos)
            vel = np.where(ok[:, None], new_vel, 0.0)
            costs += pointmass_running_cost(pos, vel, u, goal, hit)
            crashed |= hit
        costs += pointmass_terminal_cost(pos, vel, goal)
        return costs, crashed

    # -- serialization --------------------------------------------------------

    def config_dict(self) -> dict:
        return {
            "mass": self.mass, "dt": self.dt, "v_max": self.v_max,
            "u_max": self.u_max, "arena_halfwidth": self.arena_halfwidth,
            "obstacle_radius": self.obstacle_radius, "obstacle_grid": self.obstacle_grid,
            "start": list(self.start), "goal": list(self.goal),
            "goal_radius": self.goal_radius, "step_cap": self.step_cap,
        }

    @staticmethod
    def from_config_dict(d: dict) -> "PointMassEnv":
        d = dict(d)
        for key in ("start", "goal"):
            if key in d:
                d[key] = tuple(d[key])
        return PointMassEnv(**d)

    def to_json(self) -> str:
        return json.dumps(self.config_dict(), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PointMassEnv":
        return PointMassEnv.from_config_dict(json.loads(text))
