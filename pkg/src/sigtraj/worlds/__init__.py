"""Differentiable experiment environments and their cost functionals."""

from .terrain import TerrainField, halton_points, terrain_cost
from .pointmass import PointMassEnv, pointmass_running_cost, pointmass_terminal_cost
from .arm import (
    OccupancyField,
    PlanarArm,
    arm_total_cost,
    dyn_cost,
    end_effector_length_cost,
    occupancy_cost,
    pull_gradient,
    self_collision_cost,
)

__all__ = [
    "TerrainField",
    "halton_points",
    "terrain_cost",
    "PointMassEnv",
    "pointmass_running_cost",
    "pointmass_terminal_cost",
    "PlanarArm",
    "OccupancyField",
    "arm_total_cost",
    "dyn_cost",
    "end_effector_length_cost",
    "occupancy_cost",
    "pull_gradient",
    "self_collision_cost",
]
