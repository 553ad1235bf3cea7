"""Receding-horizon controllers for the point-mass environment.

Each controller maintains candidate control sequences of a fixed horizon,
re-optimizes them briefly at every control step, executes only the first
action of the currently best policy, then warm-starts the next step by
shifting every sequence one step left and holding the last action.

* Stein controllers (``sigsvgd``, ``svmpc``) keep a set of policy
  particles updated by kernelized variational steps with Monte Carlo
  gradients estimated from sampled rollouts; a handful of fixed motion
  primitives (no force, full force along each axis) join the candidate
  pool for action selection but are never optimized.
* ``mppi`` keeps a single mean sequence updated by exponentially weighted
  averaging of sampled rollouts.
* ``cmaes`` adapts a sampling Gaussian over flattened control sequences;
  primitives are injected into each evaluated generation so they can
  influence selection without touching the sampler.

All sampling uses batched draws from one seeded generator, so episodes
are reproducible bit for bit per (seed, config).
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .kernels import SigKernelSpec, StaticKernelSpec, bandwidth_heuristic
from .stein import (
    AdamState,
    ControlSequenceCodec,
    GaussianPrior,
    ParticleSet,
    mc_grad_from_samples,
    svgd_step,
)
from .worlds.pointmass import PointMassEnv, pointmass_running_cost

__all__ = [
    "ControlConfig",
    "EpisodeResult",
    "motion_primitives",
    "mppi_update",
    "CmaState",
    "cmaes_init",
    "cmaes_sample",
    "cmaes_step",
    "mpc_episode",
]

CONTROLLERS = ("sigsvgd", "svmpc", "mppi", "cmaes")


@dataclass
class ControlConfig:
    """Hyper-parameters shared by the receding-horizon controllers."""

    n_particles: int = 30
    horizon: int = 30
    action_samples: int = 10
    authority: float = 5.0                 # control sampling std per axis
    inner_iterations: int = 3
    step_size: float = 1.0
    temperature: float = 1.0               # likelihood weight lambda
    mc_inverse_temperature: float = 1.0    # alpha in the sampled-gradient branch
    sig_variant: str = "truncated"
    sig_degree: int = 3
    sig_bandwidth: float = 5.65
    kernel_stride: int = 3
    static_bandwidth: float | None = None  # None: Silverman per step
    mppi_temperature: float = 20.0
    cma_sigma: float = 2.5
    normalize: bool = True


@dataclass
class EpisodeResult:
    steps: int
    accrued_cost: float
    crashed: bool
    reached_goal: bool
    seed: int
    wall_clock: float

    def to_json_dict(self) -> dict:
        return {
            "steps": self.steps, "accrued_cost": self.accrued_cost,
            "crashed": self.crashed, "reached_goal": self.reached_goal,
            "seed": self.seed, "wall_clock": self.wall_clock,
        }


def motion_primitives(horizon: int, u_max: float) -> np.ndarray:
    """Five fixed policies: no force and full force along each axis."""
    prims = np.zeros((5, horizon, 2))
    prims[1, :, 0] = u_max
    prims[2, :, 0] = -u_max
    prims[3, :, 1] = u_max
    prims[4, :, 1] = -u_max
    return prims


def mppi_update(controls: np.ndarray, costs: np.ndarray, temperature: float
                ) -> np.ndarray:
    """Exponentially weighted average of sampled control sequences.

    u = sum_j softmax(-C_j / temperature) u_j, stabilized by subtracting
    the minimum cost. All-infinite costs fall back to uniform weights.
    """
    controls = np.asarray(controls, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    if controls.shape[0] != costs.shape[0] or controls.shape[0] < 1:
        raise InvalidInputError("need one cost per control sequence")
    finite = np.isfinite(costs)
    if not finite.any():
        warnings.warn("all rollout costs are infinite; using uniform weights")
        w = np.full(len(costs), 1.0 / len(costs))
    else:
        z = np.where(finite, -costs / temperature, -np.inf)
        z = z - z[finite].max()
        w = np.exp(z)
        w /= w.sum()
    return np.einsum("j,j...->...", w, controls)


# ---------------------------------------------------------------------------
# CMA-ES
# ---------------------------------------------------------------------------

@dataclass
class CmaState:
    """Covariance matrix adaptation state (standard rank-mu / rank-one form)."""

    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0
    best_value: float = np.inf
    best_candidate: np.ndarray | None = None


def cmaes_init(mean: np.ndarray, sigma: float) -> CmaState:
    mean = np.asarray(mean, dtype=np.float64).copy()
    dim = mean.size
    return CmaState(mean=mean, sigma=float(sigma), cov=np.eye(dim),
                    p_sigma=np.zeros(dim), p_c=np.zeros(dim))


def _cma_weights(population: int, dim: int):
    mu = population // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mu_eff = 1.0 / np.sum(w ** 2)
    c_sigma = (mu_eff + 2.0) / (dim + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mu_eff - 1.0) / (dim + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / dim) / (dim + 4.0 + 2.0 * mu_eff / dim)
    c_1 = 2.0 / ((dim + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dim + 2.0) ** 2 + mu_eff))
    return w, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu


def _cov_factor(cov: np.ndarray):
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 1e-12)       # positive-definiteness repair
    return vecs, vals


def cmaes_sample(state: CmaState, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n candidates from the current search distribution."""
    vecs, vals = _cov_factor(state.cov)
    z = rng.standard_normal((n, state.mean.size))
    return state.mean + state.sigma * (z * np.sqrt(vals)) @ vecs.T


def cmaes_step(state: CmaState, candidates: np.ndarray, fitness: np.ndarray
               ) -> CmaState:
    """One selection/adaptation update from evaluated candidates.

    Candidates may include injected entries that were not sampled from the
    current distribution (e.g. fixed primitives); they take part in the
    ranking like any other candidate.
    """
    X = np.asarray(candidates, dtype=np.float64)
    f = np.asarray(fitness, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(f) or len(X) < 2:
        raise InvalidInputError("need at least two evaluated candidates")
    dim = state.mean.size
    order = np.argsort(f, kind="stable")
    w, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu = _cma_weights(len(X), dim)
    mu = len(w)
    sel = X[order[:mu]]

    best_idx = int(order[0])
    best_value, best_candidate = state.best_value, state.best_candidate
    if f[best_idx] < best_value:
        best_value = float(f[best_idx])
        best_candidate = X[best_idx].copy()

    old_mean = state.mean
    new_mean = w @ sel
    y = (new_mean - old_mean) / state.sigma

    vecs, vals = _cov_factor(state.cov)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    gen = state.generation + 1
    p_sigma = ((1.0 - c_sigma) * state.p_sigma
               + np.sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * inv_sqrt @ y)
    expected_norm = np.sqrt(dim) * (1.0 - 1.0 / (4.0 * dim) + 1.0 / (21.0 * dim ** 2))
    sigma = state.sigma * np.exp(
        (c_sigma / d_sigma) * (np.linalg.norm(p_sigma) / expected_norm - 1.0))

    h_sigma = (np.linalg.norm(p_sigma)
               / np.sqrt(1.0 - (1.0 - c_sigma) ** (2.0 * gen))
               < (1.4 + 2.0 / (dim + 1.0)) * expected_norm)
    p_c = (1.0 - c_c) * state.p_c
    if h_sigma:
        p_c = p_c + np.sqrt(c_c * (2.0 - c_c) * mu_eff) * y

    ys = (sel - old_mean) / state.sigma
    rank_mu = np.einsum("k,ki,kj->ij", w, ys, ys)
    cov = ((1.0 - c_1 - c_mu) * state.cov
           + c_1 * (np.outer(p_c, p_c)
                    + (0.0 if h_sigma else c_1 * c_c * (2.0 - c_c)) * state.cov)
           + c_mu * rank_mu)
    cov = 0.5 * (cov + cov.T)
    return CmaState(mean=new_mean, sigma=float(sigma), cov=cov,
                    p_sigma=p_sigma, p_c=p_c, generation=gen,
                    best_value=best_value, best_candidate=best_candidate)


# ---------------------------------------------------------------------------
# Receding-horizon episode
# ---------------------------------------------------------------------------

def _expected_costs(env, controls, noises):
    """Mean rollout cost of each policy under its sampled perturbations.

    controls: (n, H, 2) policy means; noises: (n, N_s, H, 2).
    Returns (expected (n,), flat sample costs (n, N_s)).
    """
    n, ns, H, du = noises.shape
    batch = (controls[:, None, :, :] + noises).reshape(n * ns, H, du)
    costs, _ = env.rollout_costs(env.pos, env.vel, batch)
    costs = costs.reshape(n, ns)
    return costs.mean(axis=1), costs


def _stein_controller_step(env, particles, primitives, cfg: ControlConfig,
                           codec, adam, rng, use_signature: bool,
                           prior_centers):
    """Inner optimization loop plus action selection for one control step."""
    n, H = cfg.n_particles, cfg.horizon
    prior_std = cfg.authority
    for _ in range(cfg.inner_iterations):
        noises = rng.normal(scale=cfg.authority, size=(n, cfg.action_samples, H, 2))
        controls = particles.reshape(n, H, 2)
        _, sample_costs = _expected_costs(env, controls, noises)
        grads = np.empty_like(particles)
        for i in range(n):
            g = mc_grad_from_samples(
                sample_costs[i], noises[i].reshape(cfg.action_samples, -1),
                cfg.mc_inverse_temperature * cfg.temperature, cfg.authority)
            prior = GaussianPrior(prior_centers[i], prior_std)
            _, pg = prior.logpdf_and_grad(particles[i])
            grads[i] = g + pg
        if use_signature:
            kspec: object = SigKernelSpec(
                static=StaticKernelSpec(bandwidth=cfg.sig_bandwidth),
                variant=cfg.sig_variant, degree=cfg.sig_degree,
                normalize=cfg.normalize)
        else:
            if cfg.static_bandwidth is None:
                sigma, degenerate = bandwidth_heuristic(particles, "silverman")
                sigma = 1.0 if degenerate else sigma
            else:
                sigma = cfg.static_bandwidth
            kspec = StaticKernelSpec(bandwidth=sigma)
        pset = svgd_step(ParticleSet(particles, codec), grads, kspec, 1.0, adam)
        particles = pset.particles

    # selection pass: expected cost of optimized policies and primitives
    controls = particles.reshape(n, H, 2)
    sel_noises = rng.normal(scale=cfg.authority,
                            size=(n + len(primitives), cfg.action_samples, H, 2))
    pool = np.concatenate([controls, primitives], axis=0)
    expected, _ = _expected_costs(env, pool, sel_noises)
    best = int(np.argmin(expected))
    action = pool[best, 0].copy()
    return particles, action, float(expected[best])


def _shift_hold(controls: np.ndarray) -> np.ndarray:
    """Shift a (…, H, d) control sequence one step left, repeating the last."""
    shifted = np.concatenate([controls[..., 1:, :], controls[..., -1:, :]], axis=-2)
    return shifted


def mpc_episode(env: PointMassEnv, controller: str, cfg: ControlConfig,
                seed: int = 0, trace_file: str | None = None) -> EpisodeResult:
    """Run one closed-loop episode; returns accrued cost, steps and crash flag.

    The episode ends at the goal radius, on a crash, or at the step cap;
    crashes report the step cap since the goal was never reached.
    """
    if controller not in CONTROLLERS:
        raise InvalidInputError(f"unknown controller: {controller!r}")
    t_start = time.perf_counter()
    rng = np.random.default_rng(seed)
    env = env.clone()
    env.reset()
    H = cfg.horizon
    primitives = motion_primitives(H, env.u_max)
    prim_frozen = primitives.copy()
    codec = ControlSequenceCodec(H, 2, kernel_stride=cfg.kernel_stride)
    goal = np.asarray(env.goal)

    particles = rng.normal(scale=cfg.authority, size=(cfg.n_particles, H * 2))
    adam = AdamState.init(particles.shape, cfg.step_size)
    mppi_mean = np.zeros((H, 2))
    cma = cmaes_init(np.zeros(H * 2), cfg.cma_sigma)

    accrued = 0.0
    trace_rows = []
    reached = False
    while env.steps < env.step_cap and not env.crashed:
        if env.at_goal():
            reached = True
            break
        if controller in ("sigsvgd", "svmpc"):
            centers = particles.copy()
            particles, action, exp_cost = _stein_controller_step(
                env, particles, primitives, cfg, codec, adam, rng,
                use_signature=(controller == "sigsvgd"), prior_centers=centers)
        elif controller == "mppi":
            K = cfg.n_particles * cfg.action_samples
            noise = rng.normal(scale=cfg.authority, size=(K, H, 2))
            batch = mppi_mean[None, :, :] + noise
            costs, _ = env.rollout_costs(env.pos, env.vel, batch)
            mppi_mean = mppi_update(batch, costs, cfg.mppi_temperature)
            action = mppi_mean[0].copy()
            exp_cost = float(costs.min())
        else:
            pop = cfg.n_particles * cfg.action_samples
            for _ in range(cfg.inner_iterations):
                cand = cmaes_sample(cma, pop, rng)
                evaluated = np.vstack([cand, prim_frozen.reshape(5, -1)])
                fitness, _ = env.rollout_costs(env.pos, env.vel,
                                               evaluated.reshape(-1, H, 2))
                cma = cmaes_step(cma, evaluated, fitness)
            action = cma.best_candidate.reshape(H, 2)[0].copy()
            exp_cost = cma.best_value
            cma.best_value = np.inf       # stale optima expire each control step
            cma.best_candidate = None

        pre_crashed = env.crashed
        env.step(action)
        hit = env.crashed and not pre_crashed
        u_eff = np.clip(action, -env.u_max, env.u_max)
        step_cost = float(pointmass_running_cost(env.pos, env.vel, u_eff, goal, hit))
        accrued += step_cost
        if trace_file:
            trace_rows.append({
                "step": env.steps, "state": env.pos.tolist(),
                "velocity": env.vel.tolist(), "action": action.tolist(),
                "cost": step_cost, "expected": exp_cost,
            })

        # warm start: shift optimized sequences; primitives stay fixed
        particles = _shift_hold(particles.reshape(-1, H, 2)).reshape(particles.shape)
        mppi_mean = _shift_hold(mppi_mean)
        cma.mean = _shift_hold(cma.mean.reshape(H, 2)).ravel()
        assert np.array_equal(primitives, prim_frozen)

    reached = reached or env.at_goal()
    steps = env.steps if reached else env.step_cap
    if trace_file:
        with open(trace_file, "w") as fh:
            for row in trace_rows:
                fh.write(json.dumps(row) + "\n")
    return EpisodeResult(steps=steps, accrued_cost=float(accrued),
                         crashed=env.crashed, reached_goal=reached, seed=seed,
                         wall_clock=time.perf_counter() - t_start)
