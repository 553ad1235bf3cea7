"""Stein variational particle updates and their supporting pieces.

A particle set approximates a posterior over trajectory parameters with a
finite family of flattened vectors. Each update evaluates a velocity
field that combines kernel-smoothed log-posterior gradients (attraction)
with kernel gradients (repulsion), then applies an Adam step:

    phi(x) = mean_i [ k(y_i, x) g_i + gamma * grad_{y_i} k(y_i, x) ]

The kernel may act on the flattened vectors directly (a static
squared-exponential) or on the decoded paths through a signature kernel,
in which case vertex gradients are chain-ruled back to the parameters by
the particle codec. Passing no kernel degenerates to independent parallel
gradient ascent, which is the batch-gradient-descent baseline.

Log-posterior gradients are analytic when the cost is differentiable;
otherwise a Monte Carlo estimator perturbs the particle, softmax-weights
the sampled costs and uses a score-function estimate of the cost
gradient, with the prior gradient always added analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericError
from .kernels import SigKernelSpec, StaticKernelSpec, normalize_stats, pair_stats
from .paths import Path
from .splines import SplineTrajectory, decimation_matrix, fit_and_decimate

__all__ = [
    "AdamState",
    "GaussianPrior",
    "SmoothedBoxPrior",
    "CompositePrior",
    "box_prior_logpdf_grad",
    "compose_hyperprior",
    "anneal",
    "InferenceConfig",
    "ParticleSet",
    "SplineKnotCodec",
    "ControlSequenceCodec",
    "DirectPathCodec",
    "kernel_stats",
    "svgd_step",
    "mc_logpost_grad",
    "mc_grad_from_samples",
]


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moment accumulators for ascent steps of a particle array."""

    step_size: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(shape, step_size: float) -> "AdamState":
        return AdamState(step_size=float(step_size),
                         m=np.zeros(shape), v=np.zeros(shape))

    def update(self, grad: np.ndarray) -> np.ndarray:
        """Consume a gradient, return the increment to add to the iterate."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return self.step_size * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

class GaussianPrior:
    """Diagonal Gaussian log-density (unnormalized) with analytic gradient."""

    def __init__(self, mean, std):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.std = np.broadcast_to(np.asarray(std, dtype=np.float64),
                                   self.mean.shape).copy()
        if np.any(self.std <= 0):
            raise InvalidInputError("Gaussian prior std must be positive")

    def logpdf_and_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = (x - self.mean) / self.std
        return float(-0.5 * np.sum(z * z)), -z / self.std


class SmoothedBoxPrior:
    """Smoothed uniform prior over a box: log p = -d(x, B)^2 / sqrt(2 sigma^2).

    d is the Euclidean distance from x to the box (coordinatewise clamp),
    so the density is flat inside and falls off smoothly outside.
    """

    def __init__(self, lower, upper, sigma: float = 1.0):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if np.any(self.upper <= self.lower):
            raise InvalidInputError("box prior needs lower < upper elementwise")
        if not sigma > 0:
            raise InvalidInputError("box prior smoothing sigma must be positive")
        self.sigma = float(sigma)

    def logpdf_and_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        excess = x - np.clip(x, self.lower, self.upper)
        denom = np.sqrt(2.0 * self.sigma ** 2)
        return float(-np.sum(excess * excess) / denom), -2.0 * excess / denom


class CompositePrior:
    """Sum of member log-densities; gradients add exactly."""

    def __init__(self, members):
        self.members = list(members)
        if not self.members:
            raise InvalidInputError("composite prior needs at least one member")

    def logpdf_and_grad(self, x):
        total, grad = 0.0, np.zeros_like(np.asarray(x, dtype=np.float64))
        for m in self.members:
            lp, g = m.logpdf_and_grad(x)
            total += lp
            grad = grad + g
        return total, grad


def box_prior_logpdf_grad(x, lower, upper, sigma: float):
    """Functional form of the smoothed-box prior evaluation."""
    return SmoothedBoxPrior(lower, upper, sigma).logpdf_and_grad(x)


def compose_hyperprior(prior, hyper) -> CompositePrior:
    """Combine a prior with a hyper-prior; log-densities and gradients add."""
    members = []
    for p in (prior, hyper):
        members.extend(p.members if isinstance(p, CompositePrior) else [p])
    return CompositePrior(members)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def anneal(iteration: int, total: int, kind: str = "none",
           min_mult: float = 0.0) -> float:
    """Repulsion multiplier schedule; cosine decays from 1 to min_mult."""
    if not 0 <= iteration < total:
        raise InvalidInputError("iteration must lie in [0, total)")
    if kind == "none":
        return 1.0
    if kind == "cosine":
        return min_mult + (1.0 - min_mult) * 0.5 * (1.0 + np.cos(np.pi * iteration / total))
    raise InvalidInputError(f"unknown anneal kind: {kind!r}")


@dataclass
class InferenceConfig:
    """Knobs of one variational optimization run."""

    step_size: float = 0.05
    iterations: int = 300
    temperature: float = 1.0            # likelihood weight on the cost
    mc_samples: int = 0                 # 0 selects analytic gradients
    mc_noise_scale: float = 1.0
    mc_inverse_temperature: float = 1.0
    anneal: str = "none"
    anneal_min_mult: float = 0.0
    repulsion_mult: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0 or self.step_size <= 0:
            raise InvalidInputError("temperature and step size must be positive")


# ---------------------------------------------------------------------------
# Particle codecs: how a flattened vector maps to a Path
# ---------------------------------------------------------------------------

class SplineKnotCodec:
    """Particles are the free intermediate spline knots; endpoints are fixed.

    decode() produces the dense cost-resolution path; kernel paths may use
    a coarser decimation since the kernel only needs the path geometry.
    """

    def __init__(self, start, goal, n_intermediate: int, n_points: int,
                 kernel_points: int | None = None):
        self.start = np.atleast_1d(np.asarray(start, dtype=np.float64))
        self.goal = np.atleast_1d(np.asarray(goal, dtype=np.float64))
        self.dim = self.start.size
        self.n_intermediate = int(n_intermediate)
        self.n_points = int(n_points)
        self.kernel_points = int(kernel_points or n_points)
        self.knot_times = np.linspace(0.0, 1.0, self.n_intermediate + 2)
        self._D_cost = decimation_matrix(self.knot_times, self.n_points)
        self._D_kernel = decimation_matrix(self.knot_times, self.kernel_points)

    @property
    def n_params(self) -> int:
        return self.n_intermediate * self.dim

    def encode(self, traj: SplineTrajectory) -> np.ndarray:
        return traj.knot_values[1:-1].ravel().copy()

    def decode_traj(self, vec: np.ndarray) -> SplineTrajectory:
        inter = np.asarray(vec, dtype=np.float64).reshape(self.n_intermediate, self.dim)
        return SplineTrajectory.uniform(self.start, self.goal, inter)

    def decode(self, vec: np.ndarray) -> Path:
        return fit_and_decimate(self.decode_traj(vec), self.n_points)

    def decode_kernel(self, vec: np.ndarray) -> np.ndarray:
        knots = self.decode_traj(vec).knot_values
        v = self._D_kernel @ knots
        v[0], v[-1] = knots[0], knots[-1]
        return v

    def cost_pullback(self, path_grad: np.ndarray) -> np.ndarray:
        return (self._D_cost.T @ path_grad)[1:-1].ravel()

    def kernel_pullback_batch(self, G: np.ndarray) -> np.ndarray:
        # G: (..., kernel_points, dim) -> (..., n_params); endpoints dropped
        pulled = np.einsum("sk,...sc->...kc", self._D_kernel, G)
        return pulled[..., 1:-1, :].reshape(*G.shape[:-2], self.n_params)


class ControlSequenceCodec:
    """Particles are flattened control sequences of a fixed horizon."""

    def __init__(self, horizon: int, dim: int, kernel_stride: int = 1):
        self.horizon = int(horizon)
        self.dim = int(dim)
        self.kernel_stride = max(1, int(kernel_stride))
        idx = list(range(0, self.horizon, self.kernel_stride))
        if idx[-1] != self.horizon - 1:
            idx.append(self.horizon - 1)
        self._kernel_idx = np.asarray(idx)

    @property
    def n_params(self) -> int:
        return self.horizon * self.dim

    def encode(self, controls: np.ndarray) -> np.ndarray:
        return np.asarray(controls, dtype=np.float64).reshape(-1).copy()

    def decode_controls(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=np.float64).reshape(self.horizon, self.dim)

    def decode(self, vec: np.ndarray) -> Path:
        return Path.from_vertices(self.decode_controls(vec))

    def decode_kernel(self, vec: np.ndarray) -> np.ndarray:
        return self.decode_controls(vec)[self._kernel_idx]

    def kernel_pullback_batch(self, G: np.ndarray) -> np.ndarray:
        out = np.zeros(G.shape[:-2] + (self.horizon, self.dim))
        out[..., self._kernel_idx, :] = G
        return out.reshape(*G.shape[:-2], self.n_params)


class DirectPathCodec:
    """Particles are the path vertex values themselves (fixed sample count)."""

    def __init__(self, n_vertices: int, dim: int):
        self.n_vertices = int(n_vertices)
        self.dim = int(dim)

    @property
    def n_params(self) -> int:
        return self.n_vertices * self.dim

    def encode(self, vertices: np.ndarray) -> np.ndarray:
        return np.asarray(vertices, dtype=np.float64).reshape(-1).copy()

    def decode(self, vec: np.ndarray) -> Path:
        return Path.from_vertices(np.asarray(vec).reshape(self.n_vertices, self.dim))

    def decode_kernel(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=np.float64).reshape(self.n_vertices, self.dim)

    def kernel_pullback_batch(self, G: np.ndarray) -> np.ndarray:
        return G.reshape(*G.shape[:-2], self.n_params)


@dataclass
class ParticleSet:
    """Flattened particles plus the codec mapping them to paths."""

    particles: np.ndarray               # (n, p)
    codec: object

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=np.float64))

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    def decode(self, i: int) -> Path:
        return self.codec.decode(self.particles[i])

    def decode_all(self):
        return [self.codec.decode(x) for x in self.particles]

    def kernel_vertices(self) -> np.ndarray:
        return np.stack([self.codec.decode_kernel(x) for x in self.particles])


# ---------------------------------------------------------------------------
# Kernel statistics in parameter space
# ---------------------------------------------------------------------------

def kernel_stats(pset: ParticleSet, kspec):
    """Kernel matrix and parameter-space kernel gradients over the particles.

    Returns (K, G) with G[i, m] = d k(particle_i, particle_m) / d particle_i.
    A StaticKernelSpec acts on the flattened vectors; a SigKernelSpec acts
    on the decoded kernel paths and pulls vertex gradients back through the
    codec. None yields identity attraction with zero repulsion.
    """
    X = pset.particles
    n = X.shape[0]
    if kspec is None:
        return np.eye(n), np.zeros((n, n, X.shape[1]))
    if isinstance(kspec, StaticKernelSpec):
        if kspec.kind == "linear":
            K = X @ X.T
            G = np.broadcast_to(X[None, :, :], (n, n, X.shape[1])).transpose(1, 0, 2).copy()
            return K, G
        s2 = kspec.bandwidth ** 2
        diff = X[:, None, :] - X[None, :, :]
        K = np.exp(-np.sum(diff * diff, axis=2) / (2.0 * s2))
        G = -K[:, :, None] * diff / s2
        return K, G
    if isinstance(kspec, SigKernelSpec):
        V = pset.kernel_vertices()
        K, Gv = pair_stats(V, kspec)
        if kspec.normalize:
            K, Gv = normalize_stats(K, Gv)
        return K, pset.codec.kernel_pullback_batch(Gv)
    raise InvalidInputError(f"unsupported kernel spec: {type(kspec).__name__}")


def svgd_step(pset: ParticleSet, logpost_grads: np.ndarray, kspec,
              repulsion_mult: float, adam: AdamState) -> ParticleSet:
    """One synchronous update of every particle.

    phi(x_m) = mean_i [K[i, m] g_i + repulsion_mult * G[i, m]] followed by
    an Adam ascent step; with kspec None each particle ascends its own
    gradient (no attraction mixing, no repulsion).
    """
    g = np.asarray(logpost_grads, dtype=np.float64)
    if g.shape != pset.particles.shape:
        raise InvalidInputError("gradients must match the particle array")
    if not np.all(np.isfinite(g)):
        bad = int(np.where(~np.isfinite(g).all(axis=1))[0][0])
        raise NumericError(f"non-finite log-posterior gradient for particle {bad}")
    if kspec is None:
        phi = g
    else:
        K, G = kernel_stats(pset, kspec)
        phi = (np.einsum("im,ip->mp", K, g)
               + repulsion_mult * G.sum(axis=0)) / pset.n_particles
    if not np.all(np.isfinite(phi)):
        bad = int(np.where(~np.isfinite(phi).all(axis=1))[0][0])
        raise NumericError(f"non-finite score for particle {bad}")
    new = pset.particles + adam.update(phi)
    return ParticleSet(particles=new, codec=pset.codec)


# ---------------------------------------------------------------------------
# Monte Carlo log-posterior gradients
# ---------------------------------------------------------------------------

def mc_grad_from_samples(costs: np.ndarray, noises: np.ndarray,
                         inverse_temperature: float, noise_scale: float) -> np.ndarray:
    """Softmax-weighted score-function estimate of d/dx log mean exp(-alpha C).

    costs[j] is the cost at particle + noises[j]; the per-sample cost
    gradient is estimated as (C_j - Cbar) * noise_j / noise_scale^2 and the
    weights are softmax(-alpha C) computed via log-sum-exp.
    """
    costs = np.asarray(costs, dtype=np.float64)
    noises = np.asarray(noises, dtype=np.float64)
    finite = np.isfinite(costs)
    if not finite.any():
        raise NumericError("all Monte Carlo sample costs are non-finite")
    z = np.where(finite, -inverse_temperature * costs, -np.inf)
    z = z - z.max()
    w = np.exp(z)
    w /= w.sum()
    cbar = float(costs[finite].mean())
    cdev = np.where(finite, costs - cbar, 0.0)
    grad_c = cdev[:, None] * noises / noise_scale ** 2
    return -inverse_temperature * (w[:, None] * grad_c).sum(axis=0)


def mc_logpost_grad(particle: np.ndarray, cost_fn, prior, cfg: InferenceConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo gradient of the log-posterior at one particle.

    Draws cfg.mc_samples Gaussian perturbations, weighs the sampled costs
    and adds the analytic prior gradient.
    """
    if cfg.mc_samples < 2:
        raise InvalidInputError("Monte Carlo gradients need at least two samples")
    x = np.asarray(particle, dtype=np.float64)
    noises = rng.normal(scale=cfg.mc_noise_scale, size=(cfg.mc_samples, x.size))
    costs = np.array([cost_fn(x + e) for e in noises], dtype=np.float64)
    grad = mc_grad_from_samples(costs, noises, cfg.mc_inverse_temperature,
                                cfg.mc_noise_scale)
    if prior is not None:
        _, pg = prior.logpdf_and_grad(x)
        grad = grad + pg
    return grad
