"""Hyperparameter inference for the GP surrogate.

Three backends over the same log marginal likelihood: a fixed-schedule
gradient ascent (maximum likelihood), its projected variant under
independent uniform priors (maximum a posteriori), and a random-walk
Metropolis chain sampling the hyperparameter posterior for the
marginalized acquisition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import OutsideSupport
from .gp import Dataset, Hyperparams, KernelKind, log_marginal_likelihood

__all__ = [
    "PriorSpec",
    "GradAscentConfig",
    "McmcConfig",
    "ml_estimate",
    "map_estimate",
    "mcmc_sample",
    "metropolis_accept",
]

STATIONARY_GRAD_TOL = 1e-12
MAX_BACKTRACKS = 30
# Per-iteration cap on the log-space move: with very steep early gradients an
# uncapped step can hop across the likelihood barrier into the degenerate
# zero-lengthscale basin (any jump that "improves" a terrible initial value
# would be accepted).  The paper-default schedule rarely hits the cap.
MAX_LOG_STEP = 0.5


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors on sigma and the lengthscale(s).

    A single lengthscale bound pair means one shared lengthscale across all
    input dimensions; a list of pairs means one lengthscale per dimension.
    """

    sigma_bounds: tuple[float, float]
    lengthscale_bounds: tuple[float, float] | list[tuple[float, float]]

    def __post_init__(self):
        ls = self.lengthscale_bounds
        if isinstance(ls, tuple) and len(ls) == 2 and np.isscalar(ls[0]):
            ls = [ls]
        ls = [tuple(float(b) for b in pair) for pair in ls]
        object.__setattr__(self, "lengthscale_bounds", ls)
        for lo, hi in [tuple(self.sigma_bounds)] + ls:
            if not (0 < lo < hi):
                raise ValueError(f"invalid uniform bounds ({lo}, {hi})")

    @property
    def n_lengthscales(self) -> int:
        return len(self.lengthscale_bounds)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) vectors over [sigma, l_1..l_m]."""
        pairs = [tuple(self.sigma_bounds)] + list(self.lengthscale_bounds)
        arr = np.asarray(pairs, dtype=float)
        return arr[:, 0], arr[:, 1]

    def contains(self, vec: np.ndarray) -> bool:
        lo, hi = self.bounds()
        return bool(np.all(vec >= lo) & np.all(vec <= hi))

    def midpoint(self) -> np.ndarray:
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def theta(self, vec: np.ndarray, noise_variance: float) -> Hyperparams:
        return Hyperparams(float(vec[0]), np.asarray(vec[1:], float), noise_variance)

    def vector(self, theta: Hyperparams) -> np.ndarray:
        if theta.lengthscales.size != self.n_lengthscales:
            raise OutsideSupport(
                f"theta has {theta.lengthscales.size} lengthscales, prior expects "
                f"{self.n_lengthscales}"
            )
        return np.concatenate([[theta.sigma], theta.lengthscales])


@dataclass(frozen=True)
class GradAscentConfig:
    """Fixed-schedule gradient ascent on the log marginal likelihood."""

    steps: int = 100
    step_size: float = 1e-4
    log_space: bool = True
    tie_lengthscales: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")


@dataclass(frozen=True)
class McmcConfig:
    """Random-walk Metropolis chain over the hyperparameter posterior."""

    sample_count: int = 100
    burn_in: int = 100
    proposal_scale: float | np.ndarray | None = None  # None: 5% of prior width
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")


def _free_vector(theta: Hyperparams, tie: bool) -> np.ndarray:
    ls = theta.lengthscales
    if tie:
        if not np.allclose(ls, ls[0]):
            raise ValueError("tie_lengthscales requires equal initial lengthscales")
        ls = ls[:1]
    return np.concatenate([[theta.sigma], ls])


def _theta_from_free(vec: np.ndarray, theta_like: Hyperparams) -> Hyperparams:
    return replace(theta_like, sigma=float(vec[0]), lengthscales=vec[1:].copy())


def _lml_free(
    data: Dataset, kind: KernelKind, vec: np.ndarray, theta_like: Hyperparams
) -> tuple[float, np.ndarray]:
    """LML and gradient over the free vector [sigma, lengthscale(s)].

    A single shared lengthscale sums the per-dimension gradient components;
    the noise component is dropped (noise is never optimized here).
    """
    theta = _theta_from_free(vec, theta_like)
    value, grad = log_marginal_likelihood(data, kind, theta)
    g_sigma, g_ls = grad[0], grad[1:-1]
    if g_ls.size != vec.size - 1:
        g_ls = np.array([g_ls.sum()])
    return value, np.concatenate([[g_sigma], g_ls])


def _ascend(objective, vec0: np.ndarray, cfg: GradAscentConfig, clip=None) -> np.ndarray:
    """Monotone gradient ascent: exactly cfg.steps iterations, each accepting
    the first backtracked candidate that does not decrease the objective."""
    u = np.log(vec0) if cfg.log_space else vec0.copy()

    def eval_u(u_):
        with np.errstate(over="ignore"):
            vec = np.exp(u_) if cfg.log_space else u_
        if clip is not None:
            vec = clip(vec)
        if not np.all(np.isfinite(vec)) or np.any(vec <= 0):
            # overflowed or degenerate candidate: reject via backtracking
            return vec, -math.inf, np.zeros_like(u_)
        val, g = objective(vec)
        if cfg.log_space:
            g = g * vec  # chain rule d/d(log p) = p d/dp
        return vec, val, g

    vec, cur_val, g = eval_u(u)
    hit_nonfinite = False
    for _ in range(cfg.steps):
        if not np.isfinite(cur_val):
            hit_nonfinite = True
            break
        if np.max(np.abs(g)) < STATIONARY_GRAD_TOL:
            continue
        step = cfg.step_size
        for _ in range(MAX_BACKTRACKS):
            move = step * g
            if cfg.log_space:
                move = np.clip(move, -MAX_LOG_STEP, MAX_LOG_STEP)
            u_cand = u + move
            vec_c, val_c, g_c = eval_u(u_cand)
            if np.isfinite(val_c) and val_c >= cur_val:
                u = np.log(vec_c) if cfg.log_space else vec_c
                vec, cur_val, g = vec_c, val_c, g_c
                break
            if not np.isfinite(val_c):
                hit_nonfinite = True
            step *= 0.5
        # all backtracks failed: keep the current iterate for this step
    if hit_nonfinite:
        warnings.warn("non-finite log likelihood encountered during ascent; "
                      "kept last finite iterate", RuntimeWarning)
    return vec


def ml_estimate(
    data: Dataset, kind: KernelKind, init: Hyperparams, cfg: GradAscentConfig
) -> Hyperparams:
    """Maximum-likelihood hyperparameters by fixed-schedule gradient ascent.

    Runs exactly cfg.steps iterations (backtracking inside each step keeps
    the log likelihood non-decreasing); all components stay positive through
    the log-space parameterization.
    """
    if len(data) < 2:
        raise ValueError("ml_estimate requires n >= 2")
    vec0 = _free_vector(init, cfg.tie_lengthscales)

    def objective(vec):
        return _lml_free(data, kind, vec, init)

    vec = _ascend(objective, vec0, cfg)
    return _theta_from_free(vec, init)


def map_estimate(
    data: Dataset,
    kind: KernelKind,
    priors: PriorSpec,
    init: Hyperparams | None = None,
    cfg: GradAscentConfig = GradAscentConfig(),
    noise_variance: float | None = None,
) -> Hyperparams:
    """Maximum a posteriori hyperparameters under uniform priors.

    Projected gradient ascent on log-prior + LML: iterates are clipped to
    the prior box, so with an interior optimum the result coincides with
    the ML estimate.

    Raises
    ------
    OutsideSupport
        If `init` lies outside the prior support.
    """
    if init is None:
        noise = 1e-6 if noise_variance is None else noise_variance
        init = priors.theta(priors.midpoint(), noise)
    vec0 = priors.vector(init)
    if not priors.contains(vec0):
        raise OutsideSupport(f"initial hyperparameters {vec0} outside prior support")
    lo, hi = priors.bounds()

    def clip(vec):
        return np.clip(vec, lo, hi)

    def objective(vec):
        # uniform log-prior is constant on the support; projection keeps
        # iterates inside, so only the LML term drives the ascent
        return _lml_free(data, kind, vec, init)

    vec = _ascend(objective, vec0, cfg, clip=clip)
    return _theta_from_free(clip(vec), init)


def metropolis_accept(log_ratio: float, u: float) -> bool:
    """Accept with probability min(1, exp(log_ratio)) given u ~ U(0,1)."""
    if log_ratio >= 0.0:
        return True
    return math.log(u) < log_ratio


def mcmc_sample(
    data: Dataset,
    kind: KernelKind,
    priors: PriorSpec,
    cfg: McmcConfig,
    noise_variance: float = 1e-6,
) -> list[Hyperparams]:
    """Random-walk Metropolis samples from p(theta | data).

    The un-normalized log target is log-prior + LML (just the prior when the
    dataset is empty).  Proposals are independent Gaussians per
    hyperparameter in raw space; proposals outside the prior support are
    rejected.  The chain starts at the prior midpoint and is fully
    deterministic under cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    lo, hi = priors.bounds()
    width = hi - lo
    scale = cfg.proposal_scale
    scale = 0.05 * width if scale is None else np.broadcast_to(scale, lo.shape)

    def log_target(vec: np.ndarray) -> float:
        if np.any(vec < lo) or np.any(vec > hi):
            return -math.inf
        if len(data) == 0:
            return 0.0
        value, _ = log_marginal_likelihood(
            data, kind, priors.theta(vec, noise_variance)
        )
        return value

    cur = priors.midpoint()
    cur_lp = log_target(cur)
    samples: list[Hyperparams] = []
    n_accept = 0
    total = cfg.burn_in + cfg.sample_count * cfg.thin
    for step in range(total):
        prop = cur + rng.normal(size=cur.size) * scale
        u = rng.uniform()
        lp = log_target(prop)
        if metropolis_accept(lp - cur_lp, u):
            cur, cur_lp = prop, lp
            n_accept += 1
        if step >= cfg.burn_in and (step - cfg.burn_in + 1) % cfg.thin == 0:
            samples.append(priors.theta(cur, noise_variance))
    if n_accept == 0:
        warnings.warn(
            "Metropolis chain rejected every proposal; returning the "
            "initial state replicated", RuntimeWarning,
        )
    return samples
