"""Threshold-exceedance classification workflow.

Sequential design with the expected-feasibility (Bichon) criterion
concentrates simulator evaluations near the threshold boundary; the
resulting surrogate classifies a large uniform sample to estimate the
exceedance probability at negligible cost.  A full Monte Carlo run over the
simulator provides the benchmark oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .acquisition import ThresholdSpec, bichon_closed_form
from .errors import SimulationError
from .gp import Dataset, GpPosterior, KernelKind, fit_posterior
from .inference import GradAscentConfig, PriorSpec, map_estimate
from .loop import BoxDomain, maximize_acquisition

__all__ = [
    "ExceedanceStudy",
    "ClassificationResult",
    "McOracleResult",
    "run_classification",
    "estimate_exceedance_probability",
    "monte_carlo_oracle",
]


@dataclass(frozen=True)
class ExceedanceStudy:
    """Configuration of one exceedance-probability study.

    The input distribution is the independent uniform over the objective's
    domain box; `threshold_kv` is compared against the simulator output in
    kV (scaled internally by the objective's divisor).
    """

    threshold_kv: float
    n_init: int = 5
    n_acquire: int = 10
    estimator_samples: int = 100_000
    kernel: KernelKind = KernelKind.SQUARED_EXPONENTIAL
    # tight signal-amplitude prior with a roomy lengthscale keeps the
    # expected-feasibility search on the threshold boundary instead of
    # chasing prior variance in unexplored corners
    priors: PriorSpec = PriorSpec((0.05, 0.3), (0.3, 2.0))
    ascent: GradAscentConfig = GradAscentConfig(steps=100, step_size=0.05)
    band: ThresholdSpec | None = None  # derived from the scaled threshold if None
    noise_variance: float = 1e-6

    def __post_init__(self):
        if self.n_init < 2:
            raise ValueError(f"n_init must be >= 2, got {self.n_init}")
        if self.n_acquire < 0:
            raise ValueError(f"n_acquire must be >= 0, got {self.n_acquire}")
        if not 0.0 < self.threshold_kv <= 2000.0:
            raise ValueError(
                f"threshold {self.threshold_kv} kV outside the plausible (0, 2000]"
            )

    def scaled_threshold(self, objective) -> float:
        t = objective.scale_output(self.threshold_kv)
        if t < 0:
            raise ValueError(
                "exceedance studies need a minimize-sense objective "
                "(no output sign flip)"
            )
        return t


@dataclass
class ClassificationResult:
    posterior: GpPosterior
    data: Dataset  # unit-box inputs, scaled outputs
    acquired_unit: np.ndarray  # the n_acquire sequentially selected points


def _fit_map(data: Dataset, study: ExceedanceStudy) -> GpPosterior:
    theta = map_estimate(
        data, study.kernel, study.priors, None, study.ascent, study.noise_variance
    )
    return fit_posterior(data, study.kernel, theta)


def run_classification(
    study: ExceedanceStudy, objective, seed=0
) -> ClassificationResult:
    """Sequential design against the threshold: uniform initial points, then
    n_acquire rounds of MAP refit + expected-feasibility argmax.

    Total simulator evaluations: n_init + n_acquire.
    """
    root = np.random.SeedSequence(seed)
    ss_init, ss_loop = root.spawn(2)
    rng = np.random.default_rng(ss_init)
    t_scaled = study.scaled_threshold(objective)
    band = study.band or ThresholdSpec(t_scaled, delta=1.0, alpha=1.0)
    dim = objective.dim
    X = rng.uniform(size=(study.n_init, dim))
    y = np.array([objective.evaluate(u) for u in X])
    acquired = []
    unit_domain = _unit_box(dim)
    for _ in range(study.n_acquire):
        (ss_acq,) = ss_loop.spawn(1)
        posterior = _fit_map(Dataset(X, y), study)

        def scores(U):
            mean, var = posterior.predict(np.atleast_2d(U))
            return bichon_closed_form(
                np.atleast_1d(mean),
                np.sqrt(np.atleast_1d(var)),
                band.threshold,
                band.delta,
                band.alpha,
            )

        u_next = maximize_acquisition(
            scores, unit_domain, [tuple(row) for row in X], ss_acq
        )
        acquired.append(u_next)
        X = np.vstack([X, u_next])
        y = np.append(y, objective.evaluate(u_next))
    data = Dataset(X, y)
    return ClassificationResult(
        posterior=_fit_map(data, study),
        data=data,
        acquired_unit=np.array(acquired).reshape(-1, dim),
    )


def _unit_box(dim: int) -> BoxDomain:
    return BoxDomain(np.zeros(dim), np.ones(dim))


def estimate_exceedance_probability(
    posterior: GpPosterior,
    study: ExceedanceStudy,
    objective,
    seed=0,
    soft: bool = False,
) -> float:
    """Surrogate-based exceedance probability: classify estimator_samples
    uniform inputs by the posterior (no simulator calls).

    Hard classification counts posterior means above the scaled threshold;
    the soft variant averages the predictive exceedance probability
    Phi((mean - T)/std), quantifying surrogate uncertainty at the boundary.
    """
    rng = np.random.default_rng(seed)
    t_scaled = study.scaled_threshold(objective)
    U = rng.uniform(size=(study.estimator_samples, posterior.data.dim))
    probs = []
    for chunk in np.array_split(U, max(1, len(U) // 20000)):
        mean, var = posterior.predict(chunk)
        if soft:
            std = np.sqrt(np.maximum(var, 1e-300))
            probs.append(norm.cdf((mean - t_scaled) / std))
        else:
            probs.append((mean > t_scaled).astype(float))
    return float(np.concatenate(probs).mean())


@dataclass
class McOracleResult:
    probability: float
    values_kv: np.ndarray
    n_failures: int
    ci_half_width: float  # binomial 95% half-width

    def histogram(self, bins: int = 40) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.values_kv, bins=bins)


def monte_carlo_oracle(
    objective, study: ExceedanceStudy, n_samples: int, seed=0, jobs: int = 1
) -> McOracleResult:
    """Benchmark exceedance probability from n_samples full simulator runs.

    Simulator failures are excluded from the fraction only while they stay
    below 0.1% of the sample; beyond that the study aborts.  With jobs > 1
    the (pre-drawn) inputs are evaluated by a process pool, preserving the
    seeded result exactly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    U = rng.uniform(size=(n_samples, objective.dim))
    values = np.full(n_samples, np.nan)
    if jobs > 1 and hasattr(objective, "batch_native"):
        X = np.array([objective.to_native_input(u) for u in U])
        values = objective.batch_native(X, jobs=jobs)
        failures = int(np.isnan(values).sum())
    else:
        failures = 0
        for i, u in enumerate(U):
            try:
                values[i] = objective.evaluate(u)
            except SimulationError:
                failures += 1
    if failures > 0.001 * n_samples:
        raise SimulationError(
            f"{failures}/{n_samples} simulator failures exceed the 0.1% allowance"
        )
    ok = values[np.isfinite(values)]
    t_scaled = study.scaled_threshold(objective)
    p = float((ok > t_scaled).mean())
    half = 1.96 * math.sqrt(max(p * (1 - p), 1e-12) / ok.size)
    return McOracleResult(
        probability=p,
        values_kv=np.array([objective.unscale_output(v) for v in ok]),
        n_failures=failures,
        ci_half_width=half,
    )
