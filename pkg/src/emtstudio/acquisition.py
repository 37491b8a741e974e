"""Acquisition functions for candidate scoring.

Expected improvement (plug-in and hyperparameter-marginalized) for
optimization, and the Bichon expected-feasibility criterion for
threshold-exceedance classification.  Minimization is the internal
convention; maximization studies negate their outputs upstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import FactorizationError
from .gp import Dataset, GpPosterior, Hyperparams, KernelKind, fit_posterior

__all__ = [
    "Incumbent",
    "ThresholdSpec",
    "expected_improvement",
    "bichon_criterion",
    "MarginalizedAcquisition",
    "marginalized_acquisition",
]


@dataclass(frozen=True)
class Incumbent:
    """Best observed (scaled) objective value so far."""

    y_star: float
    sense: str = "minimize"

    def __post_init__(self):
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown sense {self.sense!r}")

    @classmethod
    def from_dataset(cls, data: Dataset, sense: str = "minimize") -> "Incumbent":
        if len(data) == 0:
            raise ValueError("incumbent of an empty dataset")
        y = data.outputs
        return cls(float(y.min() if sense == "minimize" else y.max()), sense)


@dataclass(frozen=True)
class ThresholdSpec:
    """Classification threshold (scaled units) with the band parameters of
    the expected-feasibility criterion; the band half-width is
    delta * alpha * predictive_std."""

    threshold: float
    delta: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def ei_closed_form(mean, std, y_star: float):
    """E[max(0, y_star - Y)] for Y ~ N(mean, std^2), elementwise."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = np.maximum(y_star - mean, 0.0)
    pos = std > 0
    if np.any(pos):
        m, s = mean[pos], std[pos]
        z = (y_star - m) / s
        out[pos] = (y_star - m) * norm.cdf(z) + s * norm.pdf(z)
    return np.maximum(out, 0.0)


def expected_improvement(posterior: GpPosterior, x, inc: Incumbent) -> float:
    """Expected improvement of a candidate over the incumbent.

    Closed form on the predictive normal; for maximize-sense incumbents the
    problem is mirrored (equivalent to negating outputs).
    """
    mean, var = posterior.predict(np.atleast_2d(np.asarray(x, dtype=float)))
    std = np.sqrt(var)
    if inc.sense == "maximize":
        return float(ei_closed_form(-mean, std, -inc.y_star)[0])
    return float(ei_closed_form(mean, std, inc.y_star)[0])


def bichon_closed_form(mean, std, threshold: float, delta: float, alpha: float):
    """E[max(eps - |threshold - Y|, 0)] with eps = delta*alpha*std, elementwise."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = np.zeros_like(mean)
    pos = std > 0
    if np.any(pos):
        m, s = mean[pos], std[pos]
        eps = delta * alpha * s
        z0 = (threshold - m) / s
        zm = (threshold - eps - m) / s
        zp = (threshold + eps - m) / s
        out[pos] = (
            (m - threshold) * (2.0 * norm.cdf(z0) - norm.cdf(zm) - norm.cdf(zp))
            - s * (2.0 * norm.pdf(z0) - norm.pdf(zm) - norm.pdf(zp))
            + eps * (norm.cdf(zp) - norm.cdf(zm))
        )
    return np.maximum(out, 0.0)


def bichon_criterion(posterior: GpPosterior, x, thr: ThresholdSpec) -> float:
    """Expected feasibility of a candidate: how much of the predictive mass
    falls within the band of half-width delta*alpha*std around the
    threshold.  Zero wherever the predictive std is zero."""
    mean, var = posterior.predict(np.atleast_2d(np.asarray(x, dtype=float)))
    std = np.sqrt(var)
    return float(bichon_closed_form(mean, std, thr.threshold, thr.delta, thr.alpha)[0])


class MarginalizedAcquisition:
    """Mean of an inner acquisition over posterior hyperparameter samples.

    One GP posterior is fitted per theta sample at construction and reused
    for every candidate scored during the iteration.  Samples whose Gram
    matrix cannot be factorized are skipped with a warning; if none survive
    a FactorizationError is raised.
    """

    def __init__(
        self,
        theta_samples: list[Hyperparams],
        data: Dataset,
        kind: KernelKind,
        inner: str = "ei",
        incumbent: Incumbent | None = None,
        threshold: ThresholdSpec | None = None,
    ):
        if not theta_samples:
            raise ValueError("theta_samples must be nonempty")
        if inner == "ei" and incumbent is None:
            raise ValueError("expected-improvement inner needs an incumbent")
        if inner == "bichon" and threshold is None:
            raise ValueError("bichon inner needs a threshold spec")
        if inner not in ("ei", "bichon"):
            raise ValueError(f"unknown inner acquisition {inner!r}")
        self.inner = inner
        self.incumbent = incumbent
        self.threshold = threshold
        self.posteriors: list[GpPosterior] = []
        n_failed = 0
        for theta in theta_samples:
            try:
                self.posteriors.append(fit_posterior(data, kind, theta))
            except FactorizationError:
                n_failed += 1
        if n_failed:
            warnings.warn(
                f"skipped {n_failed}/{len(theta_samples)} hyperparameter samples "
                "with non-factorizable Gram matrices", RuntimeWarning,
            )
        if not self.posteriors:
            raise FactorizationError("every hyperparameter sample failed to factorize")

    def _inner_scores(self, posterior: GpPosterior, X: np.ndarray) -> np.ndarray:
        mean, var = posterior.predict(X)
        mean = np.atleast_1d(mean)
        std = np.sqrt(np.atleast_1d(var))
        if self.inner == "ei":
            if self.incumbent.sense == "maximize":
                return ei_closed_form(-mean, std, -self.incumbent.y_star)
            return ei_closed_form(mean, std, self.incumbent.y_star)
        t = self.threshold
        return bichon_closed_form(mean, std, t.threshold, t.delta, t.alpha)

    def __call__(self, x) -> float | np.ndarray:
        single = np.asarray(x).ndim <= 1
        X = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(X.shape[0])
        for posterior in self.posteriors:
            total += self._inner_scores(posterior, X)
        scores = total / len(self.posteriors)
        return float(scores[0]) if single else scores


def marginalized_acquisition(
    theta_samples: list[Hyperparams],
    data: Dataset,
    kind: KernelKind,
    x,
    inner: str = "ei",
    incumbent: Incumbent | None = None,
    threshold: ThresholdSpec | None = None,
) -> float:
    """One-shot form of MarginalizedAcquisition for scoring a single point."""
    acq = MarginalizedAcquisition(theta_samples, data, kind, inner, incumbent, threshold)
    return float(np.atleast_1d(acq(x))[0])
