"""Gaussian-process regression core.

Kernels (squared exponential and Matern 5/2), posterior conditioning via
Cholesky factorization, predictive mean/variance queries, and the log
marginal likelihood with its analytic gradient.  All inputs are expected in
unit-box coordinates and all outputs in scaled units; the prior mean is
fixed at zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DimensionMismatch, FactorizationError

__all__ = [
    "KernelKind",
    "Hyperparams",
    "Dataset",
    "GpPosterior",
    "kernel_eval",
    "kernel_matrix",
    "fit_posterior",
    "predict",
    "log_marginal_likelihood",
]

SQRT5 = math.sqrt(5.0)

# Jitter escalation policy: relative to sigma^2, grow tenfold until the
# factorization succeeds and the weights residual is acceptable.
JITTER_START = 1e-10
JITTER_MAX = 1e-4
WEIGHT_RESIDUAL_TOL = 1e-8
# Predictive variances below this fraction of sigma^2 are numerical relics
# of the jitter and clamp to exactly zero.
VARIANCE_FLOOR = 1e-9


class KernelKind(enum.Enum):
    SQUARED_EXPONENTIAL = "se"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class Hyperparams:
    """Kernel hyperparameters: signal amplitude, per-dimension lengthscales,
    and observation-noise variance."""

    sigma: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not np.all(ls > 0):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if self.noise_variance < 0:
            raise ValueError(
                f"noise_variance must be non-negative, got {self.noise_variance}"
            )

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def lengthscales_for(self, d: int) -> np.ndarray:
        """Broadcast a single shared lengthscale to `d` dimensions."""
        if self.lengthscales.size == d:
            return self.lengthscales
        if self.lengthscales.size == 1:
            return np.full(d, self.lengthscales[0])
        raise DimensionMismatch(
            f"{self.lengthscales.size} lengthscales cannot serve {d}-dimensional inputs"
        )


@dataclass(frozen=True)
class Dataset:
    """Evaluated input/output pairs; the append-only history of a study."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.outputs, dtype=float).ravel()
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs vs {y.shape[0]} outputs")
        if X.size and not np.all(np.isfinite(X)):
            raise ValueError("non-finite input coordinate")
        if y.size and not np.all(np.isfinite(y)):
            raise ValueError("non-finite output value")

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0))

    def __len__(self) -> int:
        return self.outputs.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def append(self, x, y: float) -> "Dataset":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return Dataset(np.vstack([self.inputs, x]), np.append(self.outputs, y))


def _as_points(x, d: int | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if d is not None and X.shape[1] != d:
        raise DimensionMismatch(f"point dimension {X.shape[1]}, expected {d}")
    return X


def _scaled_sqdist(X: np.ndarray, X2: np.ndarray, ls: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X2[None, :, :]
    return np.sum((diff / ls) ** 2, axis=-1)


def _kernel_profile(kind: KernelKind, r2: np.ndarray) -> np.ndarray:
    """Unit-amplitude kernel value as a function of squared scaled distance."""
    if kind is KernelKind.SQUARED_EXPONENTIAL:
        return np.exp(-0.5 * r2)
    if kind is KernelKind.MATERN52:
        r = np.sqrt(np.maximum(r2, 0.0))
        return (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-SQRT5 * r)
    raise ValueError(f"unknown kernel kind {kind!r}")


def kernel_matrix(kind: KernelKind, theta: Hyperparams, X, X2=None) -> np.ndarray:
    """Cross-covariance matrix sigma^2 * k(r) between two point sets."""
    X = _as_points(X)
    ls = theta.lengthscales_for(X.shape[1])
    X2 = X if X2 is None else _as_points(X2, X.shape[1])
    r2 = _scaled_sqdist(X, X2, ls)
    return theta.sigma**2 * _kernel_profile(kind, r2)


def kernel_eval(kind: KernelKind, theta: Hyperparams, x, x2) -> float:
    """Covariance between two points under the lengthscale-scaled
    Euclidean metric.

    Raises
    ------
    DimensionMismatch
        If the points differ in dimension or do not match the
        lengthscale vector.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise DimensionMismatch(f"point shapes {x.shape} vs {x2.shape}")
    theta.lengthscales_for(x.size)
    return float(kernel_matrix(kind, theta, x[None, :], x2[None, :])[0, 0])


@dataclass(frozen=True)
class GpPosterior:
    """Trained zero-mean GP surrogate.

    Holds the lower Cholesky factor of the regularized Gram matrix and the
    precomputed weights solving K_reg @ w = y; immutable and safe to share
    across threads.
    """

    kind: KernelKind
    theta: Hyperparams
    data: Dataset
    cholesky_factor: np.ndarray
    weights: np.ndarray
    jitter: float

    def predict(self, x):
        """Predictive mean and latent variance at query points.

        Accepts a single d-vector (returns two floats) or an (m, d) batch
        (returns two m-vectors).  The variance is clamped to [0, sigma^2];
        far from all data the prediction reverts to the prior (0, sigma^2).
        """
        single = np.asarray(x).ndim <= 1
        X = _as_points(x, self.data.dim)
        k_star = kernel_matrix(self.kind, self.theta, X, self.data.inputs)
        mean = k_star @ self.weights
        v = solve_triangular(self.cholesky_factor, k_star.T, lower=True)
        var = self.theta.sigma**2 - np.sum(v**2, axis=0)
        var = np.clip(var, 0.0, self.theta.sigma**2)
        var[var < VARIANCE_FLOOR * self.theta.sigma**2] = 0.0
        if single:
            return float(mean[0]), float(var[0])
        return mean, var


def _regularized_gram(
    kind: KernelKind, theta: Hyperparams, X: np.ndarray, jitter_factor: float
) -> tuple[np.ndarray, float]:
    K = kernel_matrix(kind, theta, X)
    jitter = jitter_factor * theta.sigma**2
    K_reg = K + (theta.noise_variance + jitter) * np.eye(len(X))
    return K_reg, jitter


def _chol_with_escalation(kind: KernelKind, theta: Hyperparams, X: np.ndarray, y=None):
    """Factorize K + (noise + jitter) I, escalating jitter tenfold on failure.

    When targets `y` are given, a solve whose relative residual exceeds
    WEIGHT_RESIDUAL_TOL also triggers escalation (catches numerically
    singular Gram matrices that factorize by luck).
    """
    jf = JITTER_START
    last_err = None
    while jf <= JITTER_MAX * (1 + 1e-12):
        K_reg, jitter = _regularized_gram(kind, theta, X, jf)
        try:
            L = cholesky(K_reg, lower=True)
        except np.linalg.LinAlgError as err:
            last_err = err
            jf *= 10.0
            continue
        if y is None:
            return L, K_reg, jitter
        w = cho_solve((L, True), y)
        resid = np.linalg.norm(K_reg @ w - y)
        if resid <= WEIGHT_RESIDUAL_TOL * max(np.linalg.norm(y), 1.0):
            return L, K_reg, jitter, w
        jf *= 10.0
    raise FactorizationError(
        f"Gram matrix not positive definite for n={len(X)} points even with "
        f"jitter {JITTER_MAX:g}*sigma^2 (ill-conditioned kernel, e.g. duplicate "
        f"inputs with zero noise); last error: {last_err}"
    )


def fit_posterior(data: Dataset, kind: KernelKind, theta: Hyperparams) -> GpPosterior:
    """Condition the GP on `data`, returning a reusable posterior object.

    Raises
    ------
    FactorizationError
        If the regularized Gram matrix stays indefinite after the full
        jitter escalation ladder.
    """
    if len(data) < 1:
        raise ValueError("fit_posterior requires at least one observation")
    theta.lengthscales_for(data.dim)
    L, _, jitter, w = _chol_with_escalation(kind, theta, data.inputs, data.outputs)
    return GpPosterior(kind, theta, data, L, w, jitter)


def predict(posterior: GpPosterior, x):
    return posterior.predict(x)


def _gram_gradients(
    kind: KernelKind, theta: Hyperparams, X: np.ndarray, K_reg: np.ndarray
) -> list[np.ndarray]:
    """dK_reg/dp for p in [sigma, l_1..l_d, noise].

    The jitter term scales with sigma^2, so dK/dsigma picks it up through
    (2/sigma)(K_reg - noise I) exactly; this keeps the analytic gradient
    consistent with finite differences of the implemented likelihood.
    """
    n, d = X.shape
    ls = theta.lengthscales_for(d)
    eye = np.eye(n)
    grads = [(2.0 / theta.sigma) * (K_reg - theta.noise_variance * eye)]
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    if kind is KernelKind.SQUARED_EXPONENTIAL:
        K = theta.sigma**2 * _kernel_profile(kind, _scaled_sqdist(X, X, ls))
        for j in range(d):
            grads.append(K * diff2[:, :, j] / ls[j] ** 3)
    elif kind is KernelKind.MATERN52:
        r2 = _scaled_sqdist(X, X, ls)
        r = np.sqrt(np.maximum(r2, 0.0))
        common = (5.0 / 3.0) * theta.sigma**2 * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
        for j in range(d):
            grads.append(common * diff2[:, :, j] / ls[j] ** 3)
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    grads.append(eye.copy())
    return grads


def log_marginal_likelihood(
    data: Dataset, kind: KernelKind, theta: Hyperparams
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood of the data and its gradient.

    Returns
    -------
    value : float
        -0.5 y^T K^-1 y - 0.5 log|K| - (n/2) log(2 pi) with K the
        jitter-regularized Gram matrix.
    gradient : ndarray
        d(value)/dp for p = [sigma, l_1, ..., l_d, noise_variance],
        via the trace identity 0.5 tr((a a^T - K^-1) dK/dp).
    """
    if len(data) < 1:
        raise ValueError("log_marginal_likelihood requires n >= 1")
    X, y = data.inputs, data.outputs
    theta = replace(theta, lengthscales=theta.lengthscales_for(data.dim))
    L, K_reg, _ = _chol_with_escalation(kind, theta, X)
    alpha = cho_solve((L, True), y)
    n = len(y)
    value = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    K_inv = cho_solve((L, True), np.eye(n))
    grads = _gram_gradients(kind, theta, X, K_reg)
    gradient = np.array(
        [0.5 * (alpha @ dK @ alpha - np.sum(K_inv * dK)) for dK in grads]
    )
    return value, gradient
