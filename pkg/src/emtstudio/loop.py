"""Sequential optimization driver.

Initialize with random draws, then repeat: infer hyperparameters on the
accumulated data (ML, MAP, or MCMC backend), score candidates with the
acquisition, evaluate the selected point, and augment the dataset.
Supports exact argmax over discrete grids and multi-start continuous
maximization over boxes.  Every run is reproducible bit-for-bit from the
study seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .acquisition import Incumbent, MarginalizedAcquisition, ei_closed_form
from .errors import GridExhausted
from .gp import Dataset, Hyperparams, KernelKind, fit_posterior
from .inference import (
    GradAscentConfig,
    McmcConfig,
    PriorSpec,
    map_estimate,
    mcmc_sample,
    ml_estimate,
)

__all__ = [
    "GridDomain",
    "BoxDomain",
    "Domain",
    "MlBackend",
    "MapBackend",
    "McmcBackend",
    "StudyConfig",
    "IterationRecord",
    "BoTrace",
    "initial_design",
    "maximize_acquisition",
    "run_bo",
]

ACQ_RANDOM_PROBES = 1000
ACQ_LOCAL_STARTS = 10
COLLISION_NUDGE = 1e-9


@dataclass(frozen=True)
class GridDomain:
    """Finite Cartesian grid given by strictly increasing per-axis values."""

    axes: list[np.ndarray]

    def __post_init__(self):
        axes = [np.asarray(a, dtype=float) for a in self.axes]
        object.__setattr__(self, "axes", axes)
        for a in axes:
            if a.ndim != 1 or a.size < 1 or np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be strictly increasing 1-D arrays")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    def all_points(self) -> np.ndarray:
        """Every node as an (n_points, dim) array in C (row-major) order, so
        the row number is the linear index used for tie-breaking."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def _bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return lo, hi

    def to_unit(self, x) -> np.ndarray:
        lo, hi = self._bounds()
        span = np.where(hi > lo, hi - lo, 1.0)
        return (np.asarray(x, dtype=float) - lo) / span

    def from_unit(self, u) -> np.ndarray:
        lo, hi = self._bounds()
        span = np.where(hi > lo, hi - lo, 1.0)
        return lo + np.asarray(u, dtype=float) * span


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned continuous box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box requires lower < upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width


Domain = GridDomain | BoxDomain


def initial_design(domain: Domain, n: int, seed) -> np.ndarray:
    """Uniform random initial points in native coordinates: grid nodes are
    drawn without replacement, box points i.i.d. uniform."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if isinstance(domain, GridDomain):
        if n > domain.n_points:
            raise ValueError(f"cannot draw {n} points from a {domain.n_points}-node grid")
        idx = rng.choice(domain.n_points, size=n, replace=False)
        return domain.all_points()[idx]
    u = rng.uniform(size=(n, domain.dim))
    return domain.from_unit(u)


def maximize_acquisition(score_fn, domain: Domain, visited, seed) -> np.ndarray:
    """Select the acquisition argmax in native coordinates.

    Grid domains: exact argmax over unvisited nodes, ties broken by the
    lowest linear (row-major) index.  Box domains: best of 1000 random
    probes plus bounded local ascent from 10 random starts; a result
    colliding with a visited point is nudged by ~1e-9 of the box width.

    `score_fn` must accept an (m, dim) batch of native points and return m
    scores.
    """
    rng = np.random.default_rng(seed)
    vis_list = list(visited)
    visited = (
        np.asarray(vis_list, dtype=float).reshape(-1, domain.dim)
        if vis_list
        else np.empty((0, domain.dim))
    )
    if isinstance(domain, GridDomain):
        points = domain.all_points()
        mask = np.ones(len(points), dtype=bool)
        for v in visited:
            mask &= ~np.all(points == v, axis=1)
        if not mask.any():
            raise GridExhausted("all grid points have been evaluated")
        candidates = points[mask]
        scores = np.asarray(score_fn(candidates))
        return candidates[int(np.argmax(scores))]

    lo, hi, width = domain.lower, domain.upper, domain.width
    probes = domain.from_unit(rng.uniform(size=(ACQ_RANDOM_PROBES, domain.dim)))
    probe_scores = np.asarray(score_fn(probes))
    best_x = probes[int(np.argmax(probe_scores))]
    best_score = float(np.max(probe_scores))

    def neg(x):
        return -float(np.asarray(score_fn(x[None, :]))[0])

    starts = domain.from_unit(rng.uniform(size=(ACQ_LOCAL_STARTS, domain.dim)))
    for x0 in starts:
        res = minimize(neg, x0, method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if -res.fun > best_score:
            best_score = -res.fun
            best_x = np.clip(res.x, lo, hi)

    scale = COLLISION_NUDGE
    while visited.size and np.any(np.all(visited == best_x, axis=1)):
        best_x = np.clip(best_x + rng.uniform(-1, 1, domain.dim) * scale * width, lo, hi)
        scale *= 10.0
    return best_x


@dataclass(frozen=True)
class MlBackend:
    """Maximum-likelihood hyperparameters via fixed-schedule gradient ascent."""

    ascent: GradAscentConfig = GradAscentConfig()
    init: Hyperparams | None = None

    def infer(self, data: Dataset, kind: KernelKind, noise: float, seed) -> list[Hyperparams]:
        init = self.init
        if init is None:
            sigma0 = float(np.clip(np.std(data.outputs), 1e-3, 10.0)) or 1.0
            n_ls = 1 if self.ascent.tie_lengthscales else data.dim
            init = Hyperparams(sigma0, np.full(n_ls, 0.5), noise)
        return [ml_estimate(data, kind, init, self.ascent)]

    def describe(self) -> str:
        return "ml"


@dataclass(frozen=True)
class MapBackend:
    """Maximum a posteriori hyperparameters under uniform priors."""

    priors: PriorSpec = PriorSpec((0.1, 6.0), (0.1, 1.0))
    ascent: GradAscentConfig = GradAscentConfig()

    def infer(self, data: Dataset, kind: KernelKind, noise: float, seed) -> list[Hyperparams]:
        return [map_estimate(data, kind, self.priors, None, self.ascent, noise)]

    def describe(self) -> str:
        return "map"


@dataclass(frozen=True)
class McmcBackend:
    """Posterior hyperparameter samples for the marginalized acquisition;
    the chain is re-run on the current dataset every iteration."""

    priors: PriorSpec = PriorSpec((0.1, 6.0), (0.1, 1.0))
    mcmc: McmcConfig = McmcConfig()

    def infer(self, data: Dataset, kind: KernelKind, noise: float, seed) -> list[Hyperparams]:
        cfg = replace(self.mcmc, seed=int(seed))
        return mcmc_sample(data, kind, self.priors, cfg, noise)

    def describe(self) -> str:
        return "mcmc"


@dataclass(frozen=True)
class StudyConfig:
    """Declarative description of one BO experiment."""

    domain: Domain
    backend: MlBackend | MapBackend | McmcBackend
    kernel: KernelKind = KernelKind.SQUARED_EXPONENTIAL
    acquisition: str = "ei"
    init_count: int = 3
    max_iterations: int = 20
    seed: int = 0
    noise_variance: float = 1e-6
    objective_id: str = ""

    def __post_init__(self):
        if self.init_count < 1:
            raise ValueError("init_count must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.acquisition != "ei":
            raise ValueError(f"unsupported acquisition {self.acquisition!r}")
        if isinstance(self.domain, GridDomain):
            budget = self.init_count + self.max_iterations
            if budget > self.domain.n_points:
                raise ValueError(
                    f"budget {budget} exceeds the {self.domain.n_points}-node grid"
                )


@dataclass(frozen=True)
class IterationRecord:
    index: int
    x: np.ndarray  # native coordinates
    y: float  # scaled output (internal minimization convention)
    incumbent: float
    acquisition: float  # nan for initial-design rows
    theta_summary: dict


@dataclass
class BoTrace:
    """Per-evaluation history of one BO run."""

    records: list[IterationRecord] = field(default_factory=list)
    aborted: bool = False
    failure: str | None = None

    @property
    def evaluation_count(self) -> int:
        return len(self.records)

    @property
    def best_y(self) -> float:
        return self.records[-1].incumbent

    @property
    def best_x(self) -> np.ndarray:
        best = min(self.records, key=lambda r: r.y)
        return best.x

    def incumbents(self) -> np.ndarray:
        return np.array([r.incumbent for r in self.records])


def _theta_summary(thetas: list[Hyperparams]) -> dict:
    sig = float(np.mean([t.sigma for t in thetas]))
    d = max(t.lengthscales.size for t in thetas)
    ls = np.mean([t.lengthscales_for(d) for t in thetas], axis=0)
    return {"sigma": sig, "lengthscales": [float(v) for v in ls]}


def run_bo(cfg: StudyConfig, objective) -> BoTrace:
    """Run the full sequential loop; total objective evaluations equal
    init_count + max_iterations (fewer only if evaluation fails twice).

    `objective` is a unit-box scaled objective over cfg.domain (its
    `evaluate` takes unit coordinates and returns the scaled output).
    """
    root = np.random.SeedSequence(cfg.seed)
    ss_init, ss_loop = root.spawn(2)
    trace = BoTrace()
    visited: list[tuple] = []

    def evaluate_at(x_native, acquisition, theta_summary):
        u = np.clip(objective.to_unit_input(x_native), 0.0, 1.0)
        y = objective.evaluate(u)
        incumbent = min(y, trace.records[-1].incumbent) if trace.records else y
        trace.records.append(
            IterationRecord(
                index=len(trace.records),
                x=np.asarray(x_native, dtype=float),
                y=y,
                incumbent=incumbent,
                acquisition=acquisition,
                theta_summary=theta_summary,
            )
        )
        visited.append(tuple(np.asarray(x_native, dtype=float)))

    for x in initial_design(cfg.domain, cfg.init_count, ss_init):
        evaluate_at(x, math.nan, {})

    for _ in range(cfg.max_iterations):
        ss_backend, ss_acq = ss_loop.spawn(2)
        X_unit = np.array([objective.to_unit_input(np.array(v)) for v in visited])
        data = Dataset(X_unit, np.array([r.y for r in trace.records]))
        backend_seed = int(ss_backend.generate_state(1, np.uint64)[0])
        thetas = cfg.backend.infer(data, cfg.kernel, cfg.noise_variance, backend_seed)
        incumbent = Incumbent(trace.records[-1].incumbent, "minimize")
        if len(thetas) == 1:
            posterior = fit_posterior(data, cfg.kernel, thetas[0])

            def unit_scores(U):
                mean, var = posterior.predict(U)
                return ei_closed_form(
                    np.atleast_1d(mean), np.sqrt(np.atleast_1d(var)), incumbent.y_star
                )

        else:
            acq = MarginalizedAcquisition(
                thetas, data, cfg.kernel, inner="ei", incumbent=incumbent
            )

            def unit_scores(U):
                return np.atleast_1d(acq(U))

        def score_fn(X_native):
            U = np.array([objective.to_unit_input(row) for row in np.atleast_2d(X_native)])
            return unit_scores(U)

        summary = _theta_summary(thetas)
        for attempt in range(2):
            x_next = maximize_acquisition(score_fn, cfg.domain, visited, ss_acq)
            acq_value = float(np.asarray(score_fn(x_next[None, :]))[0])
            try:
                evaluate_at(x_next, acq_value, summary)
                break
            except Exception as err:  # noqa: BLE001 - objective failures vary
                warnings.warn(f"objective evaluation failed at {x_next}: {err}",
                              RuntimeWarning)
                visited.append(tuple(x_next))  # exclude and retry once
                if attempt == 1:
                    trace.aborted = True
                    trace.failure = str(err)
                    return trace
    return trace
