"""Reference optimizers for budget-matched comparisons: random search, the
Nelder-Mead simplex, and a generalized-simulated-annealing global optimizer
with terminal local refinement.  All methods minimize the scaled objective,
respect the evaluation budget exactly, and record the same per-evaluation
trace as the BO loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .loop import BoxDomain, IterationRecord

__all__ = [
    "BaselineResult",
    "random_search",
    "nelder_mead",
    "dual_annealing",
]

NM_DIAMETER_TOL = 1e-6  # of box width, in unit coordinates

# Generalized-simulated-annealing defaults (common published values)
DA_INITIAL_TEMPERATURE = 5230.0
DA_VISITING_SHAPE = 2.62
DA_ACCEPTANCE_SHAPE = -5.0
DA_TEMPERATURE_DECAY = 0.90
DA_RESTART_TEMPERATURE_RATIO = 1e-4


@dataclass
class BaselineResult:
    method: str
    best_x: np.ndarray
    best_y: float
    evaluations: int
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False

    def incumbents(self) -> np.ndarray:
        return np.array([r.incumbent for r in self.records])


class _Tracker:
    """Budget-capped evaluation recorder shared by all baselines."""

    def __init__(self, objective, domain: BoxDomain, budget: int):
        if budget < 1:
            raise ValueError(f"budget must be >= 1, got {budget}")
        self.objective = objective
        self.domain = domain
        self.budget = budget
        self.records: list[IterationRecord] = []

    @property
    def remaining(self) -> int:
        return self.budget - len(self.records)

    def __call__(self, u: np.ndarray) -> float:
        if self.remaining <= 0:
            raise RuntimeError("evaluation budget exhausted")
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        y = self.objective.evaluate(u)
        inc = min(y, self.records[-1].incumbent) if self.records else y
        self.records.append(
            IterationRecord(
                index=len(self.records),
                x=self.domain.from_unit(u),
                y=y,
                incumbent=inc,
                acquisition=math.nan,
                theta_summary={},
            )
        )
        return y

    def result(self, method: str, converged: bool) -> BaselineResult:
        best = min(self.records, key=lambda r: r.y)
        return BaselineResult(
            method=method,
            best_x=best.x,
            best_y=best.y,
            evaluations=len(self.records),
            records=self.records,
            converged=converged,
        )


def random_search(objective, domain: BoxDomain, budget: int, seed) -> BaselineResult:
    """Budget i.i.d. uniform evaluations over the box."""
    rng = np.random.default_rng(seed)
    track = _Tracker(objective, domain, budget)
    for _ in range(budget):
        track(rng.uniform(size=domain.dim))
    return track.result("random", converged=False)


def _simplex_search(f, u0: np.ndarray, offset: float, max_evals: int) -> bool:
    """Nelder-Mead in the unit box (reflection 1, expansion 2, contraction
    0.5, shrink 0.5); `f` counts its own calls, this loop never exceeds
    `max_evals` of them.  Returns whether the simplex diameter criterion
    (NM_DIAMETER_TOL) was met."""
    d = u0.size
    if max_evals < d + 1:
        return False
    used = 0

    def call(u):
        nonlocal used
        used += 1
        return f(u)

    simplex = [np.clip(u0, 0.0, 1.0)]
    for j in range(d):
        v = simplex[0].copy()
        v[j] = v[j] - offset if v[j] + offset > 1.0 else v[j] + offset
        simplex.append(v)
    simplex = np.array(simplex)
    values = np.array([call(v) for v in simplex])
    while used < max_evals:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if np.max(np.abs(simplex - simplex[0])) < NM_DIAMETER_TOL:
            return True
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = np.clip(centroid + (centroid - worst), 0.0, 1.0)
        fr = call(reflected)
        if fr < values[0] and used < max_evals:
            expanded = np.clip(centroid + 2.0 * (centroid - worst), 0.0, 1.0)
            fe = call(expanded)
            if fe < fr:
                simplex[-1], values[-1] = expanded, fe
            else:
                simplex[-1], values[-1] = reflected, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = reflected, fr
        elif used < max_evals:
            contracted = centroid + 0.5 * (worst - centroid)
            fc = call(contracted)
            if fc < min(fr, values[-1]):
                simplex[-1], values[-1] = contracted, fc
            else:
                # shrink toward the best vertex
                for i in range(1, d + 1):
                    if used >= max_evals:
                        break
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = call(simplex[i])
        else:
            break
    return bool(np.max(np.abs(simplex - simplex[0])) < NM_DIAMETER_TOL)


def nelder_mead(objective, domain: BoxDomain, x0, budget: int) -> BaselineResult:
    """Simplex search from a native-coordinate start.

    The initial simplex is x0 plus x0 offset by 5% of the box width per
    coordinate.  Terminates on the diameter criterion (converged) or when
    the budget runs out (not converged)."""
    if budget < domain.dim + 1:
        raise ValueError(f"budget {budget} below simplex size {domain.dim + 1}")
    track = _Tracker(objective, domain, budget)
    u0 = np.clip(domain.to_unit(np.asarray(x0, dtype=float)), 0.0, 1.0)
    converged = _simplex_search(track, u0, 0.05, budget)
    return track.result("nelder-mead", converged)


DA_TAIL_LIMIT = 1e8


def _tsallis_steps(rng, temperature: float, dim: int) -> np.ndarray:
    """Heavy-tailed visiting steps (distorted Cauchy) of the generalized
    annealer, in unit-box units."""
    qv = DA_VISITING_SHAPE
    factor1 = math.exp(math.log(temperature) / (qv - 1.0))
    factor2 = math.exp((4.0 - qv) * math.log(qv - 1.0))
    factor3 = math.exp((2.0 - qv) * math.log(2.0) / (qv - 1.0))
    factor4 = math.sqrt(math.pi) * factor1 * factor2 / (factor3 * (3.0 - qv))
    factor5 = 1.0 / (qv - 1.0) - 0.5
    d1 = 2.0 - factor5
    factor6 = math.pi * (1.0 - factor5) / math.sin(math.pi * (1.0 - factor5))
    factor6 /= math.exp(gammaln(d1))
    sigmax = math.exp(-(qv - 1.0) * math.log(factor6 / factor4) / (3.0 - qv))
    x = sigmax * rng.normal(size=dim)
    y = rng.normal(size=dim)
    den = np.exp((qv - 1.0) * np.log(np.abs(y) + 1e-300) / (3.0 - qv))
    step = x / den
    # resample tail draws uniformly below the limit (a hard clip would
    # collapse the hot phase onto two constant steps)
    big = np.abs(step) > DA_TAIL_LIMIT
    if np.any(big):
        step[big] = np.sign(step[big]) * DA_TAIL_LIMIT * rng.uniform(size=int(big.sum()))
    return step


def _reflect_into_box(u: np.ndarray) -> np.ndarray:
    # fold coordinates back into [0,1] by reflection at the walls
    u = np.mod(u, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


def dual_annealing(objective, domain: BoxDomain, budget: int, seed) -> BaselineResult:
    """Generalized simulated annealing with terminal local refinement.

    Heavy-tailed visiting moves under a geometric temperature decay and the
    generalized Metropolis acceptance rule explore globally; the tail of
    the budget refines the best point with a small simplex run.  The
    converged flag mirrors the refinement's diameter criterion, so a run
    that exhausts its budget mid-schedule reports not-converged.
    """
    rng = np.random.default_rng(seed)
    track = _Tracker(objective, domain, budget)
    d = domain.dim
    refine_budget = min(3 * (d + 1), (2 * budget) // 5) if budget > 2 * (d + 1) else 0
    anneal_budget = budget - refine_budget

    u_cur = rng.uniform(size=d)
    e_cur = track(u_cur)
    qa = DA_ACCEPTANCE_SHAPE
    t_visit = DA_INITIAL_TEMPERATURE
    step_index = 0
    while len(track.records) < anneal_budget:
        step_index += 1
        t_visit *= DA_TEMPERATURE_DECAY
        if t_visit < DA_RESTART_TEMPERATURE_RATIO * DA_INITIAL_TEMPERATURE:
            # re-anneal: reset the schedule from a fresh random state
            t_visit = DA_INITIAL_TEMPERATURE
            step_index = 1
            u_cur = rng.uniform(size=d)
            e_cur = track(u_cur)
            if len(track.records) >= anneal_budget:
                break
        t_accept = t_visit / step_index
        u_new = _reflect_into_box(u_cur + _tsallis_steps(rng, t_visit, d))
        e_new = track(u_new)
        delta = e_new - e_cur
        if delta <= 0:
            u_cur, e_cur = u_new, e_new
        else:
            bracket = 1.0 - (1.0 - qa) * delta / max(t_accept, 1e-300)
            accept_p = 0.0 if bracket <= 0 else bracket ** (1.0 / (1.0 - qa))
            if rng.uniform() < accept_p:
                u_cur, e_cur = u_new, e_new

    converged = False
    if refine_budget > 0:
        best = min(track.records, key=lambda r: r.y)
        u_best = np.clip(domain.to_unit(best.x), 0.0, 1.0)
        converged = _simplex_search(track, u_best, 0.02, track.remaining)
    return track.result("dual-annealing", converged)
