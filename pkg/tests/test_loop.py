import math

import numpy as np
import pytest

from emtstudio.errors import GridExhausted
from emtstudio.gp import KernelKind
from emtstudio.inference import GradAscentConfig, McmcConfig, PriorSpec
from emtstudio.loop import (
    BoxDomain,
    GridDomain,
    MapBackend,
    McmcBackend,
    MlBackend,
    StudyConfig,
    initial_design,
    maximize_acquisition,
    run_bo,
)
from emtstudio.objectives import ScaledObjective, synthetic_risk_surface

SE = KernelKind.SQUARED_EXPONENTIAL


class TestDomains:
    def test_grid_linear_index_order(self):
        dom = GridDomain([np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])])
        pts = dom.all_points()
        # row-major: the second axis varies fastest
        assert np.array_equal(pts[0], [0.0, 0.0])
        assert np.array_equal(pts[1], [0.0, 0.5])
        assert np.array_equal(pts[3], [1.0, 0.0])

    def test_unit_mapping(self):
        dom = BoxDomain(np.array([0.0, -2.0]), np.array([0.01, 2.0]))
        x = np.array([0.005, 0.0])
        assert np.allclose(dom.to_unit(x), [0.5, 0.5])
        assert np.allclose(dom.from_unit([0.5, 0.5]), x)

    def test_validation(self):
        with pytest.raises(ValueError):
            BoxDomain(np.array([1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            GridDomain([np.array([1.0, 0.5])])


class TestInitialDesign:
    def test_exhaustive_grid_draw(self):
        grid = synthetic_risk_surface()
        dom = grid.domain()
        pts = initial_design(dom, 180, seed=4)
        assert pts.shape == (180, 2)
        assert len({tuple(p) for p in pts}) == 180

    def test_grid_oversample_rejected(self):
        dom = GridDomain([np.array([0.0, 1.0])])
        with pytest.raises(ValueError):
            initial_design(dom, 3, seed=0)

    def test_box_determinism(self):
        dom = BoxDomain(np.array([0.0]), np.array([0.010]))
        a = initial_design(dom, 3, seed=42)
        b = initial_design(dom, 3, seed=42)
        assert np.array_equal(a, b)
        assert np.all((a >= 0.0) & (a <= 0.010))

    def test_box_uniformity(self):
        dom = BoxDomain(np.zeros(3), np.ones(3))
        pts = initial_design(dom, 10_000, seed=7)
        means = pts.mean(axis=0)
        assert np.all((0.48 <= means) & (means <= 0.52))


class TestMaximizeAcquisition:
    def test_constant_score_tie_breaks_to_lowest_index(self):
        dom = GridDomain([np.array([0.0, 1.0, 2.0])])
        x = maximize_acquisition(lambda X: np.zeros(len(X)), dom, [], seed=0)
        assert x[0] == 0.0

    def test_visited_points_excluded(self):
        dom = GridDomain([np.array([0.0, 1.0, 2.0])])
        x = maximize_acquisition(
            lambda X: np.zeros(len(X)), dom, [(0.0,), (1.0,)], seed=0
        )
        assert x[0] == 2.0

    def test_single_unvisited_point_forced(self):
        dom = GridDomain([np.array([0.0, 1.0, 2.0])])
        x = maximize_acquisition(
            lambda X: -X.ravel(), dom, [(0.0,), (2.0,)], seed=0
        )
        assert x[0] == 1.0  # lowest score, but the only choice left

    def test_exhausted_grid(self):
        dom = GridDomain([np.array([0.0, 1.0])])
        with pytest.raises(GridExhausted):
            maximize_acquisition(
                lambda X: np.zeros(len(X)), dom, [(0.0,), (1.0,)], seed=0
            )

    def test_box_finds_interior_peak(self):
        dom = BoxDomain(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        c = np.array([0.37, 0.62])

        def score(X):
            return -np.linalg.norm(np.atleast_2d(X) - c, axis=1)

        x = maximize_acquisition(score, dom, [], seed=3)
        assert np.linalg.norm(x - c) < 1e-3

    def test_box_never_returns_visited(self):
        dom = BoxDomain(np.array([0.0]), np.array([1.0]))
        c = np.array([0.5])

        def score(X):
            return -np.abs(np.atleast_2d(X).ravel() - 0.5)

        x1 = maximize_acquisition(score, dom, [], seed=5)
        x2 = maximize_acquisition(score, dom, [tuple(x1)], seed=5)
        assert not np.array_equal(x1, x2)
        assert abs(x2[0] - x1[0]) < 1e-6  # nudged, not teleported


def _grid_objective():
    grid = synthetic_risk_surface()
    dom = grid.domain()
    return grid, dom, ScaledObjective(grid, dom, divisor=1.0, sense="minimize")


class TestRunBo:
    def test_zero_iterations_only_initial_design(self):
        grid, dom, obj = _grid_objective()
        cfg = StudyConfig(domain=dom, backend=MlBackend(), init_count=4,
                          max_iterations=0, seed=1)
        trace = run_bo(cfg, obj)
        assert trace.evaluation_count == 4
        assert trace.best_y == min(r.y for r in trace.records)

    def test_budget_accounting_and_counter(self):
        grid, dom, obj = _grid_objective()
        cfg = StudyConfig(
            domain=dom,
            backend=MlBackend(GradAscentConfig(steps=10, tie_lengthscales=True)),
            init_count=3, max_iterations=5, seed=2,
        )
        trace = run_bo(cfg, obj)
        assert trace.evaluation_count == 8
        assert obj.evaluation_count == 8

    def test_no_grid_point_evaluated_twice(self):
        grid, dom, obj = _grid_objective()
        cfg = StudyConfig(
            domain=dom,
            backend=MapBackend(ascent=GradAscentConfig(steps=10)),
            init_count=3, max_iterations=10, seed=3,
        )
        trace = run_bo(cfg, obj)
        seen = {tuple(r.x) for r in trace.records}
        assert len(seen) == trace.evaluation_count

    def test_incumbent_monotone(self):
        grid, dom, obj = _grid_objective()
        cfg = StudyConfig(
            domain=dom,
            backend=McmcBackend(mcmc=McmcConfig(sample_count=20, burn_in=20)),
            init_count=3, max_iterations=6, seed=4,
        )
        trace = run_bo(cfg, obj)
        inc = trace.incumbents()
        assert np.all(np.diff(inc) <= 0)
        assert inc[-1] == min(r.y for r in trace.records)

    @pytest.mark.parametrize(
        "backend",
        [
            MlBackend(GradAscentConfig(steps=15, tie_lengthscales=True)),
            McmcBackend(mcmc=McmcConfig(sample_count=25, burn_in=25)),
        ],
        ids=["ml", "mcmc"],
    )
    def test_bit_identical_reruns(self, backend):
        grid, dom, _ = _grid_objective()
        cfg = StudyConfig(domain=dom, backend=backend, init_count=3,
                          max_iterations=5, seed=11)
        obj_a = ScaledObjective(grid, dom, divisor=1.0)
        obj_b = ScaledObjective(grid, dom, divisor=1.0)
        ta, tb = run_bo(cfg, obj_a), run_bo(cfg, obj_b)
        for ra, rb in zip(ta.records, tb.records):
            assert np.array_equal(ra.x, rb.x)
            assert ra.y == rb.y
            assert ra.incumbent == rb.incumbent

    def test_continuous_box_mode(self):
        # cheap analytic objective in a box domain
        dom = BoxDomain(np.array([0.0]), np.array([1.0]))
        obj = ScaledObjective(
            lambda x: float(np.sin(8 * x[0]) + 0.5 * x[0]), dom, sense="maximize"
        )
        cfg = StudyConfig(
            domain=dom, backend=MapBackend(ascent=GradAscentConfig(steps=20)),
            kernel=KernelKind.MATERN52, init_count=4, max_iterations=8, seed=5,
        )
        trace = run_bo(cfg, obj)
        assert trace.evaluation_count == 12
        best_native = obj.unscale_output(trace.best_y)
        dense = max(
            float(np.sin(8 * u) + 0.5 * u) for u in np.linspace(0, 1, 2001)
        )
        assert best_native >= dense - 0.05

    def test_objective_failure_retries_then_aborts(self):
        dom = BoxDomain(np.array([0.0]), np.array([1.0]))
        calls = {"n": 0}

        def flaky(x):
            calls["n"] += 1
            if calls["n"] > 3:
                raise RuntimeError("simulated failure")
            return float(x[0])

        obj = ScaledObjective(flaky, dom)
        cfg = StudyConfig(domain=dom, backend=MapBackend(ascent=GradAscentConfig(steps=5)),
                          init_count=3, max_iterations=4, seed=6)
        with pytest.warns(RuntimeWarning):
            trace = run_bo(cfg, obj)
        assert trace.aborted
        assert trace.evaluation_count == 3  # the initial design survived

    def test_grid_budget_validation(self):
        grid, dom, obj = _grid_objective()
        with pytest.raises(ValueError):
            StudyConfig(domain=dom, backend=MlBackend(), init_count=100,
                        max_iterations=120, seed=0)

    def test_invalid_counts(self):
        dom = BoxDomain(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            StudyConfig(domain=dom, backend=MlBackend(), init_count=0, seed=0)
        with pytest.raises(ValueError):
            StudyConfig(domain=dom, backend=MlBackend(), init_count=1,
                        max_iterations=-1, seed=0)
