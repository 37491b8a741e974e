import numpy as np
import pytest

from emtstudio.exceedance import (
    ExceedanceStudy,
    estimate_exceedance_probability,
    monte_carlo_oracle,
    run_classification,
)
from emtstudio.gp import KernelKind
from emtstudio.loop import BoxDomain
from emtstudio.objectives import ScaledObjective

UNIT = BoxDomain(np.array([0.0]), np.array([1.0]))


def ramp_objective():
    # f(x) = 1000 x kV on [0,1]: P(f > 500) = 0.5 exactly
    return ScaledObjective(lambda x: 1000.0 * float(x[0]), UNIT, divisor=800.0)


class TestRunClassification:
    def test_no_acquisition_rounds(self):
        study = ExceedanceStudy(threshold_kv=500.0, n_init=6, n_acquire=0)
        obj = ramp_objective()
        res = run_classification(study, obj, seed=0)
        assert len(res.data) == 6
        assert res.acquired_unit.shape == (0, 1)
        assert obj.evaluation_count == 6

    def test_total_evaluations(self):
        study = ExceedanceStudy(threshold_kv=500.0, n_init=5, n_acquire=4)
        obj = ramp_objective()
        res = run_classification(study, obj, seed=1)
        assert len(res.data) == 9
        assert obj.evaluation_count == 9

    def test_deterministic_under_seed(self):
        study = ExceedanceStudy(threshold_kv=500.0, n_init=4, n_acquire=3)
        a = run_classification(study, ramp_objective(), seed=5)
        b = run_classification(study, ramp_objective(), seed=5)
        assert np.array_equal(a.data.inputs, b.data.inputs)
        assert np.array_equal(a.data.outputs, b.data.outputs)

    def test_acquisitions_near_ramp_crossing(self):
        # the only threshold crossing of the ramp is x = 0.5
        study = ExceedanceStudy(threshold_kv=500.0, n_init=5, n_acquire=6)
        res = run_classification(study, ramp_objective(), seed=2)
        nearest = np.min(np.abs(res.acquired_unit.ravel() - 0.5))
        assert nearest < 0.05

    def test_posterior_consistent_at_acquired_points(self):
        study = ExceedanceStudy(threshold_kv=500.0, n_init=5, n_acquire=5)
        obj = ramp_objective()
        res = run_classification(study, obj, seed=3)
        mean, var = res.posterior.predict(res.data.inputs)
        std = np.sqrt(var)
        assert np.all(np.abs(mean - res.data.outputs) <= 2 * std + 1e-6)

    def test_validation(self):
        with pytest.raises(ValueError):
            ExceedanceStudy(threshold_kv=500.0, n_init=1)
        with pytest.raises(ValueError):
            ExceedanceStudy(threshold_kv=0.0)
        with pytest.raises(ValueError):
            ExceedanceStudy(threshold_kv=2500.0)

    def test_maximize_sense_rejected(self):
        study = ExceedanceStudy(threshold_kv=500.0)
        obj = ScaledObjective(lambda x: 1000.0 * float(x[0]), UNIT,
                              divisor=800.0, sense="maximize")
        with pytest.raises(ValueError):
            run_classification(study, obj, seed=0)


class TestEstimate:
    def test_ramp_midpoint_probability(self):
        # dense training on f(x)=x scaled: P(above midpoint) = 0.5 +- 0.01
        X = np.linspace(0, 1, 60)[:, None]
        obj = ramp_objective()
        from emtstudio.gp import Dataset, Hyperparams, fit_posterior

        y = np.array([obj.evaluate(u) for u in X])
        post = fit_posterior(
            Dataset(X, y), KernelKind.MATERN52, Hyperparams(1.0, np.array([0.3]), 1e-6)
        )
        study = ExceedanceStudy(threshold_kv=500.0, estimator_samples=40_000)
        p = estimate_exceedance_probability(post, study, obj, seed=4)
        assert abs(p - 0.5) < 0.01

    def test_far_below_threshold_probability_zero(self):
        X = np.linspace(0, 1, 20)[:, None]
        obj = ScaledObjective(lambda x: 10.0, UNIT, divisor=800.0)
        from emtstudio.gp import Dataset, Hyperparams, fit_posterior

        y = np.array([obj.evaluate(u) for u in X])
        post = fit_posterior(
            Dataset(X, y), KernelKind.MATERN52, Hyperparams(1.0, np.array([0.5]), 1e-6)
        )
        study = ExceedanceStudy(threshold_kv=750.0, estimator_samples=10_000)
        assert estimate_exceedance_probability(post, study, obj, seed=1) == 0.0

    def test_monotone_in_threshold(self):
        study_lo = ExceedanceStudy(threshold_kv=480.0, estimator_samples=20_000)
        study_mid = ExceedanceStudy(threshold_kv=500.0, estimator_samples=20_000)
        study_hi = ExceedanceStudy(threshold_kv=520.0, estimator_samples=20_000)
        obj = ramp_objective()
        res = run_classification(
            ExceedanceStudy(threshold_kv=500.0, n_init=8, n_acquire=4), obj, seed=6
        )
        ps = [
            estimate_exceedance_probability(res.posterior, s, obj, seed=9)
            for s in (study_lo, study_mid, study_hi)
        ]
        assert ps[0] >= ps[1] >= ps[2]
        assert all(0.0 <= p <= 1.0 for p in ps)

    def test_soft_estimate_in_unit_interval(self):
        obj = ramp_objective()
        res = run_classification(
            ExceedanceStudy(threshold_kv=500.0, n_init=5, n_acquire=3), obj, seed=7
        )
        study = ExceedanceStudy(threshold_kv=500.0, estimator_samples=5_000)
        p = estimate_exceedance_probability(res.posterior, study, obj, seed=8, soft=True)
        assert 0.0 <= p <= 1.0


class TestMonteCarloOracle:
    def test_constant_below_threshold(self):
        obj = ScaledObjective(lambda x: 100.0, UNIT, divisor=800.0)
        study = ExceedanceStudy(threshold_kv=750.0)
        res = monte_carlo_oracle(obj, study, 200, seed=0)
        assert res.probability == 0.0

    def test_ramp_exact_probability(self):
        obj = ramp_objective()
        study = ExceedanceStudy(threshold_kv=500.0)
        res = monte_carlo_oracle(obj, study, 20_000, seed=1)
        assert res.probability == pytest.approx(0.5, abs=0.02)
        # binomial CI arithmetic
        assert res.ci_half_width == pytest.approx(
            1.96 * np.sqrt(res.probability * (1 - res.probability) / 20_000), rel=1e-9
        )

    def test_seed_reproducibility(self):
        obj1, obj2 = ramp_objective(), ramp_objective()
        study = ExceedanceStudy(threshold_kv=500.0)
        a = monte_carlo_oracle(obj1, study, 500, seed=3)
        b = monte_carlo_oracle(obj2, study, 500, seed=3)
        assert a.probability == b.probability
        assert np.array_equal(a.values_kv, b.values_kv)

    def test_counter_tracks_samples(self):
        obj = ramp_objective()
        study = ExceedanceStudy(threshold_kv=500.0)
        monte_carlo_oracle(obj, study, 123, seed=0)
        assert obj.evaluation_count == 123

    def test_histogram_shape(self):
        obj = ramp_objective()
        study = ExceedanceStudy(threshold_kv=500.0)
        res = monte_carlo_oracle(obj, study, 400, seed=5)
        counts, edges = res.histogram(bins=10)
        assert counts.sum() == 400
        assert edges.size == 11
