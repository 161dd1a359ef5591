import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from purkinje_ecg import gp, inference
from purkinje_ecg.errors import BudgetExhausted, SolverError
from purkinje_ecg.inference import (EvaluationRecord, PARAM_NAMES, RecordLog,
                                    RunBudget, abc_prior_density,
                                    expected_improvement, latin_hypercube,
                                    rejection_sample_prior,
                                    run_identification, tv_distance)

BOUNDS2 = np.asarray([[0.0, 1.0], [-2.0, 2.0]])


class TestLatinHypercube:
    def test_stratification(self):
        n = 16
        x = latin_hypercube(n, BOUNDS2, seed=0)
        for d in range(2):
            unit = (x[:, d] - BOUNDS2[d, 0]) / (BOUNDS2[d, 1] - BOUNDS2[d, 0])
            strata = np.floor(unit * n).astype(int)
            assert sorted(strata) == list(range(n))

    def test_deterministic(self):
        a = latin_hypercube(10, BOUNDS2, seed=42)
        b = latin_hypercube(10, BOUNDS2, seed=42)
        assert np.array_equal(a, b)

    def test_within_bounds(self):
        x = latin_hypercube(50, BOUNDS2, seed=1)
        assert np.all(x >= BOUNDS2[:, 0])
        assert np.all(x <= BOUNDS2[:, 1])


class TestExpectedImprovement:
    def test_closed_form_against_quadrature(self):
        mu, var, y_best = 1.0, 0.25, 0.8
        z = np.linspace(-8, 8, 200001)
        sigma = np.sqrt(var)
        pdf = norm.pdf(z)
        improve = np.maximum(y_best - (mu + sigma * z), 0.0)
        ref = np.trapezoid(improve * pdf, z)
        ei = expected_improvement(np.asarray([mu]), np.asarray([var]), y_best)
        assert ei[0] == pytest.approx(ref, rel=1e-6)

    def test_zero_variance_is_max_improvement(self):
        ei = expected_improvement(np.asarray([0.5, 2.0]),
                                  np.asarray([0.0, 0.0]), 1.0)
        assert np.allclose(ei, [0.5, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(1e-6, 4.0), st.floats(-5, 5))
    def test_nonnegative_and_bounded(self, mu, var, y_best):
        ei = float(expected_improvement(np.asarray([mu]),
                                        np.asarray([var]), y_best)[0])
        assert ei >= 0.0
        # EI <= E|y_best - X| <= |y_best - mu| + sigma
        assert ei <= abs(y_best - mu) + np.sqrt(var) + 1e-9

    def test_negative_variance_rejected(self):
        with pytest.raises(SolverError):
            expected_improvement(np.asarray([0.0]), np.asarray([-1.0]), 0.0)


class TestAbcPrior:
    def test_peak_at_incumbent(self):
        p = abc_prior_density(np.asarray([1.0, 1.5, 0.5]),
                              np.asarray([0.01, 0.01, 0.01]),
                              y_min=1.0, var_min=0.01)
        assert p[0] == max(p)

    def test_matches_gaussian_formula(self):
        mu, var, y_min, var_min = 2.0, 0.3, 1.0, 0.1
        expected = norm.pdf(mu, loc=y_min, scale=np.sqrt(var + var_min))
        p = abc_prior_density(np.asarray([mu]), np.asarray([var]),
                              y_min, var_min)
        assert p[0] == pytest.approx(expected, rel=1e-12)

    def test_rejection_sampler_output_sorted(self):
        x = np.random.default_rng(0).uniform(0, 1, (30, 2))
        x = x * (BOUNDS2[:, 1] - BOUNDS2[:, 0]) + BOUNDS2[:, 0]
        y = (x ** 2).sum(axis=1)
        model = gp.fit(x, y, BOUNDS2, restarts=2, seed=1)
        rng = np.random.default_rng(2)
        thetas, p, p_max, var_min = rejection_sample_prior(
            model, float(y.min()), BOUNDS2, 2000, rng)
        assert np.all(np.diff(p) <= 0)
        assert p.max() <= p_max + 1e-12
        assert var_min >= 0.0
        assert np.all(thetas >= BOUNDS2[:, 0])
        assert np.all(thetas <= BOUNDS2[:, 1])


class TestTvDistance:
    def test_identical_sets_near_zero(self):
        q = np.random.default_rng(0).gamma(2.0, 1.0, 500)
        assert tv_distance(q, q.copy()) < 0.05

    def test_disjoint_sets_near_one(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 0.1, 500)
        b = rng.normal(100.0, 0.1, 500)
        assert tv_distance(a, b) > 0.95

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = rng.normal(0, 1, 300)
        b = rng.normal(0.7, 1.3, 300)
        assert tv_distance(a, b) == pytest.approx(tv_distance(b, a),
                                                  abs=1e-12)

    def test_bounded_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 2), 100)
            b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 2), 100)
            d = tv_distance(a, b)
            assert 0.0 <= d <= 1.0


class TestRecordLog:
    def _rec(self, k):
        return EvaluationRecord(theta=np.full(len(PARAM_NAMES), float(k)),
                                y=float(k), shift=0.5 * k, provenance="LHS")

    def test_append_and_reload(self, tmp_path):
        p = tmp_path / "records.csv"
        log = RecordLog(str(p))
        for k in range(3):
            log.append(self._rec(k))
        again = RecordLog(str(p))
        assert len(again.records) == 3
        for a, b in zip(log.records, again.records):
            assert np.array_equal(a.theta, b.theta)
            assert a.y == b.y and a.shift == b.shift

    def test_replay_skips_forward_eval(self, tmp_path):
        p = tmp_path / "records.csv"
        log = RecordLog(str(p))
        log.append(self._rec(1))
        calls = []

        def forward(theta):
            calls.append(theta)
            return 9.0, 0.0

        rec = log.replay_or_eval(0, np.full(len(PARAM_NAMES), 1.0),
                                 forward, "LHS")
        assert not calls
        assert rec.y == 1.0

    def test_divergent_tail_dropped(self, tmp_path):
        p = tmp_path / "records.csv"
        log = RecordLog(str(p))
        for k in range(3):
            log.append(self._rec(k))
        rec = log.replay_or_eval(1, np.full(len(PARAM_NAMES), 7.0),
                                 lambda t: (7.0, 0.0), "LHS")
        assert rec.y == 7.0
        assert len(log.records) == 2
        again = RecordLog(str(p))
        assert len(again.records) == 2
        assert again.records[1].y == 7.0


class TestRunBudget:
    def test_rejects_nonpositive_counts(self):
        with pytest.raises(SolverError):
            RunBudget(n_init=0)

    def test_rejects_bad_threshold(self):
        with pytest.raises(SolverError):
            RunBudget(accept_threshold=1.5)


class TestRunIdentification:
    """Cheap analytic forward model: quadratic loss with noisy error sets."""

    @staticmethod
    def _forward(theta):
        y = float(((theta - 0.3) ** 2).sum())
        return y, 0.0

    @staticmethod
    def _errors(theta):
        y = float(((theta - 0.3) ** 2).sum())
        rng = np.random.default_rng(
            abs(hash(np.round(theta, 12).tobytes())) % (2 ** 31))
        return np.abs(y + rng.normal(0.0, 0.05, 20))

    def test_full_run_and_determinism(self, tmp_path):
        bounds = np.asarray([[0.0, 1.0]] * 3)
        budget = RunBudget(n_init=8, n_bo=4, n_prior_samples=2000,
                           n_posterior=4, retrain_after=20,
                           max_forward_evals=200)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        ens_a, _ = run_identification(self._forward, self._errors, bounds,
                                      budget, seed=5, out_dir=str(out_a))
        ens_b, _ = run_identification(self._forward, self._errors, bounds,
                                      budget, seed=5, out_dir=str(out_b))
        assert ens_a.complete and ens_b.complete
        assert len(ens_a.accepted) == 4
        assert (out_a / "records.csv").read_text() \
            == (out_b / "records.csv").read_text()
        for ma, mb in zip(ens_a.accepted, ens_b.accepted):
            assert np.array_equal(ma.theta, mb.theta)
            assert ma.tv == mb.tv

    def test_resume_replays_records(self, tmp_path):
        bounds = np.asarray([[0.0, 1.0]] * 3)
        budget = RunBudget(n_init=6, n_bo=3, n_prior_samples=2000,
                           n_posterior=3, retrain_after=20,
                           max_forward_evals=100)
        out = tmp_path / "run"
        run_identification(self._forward, self._errors, bounds, budget,
                           seed=2, out_dir=str(out))
        first = (out / "records.csv").read_text()
        calls = []

        def counting_forward(theta):
            calls.append(1)
            return self._forward(theta)

        run_identification(counting_forward, self._errors, bounds, budget,
                           seed=2, out_dir=str(out))
        assert not calls            # everything replayed from the log
        assert (out / "records.csv").read_text() == first

    def test_budget_exhaustion_raises(self, tmp_path):
        bounds = np.asarray([[0.0, 1.0]] * 2)

        def errors_far(theta):
            # error sets so far apart that nothing is ever accepted
            rng = np.random.default_rng(
                abs(hash(np.round(theta, 12).tobytes())) % (2 ** 31))
            return rng.normal(1e6 * float(theta[0] + 0.1), 1e-3, 20)

        budget = RunBudget(n_init=4, n_bo=2, n_prior_samples=500,
                           n_posterior=5, retrain_after=50,
                           accept_threshold=0.01, max_forward_evals=10)
        with pytest.raises(BudgetExhausted):
            run_identification(self._forward, errors_far, bounds, budget,
                               seed=3, out_dir=str(tmp_path / "x"))
