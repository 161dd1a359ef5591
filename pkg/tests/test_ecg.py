import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from purkinje_ecg import fixtures
from purkinje_ecg.conduction import ConductivityModel
from purkinje_ecg.ecg import (ActionPotentialTemplate, EcgTrace, LEAD_NAMES,
                              align_and_loss, beat_errors, build_lead_fields,
                              compute_ecg, default_electrodes)
from purkinje_ecg.errors import SolverError


@pytest.fixture(scope="module")
def small_setup():
    vm = fixtures.cube_mesh(4, size=16.0)
    cm = ConductivityModel()
    lf = build_lead_fields(vm, default_electrodes(vm))
    ap = ActionPotentialTemplate()
    return vm, cm, lf, ap


class TestActionPotential:
    def test_limits(self):
        ap = ActionPotentialTemplate()
        assert ap.value(np.asarray([-50.0]))[0] == pytest.approx(-85.0,
                                                                 abs=1e-6)
        assert ap.value(np.asarray([10.0]))[0] == pytest.approx(15.0, abs=0.5)
        assert ap.value(np.asarray([1e4]))[0] == pytest.approx(-85.0,
                                                               abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-20.0, 320.0))
    def test_slope_matches_finite_difference(self, xi):
        ap = ActionPotentialTemplate()
        h = 1e-6
        fd = (ap.value(np.asarray([xi + h]))[0]
              - ap.value(np.asarray([xi - h]))[0]) / (2 * h)
        assert ap.slope(np.asarray([xi]))[0] == pytest.approx(fd, abs=1e-4)

    def test_invalid_template_rejected(self):
        with pytest.raises(SolverError):
            ActionPotentialTemplate(plateau=-90.0)


class TestComputeEcg:
    def test_uniform_activation_gives_zero_ecg(self, small_setup):
        vm, cm, lf, ap = small_setup
        tau = np.full(vm.n_vertices, 12.5)
        trace = compute_ecg(tau, vm, cm, lf, ap)
        assert trace.max_abs() < 1e-12

    def test_lead_identities(self, small_setup):
        vm, cm, lf, ap = small_setup
        rng = np.random.default_rng(0)
        tau = rng.uniform(0.0, 30.0, vm.n_vertices)
        tr = compute_ecg(tau, vm, cm, lf, ap)
        one, two, three = tr.leads["I"], tr.leads["II"], tr.leads["III"]
        assert np.allclose(three, two - one, atol=1e-9)
        assert np.allclose(tr.leads["aVR"], -(one + two) / 2, atol=1e-9)
        assert np.allclose(tr.leads["aVL"], one - two / 2, atol=1e-9)
        assert np.allclose(tr.leads["aVF"], two - one / 2, atol=1e-9)

    def test_nonfinite_activation_rejected(self, small_setup):
        vm, cm, lf, ap = small_setup
        tau = np.full(vm.n_vertices, np.inf)
        with pytest.raises(SolverError):
            compute_ecg(tau, vm, cm, lf, ap)

    def test_qrs_window_covers_activation(self, small_setup):
        vm, cm, lf, ap = small_setup
        rng = np.random.default_rng(1)
        tau = rng.uniform(5.0, 40.0, vm.n_vertices)
        tr = compute_ecg(tau, vm, cm, lf, ap)
        assert tr.qrs_onset <= tau.min()
        assert tr.qrs_onset + tr.qrs_duration >= tau.max()


class TestEcgTrace:
    def _trace(self, n=50, dt=1.0, seed=0):
        rng = np.random.default_rng(seed)
        leads = {name: rng.normal(size=n) for name in LEAD_NAMES}
        return EcgTrace(dt=dt, leads=leads, qrs_onset=0.0,
                        qrs_duration=(n - 1) * dt)

    def test_csv_round_trip(self, tmp_path):
        tr = self._trace()
        p = tmp_path / "ecg.csv"
        tr.to_csv(str(p))
        again = EcgTrace.from_csv(str(p))
        assert again.dt == tr.dt
        assert np.array_equal(tr.as_matrix(), again.as_matrix())

    def test_missing_lead_rejected(self):
        leads = {name: np.zeros(5) for name in LEAD_NAMES[:-1]}
        with pytest.raises(SolverError):
            EcgTrace(dt=1.0, leads=leads)


class TestAlignAndLoss:
    def test_self_loss_zero(self):
        tr = TestEcgTrace()._trace()
        shift, y = align_and_loss(tr, tr)
        assert shift == 0.0
        assert y == pytest.approx(0.0, abs=1e-15)

    def test_recovers_known_shift(self):
        rng = np.random.default_rng(5)
        n = 120
        base = np.zeros(n)
        base[40:60] = np.hanning(20)
        leads = {name: base * (1 + 0.1 * i)
                 for i, name in enumerate(LEAD_NAMES)}
        ref = EcgTrace(dt=1.0, leads=leads, qrs_onset=30.0, qrs_duration=40.0)
        k = 7
        shifted = {name: np.roll(v, k) for name, v in leads.items()}
        sim = EcgTrace(dt=1.0, leads=shifted, qrs_onset=30.0,
                       qrs_duration=40.0)
        shift, y = align_and_loss(ref, sim)
        assert shift == pytest.approx(k)
        assert y == pytest.approx(0.0, abs=1e-12)

    def test_loss_grows_with_mismatch(self):
        tr = TestEcgTrace()._trace(seed=1)
        other = TestEcgTrace()._trace(seed=2)
        _, y_other = align_and_loss(tr, other)
        _, y_self = align_and_loss(tr, tr)
        assert y_other > y_self

    def test_beat_errors_needs_two(self):
        tr = TestEcgTrace()._trace()
        with pytest.raises(SolverError):
            beat_errors([tr], tr)
