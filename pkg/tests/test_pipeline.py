import json

import numpy as np
import pytest

from purkinje_ecg import fixtures, pipeline
from purkinje_ecg.errors import ConfigError, SolverError
from purkinje_ecg.inference import PARAM_NAMES


class TestConfig:
    def test_load_valid(self, fixture_dir):
        cfg = pipeline.load_config(str(fixture_dir / "run_config.json"))
        assert cfg["seed"] == 20260823
        assert set(cfg["bounds"]) == set(PARAM_NAMES)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            pipeline.load_config(str(tmp_path / "nope.json"))

    def test_invalid_json_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            pipeline.load_config(str(p))

    def test_missing_mesh_rejected(self, fixture_dir, tmp_path):
        cfg = json.loads((fixture_dir / "run_config.json").read_text())
        cfg["myocardium"] = "does_not_exist.txt"
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError):
            pipeline.load_config(str(p))

    def test_bad_bounds_rejected(self, fixture_dir, tmp_path):
        cfg = json.loads((fixture_dir / "run_config.json").read_text())
        cfg["bounds"]["CV"] = [4.0, 2.0]
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError):
            pipeline.load_config(str(p))

    def test_unknown_mode_rejected(self, fixture_dir, tmp_path):
        cfg = json.loads((fixture_dir / "run_config.json").read_text())
        cfg["mode"] = "telepathy"
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError):
            pipeline.load_config(str(p))


class TestThetaMapping:
    def test_split(self):
        theta = np.arange(12, dtype=float)
        params = pipeline.theta_to_params(theta)
        assert params["left"].initial_length == 0.0
        assert params["right"].initial_length == 1.0
        assert params["left"].fascicle_lengths == (2.0, 3.0)
        assert params["right"].fascicle_lengths == (4.0, 5.0)
        assert params["left"].fascicle_angles == (6.0, 7.0)
        assert params["right"].fascicle_angles == (8.0, 9.0)
        assert params["rt"] == 10.0
        assert params["cv"] == 11.0

    def test_wrong_length_rejected(self):
        with pytest.raises(ConfigError):
            pipeline.theta_to_params(np.zeros(5))


class TestForwardModel:
    def test_simulate_normalizes_trace(self, forward_model, synthetic_theta):
        sim = forward_model.simulate(synthetic_theta)
        assert sim.trace.max_abs() == pytest.approx(1.0)
        assert sim.raw_trace.max_abs() > 0.0

    def test_cache_returns_same_object(self, forward_model, synthetic_theta):
        a = forward_model.simulate(synthetic_theta)
        b = forward_model.simulate(synthetic_theta)
        assert a is b

    def test_rt_override_changes_activation(self, forward_model,
                                            synthetic_theta):
        base = forward_model.simulate(synthetic_theta)
        paced = forward_model.simulate(synthetic_theta, rt_override=0.0)
        assert not np.array_equal(base.activation.tau_myo,
                                  paced.activation.tau_myo)

    def test_loss_zero_at_reference(self, forward_model, synthetic_theta):
        y, shift = forward_model.loss(synthetic_theta)
        assert y == pytest.approx(0.0, abs=1e-15)
        assert shift == 0.0

    def test_loss_positive_away_from_reference(self, forward_model,
                                               synthetic_theta):
        theta = synthetic_theta.copy()
        theta[-1] = 3.5   # conduction velocity far off
        y, _ = forward_model.loss(theta)
        assert y > 1e-4

    def test_error_samples_shape(self, forward_model, synthetic_theta):
        q = forward_model.error_samples(synthetic_theta)
        assert q.shape == (20,)
        assert np.all(q >= 0.0)

    def test_reference_unset_raises(self, run_config, fixture_dir):
        fm = pipeline.ForwardModel(run_config, base_dir=str(fixture_dir))
        with pytest.raises(SolverError):
            _ = fm.reference

    def test_synthetic_reference_statistics(self, forward_model):
        ref = forward_model.reference
        beats = forward_model.beats
        assert len(beats) == 20
        resid = np.stack([b.as_matrix() - ref.as_matrix() for b in beats])
        # per-lead noise scale is 2% of that lead's peak amplitude
        peak = np.abs(ref.as_matrix()).max(axis=1)
        sd = resid.std(axis=(0, 2))
        assert np.all(sd < 0.05 * np.maximum(peak, 1e-12))
        assert forward_model.reference_qrs_mean_power() > 0.0
