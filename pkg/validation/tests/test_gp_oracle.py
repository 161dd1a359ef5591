import json

import numpy as np
import pytest

from validation_harness.gp_oracle import (JITTER, dense_predict, load_model,
                                          read_matrix_csv)


def make_model(x_norm, y_std, eta=1.0, ls=None, noise_var=1e-4,
               bounds=None, y_mean=0.0, y_scale=1.0):
    d = x_norm.shape[1]
    return {
        "x_norm": np.asarray(x_norm, dtype=np.float64),
        "y_std": np.asarray(y_std, dtype=np.float64),
        "eta": float(eta),
        "ls": np.full(d, 0.5) if ls is None else np.asarray(ls),
        "noise_var": float(noise_var),
        "bounds": np.asarray([[0.0, 1.0]] * d) if bounds is None
        else np.asarray(bounds),
        "y_mean": float(y_mean),
        "y_scale": float(y_scale),
    }


def reference_predict(model, theta):
    """Same posterior through an explicit inverse, for cross-checking."""
    lo, hi = model["bounds"][:, 0], model["bounds"][:, 1]
    xq = (np.atleast_2d(theta) - lo) / (hi - lo)
    xn, ls, eta = model["x_norm"], model["ls"], model["eta"]

    def kern(a, b):
        r = np.sqrt((((a[:, None, :] - b[None, :, :]) / ls) ** 2)
                    .sum(axis=2))
        return eta * eta * np.exp(-r)

    k = kern(xn, xn)
    k[np.diag_indices_from(k)] += model["noise_var"] + JITTER
    kinv = np.linalg.inv(k)
    ks = kern(xq, xn)
    mu = ks @ kinv @ model["y_std"]
    var = eta ** 2 - np.einsum("ij,jk,ik->i", ks, kinv, ks)
    return (mu * model["y_scale"] + model["y_mean"],
            np.maximum(var, 0.0) * model["y_scale"] ** 2)


def test_five_point_model_matches_inverse_route():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (5, 3))
    y = rng.standard_normal(5)
    model = make_model(x, y, eta=1.3, noise_var=1e-3, y_mean=0.7,
                       y_scale=2.0)
    q = rng.uniform(0, 1, (20, 3))
    mu, var = dense_predict(model, q)
    mu_ref, var_ref = reference_predict(model, q)
    assert mu == pytest.approx(mu_ref, abs=1e-10)
    assert var == pytest.approx(var_ref, abs=1e-10)


def test_constant_targets_predict_the_constant():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (8, 2))
    # standardized targets all zero <=> raw targets all equal y_mean
    model = make_model(x, np.zeros(8), y_mean=4.2, y_scale=1.0)
    mu, var = dense_predict(model, rng.uniform(0, 1, (6, 2)))
    assert mu == pytest.approx(np.full(6, 4.2), abs=1e-12)
    assert np.all(var >= 0.0)


def test_variance_shrinks_at_training_points():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (6, 2))
    y = rng.standard_normal(6)
    model = make_model(x, y, noise_var=1e-8)
    lo, hi = model["bounds"][:, 0], model["bounds"][:, 1]
    theta_train = lo + x * (hi - lo)
    _, var_at = dense_predict(model, theta_train)
    _, var_away = dense_predict(model, np.full((1, 2), 0.987))
    assert var_at.max() < 1e-5
    assert var_away[0] > 1e-2


def test_empty_batch():
    model = make_model(np.zeros((3, 2)) + 0.5, np.zeros(3))
    mu, var = dense_predict(model, np.empty((0, 2)))
    assert mu.shape == (0,) and var.shape == (0,)


def test_load_model_validates_keys(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"x_norm": [[0.5]], "y_std": [0.0]}))
    with pytest.raises(ValueError):
        load_model(str(p))


def test_load_model_roundtrip(tmp_path):
    data = {"x_norm": [[0.1, 0.2], [0.8, 0.9]], "y_std": [1.0, -1.0],
            "eta": 1.5, "lengthscales": [0.3, 0.4], "noise_var": 1e-4,
            "bounds": [[0.0, 2.0], [1.0, 3.0]], "y_mean": 0.5,
            "y_scale": 2.0}
    p = tmp_path / "m.json"
    p.write_text(json.dumps(data))
    model = load_model(str(p))
    assert model["eta"] == 1.5
    assert model["ls"] == pytest.approx([0.3, 0.4])
    assert model["bounds"].shape == (2, 2)


def test_read_matrix_csv(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("a,b\n1.0,2.0\n3.0,4.0\n")
    m = read_matrix_csv(str(p))
    assert np.allclose(m, [[1.0, 2.0], [3.0, 4.0]])
