"""Dense-solve Gaussian-process prediction oracle.

Reads a serialized GP model (training inputs normalized to the unit box,
standardized targets, ARD exponential kernel hyperparameters) and
recomputes posterior means and variances with one explicit dense solve
per query, avoiding the primary implementation's cached Cholesky path.
"""

from __future__ import annotations

import json

import numpy as np

JITTER = 1e-8       # stabilization added to the kernel diagonal (matches
                    # the serialized-model format specification)


def load_model(path: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    for key in ("x_norm", "y_std", "eta", "lengthscales", "noise_var",
                "bounds", "y_mean", "y_scale"):
        if key not in data:
            raise ValueError(f"GP model {path} is missing {key!r}")
    return {
        "x_norm": np.asarray(data["x_norm"], dtype=np.float64),
        "y_std": np.asarray(data["y_std"], dtype=np.float64),
        "eta": float(data["eta"]),
        "ls": np.asarray(data["lengthscales"], dtype=np.float64),
        "noise_var": float(data["noise_var"]),
        "bounds": np.asarray(data["bounds"], dtype=np.float64),
        "y_mean": float(data["y_mean"]),
        "y_scale": float(data["y_scale"]),
    }


def _kernel(a: np.ndarray, b: np.ndarray, eta: float,
            ls: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    r = np.sqrt(np.sum((d / ls) ** 2, axis=2))
    return eta * eta * np.exp(-r)


def dense_predict(model: dict, theta: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean/variance in original units via np.linalg.solve."""
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if theta.shape[0] == 0:
        return np.empty(0), np.empty(0)
    lo, hi = model["bounds"][:, 0], model["bounds"][:, 1]
    xq = (theta - lo) / (hi - lo)
    xn = model["x_norm"]
    k = _kernel(xn, xn, model["eta"], model["ls"])
    k[np.diag_indices_from(k)] += model["noise_var"] + JITTER
    ks = _kernel(xq, xn, model["eta"], model["ls"])
    mu_std = ks @ np.linalg.solve(k, model["y_std"])
    var_std = model["eta"] ** 2 \
        - np.einsum("ij,ji->i", ks, np.linalg.solve(k, ks.T))
    mu = mu_std * model["y_scale"] + model["y_mean"]
    var = np.maximum(var_std, 0.0) * model["y_scale"] ** 2
    return mu, var


def read_matrix_csv(path: str) -> np.ndarray:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.size == 0:
        return np.empty((0, 0))
    return np.atleast_2d(data)
