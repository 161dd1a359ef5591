"""Gaussian-process regression with the ARD exponential kernel.

Inputs are normalized to the unit box given parameter bounds; targets are
standardized to zero mean and unit variance. Hyperparameters are found by
multi-start maximization of the log marginal likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import SolverError

JITTER = 1e-8
NOISE_FLOOR = 1e-8


def ard_exponential_kernel(a: NDArray[np.float64], b: NDArray[np.float64],
                           eta: float, lengthscales: NDArray[np.float64]
                           ) -> NDArray[np.float64]:
    """eta^2 exp(-r) with r the ARD-scaled Euclidean distance."""
    ls = np.asarray(lengthscales, dtype=np.float64)
    if np.any(ls <= 0):
        raise SolverError("length scales must be > 0")
    a = np.atleast_2d(a) / ls
    b = np.atleast_2d(b) / ls
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] \
        - 2.0 * a @ b.T
    r = np.sqrt(np.maximum(d2, 0.0))
    return eta ** 2 * np.exp(-r)


@dataclass
class GpModel:
    """Trained GP with cached factorization; immutable after fit."""

    x_norm: NDArray[np.float64]     # (n, d) in the unit box
    y_std: NDArray[np.float64]      # standardized targets
    eta: float
    lengthscales: NDArray[np.float64]
    noise_var: float
    bounds: NDArray[np.float64]     # (d, 2) used for normalization
    y_mean: float
    y_scale: float
    _chol: tuple = None             # type: ignore[assignment]
    _alpha: NDArray[np.float64] = None  # type: ignore[assignment]
    _train_index: dict = None       # type: ignore[assignment]

    def __post_init__(self):
        if self._chol is None:
            k = ard_exponential_kernel(self.x_norm, self.x_norm, self.eta,
                                       self.lengthscales)
            k[np.diag_indices_from(k)] += self.noise_var + JITTER
            try:
                self._chol = cho_factor(k, lower=True)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"kernel matrix not SPD: {exc}") from exc
            self._alpha = cho_solve(self._chol, self.y_std)

    # -- coordinate transforms -------------------------------------------- #

    def normalize(self, theta: NDArray[np.float64]) -> NDArray[np.float64]:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (np.atleast_2d(theta) - lo) / (hi - lo)

    # -- prediction --------------------------------------------------------#

    def predict(self, theta: NDArray[np.float64]
                ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Posterior mean and variance in original loss units."""
        xq = self.normalize(theta)
        ks = ard_exponential_kernel(xq, self.x_norm, self.eta,
                                    self.lengthscales)
        mu_std = ks @ self._alpha
        vs = solve_triangular(self._chol[0], ks.T, lower=True)
        var_std = self.eta ** 2 - np.sum(vs * vs, axis=0)
        var_std = np.where((var_std > -1e-10) & (var_std < 0.0), 0.0, var_std)
        mu = mu_std * self.y_scale + self.y_mean
        var = np.maximum(var_std * self.y_scale ** 2, 0.0)
        if self.noise_var <= 1e-6:
            # an effectively noiseless GP interpolates its data: exact
            # re-queries of training inputs return the stored target with
            # zero variance instead of the jitter-limited factorized values
            if self._train_index is None:
                self._train_index = {row.tobytes(): i
                                     for i, row in enumerate(self.x_norm)}
            for i, row in enumerate(xq):
                j = self._train_index.get(row.tobytes())
                if j is not None:
                    mu[i] = self.y_std[j] * self.y_scale + self.y_mean
                    var[i] = 0.0
        return mu, var

    # -- persistence -------------------------------------------------------#

    def to_json(self, path: str) -> None:
        data = {
            "x_norm": self.x_norm.tolist(),
            "y_std": self.y_std.tolist(),
            "eta": self.eta,
            "lengthscales": self.lengthscales.tolist(),
            "noise_var": self.noise_var,
            "bounds": self.bounds.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }
        with open(path, "w") as fh:
            json.dump(data, fh)

    @classmethod
    def from_json(cls, path: str) -> "GpModel":
        with open(path) as fh:
            d = json.load(fh)
        return cls(
            x_norm=np.asarray(d["x_norm"]), y_std=np.asarray(d["y_std"]),
            eta=d["eta"], lengthscales=np.asarray(d["lengthscales"]),
            noise_var=d["noise_var"], bounds=np.asarray(d["bounds"]),
            y_mean=d["y_mean"], y_scale=d["y_scale"])


def _log_marginal_likelihood(x, y, eta, ls, noise_var) -> float:
    n = len(x)
    k = ard_exponential_kernel(x, x, eta, ls)
    k[np.diag_indices_from(k)] += noise_var + JITTER
    try:
        c = cho_factor(k, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve(c, y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(c[0])))
                 - 0.5 * n * np.log(2 * np.pi))


def fit(x: NDArray[np.float64], y: NDArray[np.float64],
        bounds: NDArray[np.float64], restarts: int = 8,
        seed: int = 0, warm_start: GpModel | None = None,
        maxiter: int | None = None) -> GpModel:
    """Fit the GP by multi-start maximization of the marginal likelihood.

    x is in original parameter units; bounds define the normalization box.
    Warm-started refits default to a short optimizer budget: the previous
    hyperparameters are already near a mode and only need a polish.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    bounds = np.asarray(bounds, dtype=np.float64)
    if len(x) < 2:
        raise SolverError("fit needs at least 2 points")
    d = x.shape[1]
    lo, hi = bounds[:, 0], bounds[:, 1]
    xn = (x - lo) / (hi - lo)
    finite = np.isfinite(y)
    y_capped = np.where(finite, y, np.nanmax(np.where(finite, y, np.nan)))
    y_mean = float(y_capped.mean())
    y_scale = float(y_capped.std())
    if y_scale < 1e-12:
        y_scale = 1.0
    ys = (y_capped - y_mean) / y_scale

    rng = np.random.default_rng(seed)

    def objective(logp):
        eta = np.exp(logp[0])
        ls = np.exp(logp[1:1 + d])
        nv = max(np.exp(logp[-1]), NOISE_FLOOR)
        return -_log_marginal_likelihood(xn, ys, eta, ls, nv)

    starts = []
    if warm_start is not None:
        starts.append(np.concatenate([
            [np.log(warm_start.eta)], np.log(warm_start.lengthscales),
            [np.log(max(warm_start.noise_var, NOISE_FLOOR))]]))
    for _ in range(max(restarts - len(starts), 1)):
        logp = np.empty(d + 2)
        logp[0] = rng.uniform(np.log(1e-1), np.log(1e1))
        logp[1:1 + d] = rng.uniform(np.log(1e-2), np.log(1e1), size=d)
        logp[-1] = rng.uniform(np.log(1e-6), np.log(1e-1))
        starts.append(logp)

    opt_bounds = [(np.log(1e-4), np.log(1e3))] * (d + 2)
    if maxiter is None:
        maxiter = 25 if warm_start is not None else 200
    best_val, best_logp = np.inf, None
    for s in starts:
        res = minimize(objective, s, method="L-BFGS-B", bounds=opt_bounds,
                       options={"maxiter": maxiter})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val = res.fun
            best_logp = res.x
    if best_logp is None:
        raise SolverError("all hyperparameter restarts failed (no SPD kernel)")
    eta = float(np.exp(best_logp[0]))
    ls = np.exp(best_logp[1:1 + d])
    nv = float(max(np.exp(best_logp[-1]), NOISE_FLOOR))
    return GpModel(x_norm=xn, y_std=ys, eta=eta, lengthscales=ls,
                   noise_var=nv, bounds=bounds, y_mean=y_mean,
                   y_scale=y_scale)
