"""Inverse engine: LHS seeding, Bayesian optimization with expected
improvement, then ABC posterior sampling with a GP-informed prior, rejection
sampling and a total-variation acceptance rule."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm, qmc
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.neighbors import KernelDensity

from . import gp
from .errors import BudgetExhausted, SolverError

PARAM_NAMES = (
    "l_i_L", "l_i_R", "l_F1_L", "l_F2_L", "l_F1_R", "l_F2_R",
    "a_F1_L", "a_F2_L", "a_F1_R", "a_F2_R", "RT", "CV",
)

DEFAULT_BOUNDS = np.array(
    [[30.0, 100.0]] * 2                               # initial lengths, mm
    + [[2.0, 50.0]] * 4                               # fascicle lengths, mm
    + [[-np.pi / 4, 3 * np.pi / 4]] * 4               # fascicle angles, rad
    + [[-75.0, 50.0],                                 # root time, ms
       [2.0, 4.0]])                                   # conduction velocity, m/s


@dataclass(frozen=True)
class RunBudget:
    """Evaluation counts for the whole identification run.

    Desk-scale defaults; the published protocol (250 LHS, 300 BO steps,
    5,000,000 prior candidates) is reachable through configuration.
    """

    n_init: int = 60
    n_bo: int = 60
    n_prior_samples: int = 200_000
    n_posterior: int = 30
    retrain_after: int = 50
    accept_threshold: float = 0.9
    max_forward_evals: int = 2000     # hard stop for the ABC walk

    def __post_init__(self):
        if min(self.n_init, self.n_bo, self.n_prior_samples,
               self.n_posterior, self.retrain_after) <= 0:
            raise SolverError("all budget counts must be positive")
        if not 0 < self.accept_threshold <= 1:
            raise SolverError("accept_threshold must be in (0, 1]")


@dataclass
class EvaluationRecord:
    theta: NDArray[np.float64]
    y: float
    shift: float
    provenance: str   # LHS | BO | ABC

    def __post_init__(self):
        if np.isfinite(self.y) and self.y < 0:
            raise SolverError("loss must be nonnegative")


@dataclass
class PosteriorMember:
    theta: NDArray[np.float64]
    y: float
    shift: float
    tv: float
    errors: NDArray[np.float64]


@dataclass
class PosteriorEnsemble:
    accepted: list[PosteriorMember] = field(default_factory=list)
    complete: bool = False


# --------------------------------------------------------------------------- #
# Sampling and acquisition
# --------------------------------------------------------------------------- #

def latin_hypercube(n: int, bounds: NDArray[np.float64],
                    seed) -> NDArray[np.float64]:
    """One sample per axis stratum per dimension, deterministic under seed."""
    if n < 1:
        raise SolverError("latin_hypercube needs n >= 1")
    bounds = np.asarray(bounds, dtype=np.float64)
    sampler = qmc.LatinHypercube(d=len(bounds), seed=np.random.default_rng(seed))
    unit = sampler.random(n)
    return qmc.scale(unit, bounds[:, 0], bounds[:, 1])


def expected_improvement(mu, var, y_best):
    """Closed-form EI for minimization; EI = max(y_best - mu, 0) at sigma = 0."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise SolverError("variance must be nonnegative")
    sigma = np.sqrt(var)
    improve = y_best - mu
    out = np.where(improve > 0, improve, 0.0).astype(np.float64)
    pos = sigma > 0
    z = np.zeros_like(mu)
    z[pos] = improve[pos] / sigma[pos]
    out = np.where(pos, improve * norm.cdf(z) + sigma * norm.pdf(z), out)
    return out if out.ndim else float(out)


def _polish_candidate(model: gp.GpModel, theta, y_best,
                      bounds, n_iters: int = 10) -> NDArray[np.float64]:
    """Derivative-free coordinate refinement of the EI around a candidate."""
    theta = np.asarray(theta, dtype=np.float64).copy()
    d = len(theta)
    span = bounds[:, 1] - bounds[:, 0]
    step = 0.05 * span
    mu, var = model.predict(theta[None, :])
    best_ei = expected_improvement(mu, var, y_best)[0]
    for _ in range(n_iters):
        # evaluate all 2d coordinate steps in one batch, take the best
        cand = np.repeat(theta[None, :], 2 * d, axis=0)
        idx = np.arange(d)
        cand[idx, idx] += step
        cand[idx + d, idx] -= step
        cand = np.clip(cand, bounds[:, 0], bounds[:, 1])
        mu, var = model.predict(cand)
        ei = expected_improvement(mu, var, y_best)
        k = int(np.argmax(ei))
        if ei[k] > best_ei:
            best_ei = ei[k]
            theta = cand[k]
        else:
            step *= 0.5
    return theta


def propose_next(model: gp.GpModel, y_best: float, bounds, rng,
                 n_candidates: int = 10_000, n_polish: int = 10
                 ) -> NDArray[np.float64]:
    """EI argmax over uniform candidates plus local polish of the leaders."""
    bounds = np.asarray(bounds, dtype=np.float64)
    cand = rng.uniform(bounds[:, 0], bounds[:, 1],
                       size=(n_candidates, len(bounds)))
    mu, var = model.predict(cand)
    ei = expected_improvement(mu, var, y_best)
    order = np.argsort(ei)[::-1]
    best_theta = cand[order[0]]
    best_ei = ei[order[0]]
    for idx in order[:n_polish]:
        polished = _polish_candidate(model, cand[idx], y_best, bounds)
        mu, var = model.predict(polished[None, :])
        pei = expected_improvement(mu, var, y_best)[0]
        if pei > best_ei:
            best_ei = pei
            best_theta = polished
    return best_theta


def bo_step(model: gp.GpModel, records: list[EvaluationRecord], forward,
            bounds, rng) -> EvaluationRecord:
    """Pick the EI argmax, run the forward model there, append the record."""
    finite = [r.y for r in records if np.isfinite(r.y)]
    y_best = min(finite) if finite else np.inf
    theta = propose_next(model, y_best, bounds, rng)
    try:
        y, shift = forward(theta)
        rec = EvaluationRecord(theta=theta, y=y, shift=shift, provenance="BO")
    except SolverError:
        rec = EvaluationRecord(theta=theta, y=np.inf, shift=0.0,
                               provenance="BO")
    records.append(rec)
    return rec


# --------------------------------------------------------------------------- #
# ABC prior
# --------------------------------------------------------------------------- #

def abc_prior_density(mu, var, y_min: float, var_min: float):
    """Plausibility score of Eq-style Gaussian form around the incumbent."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    total = var + var_min
    return np.exp(-0.5 * (mu - y_min) ** 2 / total) / np.sqrt(2 * np.pi * total)


def rejection_sample_prior(model: gp.GpModel, y_min: float, bounds,
                           n_samples: int, rng, batch: int = 50_000):
    """Accepted prior draws sorted by descending density.

    Returns (thetas sorted by descending p, their p values, p_max, var_min).
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    thetas, mus, vars_ = [], [], []
    remaining = n_samples
    while remaining > 0:
        m = min(batch, remaining)
        cand = rng.uniform(bounds[:, 0], bounds[:, 1], size=(m, len(bounds)))
        mu, var = model.predict(cand)
        thetas.append(cand)
        mus.append(mu)
        vars_.append(var)
        remaining -= m
    theta = np.concatenate(thetas)
    mu = np.concatenate(mus)
    var = np.concatenate(vars_)
    var_min = float(var.min())
    p = abc_prior_density(mu, var, y_min, var_min)
    p_max = float(abc_prior_density(np.array([y_min]),
                                    np.array([var_min]), y_min, var_min)[0])
    r = rng.uniform(0.0, p_max, size=len(p))
    keep = p > r
    if not np.any(keep):
        raise SolverError(
            f"rejection sampling accepted nothing (p_max={p_max:.3e}, "
            f"median p={np.median(p):.3e})")
    theta = theta[keep]
    p = p[keep]
    order = np.argsort(p)[::-1]
    return theta[order], p[order], p_max, var_min


# --------------------------------------------------------------------------- #
# Total variation distance between error distributions
# --------------------------------------------------------------------------- #

def _kde_cv_bandwidth(samples: NDArray[np.float64],
                      max_cv_samples: int = 1000) -> float:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) > max_cv_samples:
        # evenly strided, deterministic subsample: the O(n^2) CV search needs
        # only enough points to pick a bandwidth, not the full sample set
        x = x[::len(x) // max_cv_samples][:max_cv_samples]
    scale = float(x.std())
    if scale < 1e-300:
        return max(1e-6 * max(abs(float(x.mean())), 1.0), 1e-12)
    silverman = 1.06 * scale * len(x) ** (-0.2)
    grid = silverman * np.logspace(np.log10(0.01), np.log10(10.0), 20)
    search = GridSearchCV(
        KernelDensity(kernel="gaussian"), {"bandwidth": grid},
        cv=KFold(n_splits=min(5, len(x))))
    search.fit(x[:, None])
    return float(search.best_params_["bandwidth"])


def tv_distance(q_a: NDArray[np.float64], q_b: NDArray[np.float64],
                n_grid: int = 2048) -> float:
    """Total variation distance between two error-sample sets via KDE.

    Bandwidths are chosen per set by cross-validated likelihood on a log
    grid around the Silverman value; the integral uses the trapezoid rule
    over the padded joint sample range.
    """
    q_a = np.asarray(q_a, dtype=np.float64)
    q_b = np.asarray(q_b, dtype=np.float64)
    if q_a.size == 0 or q_b.size == 0:
        raise SolverError("tv_distance needs non-empty sample sets")
    bw_a = _kde_cv_bandwidth(q_a)
    bw_b = _kde_cv_bandwidth(q_b)
    lo = min(q_a.min(), q_b.min())
    hi = max(q_a.max(), q_b.max())
    pad = 0.5 * max(hi - lo, 1e-12)
    # a global grid plus a refinement window per sample set, so narrow
    # far-separated densities are still resolved
    pieces = [np.linspace(lo - pad, hi + pad, n_grid // 2)]
    for q, bw in ((q_a, bw_a), (q_b, bw_b)):
        pieces.append(np.linspace(q.min() - 5 * bw, q.max() + 5 * bw,
                                  n_grid // 4))
    grid = np.unique(np.concatenate(pieces))[:, None]
    dens = []
    for q, bw in ((q_a, bw_a), (q_b, bw_b)):
        kde = KernelDensity(kernel="gaussian", bandwidth=bw).fit(q[:, None])
        dens.append(np.exp(kde.score_samples(grid)))
    trapz = getattr(np, "trapezoid", None) or np.trapz
    tv = 0.5 * trapz(np.abs(dens[0] - dens[1]), grid[:, 0])
    return float(min(tv, 1.0))


# --------------------------------------------------------------------------- #
# Orchestration
# --------------------------------------------------------------------------- #

def _named_rngs(seed: int) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    names = ("lhs", "gp", "bo", "prior", "beats")
    children = root.spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


class RecordLog:
    """Append-only persistence of evaluation records (records.csv)."""

    def __init__(self, path: str):
        self.path = path
        self.records: list[EvaluationRecord] = []
        if os.path.exists(path):
            with open(path) as fh:
                reader = csv.reader(fh)
                next(reader, None)   # header
                for row in reader:
                    theta = np.asarray([float(v) for v in row[:-3]])
                    self.records.append(EvaluationRecord(
                        theta=theta, y=float(row[-3]), shift=float(row[-2]),
                        provenance=row[-1]))

    @staticmethod
    def _header(dim: int) -> str:
        names = (PARAM_NAMES if dim == len(PARAM_NAMES)
                 else tuple(f"x{i}" for i in range(dim)))
        return ",".join(names) + ",y,shift,provenance\n"

    def append(self, rec: EvaluationRecord) -> None:
        write_header = not self.records and not os.path.exists(self.path)
        self.records.append(rec)
        with open(self.path, "a") as fh:
            if write_header:
                fh.write(self._header(len(rec.theta)))
            fh.write(",".join(repr(float(v)) for v in rec.theta)
                     + f",{float(rec.y)!r},{float(rec.shift)!r},{rec.provenance}\n")

    def replay_or_eval(self, index: int, theta, forward, provenance: str
                       ) -> EvaluationRecord:
        """Use the stored record at `index` when it matches, else evaluate."""
        if index < len(self.records):
            rec = self.records[index]
            if (rec.provenance == provenance
                    and np.allclose(rec.theta, theta, rtol=1e-10, atol=1e-12)):
                return rec
            # stored sequence diverged: drop the stale tail
            self.records = self.records[:index]
            self._rewrite()
        try:
            y, shift = forward(theta)
        except SolverError:
            y, shift = np.inf, 0.0
        rec = EvaluationRecord(theta=np.asarray(theta, dtype=np.float64),
                               y=y, shift=shift, provenance=provenance)
        self.append(rec)
        return rec

    def _rewrite(self) -> None:
        with open(self.path, "w") as fh:
            dim = (len(self.records[0].theta) if self.records
                   else len(PARAM_NAMES))
            fh.write(self._header(dim))
            for rec in self.records:
                fh.write(",".join(repr(float(v)) for v in rec.theta)
                         + f",{float(rec.y)!r},{float(rec.shift)!r},{rec.provenance}\n")


def run_identification(forward, error_sampler, bounds, budget: RunBudget,
                       seed: int, out_dir: str,
                       on_accept=None, jobs: int = 1
                       ) -> tuple[PosteriorEnsemble, gp.GpModel]:
    """Full inverse run: LHS -> BO -> ABC with TV acceptance.

    forward(theta) -> (y, shift); error_sampler(theta) -> error sample set q
    (one loss per reference beat, re-running the forward model). on_accept
    is called with each accepted PosteriorMember for persistence. Resumable:
    existing records in out_dir/records.csv short-circuit re-evaluation.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    rngs = _named_rngs(seed)
    os.makedirs(out_dir, exist_ok=True)
    log = RecordLog(os.path.join(out_dir, "records.csv"))

    # 1. Latin hypercube seeding
    lhs = latin_hypercube(budget.n_init, bounds, rngs["lhs"])
    if jobs > 1:
        _prefill_parallel(log, lhs, forward, jobs)
    for i in range(budget.n_init):
        log.replay_or_eval(i, lhs[i], forward, "LHS")

    gp_seed = int(rngs["gp"].integers(2 ** 31))

    def fit_gp(n_records, warm=None):
        # use only the records available at this point in the sequence so a
        # replayed (resumed) run fits identical models to the original one
        recs = log.records[:n_records]
        x = np.asarray([r.theta for r in recs])
        y = np.asarray([r.y for r in recs])
        return gp.fit(x, y, bounds, restarts=4 if warm is None else 1,
                      seed=gp_seed, warm_start=warm)

    model = fit_gp(budget.n_init)

    # 2. Bayesian optimization
    for step in range(budget.n_bo):
        idx = budget.n_init + step
        finite = [r.y for r in log.records[:idx] if np.isfinite(r.y)]
        y_best = min(finite) if finite else np.inf
        theta = propose_next(model, y_best, bounds, rngs["bo"])
        log.replay_or_eval(idx, theta, forward, "BO")
        model = fit_gp(idx + 1, warm=model)

    model.to_json(os.path.join(out_dir, "gp_model.json"))

    # 3. ABC posterior sampling
    n_opt = budget.n_init + budget.n_bo
    finite_recs = [r for r in log.records[:n_opt] if np.isfinite(r.y)]
    if not finite_recs:
        raise SolverError("no successful forward evaluations")
    best = min(finite_recs, key=lambda r: r.y)
    y_min = best.y
    q_min = error_sampler(best.theta)

    ensemble = PosteriorEnsemble()
    eval_index = budget.n_init + budget.n_bo
    consecutive_rejections = 0
    status = "running"
    while len(ensemble.accepted) < budget.n_posterior:
        candidates, _, _, _ = rejection_sample_prior(
            model, y_min, bounds, budget.n_prior_samples, rngs["prior"])
        resampled = False
        for theta in candidates:
            if len(ensemble.accepted) >= budget.n_posterior:
                break
            if eval_index >= (budget.n_init + budget.n_bo
                              + budget.max_forward_evals):
                status = "budget_exhausted"
                break
            rec = log.replay_or_eval(eval_index, theta, forward, "ABC")
            eval_index += 1
            if not np.isfinite(rec.y):
                consecutive_rejections += 1
            else:
                q = error_sampler(theta)
                d = tv_distance(q, q_min)
                if d < budget.accept_threshold:
                    member = PosteriorMember(
                        theta=np.asarray(theta), y=rec.y, shift=rec.shift,
                        tv=d, errors=q)
                    ensemble.accepted.append(member)
                    consecutive_rejections = 0
                    if on_accept is not None:
                        on_accept(len(ensemble.accepted) - 1, member)
                    continue
                consecutive_rejections += 1
            if consecutive_rejections >= budget.retrain_after:
                model = fit_gp(eval_index)
                consecutive_rejections = 0
                resampled = True
                break
        if status == "budget_exhausted":
            break
        if not resampled and len(ensemble.accepted) < budget.n_posterior:
            # exhausted the accepted prior draws: refit and resample
            model = fit_gp(eval_index)
    ensemble.complete = len(ensemble.accepted) >= budget.n_posterior
    with open(os.path.join(out_dir, "status.json"), "w") as fh:
        json.dump({
            "status": "complete" if ensemble.complete else status,
            "n_accepted": len(ensemble.accepted),
            "n_records": len(log.records),
            "y_min": y_min,
        }, fh, indent=2)
    if not ensemble.complete and status == "budget_exhausted":
        raise BudgetExhausted(
            f"accepted {len(ensemble.accepted)}/{budget.n_posterior} "
            "before the forward-evaluation budget ran out")
    return ensemble, model


def _prefill_parallel(log: RecordLog, thetas, forward, jobs: int) -> None:
    """Evaluate LHS points concurrently, preserving record order."""
    from concurrent.futures import ThreadPoolExecutor
    todo = [(i, thetas[i]) for i in range(len(thetas))
            if i >= len(log.records)]
    if not todo:
        return

    def safe(theta):
        try:
            return forward(theta)
        except SolverError:
            return np.inf, 0.0

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(safe, [t for _, t in todo]))
    for (i, theta), (y, shift) in zip(todo, results):
        if i == len(log.records):
            log.append(EvaluationRecord(theta=np.asarray(theta), y=y,
                                        shift=shift, provenance="LHS"))
