"""Covariance-matrix-adaptation evolution strategy with box bounds.

A standard weighted-recombination ``(mu/mu_w, lambda)`` strategy: cumulative
step-size adaptation, rank-one plus rank-mu covariance updates, optional
restarts with population doubling.  Bounds are enforced by resampling a
candidate up to a fixed number of tries and, failing that, coordinate-wise
clipping with a quadratic out-of-box penalty added to its fitness.  All
randomness flows from the seed in the settings, so runs are reproducible
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class CmaesError(ValueError):
    """Invalid optimizer configuration or search-space description."""


@dataclass(frozen=True)
class CmaesSettings:
    population: int | None = None      # default 4 + floor(3*ln N)
    sigma0: float | None = None        # default 0.3 * mean box width
    max_evaluations: int = 100_000
    target_objective: float | None = None
    restarts: int = 0                  # population doubles on each restart
    seed: int = 0
    resample_tries: int = 100
    bound_penalty: float = 1.0e6
    stall_generations: int = 60        # flat-best patience before a restart

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise CmaesError(f"population must be >= 4, got {self.population}")
        if self.sigma0 is not None and self.sigma0 <= 0.0:
            raise CmaesError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.max_evaluations < 1:
            raise CmaesError("max_evaluations must be positive")


@dataclass
class CmaesResult:
    best: np.ndarray
    best_objective: float
    evaluations: int
    history: list[float] = field(repr=False, default_factory=list)
    restarts_used: int = 0


def minimize(objective, bounds, settings: CmaesSettings = CmaesSettings(),
             vectorized: bool = False, initial_mean=None) -> CmaesResult:
    """Minimize a black-box function over a box.

    ``bounds`` is a sequence of ``(low, high)`` pairs, all finite.  With
    ``vectorized=True`` the objective receives a ``(k, N)`` array of
    candidates and must return ``k`` values; candidate evaluations within a
    generation are independent, so this is the batch equivalent of parallel
    evaluation.  Non-finite objective values are treated as ``+inf``.  The
    first run starts from ``initial_mean`` (default: box center); restarts
    start from random points with a doubled population.
    """
    lo, hi = _check_bounds(bounds)
    dim = lo.size
    rng = np.random.default_rng(settings.seed)
    evaluate = _make_evaluator(objective, vectorized, lo, hi, settings)

    lam0 = settings.population or (4 + int(3 * math.log(dim)))
    lam0 = max(4, lam0)
    sigma0 = settings.sigma0 or 0.3 * float(np.mean(hi - lo))

    start = 0.5 * (lo + hi) if initial_mean is None else np.clip(np.asarray(initial_mean, dtype=float), lo, hi)
    if start.shape != lo.shape:
        raise CmaesError(f"initial_mean must have {dim} entries, got shape {start.shape}")
    best = start.copy()
    best_f = math.inf
    history: list[float] = []
    evals = 0
    restarts_used = 0

    for attempt in range(settings.restarts + 1):
        lam = lam0 * 2**attempt
        if attempt == 0:
            mean = start.copy()
        else:
            mean = rng.uniform(lo, hi)
            restarts_used += 1
        remaining = settings.max_evaluations - evals
        if remaining < lam:
            break
        run_best, run_best_f, evals = _run(
            evaluate, mean, sigma0, lam, lo, hi, rng, settings, evals, history,
            lambda: best_f)
        if run_best_f < best_f:
            best, best_f = run_best, run_best_f
        if settings.target_objective is not None and best_f <= settings.target_objective:
            break
        if evals >= settings.max_evaluations:
            break

    return CmaesResult(best=best, best_objective=float(best_f),
                       evaluations=evals, history=history, restarts_used=restarts_used)


def _run(evaluate, mean, sigma, lam, lo, hi, rng, settings, evals, history, global_best_f):
    dim = mean.size
    mu = lam // 2
    raw = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mu_eff = 1.0 / float(np.sum(weights**2))

    c_sigma = (mu_eff + 2.0) / (dim + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (dim + 1.0)) - 1.0) + c_sigma
    c_cov_path = (4.0 + mu_eff / dim) / (dim + 4.0 + 2.0 * mu_eff / dim)
    c_rank1 = 2.0 / ((dim + 1.3)**2 + mu_eff)
    c_rankmu = min(1.0 - c_rank1,
                   2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dim + 2.0)**2 + mu_eff))
    chi_n = math.sqrt(dim) * (1.0 - 1.0 / (4.0 * dim) + 1.0 / (21.0 * dim**2))

    cov = np.eye(dim)
    path_sigma = np.zeros(dim)
    path_cov = np.zeros(dim)
    eigvecs = np.eye(dim)
    eigvals = np.ones(dim)

    best, best_f = mean.copy(), math.inf
    stall = 0
    generation = 0

    while evals + lam <= settings.max_evaluations:
        generation += 1
        sqrt_vals = np.sqrt(eigvals)
        zs = rng.standard_normal((lam, dim))
        ys = zs * sqrt_vals @ eigvecs.T
        candidates = mean + sigma * ys

        # box handling: resample, then clip with penalty
        for i in range(lam):
            tries = 0
            while np.any((candidates[i] < lo) | (candidates[i] > hi)):
                if tries >= settings.resample_tries:
                    break
                z = rng.standard_normal(dim)
                ys[i] = z * sqrt_vals @ eigvecs.T
                candidates[i] = mean + sigma * ys[i]
                tries += 1

        fitness, evals = evaluate(candidates, evals)
        order = np.argsort(fitness, kind="stable")
        gen_best_f = float(fitness[order[0]])
        if gen_best_f < best_f:
            best_f = gen_best_f
            best = candidates[order[0]].copy()
            stall = 0
        else:
            stall += 1
        history.append(min(best_f, global_best_f()))

        sel = ys[order[:len(weights)]]
        y_mean = weights @ sel
        mean = mean + sigma * y_mean

        # cumulative step-size adaptation (C^{-1/2} y in eigen coordinates)
        c_inv_half_y = eigvecs @ ((eigvecs.T @ y_mean) / np.maximum(sqrt_vals, 1e-150))
        path_sigma = ((1.0 - c_sigma) * path_sigma
                      + math.sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * c_inv_half_y)
        expected = math.sqrt(1.0 - (1.0 - c_sigma)**(2 * generation))
        h_sigma = float(np.linalg.norm(path_sigma)) / expected < (1.4 + 2.0 / (dim + 1.0)) * chi_n
        path_cov = ((1.0 - c_cov_path) * path_cov
                    + (math.sqrt(c_cov_path * (2.0 - c_cov_path) * mu_eff) * y_mean if h_sigma else 0.0))

        rank_mu = (weights[:, None] * sel).T @ sel
        cov = ((1.0 - c_rank1 - c_rankmu) * cov
               + c_rank1 * (np.outer(path_cov, path_cov)
                            + (0.0 if h_sigma else c_cov_path * (2.0 - c_cov_path)) * cov)
               + c_rankmu * rank_mu)
        sigma *= math.exp((c_sigma / d_sigma) * (np.linalg.norm(path_sigma) / chi_n - 1.0))

        cov = 0.5 * (cov + cov.T)
        eigvals, eigvecs = np.linalg.eigh(cov)
        floor = 1e-14 * max(float(np.trace(cov)), 1e-300)
        eigvals = np.maximum(eigvals, floor)

        if settings.target_objective is not None and best_f <= settings.target_objective:
            break
        if stall >= settings.stall_generations or sigma < 1e-14:
            break

    return best, best_f, evals


def _make_evaluator(objective, vectorized, lo, hi, settings):
    def evaluate(candidates, evals):
        clipped = np.clip(candidates, lo, hi)
        excess = candidates - clipped
        penalty = settings.bound_penalty * np.sum(excess**2, axis=1)
        if vectorized:
            values = np.asarray(objective(clipped), dtype=float)
        else:
            values = np.array([objective(c) for c in clipped], dtype=float)
        values = np.where(np.isfinite(values), values, np.inf) + penalty
        return values, evals + len(candidates)

    return evaluate


def _check_bounds(bounds):
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise CmaesError(f"bounds must be a sequence of (low, high) pairs, got shape {arr.shape}")
    lo, hi = arr[:, 0].copy(), arr[:, 1].copy()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise CmaesError("bounds must be finite")
    if np.any(hi <= lo):
        raise CmaesError("every upper bound must exceed its lower bound")
    return lo, hi
