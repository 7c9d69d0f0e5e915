"""Randomized invariant suites behind ``fltrust verify``.

Each suite compares the library against a slow, independent re-computation
(loops over plain Python floats, exhaustive search, finite differences) and
reports how many randomized trials it ran. Library functions are looked up
through their modules at call time so a test harness can swap one out.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import aggregation, model, simulation
from .model import ModelSpec


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    worst: float = 0.0
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.failures == 0


# -- slow oracles --------------------------------------------------------------

def _sq_dist(a, b) -> float:
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def brute_force_krum(updates, f: int) -> int:
    n = len(updates)
    best, best_score = -1, math.inf
    for i in range(n):
        dists = sorted(_sq_dist(updates[i], updates[j]) for j in range(n) if j != i)
        score = sum(dists[: n - f - 2])
        if score < best_score:
            best, best_score = i, score
    return best


def sorted_trimmed_mean(updates, k: int) -> list[float]:
    out = []
    for column in zip(*updates):
        vals = sorted(float(v) for v in column)
        kept = vals[k : len(vals) - k]
        out.append(math.fsum(kept) / len(kept))
    return out


def sorted_median(updates) -> list[float]:
    out = []
    for column in zip(*updates):
        vals = sorted(float(v) for v in column)
        mid = len(vals) // 2
        out.append(vals[mid] if len(vals) % 2 else (vals[mid - 1] + vals[mid]) / 2)
    return out


def finite_difference_gradient(spec: ModelSpec, params, X, y, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(params)
    for j in range(params.size):
        up, down = params.copy(), params.copy()
        up[j] += step
        down[j] -= step
        grad[j] = (model.loss(spec, up, X, y) - model.loss(spec, down, X, y)) / (2 * step)
    return grad


def gradient_relative_error(analytic, numeric) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


# -- random instances -------------------------------------------------------------

def random_model_instance(rng: np.random.Generator, kind: str):
    d = int(rng.integers(2, 6))
    M = int(rng.integers(2, 5))
    hidden = int(rng.integers(2, 6)) if kind == model.MLP else 0
    spec = ModelSpec(kind, d, M, hidden)
    params = rng.normal(0, 0.5, model.parameter_count(spec))
    N = int(rng.integers(1, 8))
    X = rng.normal(0, 1, (N, d))
    y = rng.integers(0, M, N)
    return spec, params, X, y


def random_updates(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Honest-looking cluster plus adversarial rows of mixed sign and scale."""
    centre = rng.normal(0, 1, d)
    U = centre + 0.3 * rng.normal(0, 1, (n, d))
    bad = rng.random(n) < 0.4
    U[bad] = rng.normal(0, 1, (bad.sum(), d)) * 10.0 ** rng.uniform(-3, 3, (bad.sum(), 1))
    return U


# -- suites -------------------------------------------------------------------------

def suite_gradient(trials: int, rng: np.random.Generator, tol: float = 1e-5) -> SuiteResult:
    worst, failures = 0.0, 0
    for t in range(trials):
        kind = model.LOGISTIC if t % 2 == 0 else model.MLP
        spec, params, X, y = random_model_instance(rng, kind)
        err = gradient_relative_error(
            model.gradient(spec, params, X, y), finite_difference_gradient(spec, params, X, y)
        )
        worst = max(worst, err)
        failures += err >= tol
    return SuiteResult("gradient_finite_differences", trials, failures, worst)


def suite_krum(trials: int, rng: np.random.Generator) -> SuiteResult:
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(3, 9))
        d = int(rng.integers(1, 6))
        f = int(rng.integers(0, n - 2))
        U = rng.normal(0, 1, (n, d))
        idx, _ = aggregation.krum(U, f)
        failures += idx != brute_force_krum(U.tolist(), f)
    return SuiteResult("krum_oracle", trials, failures)


def suite_trimmed_mean(trials: int, rng: np.random.Generator, tol: float = 1e-12) -> SuiteResult:
    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(1, 10))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(0, (n + 1) // 2))
        U = rng.normal(0, 1, (n, d))
        err = float(np.max(np.abs(aggregation.trimmed_mean(U, k) - sorted_trimmed_mean(U.tolist(), k))))
        worst = max(worst, err)
        failures += err > tol
    return SuiteResult("trimmed_mean_oracle", trials, failures, worst)


def suite_median(trials: int, rng: np.random.Generator, tol: float = 1e-12) -> SuiteResult:
    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(1, 10))
        d = int(rng.integers(1, 6))
        U = rng.normal(0, 1, (n, d))
        err = float(np.max(np.abs(aggregation.median(U) - sorted_median(U.tolist()))))
        worst = max(worst, err)
        failures += err > tol
    return SuiteResult("median_oracle", trials, failures, worst)


def suite_fltrust(trials: int, rng: np.random.Generator) -> list[SuiteResult]:
    """Norm bound, positive-scale invariance and exclusion of non-positive cosines."""
    bound = SuiteResult("fltrust_norm_bound", trials, 0)
    scale = SuiteResult("fltrust_scale_invariance", trials, 0)
    clip = SuiteResult("fltrust_clip_exclusion", trials, 0)
    for _ in range(trials):
        n = int(rng.integers(1, 10))
        d = int(rng.integers(1, 8))
        U = random_updates(rng, n, d)
        g0 = rng.normal(0, 1, d) * 10.0 ** rng.uniform(-2, 2)
        g = aggregation.fltrust_aggregate(U, g0)
        n0 = np.linalg.norm(g0)
        excess = np.linalg.norm(g) - n0
        bound.worst = max(bound.worst, excess / n0)
        bound.failures += excess > 1e-9 * n0

        i = int(rng.integers(n))
        V = U.copy()
        V[i] *= 10.0 ** rng.uniform(-3, 3)
        diff = float(np.max(np.abs(aggregation.fltrust_aggregate(V, g0) - g))) / n0
        scale.worst = max(scale.worst, diff)
        scale.failures += diff > 1e-12

        cos = (U @ g0) / (np.linalg.norm(U, axis=1) * n0)
        keep = cos > 0
        if keep.any() and not keep.all():
            diff = float(np.max(np.abs(aggregation.fltrust_aggregate(U[keep], g0) - g))) / n0
            clip.worst = max(clip.worst, diff)
            clip.failures += diff > 1e-12
    return [bound, scale, clip]


def suite_distance_bound(trials: int, rng: np.random.Generator) -> SuiteResult:
    """Aggregate of arbitrary gradients stays within the bound around the full-data gradient."""
    result = SuiteResult("distance_bound", trials, 0)
    for _ in range(trials):
        d_in = int(rng.integers(1, 4))
        M = int(rng.integers(2, 4))
        spec = ModelSpec(model.LOGISTIC, d_in, M)
        N = int(rng.integers(4, 30))
        X = rng.normal(0, 1, (N, d_in))
        y = rng.integers(0, M, N)
        w = rng.normal(0, 1, model.parameter_count(spec))
        full = model.gradient(spec, w, X, y)
        root = rng.choice(N, size=int(rng.integers(1, N + 1)), replace=False)
        g0 = model.gradient(spec, w, X[root], y[root])
        n = int(rng.integers(1, 8))
        grads = []
        for _ in range(n):
            if rng.random() < 0.5:
                part = rng.choice(N, size=int(rng.integers(1, N + 1)), replace=False)
                grads.append(model.gradient(spec, w, X[part], y[part]))
            else:
                grads.append(rng.normal(0, 1, w.size) * 10.0 ** rng.uniform(-3, 3))
        lhs, rhs, holds = simulation.distance_bound_check(np.vstack(grads), g0, full)
        result.worst = max(result.worst, lhs - rhs)
        result.failures += not holds
    return result


def suite_krum_exhaustive_small(rng: np.random.Generator) -> SuiteResult:
    """Every permutation of a fixed instance moves the selection with the selected vector."""
    U = rng.normal(0, 1, (5, 3))
    _, chosen = aggregation.krum(U, 1)
    failures = 0
    trials = 0
    for perm in itertools.permutations(range(5)):
        trials += 1
        _, picked = aggregation.krum(U[list(perm)], 1)
        failures += not np.array_equal(picked, chosen)
    return SuiteResult("krum_permutation", trials, failures)


def run_all(trials: int = 1000, seed: int = 0, gradient_trials: int = 100) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    results = [
        suite_gradient(gradient_trials, rng),
        suite_krum(trials, rng),
        suite_krum_exhaustive_small(rng),
        suite_trimmed_mean(trials, rng),
        suite_median(trials, rng),
    ]
    results.extend(suite_fltrust(trials, rng))
    results.append(suite_distance_bound(trials, rng))
    return results
