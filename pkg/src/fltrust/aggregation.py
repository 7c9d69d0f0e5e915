"""Aggregation rules: FedAvg, Krum, trimmed mean, median and FLTrust (with ablations).

Every rule takes a list (or 2-D array, one row per client) of flat update
vectors and returns a single update vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateError

log = logging.getLogger(__name__)

FEDAVG = "fedavg"
KRUM = "krum"
TRIM_MEAN = "trim_mean"
MEDIAN = "median"
FLTRUST = "fltrust"
RULES = (FEDAVG, KRUM, TRIM_MEAN, MEDIAN, FLTRUST)

STANDARD = "standard"
NO_RELU = "norelu"
NO_NORM = "nonorm"
PAR_NORM = "parnorm"
WITH_SERVER = "withserver"
SERVER_ONLY = "serveronly"
VARIANTS = (STANDARD, NO_RELU, NO_NORM, PAR_NORM, WITH_SERVER, SERVER_ONLY)

NORELU_GUARD = 1e-12


@dataclass(frozen=True)
class AggregatorConfig:
    rule: str = FLTRUST
    f: int = 0
    k: int = 0
    variant: str = STANDARD

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"rule: unknown aggregation rule {self.rule!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown FLTrust variant {self.variant!r}")
        if self.f < 0 or self.k < 0:
            raise ConfigError("f and k must be non-negative")

    def validate(self, n: int) -> None:
        """Check the rule's parameters against the number of aggregated updates."""
        if self.rule == KRUM and n - self.f - 2 < 1:
            raise ConfigError(f"f: Krum needs n - f - 2 >= 1 (n={n}, f={self.f})")
        if self.rule == TRIM_MEAN and 2 * self.k >= n:
            raise ConfigError(f"k: trimmed mean needs 2k < n (n={n}, k={self.k})")

    @property
    def needs_root(self) -> bool:
        return self.rule == FLTRUST


def _stack(updates) -> np.ndarray:
    U = np.asarray(updates, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] == 0:
        raise ConfigError("expected a non-empty list of equal-length update vectors")
    return U


def fedavg(updates, sizes) -> np.ndarray:
    U = _stack(updates)
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.shape != (U.shape[0],):
        raise ConfigError(f"{U.shape[0]} updates but {sizes.size} sizes")
    if np.any(sizes <= 0):
        raise ConfigError("dataset sizes must be positive")
    return (sizes / sizes.sum()) @ U


def krum_scores(updates, f: int) -> np.ndarray:
    """Sum of squared distances from each update to its ``n - f - 2`` nearest others."""
    U = _stack(updates)
    n = U.shape[0]
    closest = n - f - 2
    if closest < 1:
        raise ConfigError(f"Krum needs n - f - 2 >= 1 (n={n}, f={f})")
    diff = U[:, None, :] - U[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(dist[i], i)
        scores[i] = np.sort(others)[:closest].sum()
    return scores


def krum(updates, f: int) -> tuple[int, np.ndarray]:
    U = _stack(updates)
    idx = int(np.argmin(krum_scores(U, f)))  # first minimum on ties
    return idx, U[idx].copy()


def trimmed_mean(updates, k: int) -> np.ndarray:
    U = _stack(updates)
    n = U.shape[0]
    if k < 0 or 2 * k >= n:
        raise ConfigError(f"trimmed mean needs 0 <= 2k < n (n={n}, k={k})")
    return np.sort(U, axis=0)[k : n - k].mean(axis=0)


def median(updates) -> np.ndarray:
    return np.median(_stack(updates), axis=0)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def trust_score(c: float) -> float:
    return max(0.0, float(c))


def normalize_update(g, g0) -> np.ndarray:
    """Rescale ``g`` to the magnitude of ``g0``."""
    g = np.asarray(g, dtype=np.float64)
    ng = np.linalg.norm(g)
    if ng == 0:
        raise DegenerateError("cannot normalize a zero update")
    return (np.linalg.norm(g0) / ng) * g


def _cosines(U: np.ndarray, g0: np.ndarray, norms: np.ndarray, n0: float) -> np.ndarray:
    cos = np.zeros(U.shape[0])
    ok = norms > 0
    cos[ok] = np.clip((U[ok] @ g0) / (norms[ok] * n0), -1.0, 1.0)
    return cos


def fltrust_details(updates, g0, variant: str = STANDARD) -> tuple[np.ndarray, np.ndarray]:
    """FLTrust aggregate together with the per-client weights it used.

    The weights are the trust scores (raw cosines for ``norelu``); zero-norm
    updates always get weight 0. If no update has positive trust the server
    update is returned.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"variant: unknown FLTrust variant {variant!r}")
    U = _stack(updates)
    g0 = np.asarray(g0, dtype=np.float64)
    if variant == SERVER_ONLY:
        return g0.copy(), np.zeros(U.shape[0])
    n0 = np.linalg.norm(g0)
    if n0 == 0:
        log.warning("server update has zero norm; returning a zero aggregate")
        return np.zeros_like(g0), np.zeros(U.shape[0])

    norms = np.linalg.norm(U, axis=1)
    cos = _cosines(U, g0, norms, n0)
    weights = cos if variant == NO_RELU else np.maximum(cos, 0.0)

    scale = np.ones(U.shape[0])
    nz = norms > 0
    if variant in (STANDARD, NO_RELU, WITH_SERVER):
        scale[nz] = n0 / norms[nz]
    elif variant == PAR_NORM:
        big = norms > n0
        scale[big] = n0 / norms[big]

    total = weights.sum()
    combined = (weights * scale) @ U
    if variant == WITH_SERVER:
        return (combined + g0) / (total + 1.0), weights
    if variant == NO_RELU:
        if abs(total) < NORELU_GUARD:
            return np.zeros_like(g0), weights
        return combined / total, weights
    if total <= 0:
        return g0.copy(), weights
    return combined / total, weights


def fltrust_aggregate(updates, g0, variant: str = STANDARD) -> np.ndarray:
    return fltrust_details(updates, g0, variant)[0]


def update_global(w, g, alpha: float) -> np.ndarray:
    return np.asarray(w, dtype=np.float64) + alpha * np.asarray(g, dtype=np.float64)


def aggregate(cfg: AggregatorConfig, updates, sizes=None, g0=None) -> tuple[np.ndarray, dict]:
    """Dispatch on ``cfg.rule``; the dict carries diagnostics (Krum index, trust scores)."""
    U = _stack(updates)
    if cfg.rule == FEDAVG:
        return fedavg(U, np.ones(len(U)) if sizes is None else sizes), {}
    if cfg.rule == KRUM:
        idx, g = krum(U, cfg.f)
        return g, {"selected": idx}
    if cfg.rule == TRIM_MEAN:
        return trimmed_mean(U, cfg.k), {}
    if cfg.rule == MEDIAN:
        return median(U), {}
    if g0 is None:
        raise ConfigError("root: FLTrust needs a server update")
    g, weights = fltrust_details(U, g0, cfg.variant)
    return g, {"trust": weights}
