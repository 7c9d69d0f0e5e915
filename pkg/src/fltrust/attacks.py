"""Poisoning attacks. Malicious clients are always the first ``m`` clients.

Model-poisoning attacks work in update space: they receive the true updates
of the round (full-knowledge attacker) and return ``m`` crafted updates that
replace those of the malicious clients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import aggregation
from .data import Dataset, TriggerSpec, concat, embed_trigger, flip_label
from .errors import ConfigError
from .model import ModelSpec, model_update

NONE = "none"
LABEL_FLIP = "label_flip"
KRUM_ATTACK = "krum_attack"
TRIM_ATTACK = "trim_attack"
SCALING = "scaling"
ADAPTIVE = "adaptive"
KINDS = (NONE, LABEL_FLIP, KRUM_ATTACK, TRIM_ATTACK, SCALING, ADAPTIVE)


@dataclass(frozen=True)
class AttackConfig:
    kind: str = NONE
    m: int = 0
    # scaling attack
    scaling_p: float = 0.5
    scaling_lambda: float | None = None  # None means lambda = n
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    # krum / trim attack knobs
    krum_floor: float = 1e-5
    trim_width_scale: float = 1.0
    # adaptive attack
    noise_var: float = 0.5
    gamma: float = 0.005
    eta: float = 0.01
    Q: int = 10
    V: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"attack: unknown attack {self.kind!r}")
        if self.m < 0:
            raise ConfigError("m must be non-negative")
        if not 0.0 <= self.scaling_p <= 1.0:
            raise ConfigError("scaling_p must lie in [0, 1]")
        if self.scaling_lambda is not None and self.scaling_lambda < 1:
            raise ConfigError("scaling_lambda must be >= 1")
        if min(self.noise_var, self.gamma, self.eta) <= 0:
            raise ConfigError("adaptive attack needs noise_var, gamma, eta > 0")
        if self.Q < 1 or self.V < 1:
            raise ConfigError("adaptive attack needs Q, V >= 1")
        if self.krum_floor <= 0 or self.trim_width_scale <= 0:
            raise ConfigError("krum_floor and trim_width_scale must be positive")

    def validate(self, n: int) -> None:
        if self.m > n:
            raise ConfigError(f"m_fraction: {self.m} malicious clients exceed n={n}")

    @property
    def active(self) -> bool:
        return self.kind != NONE and self.m > 0


def label_flip_poison(dataset: Dataset) -> Dataset:
    return Dataset(dataset.X.copy(), flip_label(dataset.y, dataset.num_classes), dataset.num_classes)


def mean_sign(updates) -> np.ndarray:
    """Sign of the unweighted mean update, the attacker's estimate of the clean direction."""
    return np.sign(np.mean(np.asarray(updates, dtype=np.float64), axis=0))


# -- Krum attack ---------------------------------------------------------------

def _krum_lambda_bound(benign: np.ndarray, m: int) -> float:
    """Starting point of the lambda search, from distances among the benign updates."""
    n_b, d = benign.shape
    sqrt_d = np.sqrt(d)
    if n_b == 0:
        return 1.0
    reach = np.linalg.norm(benign, axis=1).max() / sqrt_d
    if n_b < 2:
        return float(reach)
    diff = benign[:, None, :] - benign[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    closest = max(n_b - 2, 1)
    nearest = np.sort(dist, axis=1)[:, 1 : closest + 1].sum(axis=1)
    # n - 2m - 1 with n = n_b + m
    spread = nearest.min() / (max(n_b - m - 1, 1) * sqrt_d)
    return float(spread + reach)


def krum_attack(updates, m: int, f: int, floor: float = 1e-5) -> list[np.ndarray]:
    """Craft ``m`` near-identical updates ``-lambda * s`` that Krum prefers.

    ``updates`` are the true updates of all n clients; the first ``m`` belong to
    the attacker and are replaced. Lambda starts at a distance-based upper
    bound and is halved until Krum picks a crafted update or lambda < floor.
    """
    if m == 0:
        return []
    U = np.asarray(updates, dtype=np.float64)
    n = U.shape[0]
    if n - f - 2 < 1:
        raise ConfigError(f"Krum needs n - f - 2 >= 1 (n={n}, f={f})")
    if m > n:
        raise ConfigError("more malicious clients than updates")
    s = mean_sign(U)
    benign = U[m:]
    lam = _krum_lambda_bound(benign, m)
    offsets = 1e-6 * np.arange(m)

    while True:
        crafted = [-(lam + offsets[j]) * s for j in range(m)]
        idx, _ = aggregation.krum(np.vstack(crafted + [benign]), f)
        if idx < m or lam < floor:
            return crafted
        lam /= 2.0


# -- Trim attack ----------------------------------------------------------------

def trim_attack(updates, m: int, rng: np.random.Generator, width_scale: float = 1.0) -> list[np.ndarray]:
    """Per-coordinate values just beyond the benign range, opposite the mean's sign.

    Where the mean is positive each value is drawn from ``[lo - w, lo]``, where
    negative from ``[hi, hi + w]``, and it equals ``lo`` where the mean is zero;
    ``w = width_scale * max(|lo|, |hi|, 1e-3)``.
    """
    if m == 0:
        return []
    U = np.asarray(updates, dtype=np.float64)
    s = mean_sign(U)
    lo, hi = U.min(axis=0), U.max(axis=0)
    width = width_scale * np.maximum(np.maximum(np.abs(lo), np.abs(hi)), 1e-3)
    out = []
    for _ in range(m):
        r = rng.random(U.shape[1])
        v = np.where(s > 0, lo - r * width, np.where(s < 0, hi + r * width, lo))
        out.append(v)
    return out


# -- Scaling attack ---------------------------------------------------------------

def augment_with_trigger(dataset: Dataset, trigger: TriggerSpec, p: float, rng: np.random.Generator) -> Dataset:
    """Append ``floor(p * |D|)`` trigger-embedded copies relabelled to the target."""
    count = int(np.floor(p * len(dataset)))
    if count == 0:
        return dataset
    picked = dataset.subset(np.sort(rng.choice(len(dataset), size=count, replace=False)))
    return concat([dataset, embed_trigger(picked, trigger, relabel=True)])


def scaling_attack(
    dataset: Dataset,
    trigger: TriggerSpec,
    p: float,
    lam: float,
    spec: ModelSpec,
    w: np.ndarray,
    batch_size: int,
    lr: float,
    local_iters: int,
    rng: np.random.Generator,
) -> np.ndarray:
    if not 0.0 <= p <= 1.0 or lam < 1:
        raise ConfigError("scaling attack needs p in [0, 1] and lambda >= 1")
    augmented = augment_with_trigger(dataset, trigger, p, rng)
    return lam * model_update(spec, w, augmented, batch_size, lr, local_iters, rng)


# -- adaptive attack against FLTrust -----------------------------------------------

def _unit_rows(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(U, axis=1)
    E = np.zeros_like(U)
    nz = norms > 0
    E[nz] = U[nz] / norms[nz, None]
    return E, norms


@dataclass
class AdaptiveContext:
    """Everything the attacker knows when scoring candidate directions."""

    g0_norm: float
    e0: np.ndarray
    directions: np.ndarray  # unit vectors of all n true updates (zero rows for zero updates)
    cosines: np.ndarray
    m: int
    s: np.ndarray = field(init=False)
    clean: np.ndarray = field(init=False)  # no-attack aggregate divided by ||g0||
    benign_sum: np.ndarray = field(init=False)
    benign_trust: float = field(init=False)

    def __post_init__(self):
        relu = np.maximum(self.cosines, 0.0)
        total = relu.sum()
        self.clean = (relu @ self.directions) / total if total > 0 else self.e0.copy()
        self.s = np.sign(self.clean)
        tail = relu[self.m :]
        self.benign_sum = tail @ self.directions[self.m :]
        self.benign_trust = float(tail.sum())

    @classmethod
    def from_updates(cls, g0, updates, m: int) -> "AdaptiveContext":
        g0 = np.asarray(g0, dtype=np.float64)
        U = np.asarray(updates, dtype=np.float64)
        n0 = np.linalg.norm(g0)
        e0 = g0 / n0 if n0 > 0 else np.zeros_like(g0)
        E, _ = _unit_rows(U)
        return cls(float(n0), e0, E, np.clip(E @ e0, -1.0, 1.0), m)

    def poisoned_direction(self, crafted: np.ndarray) -> np.ndarray:
        trust = np.maximum(crafted @ self.e0, 0.0)
        denom = trust.sum() + self.benign_trust
        if denom <= 0:
            return self.e0
        return (trust @ crafted + self.benign_sum) / denom


def adaptive_objective(crafted, ctx: AdaptiveContext) -> float:
    """How far the crafted directions push the FLTrust aggregate against its clean sign."""
    crafted = np.atleast_2d(np.asarray(crafted, dtype=np.float64))
    return float(ctx.g0_norm * (ctx.s @ (ctx.clean - ctx.poisoned_direction(crafted))))


def zeroth_order_grad(
    h: Callable[[np.ndarray], float],
    e: np.ndarray,
    gamma: float,
    rng: np.random.Generator,
    sigma: float = np.sqrt(0.5),
) -> np.ndarray:
    """Random-direction finite-difference estimate of the gradient of ``h`` at ``e``."""
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    u = sigma * rng.standard_normal(np.shape(e))
    return ((h(e + gamma * u) - h(e)) / gamma) * u


def _unit(v: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v)
    return v / nv if nv > 0 else fallback.copy()


def adaptive_directions(
    g0,
    updates,
    m: int,
    rng: np.random.Generator,
    noise_var: float = 0.5,
    eta: float = 0.01,
    gamma: float = 0.005,
    Q: int = 10,
    V: int = 10,
) -> tuple[np.ndarray, float, float]:
    """Coordinate-ascent search for the malicious unit directions.

    Returns the ``(m, d)`` directions together with the objective value at the
    Trim-attack initialisation and at the end.
    """
    ctx = AdaptiveContext.from_updates(g0, updates, m)
    fallback = -ctx.e0 if ctx.g0_norm > 0 else np.eye(1, len(ctx.e0))[0]
    crafted = np.vstack([_unit(v, fallback) for v in trim_attack(updates, m, rng)])
    h_start = adaptive_objective(crafted, ctx)
    sigma = np.sqrt(noise_var)

    for _ in range(V):
        for i in range(m):
            def h_i(e, i=i):
                trial = crafted.copy()
                trial[i] = e
                return adaptive_objective(trial, ctx)

            for _ in range(Q):
                step = zeroth_order_grad(h_i, crafted[i], gamma, rng, sigma)
                crafted[i] = _unit(crafted[i] + eta * step, crafted[i])
    return crafted, h_start, adaptive_objective(crafted, ctx)


def adaptive_attack(
    g0,
    updates,
    m: int,
    rng: np.random.Generator,
    noise_var: float = 0.5,
    eta: float = 0.01,
    gamma: float = 0.005,
    Q: int = 10,
    V: int = 10,
) -> list[np.ndarray]:
    if m == 0:
        return []
    if min(noise_var, eta, gamma) <= 0 or Q < 1 or V < 1:
        raise ConfigError("adaptive attack parameters must be positive")
    crafted, _, _ = adaptive_directions(g0, updates, m, rng, noise_var, eta, gamma, Q, V)
    n0 = float(np.linalg.norm(np.asarray(g0, dtype=np.float64)))
    return [n0 * e for e in crafted]
