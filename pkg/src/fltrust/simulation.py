"""The federated training loop, evaluation metrics and runtime diagnostics.

Randomness: every random choice draws from its own generator seeded by
``numpy.random.SeedSequence([seed, tag, *keys])``. SeedSequence hashes the
words into 64-bit-mixed state, so client ``c`` in round ``r`` always sees the
same stream regardless of which other clients were sampled, of evaluation
order or of parallelism.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import aggregation, attacks, data
from .config import DEFAULT_DATASET, ExperimentConfig
from .data import Dataset
from .errors import ConfigError, NumericError
from .model import ModelSpec, gradient, init_params, model_update, predict_labels

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12

TAG_INIT = 0
TAG_DATA = 1
TAG_ROOT = 2
TAG_PARTITION = 3
TAG_SAMPLE = 4
TAG_CLIENT = 5
TAG_ATTACK = 6
TAG_AUGMENT = 7


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def derived_seed(seed: int, *keys: int) -> int:
    return int(stream(seed, *keys).integers(0, 2**63))


# -- metrics -----------------------------------------------------------------

def testing_error_rate(spec: ModelSpec, w: np.ndarray, test: Dataset) -> float:
    if len(test) == 0:
        raise ConfigError("testing error rate of an empty test set")
    return float(np.mean(predict_labels(spec, w, test.X) != test.y))


def attack_success_rate(spec: ModelSpec, w: np.ndarray, target_set: Dataset, target_label: int) -> float:
    if len(target_set) == 0:
        raise ConfigError("attack success rate of an empty target set")
    return float(np.mean(predict_labels(spec, w, target_set.X) == target_label))


def distance_bound_check(updates, g0, full_gradient, tol: float = 1e-9) -> tuple[float, float, bool]:
    """Distance of the FLTrust aggregate from the full-data gradient against its bound.

    All vectors are gradients (or all are updates); the bound is
    ``3 ||g0 - grad F|| + 2 ||grad F||``.
    """
    g = aggregation.fltrust_aggregate(updates, g0)
    full_gradient = np.asarray(full_gradient, dtype=np.float64)
    lhs = float(np.linalg.norm(g - full_gradient))
    rhs = float(3 * np.linalg.norm(np.asarray(g0) - full_gradient) + 2 * np.linalg.norm(full_gradient))
    return lhs, rhs, lhs <= rhs + tol


def convergence_probe(history, threshold: float = 0.1) -> dict:
    """First (1-based) round whose training error is below ``threshold`` and the final plateau.

    ``history`` holds either plain error values or RoundRecords; unevaluated
    rounds (None) are skipped. ``rounds_to_threshold`` is None when never reached.
    """
    values = [getattr(h, "train_err", h) for h in history]
    if not values:
        raise ConfigError("empty history")
    reached = next((i + 1 for i, v in enumerate(values) if v is not None and v < threshold), None)
    seen = [v for v in values if v is not None]
    tail = seen[-max(1, math.ceil(0.1 * len(seen))):] if seen else []
    plateau = float(np.mean(tail)) if tail else float("nan")
    return {"rounds_to_threshold": reached, "plateau": plateau}


# -- records -----------------------------------------------------------------

@dataclass
class RoundRecord:
    round: int
    train_err: float | None
    test_err: float | None
    attack_success: float | None
    g_norm: float
    g0_norm: float | None
    trust_sum: float | None


@dataclass
class MetricsReport:
    final_test_error: float
    final_train_error: float
    final_attack_success: float | None
    history: list[RoundRecord] = field(default_factory=list)
    convergence: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "final_test_error": self.final_test_error,
            "final_train_error": self.final_train_error,
            "rounds": len(self.history),
            "convergence": self.convergence,
        }
        if self.final_attack_success is not None:
            out["attack_success"] = self.final_attack_success
        return out


# -- setup -------------------------------------------------------------------

def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    kind = ds.get("kind")
    if kind == "synthetic":
        ds = {**DEFAULT_DATASET, **ds}
        gen = {k: ds[k] for k in ("num_classes", "input_dim", "spread")}
        train_seed = ds.get("seed", derived_seed(cfg.seed, TAG_DATA, 0))
        test_seed = ds.get("test_seed", derived_seed(cfg.seed, TAG_DATA, 1))
        train = data.generate_synthetic(per_class=ds["per_class"], seed=train_seed, **gen)
        test = data.generate_synthetic(per_class=ds["test_per_class"], seed=test_seed, **gen)
        return train, test
    if kind == "csv":
        M = ds.get("num_classes")
        return data.load_csv(ds["train"], M), data.load_csv(ds["test"], M)
    if kind == "idx":
        M = ds.get("num_classes", 10)
        return (data.load_idx(ds["train_images"], ds["train_labels"], M),
                data.load_idx(ds["test_images"], ds["test_labels"], M))
    raise ConfigError(f"dataset.kind: unknown dataset kind {kind!r}")


@dataclass
class Federation:
    """Everything fixed before round 1."""

    spec: ModelSpec
    clients: list[Dataset]  # what each client trains on (poisoned for label flipping / scaling)
    sizes: np.ndarray
    root: Dataset | None
    clean_train: Dataset
    test: Dataset
    target_set: Dataset | None
    w0: np.ndarray


def build_federation(cfg: ExperimentConfig, train: Dataset | None = None, test: Dataset | None = None) -> Federation:
    cfg.validate()
    if train is None or test is None:
        train, test = load_datasets(cfg)
    if train.input_dim != test.input_dim or train.num_classes != test.num_classes:
        raise ConfigError("dataset: train and test sets disagree in shape")
    spec = cfg.model_spec(train.input_dim, train.num_classes)
    agg = cfg.aggregator()
    atk = cfg.attack_config(train.input_dim)

    root = None
    pool = train
    if agg.needs_root:
        root, pool = data.sample_root(train, cfg.root_config(derived_seed(cfg.seed, TAG_ROOT)))
    shards = data.partition(pool, data.PartitionConfig(cfg.n, cfg.q, derived_seed(cfg.seed, TAG_PARTITION)))
    empty = [i for i, s in enumerate(shards) if len(s) == 0]
    if empty:
        raise ConfigError(f"n: client {empty[0]} received no training data; use fewer clients or more data")
    clean_train = data.concat(shards)

    clients = list(shards)
    if atk.active and atk.kind == attacks.LABEL_FLIP:
        for i in range(atk.m):
            clients[i] = attacks.label_flip_poison(shards[i])
    target_set = None
    if cfg.uses_trigger:
        atk.trigger.validate(train.input_dim, train.num_classes)
        target_set = data.target_test_set(test, atk.trigger)
        if atk.active:
            for i in range(atk.m):
                clients[i] = attacks.augment_with_trigger(
                    shards[i], atk.trigger, atk.scaling_p, stream(cfg.seed, TAG_AUGMENT, i)
                )

    w0 = init_params(spec, stream(cfg.seed, TAG_INIT), cfg.init_scale)
    sizes = np.array([len(s) for s in shards], dtype=np.float64)
    return Federation(spec, clients, sizes, root, clean_train, test, target_set, w0)


# -- the loop ----------------------------------------------------------------

def sample_clients(cfg: ExperimentConfig, round_index: int) -> np.ndarray:
    if cfg.clients_per_round == cfg.n:
        return np.arange(cfg.n)
    rng = stream(cfg.seed, TAG_SAMPLE, round_index)
    return np.sort(rng.choice(cfg.n, size=cfg.clients_per_round, replace=False))


def round_updates(cfg: ExperimentConfig, fed: Federation, w: np.ndarray, round_index: int):
    """Client updates (after any model poisoning) and the server update for one round."""
    atk = cfg.attack_config(fed.spec.input_dim)
    chosen = sample_clients(cfg, round_index)
    step = cfg.local_lr
    updates = []
    for c in chosen:
        rng = stream(cfg.seed, TAG_CLIENT, round_index, c)
        g = model_update(fed.spec, w, fed.clients[c], cfg.b, step, cfg.R_l, rng)
        if atk.active and atk.kind == attacks.SCALING and c < atk.m:
            g = (atk.scaling_lambda or float(cfg.n)) * g
        updates.append(g)
    U = np.vstack(updates)

    g0 = None
    if fed.root is not None:
        rng = stream(cfg.seed, TAG_CLIENT, round_index, cfg.n)
        g0 = model_update(fed.spec, w, fed.root, cfg.b, step, cfg.R_l, rng)

    # chosen is sorted, so the attacker's clients occupy the first rows
    m_round = int(np.sum(chosen < atk.m)) if atk.active else 0
    if m_round:
        rng = stream(cfg.seed, TAG_ATTACK, round_index)
        if atk.kind == attacks.KRUM_ATTACK:
            crafted = attacks.krum_attack(U, m_round, cfg.aggregator().f, atk.krum_floor)
        elif atk.kind == attacks.TRIM_ATTACK:
            crafted = attacks.trim_attack(U, m_round, rng, atk.trim_width_scale)
        elif atk.kind == attacks.ADAPTIVE:
            crafted = attacks.adaptive_attack(
                g0, U, m_round, rng, atk.noise_var, atk.eta, atk.gamma, atk.Q, atk.V
            )
        else:
            crafted = []
        if crafted:
            U = U.copy()
            U[:m_round] = np.vstack(crafted)
    return chosen, U, g0


def run_experiment(cfg: ExperimentConfig, train: Dataset | None = None, test: Dataset | None = None,
                   progress=None) -> tuple[np.ndarray, MetricsReport]:
    """Train a global model under ``cfg`` and return it with its metrics history."""
    fed = build_federation(cfg, train, test)
    agg = cfg.aggregator()
    alpha = cfg.global_lr
    target = cfg.trigger_spec(fed.spec.input_dim).target_label
    w = fed.w0.copy()
    history: list[RoundRecord] = []

    for r in range(1, cfg.R_g + 1):
        try:
            chosen, U, g0 = round_updates(cfg, fed, w, r)
        except NumericError as exc:
            raise NumericError(str(exc), round_index=r) from None
        g, info = aggregation.aggregate(agg, U, fed.sizes[chosen], g0)
        w = aggregation.update_global(w, g, alpha)
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > DIVERGENCE_LIMIT:
            raise NumericError("global model diverged", round_index=r)

        evaluate = r % cfg.eval_stride == 0 or r == cfg.R_g
        record = RoundRecord(
            round=r,
            train_err=testing_error_rate(fed.spec, w, fed.clean_train) if evaluate else None,
            test_err=testing_error_rate(fed.spec, w, fed.test) if evaluate else None,
            attack_success=(attack_success_rate(fed.spec, w, fed.target_set, target)
                            if evaluate and fed.target_set is not None else None),
            g_norm=float(np.linalg.norm(g)),
            g0_norm=None if g0 is None else float(np.linalg.norm(g0)),
            trust_sum=float(np.sum(info["trust"])) if "trust" in info else None,
        )
        history.append(record)
        if progress is not None:
            progress(record)

    last = history[-1]
    report = MetricsReport(
        final_test_error=last.test_err,
        final_train_error=last.train_err,
        final_attack_success=last.attack_success,
        history=history,
        convergence=convergence_probe(history, cfg.error_threshold),
    )
    return w, report


def record_dict(record: RoundRecord) -> dict:
    return asdict(record)


def full_gradient(spec: ModelSpec, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    return gradient(spec, w, dataset.X, dataset.y)
