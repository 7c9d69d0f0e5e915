"""Datasets, non-IID partitioning, root-dataset sampling and poisoning helpers."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

SEPARATION = 4.0
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ConfigError(f"features must be a 2-D array, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ConfigError("features and labels differ in length")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ConfigError("label out of range")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    @classmethod
    def empty(cls, input_dim: int, num_classes: int) -> "Dataset":
        return cls(np.empty((0, input_dim)), np.empty(0, dtype=np.int64), num_classes)


def concat(datasets: list[Dataset]) -> Dataset:
    if not datasets:
        raise ConfigError("nothing to concatenate")
    M = datasets[0].num_classes
    return Dataset(
        np.vstack([d.X for d in datasets]), np.concatenate([d.y for d in datasets]), M
    )


def generate_synthetic(
    num_classes: int = 10,
    input_dim: int = 32,
    per_class: int = 200,
    spread: float = 0.3,
    seed: int = 0,
    separation: float = SEPARATION,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, centred at ``separation * e_(c mod input_dim)``."""
    if num_classes < 2 or per_class < 1 or input_dim < 1:
        raise ConfigError("synthetic data needs num_classes >= 2, per_class >= 1, input_dim >= 1")
    if spread < 0:
        raise ConfigError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(num_classes), per_class)
    means = np.zeros((num_classes, input_dim))
    means[np.arange(num_classes), np.arange(num_classes) % input_dim] = separation
    X = means[y] + spread * rng.standard_normal((len(y), input_dim))
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order], num_classes)


# -- on-disk formats ---------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_header(raw: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(raw) < need:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    return struct.unpack(f">{ndims}I", raw[4:need])


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels are scaled to [0, 1]."""
    with _open(images_path) as fh:
        img_raw = fh.read()
    with _open(labels_path) as fh:
        lab_raw = fh.read()

    count, rows, cols = _read_header(img_raw, IDX_IMAGES_MAGIC, 3, images_path)
    (n_labels,) = _read_header(lab_raw, IDX_LABELS_MAGIC, 1, labels_path)
    if count != n_labels:
        raise FormatError(
            f"{images_path} holds {count} images but {labels_path} holds {n_labels} labels",
            offset=4,
        )
    body = count * rows * cols
    if len(img_raw) < 16 + body:
        raise FormatError(f"{images_path}: truncated pixel data", offset=len(img_raw))
    if len(lab_raw) < 8 + count:
        raise FormatError(f"{labels_path}: truncated label data", offset=len(lab_raw))

    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=body, offset=16)
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=count, offset=8)
    if count and labels.max() >= num_classes:
        raise FormatError(
            f"{labels_path}: label {labels.max()} exceeds num_classes={num_classes}",
            offset=8 + int(np.argmax(labels >= num_classes)),
        )
    X = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), num_classes)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(dataset.input_dim)] + ["label"])
        for row, label in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read a ``f0,...,f{k-1},label`` CSV; ``num_classes`` defaults to max label + 1."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[-1] != "label":
            raise FormatError(f"{path}: last header column must be 'label'")
        rows = [r for r in reader if r]
    k = len(header) - 1
    try:
        X = np.array([[float(v) for v in r[:k]] for r in rows], dtype=np.float64).reshape(-1, k)
        y = np.array([int(r[k]) for r in rows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if num_classes is None:
        num_classes = max(int(y.max()) + 1 if len(y) else 2, 2)
    return Dataset(X, y, num_classes)


# -- partitioning --------------------------------------------------------------

@dataclass(frozen=True)
class PartitionConfig:
    n: int
    q: float
    seed: int = 0


def group_sizes(n: int, num_groups: int) -> list[int]:
    base, extra = divmod(n, num_groups)
    return [base + 1 if g < extra else base for g in range(num_groups)]


def partition(dataset: Dataset, cfg: PartitionConfig) -> list[Dataset]:
    """Split ``dataset`` over ``cfg.n`` clients with own-label group probability ``cfg.q``.

    Clients are shuffled into M groups (the first ``n mod M`` groups hold one
    extra client). Each example goes to its label's group with probability q
    and to each other group with probability (1-q)/(M-1), then to a uniformly
    chosen client of that group.
    """
    M = dataset.num_classes
    if cfg.n < M:
        raise ConfigError(f"n={cfg.n} clients cannot form {M} non-empty groups")
    if not 0.0 < cfg.q <= 1.0:
        raise ConfigError(f"q must lie in (0, 1], got {cfg.q}")
    rng = np.random.default_rng(cfg.seed)

    clients = rng.permutation(cfg.n)
    bounds = np.cumsum([0] + group_sizes(cfg.n, M))
    groups = [clients[bounds[g] : bounds[g + 1]] for g in range(M)]

    N = len(dataset)
    own = rng.random(N) < cfg.q
    other = rng.integers(0, M - 1, size=N)
    other = other + (other >= dataset.y)
    group_of = np.where(own, dataset.y, other)
    pick = rng.random(N)
    sizes = np.array([len(g) for g in groups])
    member = np.floor(pick * sizes[group_of]).astype(np.int64)
    owner = np.array([groups[g][j] for g, j in zip(group_of, member)], dtype=np.int64)

    return [dataset.subset(np.flatnonzero(owner == c)) for c in range(cfg.n)]


# -- root dataset ----------------------------------------------------------------

CASE_I = "case1"
CASE_II = "case2"


@dataclass(frozen=True)
class RootConfig:
    size: int = 100
    case: str = CASE_I
    bias_probability: float = 0.1
    biased_class: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("root_size must be >= 1")
        if self.case not in (CASE_I, CASE_II):
            raise ConfigError(f"root_case: unknown case {self.case!r}")
        if not 0.0 <= self.bias_probability <= 1.0:
            raise ConfigError("bias_probability must lie in [0, 1]")


def biased_count(bias_probability: float, size: int) -> int:
    # round half up
    return int(np.floor(bias_probability * size + 0.5))


def sample_root(dataset: Dataset, cfg: RootConfig) -> tuple[Dataset, Dataset]:
    """Draw the server's root dataset and return it with the disjoint remainder."""
    N = len(dataset)
    if cfg.size > N:
        raise ConfigError(f"root_size={cfg.size} exceeds dataset size {N}")
    rng = np.random.default_rng(cfg.seed)
    if cfg.case == CASE_I:
        chosen = rng.choice(N, size=cfg.size, replace=False)
    else:
        if not 0 <= cfg.biased_class < dataset.num_classes:
            raise ConfigError("biased_class out of range")
        k = biased_count(cfg.bias_probability, cfg.size)
        pool_in = np.flatnonzero(dataset.y == cfg.biased_class)
        pool_out = np.flatnonzero(dataset.y != cfg.biased_class)
        if k > len(pool_in) or cfg.size - k > len(pool_out):
            raise ConfigError(
                f"not enough examples for a Case II root of size {cfg.size} "
                f"({k} from class {cfg.biased_class})"
            )
        chosen = np.concatenate([
            rng.choice(pool_in, size=k, replace=False),
            rng.choice(pool_out, size=cfg.size - k, replace=False),
        ])
    mask = np.zeros(N, dtype=bool)
    mask[chosen] = True
    return dataset.subset(np.sort(chosen)), dataset.subset(np.flatnonzero(~mask))


# -- poisoning helpers ----------------------------------------------------------------

def flip_label(label, num_classes: int):
    """Map label ``l`` to ``M - l - 1``; works elementwise on arrays."""
    arr = np.asarray(label)
    if np.any(arr < 0) or np.any(arr >= num_classes):
        raise ConfigError(f"label out of range for {num_classes} classes")
    out = num_classes - arr - 1
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TriggerSpec:
    indices: tuple[int, ...] = field(default_factory=tuple)
    values: tuple[float, ...] = field(default_factory=tuple)
    target_label: int = 0

    def __post_init__(self):
        if len(self.values) not in (len(self.indices), 1) and self.indices:
            raise ConfigError("trigger values must match indices or be a single value")

    @classmethod
    def every_kth(cls, input_dim: int, k: int, value: float = 0.0, target_label: int = 0):
        return cls(tuple(range(0, input_dim, k)), (value,), target_label)

    def validate(self, input_dim: int, num_classes: int) -> None:
        if any(i < 0 or i >= input_dim for i in self.indices):
            raise ConfigError(f"trigger index out of range for input_dim={input_dim}")
        if not 0 <= self.target_label < num_classes:
            raise ConfigError("trigger target_label out of range")


def embed_trigger(dataset: Dataset, trigger: TriggerSpec, relabel: bool = True) -> Dataset:
    """Copy ``dataset`` with trigger features overwritten; labels become the target if ``relabel``."""
    trigger.validate(dataset.input_dim, dataset.num_classes)
    X = dataset.X.copy()
    if trigger.indices:
        idx = list(trigger.indices)
        X[:, idx] = np.broadcast_to(np.asarray(trigger.values, dtype=np.float64), (len(X), len(idx)))
    y = np.full_like(dataset.y, trigger.target_label) if relabel else dataset.y.copy()
    return Dataset(X, y, dataset.num_classes)


def target_test_set(test: Dataset, trigger: TriggerSpec) -> Dataset:
    """Trigger-embedded test examples whose true label differs from the target (true labels kept)."""
    keep = test.subset(np.flatnonzero(test.y != trigger.target_label))
    return embed_trigger(keep, trigger, relabel=False)
