"""Experiment configuration: a flat JSON vocabulary mirroring the FL system parameters.

Keys: ``n, tau, R_g, R_l, b, lr, q, root_size, bias_probability, rule,
variant, attack, m_fraction, seed`` plus a few desk-scale extras (dataset,
model, trigger and attack knobs). ``resolved`` expands every derived default
(tau = n, f = k = m, scaling lambda = n) so a resolved dict reproduces a run
on its own.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import aggregation, attacks, data
from .errors import ConfigError
from .model import LOGISTIC, MLP, ModelSpec

DEFAULT_DATASET = {
    "kind": "synthetic",
    "num_classes": 10,
    "input_dim": 32,
    "per_class": 200,
    "spread": 0.3,
    "test_per_class": 100,
}

# Noise-only coordinates of the synthetic blobs, set to a value no clean example reaches.
DEFAULT_TRIGGER = {"indices": [28, 29, 30, 31], "values": [4.0], "target_label": 0}


@dataclass
class ExperimentConfig:
    n: int = 20
    tau: int | None = None
    R_g: int = 500
    R_l: int = 1
    b: int = 32
    lr: float = 0.02
    local_lr: float = 1.0
    q: float = 0.5
    root_size: int | None = 100
    root_case: str = data.CASE_I
    bias_probability: float = 0.1
    biased_class: int = 1
    rule: str = aggregation.FLTRUST
    variant: str = aggregation.STANDARD
    f: int | None = None
    k: int | None = None
    attack: str = attacks.NONE
    m_fraction: float = 0.2
    scaling_p: float = 0.5
    scaling_lambda: float | None = None
    trigger: dict | None = None
    noise_var: float = 0.5
    gamma: float = 0.005
    eta: float = 0.01
    Q: int = 10
    V: int = 10
    krum_floor: float = 1e-5
    trim_width_scale: float = 1.0
    model: str = LOGISTIC
    hidden_dim: int = 32
    init_scale: float = 0.01
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    seed: int = 1
    eval_stride: int = 1
    error_threshold: float = 0.1

    # -- derived values ---------------------------------------------------------

    @property
    def m(self) -> int:
        return int(np.floor(self.m_fraction * self.n + 0.5))

    @property
    def clients_per_round(self) -> int:
        return self.n if self.tau is None else self.tau

    @property
    def global_lr(self) -> float:
        return self.lr / self.local_lr

    def aggregator(self) -> aggregation.AggregatorConfig:
        f = self.m if self.f is None else self.f
        k = self.m if self.k is None else self.k
        return aggregation.AggregatorConfig(self.rule, f, k, self.variant)

    def trigger_spec(self, input_dim: int | None = None) -> data.TriggerSpec:
        raw = DEFAULT_TRIGGER if self.trigger is None else self.trigger
        target = int(raw.get("target_label", 0))
        if "every" in raw:
            if input_dim is None:
                input_dim = int(self.dataset.get("input_dim", 0))
            return data.TriggerSpec.every_kth(input_dim, int(raw["every"]), float(raw.get("value", 0.0)), target)
        values = raw.get("values", [raw.get("value", 0.0)])
        return data.TriggerSpec(tuple(int(i) for i in raw.get("indices", [])),
                                tuple(float(v) for v in values), target)

    def attack_config(self, input_dim: int | None = None) -> attacks.AttackConfig:
        return attacks.AttackConfig(
            kind=self.attack,
            m=self.m if self.attack != attacks.NONE else 0,
            scaling_p=self.scaling_p,
            scaling_lambda=self.scaling_lambda,
            trigger=self.trigger_spec(input_dim),
            krum_floor=self.krum_floor,
            trim_width_scale=self.trim_width_scale,
            noise_var=self.noise_var,
            gamma=self.gamma,
            eta=self.eta,
            Q=self.Q,
            V=self.V,
        )

    def root_config(self, seed: int) -> data.RootConfig:
        return data.RootConfig(int(self.root_size), self.root_case, self.bias_probability,
                               self.biased_class, seed)

    def model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        hidden = self.hidden_dim if self.model == MLP else 0
        return ModelSpec(self.model, input_dim, num_classes, hidden)

    @property
    def uses_trigger(self) -> bool:
        return self.attack == attacks.SCALING

    # -- validation -------------------------------------------------------------

    def validate(self) -> None:
        """Raise ConfigError naming the offending key for any inconsistency."""
        for key in ("n", "R_g", "R_l", "b", "Q", "V", "eval_stride"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if not 1 <= self.clients_per_round <= self.n:
            raise ConfigError(f"tau: must satisfy 1 <= tau <= n, got {self.tau}")
        if self.lr <= 0 or self.local_lr <= 0:
            raise ConfigError("lr: learning rates must be positive")
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"q: must lie in (0, 1], got {self.q}")
        if not 0.0 <= self.m_fraction <= 1.0:
            raise ConfigError(f"m_fraction: must lie in [0, 1], got {self.m_fraction}")
        if self.model not in (LOGISTIC, MLP):
            raise ConfigError(f"model: unknown model {self.model!r}")
        agg = self.aggregator()
        agg.validate(self.clients_per_round)
        atk = self.attack_config()
        atk.validate(self.n)
        if agg.needs_root:
            if self.root_size is None or int(self.root_size) < 1:
                raise ConfigError("root_size: FLTrust requires a root dataset (root_size >= 1)")
            self.root_config(0)
        if self.attack == attacks.ADAPTIVE and self.rule != aggregation.FLTRUST:
            raise ConfigError("attack: the adaptive attack targets rule='fltrust' only")
        if self.attack == attacks.KRUM_ATTACK:
            aggregation.AggregatorConfig(aggregation.KRUM, agg.f).validate(self.clients_per_round)
        if not isinstance(self.dataset, dict) or self.dataset.get("kind") not in ("synthetic", "csv", "idx"):
            raise ConfigError("dataset.kind: must be one of synthetic, csv, idx")

    # -- (de)serialisation ----------------------------------------------------------

    def resolved(self) -> dict:
        out = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}
        out["tau"] = self.clients_per_round
        agg = self.aggregator()
        out["f"], out["k"] = agg.f, agg.k
        if out["scaling_lambda"] is None:
            out["scaling_lambda"] = float(self.n)
        if out["trigger"] is None:
            out["trigger"] = copy.deepcopy(DEFAULT_TRIGGER)
        if out["dataset"].get("kind") == "synthetic":
            out["dataset"] = {**DEFAULT_DATASET, **out["dataset"]}
        return out


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def from_dict(raw: dict) -> ExperimentConfig:
    if "config" in raw and isinstance(raw["config"], dict):  # a run manifest
        raw = raw["config"]
    unknown = sorted(set(raw) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown configuration key")
    try:
        cfg = ExperimentConfig(**copy.deepcopy(raw))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.dataset.get("kind", "synthetic") == "synthetic":
        cfg.dataset = {**DEFAULT_DATASET, **cfg.dataset}
    cfg.validate()
    return cfg


def load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    return raw


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` strings; dotted keys reach into nested dicts."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override: expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        target = out
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"{key}: cannot set a field inside a non-object")
        target[parts[-1]] = parse_value(value)
    return out


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
