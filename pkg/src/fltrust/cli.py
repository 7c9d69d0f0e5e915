"""Command line: ``fltrust run | sweep | verify | gen-data``.

Exit codes: 0 success, 1 invalid input, 2 training diverged, 3 invariant failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, config, data, simulation, verify
from .errors import ConfigError, FormatError, NumericError

log = logging.getLogger("fltrust")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_DIVERGED = 2
EXIT_INVARIANT = 3

HISTORY_COLUMNS = ["round", "train_err", "test_err", "attack_success", "g_norm", "g0_norm", "trust_sum"]
SWEEP_COLUMNS = ["axis", "value", "seed", "test_err", "attack_success", "status"]
SWEEP_AXES = {
    "malicious_fraction": "m_fraction",
    "root_size": "root_size",
    "bias_probability": "bias_probability",
    "q": "q",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_history(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([_fmt(getattr(rec, c)) for c in HISTORY_COLUMNS])


def resolve_config(path, overrides=(), seed=None, shortcuts=None) -> config.ExperimentConfig:
    raw = config.load(path) if path else {}
    raw = config.apply_overrides(raw, list(overrides))
    for key, value in (shortcuts or {}).items():
        if value is not None:
            raw[key] = value
    if seed is not None:
        raw["seed"] = seed
    return config.from_dict(raw)


def execute(cfg: config.ExperimentConfig, out: Path) -> dict:
    """Run one experiment and write history.csv, summary.json and manifest.json into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    _, report = simulation.run_experiment(cfg)
    artifacts = {"history": "history.csv", "summary": "summary.json", "manifest": "manifest.json"}
    manifest = {
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "artifacts": artifacts,
        "version": __version__,
    }
    write_history(report.history, out / artifacts["history"])
    summary = report.summary()
    summary["manifest"] = manifest
    config.write_json(summary, out / artifacts["summary"])
    config.write_json(manifest, out / artifacts["manifest"])
    return summary


# -- subcommands ------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_config(args.config, args.override, args.seed,
                         {"attack": args.attack, "rule": args.rule, "variant": args.variant})
    summary = execute(cfg, Path(args.out))
    line = f"test_err={summary['final_test_error']:.4f}"
    if "attack_success" in summary:
        line += f" attack_success={summary['attack_success']:.4f}"
    print(f"{line} -> {args.out}")
    return EXIT_OK


def _sweep_point(job):
    raw, axis, value, seed, out = job
    point = dict(raw)
    point[SWEEP_AXES[axis]] = value
    if axis == "bias_probability":
        point["root_case"] = data.CASE_II
    point["seed"] = seed
    try:
        cfg = config.from_dict(point)
        summary = execute(cfg, Path(out))
    except NumericError as exc:
        return [axis, value, seed, "", "", f"diverged: {exc}"]
    return [axis, value, seed, summary["final_test_error"], summary.get("attack_success"), "ok"]


def _parse_values(axis: str, text: str) -> list:
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            v = int(token) if axis == "root_size" else float(token)
        except ValueError:
            raise ConfigError(f"values: {token!r} is not a number") from None
        values.append(v)
    if not values:
        raise ConfigError("values: no sweep values given")
    return values


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"axis: must be one of {', '.join(SWEEP_AXES)}")
    values = _parse_values(args.axis, args.values)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    raw = config.apply_overrides(config.load(args.config) if args.config else {}, list(args.override))
    if args.seed is not None:
        raw["seed"] = args.seed
    seeds = seeds or [config.from_dict(raw).seed]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, value in enumerate(values):
        for seed in seeds:
            probe = dict(raw, **{SWEEP_AXES[args.axis]: value, "seed": seed})
            if args.axis == "bias_probability":
                probe["root_case"] = data.CASE_II
            config.from_dict(probe)  # reject bad points before any training
            jobs.append((raw, args.axis, value, seed, str(out / f"point{i:03d}_seed{seed}")))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]

    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            print(" ".join(_fmt(v) for v in row))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all(trials=args.trials, seed=args.seed or 0, gradient_trials=args.gradient_trials)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.trials} trials, {r.failures} failures, worst={r.worst:.3g}")
    if failed:
        print("invariant failure: " + ", ".join(r.name for r in failed))
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.kind == "synthetic":
        ds = data.generate_synthetic(args.num_classes, args.input_dim, args.per_class, args.spread, args.seed or 0)
    else:
        if not args.images or not args.labels:
            raise ConfigError("idx-convert needs --images and --labels")
        try:
            ds = data.load_idx(args.images, args.labels, args.num_classes)
        except OSError as exc:
            raise ConfigError(f"cannot read {exc.filename}: {exc.strerror}") from None
    try:
        data.save_csv(ds, args.out)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {len(ds)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fltrust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default):
        p.add_argument("--config", help="JSON config or a manifest.json from an earlier run")
        p.add_argument("--out", default=out_default)
        p.add_argument("--seed", type=int)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("run", help="run one experiment")
    common(p, "results/run")
    p.add_argument("--attack")
    p.add_argument("--rule")
    p.add_argument("--variant")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per value of an axis")
    common(p, "results/sweep")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the randomized invariant suites")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--gradient-trials", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-data", help="write a CSV dataset")
    p.add_argument("kind", choices=["synthetic", "idx-convert"])
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--input-dim", type=int, default=32)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--spread", type=float, default=0.3)
    p.add_argument("--seed", type=int)
    p.add_argument("--images")
    p.add_argument("--labels")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
