"""Final testing error (and backdoor success) for every aggregation rule under every attack.

Writes a CSV table; one row per (rule, attack, seed). With the defaults this is
5 rules x 6 attacks x 3 seeds of the synthetic benchmark, which takes a while on
one core; pass --rounds to shorten it.

    python3 scripts/rules_vs_attacks.py --out results/table.csv --rounds 200
"""
import argparse
import csv
import sys
from pathlib import Path

from fltrust import aggregation, attacks
from fltrust.config import ExperimentConfig
from fltrust.errors import NumericError
from fltrust.simulation import run_experiment

RULES = [aggregation.FEDAVG, aggregation.KRUM, aggregation.TRIM_MEAN, aggregation.MEDIAN, aggregation.FLTRUST]
ATTACKS = [attacks.NONE, attacks.LABEL_FLIP, attacks.KRUM_ATTACK, attacks.TRIM_ATTACK, attacks.SCALING,
           attacks.ADAPTIVE]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/rules_vs_attacks.csv")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--rounds", type=int, default=500)
    p.add_argument("--rules", default=",".join(RULES))
    p.add_argument("--attacks", default=",".join(ATTACKS))
    args = p.parse_args(argv)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rule", "attack", "seed", "test_err", "attack_success"])
        for rule in args.rules.split(","):
            for attack in args.attacks.split(","):
                if attack == attacks.ADAPTIVE and rule != aggregation.FLTRUST:
                    continue  # the adaptive attack is built against FLTrust only
                for seed in map(int, args.seeds.split(",")):
                    cfg = ExperimentConfig(rule=rule, attack=attack, seed=seed, R_g=args.rounds)
                    try:
                        _, rep = run_experiment(cfg)
                        row = [rule, attack, seed, rep.final_test_error, rep.final_attack_success]
                    except NumericError:
                        row = [rule, attack, seed, "diverged", ""]
                    row = ["" if v is None else v for v in row]
                    writer.writerow(row)
                    fh.flush()
                    print(*row, sep="\t", flush=True)


if __name__ == "__main__":
    sys.exit(main())
