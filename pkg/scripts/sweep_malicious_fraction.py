"""FLTrust vs FedAvg testing error as the fraction of malicious clients grows.

    python3 scripts/sweep_malicious_fraction.py --attack trim_attack --fractions 0,0.1,0.2,0.3,0.4
"""
import argparse
import sys

import numpy as np

from fltrust.config import ExperimentConfig
from fltrust.simulation import run_experiment


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--attack", default="adaptive")
    p.add_argument("--fractions", default="0,0.2,0.4,0.6,0.8,0.9")
    p.add_argument("--rules", default="fltrust,fedavg")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--rounds", type=int, default=500)
    args = p.parse_args(argv)

    seeds = [int(s) for s in args.seeds.split(",")]
    print("rule\tfraction\tmean_test_err\tper_seed")
    for rule in args.rules.split(","):
        attack = args.attack
        if attack == "adaptive" and rule != "fltrust":
            attack = "trim_attack"  # nearest untargeted attack for the other rules
        for frac in map(float, args.fractions.split(",")):
            errs = []
            for seed in seeds:
                cfg = ExperimentConfig(rule=rule, attack=attack if frac > 0 else "none",
                                       m_fraction=frac, seed=seed, R_g=args.rounds)
                errs.append(run_experiment(cfg)[1].final_test_error)
            print(f"{rule}\t{frac}\t{np.mean(errs):.4f}\t{','.join(f'{e:.4f}' for e in errs)}", flush=True)


if __name__ == "__main__":
    sys.exit(main())
