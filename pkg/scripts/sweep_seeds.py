"""Decay rate of the moment perturbation across seeds and epsilon values.

Runs the transport (or parabolic) stability scenario for each seed and
epsilon and prints the fitted rate next to the target ``epsilon gamma``.

    python3 scripts/sweep_seeds.py --seeds 0 1 2 --epsilon 0.5 1.0 --scenario hyperbolic-stability
"""
from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from poresim.experiments import ExperimentConfig, run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description="seed and epsilon sweep")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--epsilon", type=float, nargs="+", default=[1.0])
    ap.add_argument("--scenario", default="hyperbolic-stability",
                    choices=["hyperbolic-stability", "parabolic-stability"])
    ap.add_argument("--n-cells", type=int, default=10000)
    args = ap.parse_args()
    print("seed,epsilon,target,rate,phase")
    with tempfile.TemporaryDirectory() as tmp:
        for eps in args.epsilon:
            for seed in args.seeds:
                cfg = ExperimentConfig(scenario=args.scenario, seed=seed, epsilon=eps,
                                       n_cells=args.n_cells, out=str(Path(tmp) / f"{seed}-{eps}"))
                rep = run_scenario(cfg)
                m = rep["metrics"]
                print(f"{seed},{eps:g},{eps * cfg.gamma:.4g},{m['rate']:.4f},{m['phase']:.4f}")


if __name__ == "__main__":
    main()
