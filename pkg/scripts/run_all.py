"""Run every scenario and print a one-line summary per acceptance criterion.

    python3 scripts/run_all.py [--out runs] [--seed 0] [--config configs/default.ini]
"""
from __future__ import annotations

import argparse
import time
from pathlib import Path

from poresim.experiments import SCENARIOS, load_config, run_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", type=Path)
    args = ap.parse_args()
    ok = True
    for sc in SCENARIOS:
        start = time.perf_counter()
        rep = run_scenario(load_config(args.config, scenario=sc, seed=args.seed, out=str(args.out / sc)))
        dt = time.perf_counter() - start
        for k, crit in sorted(rep["criteria"].items(), key=lambda kv: int(kv[0])):
            print(f"criterion {k:>2} {'PASS' if crit['pass'] else 'FAIL'}  {sc}  ({dt:.1f}s)")
        ok &= rep["passed"]
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
