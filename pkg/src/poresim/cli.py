"""Command-line entry point.

    poresim <command> [--config FILE] [--out DIR] [--seed N] [--set key=value ...]

Commands map to scenarios; ``all`` runs every scenario into ``OUT/<scenario>``.
The exit code is 0 iff every acceptance criterion touched passes.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import SCENARIOS, load_config, run_scenario

COMMANDS = {
    "audit": "selfsimilar-audit",
    "transport": "hyperbolic-stability",
    "parabolic": "parabolic-stability",
    "volterra": "volterra-vs-sim",
    "xy": "xy-lemma",
    "barrier": "barrier-audit",
    "full": "full-reduction",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poresim", description="Pore-density stability experiments")
    p.add_argument("command", choices=[*COMMANDS, "all"])
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--out", type=Path, help="output directory (default runs/<scenario>)")
    p.add_argument("--seed", type=int, help="seed for the perturbation phase")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    return p


def _overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    over = _overrides(args.overrides)
    if args.seed is not None:
        over["seed"] = str(args.seed)
    scenarios = list(SCENARIOS) if args.command == "all" else [COMMANDS[args.command]]
    ok = True
    for sc in scenarios:
        kw = {"scenario": sc}
        if args.out is not None:
            kw["out"] = str(args.out / sc if args.command == "all" else args.out)
        try:
            cfg = load_config(args.config, over, **kw)
            report = run_scenario(cfg)
        except Exception as exc:  # report and keep going with the other scenarios
            print(f"{sc}: ABORTED ({type(exc).__name__}: {exc})", file=sys.stderr)
            ok = False
            continue
        for key, crit in report["criteria"].items():
            print(f"{sc}: criterion {key} {'PASS' if crit['pass'] else 'FAIL'}")
        ok &= bool(report["passed"])
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
