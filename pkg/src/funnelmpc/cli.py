"""Command-line front end.

    funnelmpc run <config> [--seed N]
    funnelmpc compare <cfgA> <cfgB> --metric <m> [--seed N]
    funnelmpc sweep <config> --param section.key --values v1,v2,... [--seed N]
    funnelmpc list

Outputs go to ``$FUNNELMPC_OUTPUT_ROOT/<scenario name>`` (default root:
``./funnelmpc_out``).  A config argument is either a path or the name of a
shipped scenario.  Exit status: 0 success, 1 configuration error,
2 infeasibility or runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .config import load_scenario
from .errors import ConfigError, IncomparableScenarios
from .experiments import METRICS, compare_scenarios, run_scenario, sweep_scenario

OUTPUT_ROOT_ENV = "FUNNELMPC_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "funnelmpc_out"

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def shipped_scenarios():
    """Names of the scenario files bundled with the package."""
    root = resources.files("funnelmpc") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_config(arg):
    path = Path(arg)
    if path.exists():
        return path
    if arg in shipped_scenarios():
        return Path(str(resources.files("funnelmpc") / "scenarios" / f"{arg}.ini"))
    raise ConfigError(f"no such file or shipped scenario: {arg}")


def _load(arg, seed):
    sc = load_scenario(resolve_config(arg))
    if seed is not None:
        sc = dataclasses.replace(sc, seed=seed)
    return sc


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def build_parser():
    p = argparse.ArgumentParser(prog="funnelmpc", description="Funnel control and Funnel-MPC experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def seed_opt(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    sp = sub.add_parser("run", help="run one scenario")
    sp.add_argument("config")
    seed_opt(sp)

    sp = sub.add_parser("compare", help="run two scenarios and compare a metric")
    sp.add_argument("config_a")
    sp.add_argument("config_b")
    sp.add_argument("--metric", required=True, choices=METRICS)
    seed_opt(sp)

    sp = sub.add_parser("sweep", help="run a scenario for several values of one setting")
    sp.add_argument("config")
    sp.add_argument("--param", required=True, help="setting as section.key, e.g. zoh.tau")
    sp.add_argument("--values", required=True,
                    help="values separated by ';' (or ',' when each value is a single number)")
    seed_opt(sp)

    sub.add_parser("list", help="list shipped scenarios")
    return p


def _split_values(text):
    sep = ";" if ";" in text else ","
    vals = [v.strip() for v in text.split(sep) if v.strip()]
    if not vals:
        raise ConfigError("no values given", field="values")
    return vals


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            print("\n".join(shipped_scenarios()))
            return EXIT_OK
        root = output_root()
        if args.command == "run":
            sc = _load(args.config, args.seed)
            res = run_scenario(sc, root / sc.name)
            print(f"{sc.name}: status {res.status}, outputs in {res.out_dir}")
            return res.status
        if args.command == "compare":
            sa, sb = _load(args.config_a, args.seed), _load(args.config_b, args.seed)
            status, row, path = compare_scenarios(sa, sb, args.metric, root)
            print(f"{row['metric']}: {row['scenario_a']}={row['value_a']} "
                  f"{row['scenario_b']}={row['value_b']} ratio={row['ratio']} ({path})")
            return status
        if args.command == "sweep":
            sc = _load(args.config, args.seed)
            status, _, path = sweep_scenario(sc, args.param, _split_values(args.values), root)
            print(f"{sc.name}: sweep over {args.param}, status {status}, summary in {path}")
            return status
    except (ConfigError, IncomparableScenarios) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
