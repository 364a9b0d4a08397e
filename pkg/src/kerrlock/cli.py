"""Command-line entry point.

Exit codes: 0 success, 1 unexpected error or failed cross-check,
2 configuration error, 3 steady state not converged, 4 non-finite values,
5 guard violated, 6 degenerate null space.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config, with_overrides
from .errors import KerrlockError
from .harness import _dump, cmd_crossvalidate, cmd_params, cmd_simulate, cmd_sweep

log = logging.getLogger("kerrlock")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kerrlock", description="Steady states, Wigner negativity and sweeps for "
                                "injection-locked Kerr oscillators.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "run one parameter point"),
                        ("sweep", "run every value of the sweep axis"),
                        ("crossvalidate", "compare Fock-space and phase-space steady states"),
                        ("params", "print the resolved model parameters")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
        s.add_argument("--workers", type=int, metavar="N", help="parallel sweep points (default: all cores)")
        s.add_argument("--route", choices=("fock", "fp", "both"))
        s.add_argument("--drift-variant", choices=("as-printed", "physical"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, route=args.route, drift_variant=args.drift_variant)
        out = args.out or cfg.output.directory
        if args.workers is not None and args.workers < 1:
            raise KerrlockError("--workers must be >= 1")
        if args.command == "simulate":
            code, payload = cmd_simulate(cfg, out)
            payload = {k: payload[k] for k in ("config_hash", "results", "files", "exit_code")}
        elif args.command == "sweep":
            code, payload = cmd_sweep(cfg, out, args.workers)
            payload = {k: payload[k] for k in ("config_hash", "axis", "values", "summary", "exit_code")}
        elif args.command == "crossvalidate":
            code, payload = cmd_crossvalidate(cfg, out)
            payload = {k: payload[k] for k in ("config_hash", "reports", "exit_code")}
        else:
            code, payload = cmd_params(cfg)
    except KerrlockError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    print(json.dumps(json.loads(_dump(payload)), indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
