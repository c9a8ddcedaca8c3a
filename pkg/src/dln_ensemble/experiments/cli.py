"""Command line entry point: ``dln-ensemble {converge,efficiency,adaptive} [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import COMMANDS, build_config, read_config_file
from .runners import run_adaptive, run_convergence, run_efficiency


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dln-ensemble",
                                     description="Ensemble DLN Navier-Stokes experiments (CSV output).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--theta", help="DLN parameter, e.g. 0.6667, 2/3 or 2/sqrt5")
        p.add_argument("--re", help="Reynolds number (viscosity is 1/Re)")
        p.add_argument("--omega", help="time-factor parameter")
        p.add_argument("--mesh", help="subdivisions per side; comma list for converge")
        p.add_argument("--j", help="ensemble size; comma list for efficiency")
        p.add_argument("--seed", type=int)
        p.add_argument("--delta-bound", dest="delta_bound", help="perturbation range bound")
        p.add_argument("--tol")
        p.add_argument("--kappa")
        p.add_argument("--kmin")
        p.add_argument("--kmax")
        p.add_argument("--t0")
        p.add_argument("--t-end", dest="t_end")
        p.add_argument("--variant", choices=("sin", "lindberg1", "lindberg2"))
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--direct", dest="refactorized", action="store_const", const="false",
                       help="use the direct step instead of the refactorized one")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    config = build_config(args.command, file_values, overrides)
    if config.out_dir is None:
        config.out_dir = "results"
    if config.command == "converge":
        reports = run_convergence(config)
        for rep in reports:
            print(f"h={rep.h:.5g}  E[u_inf0]={rep.mean('u_inf0'):.4e}  "
                  f"E[u_inf1]={rep.mean('u_inf1'):.4e}  E[p_20]={rep.mean('p_20'):.4e}")
    elif config.command == "efficiency":
        for row in run_efficiency(config):
            print(f"J={row.J}  factorizations={row.run.counters.factorizations}  "
                  f"linear_solve_time={row.linear_solve_time:.3f}s  wall={row.run.wall_time:.3f}s")
    else:
        res = run_adaptive(config)
        r = res.report
        print(f"adaptive: steps={r.steps} rejections={r.rejections} total_cost={r.total_cost} "
              f"forced={r.forced_accepts} aborted={r.aborted}")
        if res.constant is not None:
            print(f"constant: steps={res.constant.steps + 1} aborted={res.constant.aborted}")
    print(f"CSV written to {config.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
