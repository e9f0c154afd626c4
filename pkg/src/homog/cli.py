"""Command line entry point.

    homog validate|diffusivity|rate-study|tau-sweep --config FILE [--seed N] [--out DIR]

Exit codes: 0 success, 2 validation, 3 I/O, 4 solver, 5 statistics (a rate
study whose verdict is FAIL also exits 5).
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import RunConfig
from .errors import HomogError
from . import studies

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_SOLVER, EXIT_STATS = 0, 2, 3, 4, 5


def _fmt_matrix(m) -> str:
    return np.array2string(np.asarray(m), precision=12, separator=", ")


def cmd_validate(cfg: RunConfig) -> int:
    report = studies.validate_model(cfg, cfg.output_dir)
    for name, err in report["checks"].items():
        print(f"{name}: {err:.3e}")
    print("validate: ok")
    return EXIT_OK


def cmd_diffusivity(cfg: RunConfig) -> int:
    out = studies.diffusivity_study(cfg, cfg.output_dir)
    r = out["result"]
    print(f"K2 = {_fmt_matrix(r.K2)}")
    print(f"v_bar = {_fmt_matrix(r.v_bar)}")
    print(f"N_F = {r.fourier_cutoff}, N_H = {r.hermite_cutoff}, residual = {r.residual:.3e}, "
          f"spill = {r.spill:.3e}")
    for row in out["truncation"]:
        status = row.error or f"cauchy={row.cauchy:.3e}"
        print(f"  ({row.fourier_cutoff}, {row.hermite_cutoff}): {status}")
    return EXIT_OK


def cmd_rate_study(cfg: RunConfig) -> int:
    out = studies.rate_study(cfg, cfg.output_dir)
    res = out["result"]
    for e, d, lo, hi in zip(res.eps_grid, res.distances, res.ci_lo, res.ci_hi):
        print(f"eps={e:g}: W={d:.5f} [{lo:.5f}, {hi:.5f}]")
    print(f"alpha_hat = {res.alpha_hat:.4f} CI [{res.alpha_ci[0]:.4f}, {res.alpha_ci[1]:.4f}]"
          f" -> {'PASS' if res.passed else 'FAIL'}")
    print(f"seeds = {out['seeds']}")
    return EXIT_OK if res.passed else EXIT_STATS


def cmd_tau_sweep(cfg: RunConfig) -> int:
    out = studies.tau_sweep(cfg, cfg.output_dir)
    for tau, k2, ref, rel, *_ in out["rows"]:
        print(f"tau={tau:g}: K2={k2:.10f} (overdamped {ref:.10f}, rel diff {rel:.3e})")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "diffusivity": cmd_diffusivity,
    "rate-study": cmd_rate_study,
    "tau-sweep": cmd_tau_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homog", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration (schema 1)")
    parser.add_argument("--seed", type=int, default=None, help="override mc.seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes for ensembles (results do not depend on it)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, out=args.out, workers=args.workers)
        return COMMANDS[args.command](cfg)
    except HomogError as exc:
        print(f"homog {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"homog {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
