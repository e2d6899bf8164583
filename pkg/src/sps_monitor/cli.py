"""Command-line interface.

Subcommands: run (single case), sweep (full comparison), calibrate (delay
policy inspection), selftest (quick invariant suite).  Exit codes: 0 success,
2 invalid configuration, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    ConfigError,
    DegenerateDenominator,
    DelayOutOfRange,
    EmptyBatch,
    InvalidParams,
    InvariantViolation,
    NumericalBlowup,
    RecordUndefined,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_CONFIG_ERRORS = (ConfigError, InvalidParams)
_NUMERICAL_ERRORS = (
    NumericalBlowup,
    InvariantViolation,
    RecordUndefined,
    EmptyBatch,
    DelayOutOfRange,
    DegenerateDenominator,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value configuration file")
    p.add_argument("--gamma2", type=float, help="pump-level decay rate(s); overrides the config")
    p.add_argument("--n-traj", type=int, dest="n_traj", help="measurement trajectory count")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--dump-debug", action="store_true", help="write per-trajectory debug dumps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sps-monitor",
        description="Monitored single-photon source simulator with feed-forward delay correction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single case at a single gamma2")
    _add_common(p_run)
    p_run.add_argument(
        "--case",
        choices=("no-dephasing", "dephasing-no-ff", "dephasing-ff"),
        default="dephasing-ff",
    )

    p_sweep = sub.add_parser("sweep", help="run all configured cases over the gamma2 grid")
    _add_common(p_sweep)

    p_cal = sub.add_parser("calibrate", help="inspect the feed-forward delay policy")
    _add_common(p_cal)

    sub.add_parser("selftest", help="run the built-in invariant suite")
    return parser


def _config_from_args(args) -> "ExperimentConfig":
    from .experiments import load_config

    overrides = {
        "n_traj": getattr(args, "n_traj", None),
        "master_seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None),
        "workers": getattr(args, "workers", None),
    }
    if getattr(args, "dump_debug", False):
        overrides["dump_debug"] = True
    if getattr(args, "gamma2", None) is not None:
        overrides["gamma2_values"] = (args.gamma2,)
    return load_config(args.config, **{k: v for k, v in overrides.items() if v is not None})


def _cmd_run(args) -> int:
    from .experiments import improvement_table, run_case, write_results

    config = _config_from_args(args)
    gamma2 = config.gamma2_values[0]
    result = run_case(config, args.case, gamma2)
    print(
        f"{result.case} gamma2={gamma2}: Lambda={result.lam:.6f} p_c={result.p_c:.6f} "
        f"p_emit={result.p_emit:.6f} (n_traj={result.n_traj}, {result.runtime_s:.1f} s)"
    )
    paths = write_results([result], config.output_dir, config, improvement_table([result]))
    print(f"wrote {paths['results_csv']}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .experiments import sweep_gamma2, write_results

    config = _config_from_args(args)
    results, improvements = sweep_gamma2(config)
    for r in results:
        print(f"{r.case:16s} gamma2={r.gamma2:<6g} Lambda={r.lam:.6f} +- {r.mc_stderr:.6f}")
    for row in improvements:
        print(
            f"improvement gamma2={row.gamma2:<6g} {row.improvement_pct:+.2f}% "
            f"(stderr {row.stderr_pct:.2f}%)"
        )
    paths = write_results(results, config.output_dir, config, improvements)
    print(f"wrote {paths['results_csv']}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    import numpy as np

    from .estimator import ammse_coeffs, calibrate_reference, prior_moments
    from .experiments import _blocks, _map_tasks, _record_task, effective_workers, resolve_params
    from .liouville import LindbladGenerator, evolve_deterministic
    from .model import BasisState, initial_state

    config = _config_from_args(args)
    gamma2 = config.gamma2_values[0]
    pp = resolve_params(config.params, gamma2)
    gen = LindbladGenerator.from_params(pp)
    det = evolve_deterministic(initial_state(BasisState.X2_0), gen, pp)
    prior = prior_moments(det)
    coeffs = ammse_coeffs(prior, pp.eta, pp.gamma, pp.horizon)
    payloads = [(pp, lo, hi) for lo, hi in _blocks(0, config.n_calib)]
    nus = np.concatenate(_map_tasks(_record_task, payloads, effective_workers(config)))
    policy = calibrate_reference(coeffs.G * nus + coeffs.m, config.quantile)
    print(f"gamma2        = {gamma2}")
    print(f"horizon T     = {pp.horizon}")
    print(f"m_tau         = {prior.m_tau:.6f}")
    print(f"sigma_tau^2   = {prior.sigma_tau_sq:.6f}")
    print(f"beta^2 T      = {coeffs.beta_sq_T:.6f}")
    print(f"G             = {coeffs.G:.6f}")
    print(f"m             = {coeffs.m:.6f}")
    print(f"quantile      = {config.quantile}")
    print(f"batch size    = {config.n_calib}")
    print(f"reference C   = {policy.C:.6f}")
    return EXIT_OK


def _cmd_selftest(_args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "calibrate": _cmd_calibrate,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
