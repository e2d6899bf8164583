"""Experiment orchestration: the three comparison cases, sweeps, persistence.

Case definitions:

  no-dephasing     deterministic evolution with gamma = 0
  dephasing-no-ff  deterministic evolution with the configured gamma
  dephasing-ff     monitored trajectories, AMMSE estimate, feed-forward delay

The feed-forward case runs in three stages: a deterministic run fixes the
prior moments and estimator coefficients; a calibration batch (disjoint
seeds) fixes the delay reference; the measurement batch is shifted and
averaged into the correlation ensemble.  Trajectories are integrated in
fixed-size blocks whose partition never depends on the worker count, and
all reductions merge in block order, so results are bit-identical for any
parallelism.
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from . import correlators, hom
from .correlators import (
    CASE_DEPHASING_FF,
    CASE_DEPHASING_NO_FF,
    CASE_NO_DEPHASING,
    CorrelationGrid,
    SmoothedEnsembleAccumulator,
    deterministic_correlations,
    smoothed_kernel_sums,
)
from .errors import ConfigError, EmptyBatch, InvalidParams, RecordUndefined
from .estimator import (
    DEFAULT_QUANTILE,
    AmmseCoefficients,
    DelayPolicy,
    ammse_coeffs,
    apply_delay_policy,
    calibrate_reference,
    estimate_transition_time,
    prior_moments,
)
from .liouville import LindbladGenerator, default_horizon, evolve_deterministic
from .model import BasisState, Params, initial_state, validate_params
from .trajectory import record_series, run_block

ALL_CASES = (CASE_NO_DEPHASING, CASE_DEPHASING_NO_FF, CASE_DEPHASING_FF)

#: Trajectories per worker task; fixed so reductions never depend on the pool.
BLOCK_SIZE = 250

#: Batch count for Monte Carlo error bars (batch means).
N_ERROR_BATCHES = 10

#: Environment variable that overrides the configured worker count.
WORKERS_ENV_VAR = "SPS_MONITOR_WORKERS"

RESULTS_CSV_HEADER = "case,gamma2,lambda,p_c,p_emit,n_traj,mc_stderr,m_tau,G,m,C,seed"

DEBUG_TRAJECTORY_DUMPS = 5


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one sweep needs; see config.example for the file format."""

    params: Params = field(default_factory=Params)
    gamma2_values: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(1, 11))
    cases: tuple[str, ...] = ALL_CASES
    n_calib: int = 500
    quantile: float = DEFAULT_QUANTILE
    output_dir: str = "results"
    workers: int = 1
    dump_debug: bool = False
    delay_reference: float | None = None

    def validated(self) -> "ExperimentConfig":
        if not self.gamma2_values:
            raise InvalidParams("gamma2_values must be nonempty")
        if any(g2 <= 0 for g2 in self.gamma2_values):
            raise InvalidParams(f"gamma2 values must be > 0, got {self.gamma2_values}")
        unknown = set(self.cases) - set(ALL_CASES)
        if unknown or not self.cases:
            raise InvalidParams(f"cases must be a nonempty subset of {ALL_CASES}")
        if CASE_DEPHASING_FF in self.cases and self.n_calib < 100 and self.delay_reference is None:
            raise InvalidParams(f"n_calib must be >= 100 for feed-forward runs, got {self.n_calib}")
        if not 0.0 < self.quantile <= 1.0:
            raise InvalidParams(f"quantile must lie in (0, 1], got {self.quantile}")
        validate_params(self.params)
        return self


@dataclass(frozen=True)
class CaseResult:
    """One (case, gamma2) point; echoes every derived default it used."""

    case: str
    gamma2: float
    lam: float
    p_c: float
    p_emit: float
    n_traj: int
    mc_stderr: float
    m_tau: float
    G: float
    m: float
    C: float
    master_seed: int
    runtime_s: float
    dt: float
    horizon: float
    corr_stride: int
    n_calib: int
    quantile: float
    max_purity: float


def resolve_params(base: Params, gamma2: float) -> Params:
    """Fix gamma2 and resolve the horizon rule; explicit horizons are kept."""
    pp = dc_replace(base, gamma2=gamma2)
    pp = default_horizon(pp)
    validate_params(pp)
    return pp


def effective_workers(config: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV_VAR)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got {env!r}") from exc
    return max(1, config.workers)


def _map_tasks(fn, payloads, workers: int):
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, payloads))


def _blocks(lo: int, hi: int) -> list[tuple[int, int]]:
    return [(b, min(b + BLOCK_SIZE, hi)) for b in range(lo, hi, BLOCK_SIZE)]


def _batch_bounds(n: int, k: int) -> list[int]:
    return [round(b * n / k) for b in range(k + 1)]


def _record_task(payload):
    pp, lo, hi = payload
    gen = LindbladGenerator.from_params(pp)
    blk = run_block(pp, gen, range(lo, hi))
    return blk.nu


def _measurement_task(payload):
    pp, lo, hi, coeffs, policy, grid = payload
    gen = LindbladGenerator.from_params(pp)
    blk = run_block(pp, gen, range(lo, hi), want_kernel=True)
    tau_hat = coeffs.G * blk.nu + coeffs.m
    delays = np.clip(policy.C - tau_hat, 0.0, policy.delta_max)
    slots = np.rint(delays / grid.h).astype(np.int64)
    g_lag, n_sum = smoothed_kernel_sums(blk, slots, grid)
    return g_lag, n_sum, blk.nu, blk.tau, delays, blk.max_purity


def _deterministic_case(pp: Params, case: str):
    ens = deterministic_correlations(pp, case)
    return hom.coincidence_probability(ens, ens.grid, kappa=pp.kappa)


def run_case(
    config: ExperimentConfig,
    case: str,
    gamma2: float,
    *,
    delay_override: DelayPolicy | None = None,
) -> CaseResult:
    """Run one case at one gamma2 and reduce it to a CaseResult."""
    config = config.validated()
    t0 = time.perf_counter()
    pp = resolve_params(config.params, gamma2)
    nan = float("nan")

    if case in (CASE_NO_DEPHASING, CASE_DEPHASING_NO_FF):
        res = _deterministic_case(pp, case)
        return CaseResult(
            case=case,
            gamma2=gamma2,
            lam=res.lam,
            p_c=res.p_c,
            p_emit=res.p_emit,
            n_traj=1,
            mc_stderr=0.0,
            m_tau=nan,
            G=nan,
            m=nan,
            C=nan,
            master_seed=pp.master_seed,
            runtime_s=time.perf_counter() - t0,
            dt=pp.dt,
            horizon=pp.horizon,
            corr_stride=pp.corr_stride,
            n_calib=0,
            quantile=nan,
            max_purity=nan,
        )
    if case != CASE_DEPHASING_FF:
        raise InvalidParams(f"unknown case {case!r}")
    if pp.eta * pp.gamma <= 0.0:
        raise RecordUndefined(
            "feed-forward requires eta * gamma > 0 "
            f"(eta={pp.eta}, gamma={pp.gamma}); the record is undefined otherwise"
        )

    workers = effective_workers(config)
    gen = LindbladGenerator.from_params(pp)
    det = evolve_deterministic(initial_state(BasisState.X2_0), gen, pp)
    prior = prior_moments(det)
    coeffs = ammse_coeffs(prior, pp.eta, pp.gamma, pp.horizon)

    if delay_override is not None:
        policy = delay_override
        n_calib = 0
    elif config.delay_reference is not None:
        policy = DelayPolicy(
            C=config.delay_reference, delta_max=config.delay_reference, mode="fixed-reference"
        )
        n_calib = 0
    else:
        n_calib = config.n_calib
        payloads = [(pp, lo, hi) for lo, hi in _blocks(0, n_calib)]
        nus = np.concatenate(_map_tasks(_record_task, payloads, workers))
        tau_hats = coeffs.G * nus + coeffs.m
        policy = calibrate_reference(tau_hats, config.quantile)

    grid = CorrelationGrid.from_params(pp, delta_max=policy.delta_max)

    n_batches = min(N_ERROR_BATCHES, pp.n_traj)
    bounds = _batch_bounds(pp.n_traj, n_batches)
    payloads = []
    batch_of_task = []
    for b in range(n_batches):
        for lo, hi in _blocks(bounds[b], bounds[b + 1]):
            payloads.append((pp, n_calib + lo, n_calib + hi, coeffs, policy, grid))
            batch_of_task.append(b)
    outputs = _map_tasks(_measurement_task, payloads, workers)

    batch_accs = [SmoothedEnsembleAccumulator(grid) for _ in range(n_batches)]
    all_delays = []
    max_purity = 0.0
    for b, (g_lag, n_sum, _nu, _tau, delays, purity) in zip(batch_of_task, outputs):
        batch_accs[b].add_chunk(g_lag, n_sum, delays.size)
        all_delays.append(delays)
        max_purity = max(max_purity, purity)

    total = SmoothedEnsembleAccumulator(grid)
    lam_batches = []
    for acc in batch_accs:
        if acc.count == 0:
            continue
        total.add_chunk(acc.g_lag, acc.n_sum, acc.count)
        n_bar_b, g1_b = acc.raw()
        lam_batches.append(1.0 - hom.coincidence_from_arrays(n_bar_b, g1_b, grid.h))
    ens = total.finalize()
    res = hom.coincidence_probability(ens, grid, kappa=pp.kappa)
    if len(lam_batches) >= 2:
        mc_stderr = float(np.std(lam_batches, ddof=1) / np.sqrt(len(lam_batches)))
    else:
        mc_stderr = float("nan")

    if config.dump_debug and config.output_dir:
        _write_debug_dumps(config, pp, det, ens, n_calib)

    return CaseResult(
        case=case,
        gamma2=gamma2,
        lam=res.lam,
        p_c=res.p_c,
        p_emit=res.p_emit,
        n_traj=pp.n_traj,
        mc_stderr=mc_stderr,
        m_tau=prior.m_tau,
        G=coeffs.G,
        m=coeffs.m,
        C=policy.C,
        master_seed=pp.master_seed,
        runtime_s=time.perf_counter() - t0,
        dt=pp.dt,
        horizon=pp.horizon,
        corr_stride=pp.corr_stride,
        n_calib=n_calib,
        quantile=config.quantile if policy.mode == "calibrated-quantile" else float("nan"),
        max_purity=max_purity,
    )


@dataclass(frozen=True)
class ImprovementRow:
    """Relative gain of feed-forward over uncorrected dephasing, percent."""

    gamma2: float
    improvement_pct: float
    stderr_pct: float


def improvement_table(results: list[CaseResult]) -> list[ImprovementRow]:
    by_point = {(r.case, r.gamma2): r for r in results}
    rows = []
    for g2 in sorted({r.gamma2 for r in results}):
        base = by_point.get((CASE_DEPHASING_NO_FF, g2))
        ff = by_point.get((CASE_DEPHASING_FF, g2))
        if base is None or ff is None:
            continue
        rows.append(
            ImprovementRow(
                gamma2=g2,
                improvement_pct=100.0 * (ff.lam - base.lam) / base.lam,
                stderr_pct=100.0 * ff.mc_stderr / base.lam,
            )
        )
    return rows


def sweep_gamma2(config: ExperimentConfig) -> tuple[list[CaseResult], list[ImprovementRow]]:
    """All (case, gamma2) points, gamma2 ascending.

    The enhancement is expected to be larger at smaller gamma2, where the
    emission-time uncertainty is larger; the table makes that trend explicit.
    """
    config = config.validated()
    results = []
    for g2 in sorted(config.gamma2_values):
        for case in (c for c in ALL_CASES if c in config.cases):
            results.append(run_case(config, case, g2))
    return results, improvement_table(results)


_CASE_ORDER = {name: i for i, name in enumerate(ALL_CASES)}


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results(
    results: list[CaseResult],
    output_dir,
    config: ExperimentConfig | None = None,
    improvements: list[ImprovementRow] | None = None,
) -> dict:
    """Write results.csv and manifest.json; byte-stable CSV for fixed inputs."""
    if not results:
        raise EmptyBatch("refusing to write an empty result set")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = sorted(results, key=lambda r: (r.gamma2, _CASE_ORDER.get(r.case, 99)))
        lines = [RESULTS_CSV_HEADER]
        for r in rows:
            lines.append(
                ",".join(
                    _fmt(v)
                    for v in (
                        r.case,
                        r.gamma2,
                        r.lam,
                        r.p_c,
                        r.p_emit,
                        r.n_traj,
                        r.mc_stderr,
                        r.m_tau,
                        r.G,
                        r.m,
                        r.C,
                        r.master_seed,
                    )
                )
            )
        csv_path = out / "results.csv"
        csv_path.write_text("\n".join(lines) + "\n")

        manifest = {
            "config": _jsonable(asdict(config)) if config is not None else None,
            "defaults": {
                "block_size": BLOCK_SIZE,
                "n_error_batches": N_ERROR_BATCHES,
                "workers_env_var": WORKERS_ENV_VAR,
            },
            "results": [_jsonable(asdict(r)) for r in results],
            "improvements": [_jsonable(asdict(i)) for i in (improvements or [])],
            "environment": _environment_info(),
            "wall_time_unix": time.time(),
        }
        manifest_path = out / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing results under {out}: {exc}") from exc
    return {"results_csv": csv_path, "manifest": manifest_path}


def _environment_info() -> dict:
    import scipy

    return {
        "package": "sps-monitor 0.1.0",
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_debug_dumps(config, pp, det_series, ens, n_calib) -> None:
    out = Path(config.output_dir) / "debug"
    out.mkdir(parents=True, exist_ok=True)
    det_series.to_csv(out / f"deterministic_g2_{pp.gamma2!r}.csv")
    correlators.ensemble_dump(ens, out / f"ensemble_g2_{pp.gamma2!r}.npz")
    for index in range(n_calib, n_calib + min(DEBUG_TRAJECTORY_DUMPS, pp.n_traj)):
        t, J = record_series(pp, index)
        blkO = run_block(pp, LindbladGenerator.from_params(pp), [index], want_series=True)
        data = np.column_stack([t, blkO.expO[0, :-1], J])
        np.savetxt(
            out / f"trajectory_{index}.csv",
            data,
            delimiter=",",
            header="t,expO,J",
            comments="",
        )


# --- configuration file handling -----------------------------------------

_PARAM_KEYS = {
    "g": float,
    "kappa": float,
    "gamma": float,
    "gamma1": float,
    "eta": float,
    "dt": float,
    "horizon": float,
    "corr_stride": int,
    "master_seed": int,
    "n_traj": int,
}

_CONFIG_KEYS = {
    "gamma2_values": "float_list",
    "cases": "str_list",
    "n_calib": int,
    "quantile": float,
    "output_dir": str,
    "workers": int,
    "dump_debug": "bool",
    "delay_reference": float,
}


def parse_config_text(text: str) -> dict:
    """Parse the flat key = value format (one pair per line, # comments)."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _PARAM_KEYS:
            caster = _PARAM_KEYS[key]
        elif key in _CONFIG_KEYS:
            caster = _CONFIG_KEYS[key]
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if caster == "float_list":
                values[key] = tuple(float(v) for v in val.split(",") if v.strip())
            elif caster == "str_list":
                values[key] = tuple(v.strip() for v in val.split(",") if v.strip())
            elif caster == "bool":
                if val.lower() not in ("true", "false"):
                    raise ValueError(val)
                values[key] = val.lower() == "true"
            else:
                values[key] = caster(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional file plus overrides."""
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text))
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    param_kwargs = {k: values.pop(k) for k in list(values) if k in _PARAM_KEYS}
    if "gamma2" in values:
        param_kwargs["gamma2"] = values.pop("gamma2")
    params = Params(**param_kwargs)
    return ExperimentConfig(params=params, **values).validated()
