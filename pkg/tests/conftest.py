import time

import numpy as np
import pytest

from sps_monitor.correlators import CASE_DEPHASING_FF, CASE_DEPHASING_NO_FF, CASE_NO_DEPHASING
from sps_monitor.estimator import DelayPolicy
from sps_monitor.experiments import ExperimentConfig, run_case
from sps_monitor.liouville import LindbladGenerator, default_horizon
from sps_monitor.model import Params
from sps_monitor.trajectory import run_block

#: Paper operating point used throughout: g=0.1, kappa=1, gamma=0.1, Gamma1=0.001.
ACCEPTANCE_SEED = 2718281828
ACCEPTANCE_GAMMA2 = (0.1, 0.5, 1.0)
ACCEPTANCE_N_TRAJ = 2000
ACCEPTANCE_N_CALIB = 500
FIXTURE_WORKERS = 2


def make_params(gamma2: float, **kw) -> Params:
    defaults = dict(g=0.1, kappa=1.0, gamma=0.1, gamma1=0.001, eta=1.0, gamma2=gamma2)
    defaults.update(kw)
    return Params(**defaults)


@pytest.fixture(scope="session")
def acceptance_config():
    return ExperimentConfig(
        params=make_params(0.5, n_traj=ACCEPTANCE_N_TRAJ, master_seed=ACCEPTANCE_SEED),
        gamma2_values=ACCEPTANCE_GAMMA2,
        n_calib=ACCEPTANCE_N_CALIB,
        output_dir="",
        workers=FIXTURE_WORKERS,
    )


@pytest.fixture(scope="session")
def sweep3(acceptance_config):
    """All three cases at gamma2 in {0.1, 0.5, 1.0}, n_traj = 2000."""
    t0 = time.perf_counter()
    results = {}
    for g2 in ACCEPTANCE_GAMMA2:
        for case in (CASE_NO_DEPHASING, CASE_DEPHASING_NO_FF, CASE_DEPHASING_FF):
            results[(case, g2)] = run_case(acceptance_config, case, g2)
    results["wall_s"] = time.perf_counter() - t0
    return results


@pytest.fixture(scope="session")
def ff7000(acceptance_config):
    """Feed-forward point at gamma2 = 0.1 with the full 7000-trajectory budget."""
    import dataclasses

    cfg = dataclasses.replace(
        acceptance_config,
        params=dataclasses.replace(acceptance_config.params, n_traj=7000),
    )
    return run_case(cfg, CASE_DEPHASING_FF, 0.1)


@pytest.fixture(scope="session")
def zero_delay_pair(acceptance_config):
    """Feed-forward machinery with the delay forced to zero, plus its target."""
    ff = run_case(
        acceptance_config,
        CASE_DEPHASING_FF,
        0.5,
        delay_override=DelayPolicy(C=0.0, delta_max=0.0, mode="fixed-reference"),
    )
    base = run_case(acceptance_config, CASE_DEPHASING_NO_FF, 0.5)
    return ff, base


@pytest.fixture(scope="session")
def record_ensemble_10k():
    """nu and tau for 10^4 monitored trajectories on a short fixed horizon."""
    params = make_params(0.5, horizon=50.0, master_seed=90210, n_traj=10_000)
    gen = LindbladGenerator.from_params(params)
    nus, taus = [], []
    for lo in range(0, 10_000, 500):
        blk = run_block(params, gen, range(lo, lo + 500))
        nus.append(blk.nu)
        taus.append(blk.tau)
    return params, np.concatenate(nus), np.concatenate(taus)


@pytest.fixture(scope="session")
def state_mean_2000():
    """Snapshot-resolved mean conditional state over 2000 trajectories, in 10 batches."""
    params = default_horizon(make_params(0.5, master_seed=ACCEPTANCE_SEED, n_traj=2000))
    gen = LindbladGenerator.from_params(params)
    batch_sums = []
    for b in range(10):
        total = None
        for lo in range(200 * b, 200 * (b + 1), 200):
            blk = run_block(params, gen, range(lo, lo + 200), want_state_sum=True)
            total = blk.state_sum if total is None else total + blk.state_sum
        batch_sums.append(total)
    return params, gen, np.stack(batch_sums)
