import numpy as np
import pytest

from sps_monitor.correlators import (
    CASE_DEPHASING_NO_FF,
    CASE_NO_DEPHASING,
    CorrelationGrid,
    SmoothedEnsembleAccumulator,
    assemble_ensemble,
    deterministic_correlations,
    ensemble_dump,
    lag_sums_to_upper,
    population_series,
    regression_g1,
    shift_slots,
    smoothed_kernel_sums,
)
from sps_monitor.errors import DelayOutOfRange, EmptyBatch, InvalidParams
from sps_monitor.liouville import (
    LindbladGenerator,
    default_horizon,
    evolve_deterministic,
    propagator_cache,
)
from sps_monitor.model import BasisState, initial_state
from sps_monitor.trajectory import run_block, simulate_trajectory

from conftest import make_params


def test_grid_covers_horizon_plus_delay():
    params = make_params(0.5, horizon=100.0)
    grid = CorrelationGrid.from_params(params, delta_max=17.3)
    assert grid.h == params.h_corr
    assert grid.m_snap == params.n_snapshots
    assert grid.m_total * grid.h >= params.horizon + 17.3
    assert grid.max_slots == grid.m_total - grid.m_snap
    assert np.array_equal(grid.times, np.arange(grid.m_total) * grid.h)


def test_grid_rejects_bad_shapes():
    with pytest.raises(InvalidParams):
        CorrelationGrid(h=0.0, m_total=10, m_snap=5)
    with pytest.raises(InvalidParams):
        CorrelationGrid(h=0.1, m_total=4, m_snap=5)
    with pytest.raises(InvalidParams):
        CorrelationGrid.from_params(make_params(0.5, horizon=10.0), delta_max=-1.0)


def test_shift_slots_rounding_and_range():
    grid = CorrelationGrid(h=0.25, m_total=50, m_snap=40)
    assert shift_slots(0.0, grid) == 0
    assert shift_slots(0.26, grid) == 1
    assert shift_slots(2.49, grid) == 10
    with pytest.raises(DelayOutOfRange):
        shift_slots(-0.1, grid)
    with pytest.raises(DelayOutOfRange):
        shift_slots(3.0, grid)


def _deterministic_snapshots(params, case=CASE_DEPHASING_NO_FF, rho0=None):
    gen = LindbladGenerator.from_params(params)
    series = evolve_deterministic(
        initial_state(BasisState.X2_0) if rho0 is None else rho0, gen, params
    )
    return gen, series


def test_regression_diagonal_equals_population():
    params = make_params(0.5, horizon=40.0)
    gen, series = _deterministic_snapshots(params)
    cache = propagator_cache(gen, params.h_corr, params.n_snapshots)
    g1 = regression_g1(series.snapshots, cache, gen.ops.a)
    n = population_series(series.snapshots)
    assert np.abs(np.diagonal(g1) - n).max() <= 1e-14


def test_regression_empty_cavity_closed_form():
    params = make_params(0.0, g=0.0, gamma=0.0, gamma1=0.0, kappa=1.0, horizon=10.0)
    gen = LindbladGenerator.from_params(params)
    series = evolve_deterministic(initial_state(BasisState.G_1), gen, params)
    cache = propagator_cache(gen, params.h_corr, params.n_snapshots)
    g1 = regression_g1(series.snapshots, cache, gen.ops.a)
    t = series.snapshot_times
    expected = np.exp(-(t[:, None] + t[None, :]) / 2.0)
    mask = np.triu(np.ones_like(g1, dtype=bool))
    assert np.abs((g1 - expected) * mask).max() <= 1e-9


def test_regression_pure_single_excitation_rank_one():
    params = make_params(0.5, gamma=0.0, gamma1=0.0, horizon=80.0)
    gen = LindbladGenerator.from_params(params)
    series = evolve_deterministic(initial_state(BasisState.X1_0), gen, params)
    cache = propagator_cache(gen, params.h_corr, params.n_snapshots)
    g1 = regression_g1(series.snapshots, cache, gen.ops.a)
    n = population_series(series.snapshots)
    mask = np.triu(np.ones_like(g1, dtype=bool), k=1)
    gap = (np.abs(g1) ** 2 - np.outer(n, n)) * mask
    assert np.abs(gap).max() <= 1e-8


def test_regression_is_linear_in_the_state():
    params = make_params(0.5, horizon=30.0)
    gen, series_a = _deterministic_snapshots(params)
    _, series_b = _deterministic_snapshots(params, rho0=initial_state(BasisState.X1_0))
    cache = propagator_cache(gen, params.h_corr, params.n_snapshots)
    avg_snapshots = 0.5 * (series_a.snapshots + series_b.snapshots)
    direct = regression_g1(avg_snapshots, cache, gen.ops.a)
    averaged = 0.5 * (
        regression_g1(series_a.snapshots, cache, gen.ops.a)
        + regression_g1(series_b.snapshots, cache, gen.ops.a)
    )
    assert np.abs(direct - averaged).max() <= 1e-12


def test_regression_requires_enough_cache():
    params = make_params(0.5, horizon=30.0)
    gen, series = _deterministic_snapshots(params)
    cache = propagator_cache(gen, params.h_corr, 3)
    with pytest.raises(InvalidParams):
        regression_g1(series.snapshots, cache, gen.ops.a)


def _monitored_outcomes(params, count):
    gen = LindbladGenerator.from_params(params)
    return gen, [simulate_trajectory(params, gen, i) for i in range(count)]


def test_assemble_zero_delays_equals_mean_of_kernels():
    params = make_params(0.5, horizon=40.0, master_seed=8)
    gen, outcomes = _monitored_outcomes(params, 12)
    grid = CorrelationGrid.from_params(params, delta_max=0.0)
    cache = propagator_cache(gen, grid.h, grid.m_total)
    ens = assemble_ensemble(outcomes, [0.0] * 12, grid, cache, gen.ops.a)
    mean_kernel = np.mean(
        [regression_g1(o.rho_snapshots, cache, gen.ops.a) for o in outcomes], axis=0
    )
    mean_n = np.mean([population_series(o.rho_snapshots) for o in outcomes], axis=0)
    assert np.abs(ens.g1_bar - mean_kernel).max() <= 1e-12
    assert np.abs(ens.n_bar - mean_n).max() <= 1e-12
    assert ens.n_contributing == 12


def test_assemble_single_trajectory_shift_semantics():
    params = make_params(0.5, horizon=40.0, master_seed=9)
    gen, outcomes = _monitored_outcomes(params, 1)
    grid = CorrelationGrid.from_params(params, delta_max=params.h_corr)
    cache = propagator_cache(gen, grid.h, grid.m_total)
    shifted = assemble_ensemble(outcomes, [params.h_corr], grid, cache, gen.ops.a)
    plain = assemble_ensemble(outcomes, [0.0], grid, cache, gen.ops.a)
    assert shifted.n_bar[0] == 0.0
    assert np.abs(shifted.g1_bar[0, :]).max() == 0.0
    assert np.abs(shifted.n_bar[1:] - plain.n_bar[:-1]).max() <= 1e-15
    assert np.abs(shifted.g1_bar[1:, 1:] - plain.g1_bar[:-1, :-1]).max() <= 1e-15


def test_assemble_identical_copies_match_single():
    params = make_params(0.5, horizon=40.0, master_seed=10)
    gen, outcomes = _monitored_outcomes(params, 1)
    grid = CorrelationGrid.from_params(params, delta_max=1.0)
    cache = propagator_cache(gen, grid.h, grid.m_total)
    copies = outcomes * 5
    ens5 = assemble_ensemble(copies, [1.0] * 5, grid, cache, gen.ops.a)
    ens1 = assemble_ensemble(outcomes, [1.0], grid, cache, gen.ops.a)
    assert np.abs(ens5.g1_bar - ens1.g1_bar).max() <= 1e-15
    assert ens5.n_contributing == 5


def test_assemble_errors():
    params = make_params(0.5, horizon=40.0, master_seed=11)
    gen, outcomes = _monitored_outcomes(params, 2)
    grid = CorrelationGrid.from_params(params, delta_max=0.0)
    cache = propagator_cache(gen, grid.h, grid.m_total)
    with pytest.raises(InvalidParams):
        assemble_ensemble(outcomes, [0.0], grid, cache, gen.ops.a)
    with pytest.raises(EmptyBatch):
        assemble_ensemble([], [], grid, cache, gen.ops.a)
    with pytest.raises(DelayOutOfRange):
        assemble_ensemble(outcomes, [0.0, 5.0], grid, cache, gen.ops.a)


def test_deterministic_cases_share_machinery():
    params = default_horizon(make_params(0.5, gamma=0.0))
    a = deterministic_correlations(params, CASE_NO_DEPHASING)
    b = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    assert np.array_equal(a.g1_bar, b.g1_bar)
    assert np.array_equal(a.n_bar, b.n_bar)
    assert not a.stochastic


def test_deterministic_case_unknown():
    with pytest.raises(InvalidParams):
        deterministic_correlations(make_params(0.5, horizon=10.0), "mystery")


def test_smoothed_kernels_match_regression_without_monitoring():
    # dual route: engine transfer-matrix kernels vs propagator-cache regression
    params = make_params(0.5, eta=0.0, horizon=60.0)
    gen = LindbladGenerator.from_params(params)
    blk = run_block(params, gen, [0], want_kernel=True, want_states=True)
    grid = CorrelationGrid.from_params(params, delta_max=0.0)
    g_lag, n_sum = smoothed_kernel_sums(blk, np.zeros(1, dtype=int), grid)
    g1_engine = lag_sums_to_upper(g_lag, 1, grid.m_total)

    cache = propagator_cache(gen, grid.h, grid.m_total)
    from sps_monitor.liouville import unvec

    snapshots = np.stack([unvec(s) for s in blk.state_snapshots[0]])
    g1_reference = regression_g1(snapshots, cache, gen.ops.a)
    assert np.abs(g1_engine - g1_reference).max() <= 1e-7
    assert np.abs(n_sum - population_series(snapshots)).max() <= 1e-12


def test_smoothed_ensemble_validates():
    params = make_params(0.5, horizon=80.0, master_seed=23)
    gen = LindbladGenerator.from_params(params)
    grid = CorrelationGrid.from_params(params, delta_max=2.0)
    acc = SmoothedEnsembleAccumulator(grid)
    rng = np.random.default_rng(0)
    for lo in (0, 100):
        blk = run_block(params, gen, range(lo, lo + 100), want_kernel=True)
        slots = rng.integers(0, grid.max_slots + 1, size=100)
        acc.add_chunk(*smoothed_kernel_sums(blk, slots, grid), 100)
    ens = acc.finalize()
    assert ens.n_contributing == 200
    assert ens.stochastic
    assert np.abs(np.diagonal(ens.g1_bar) - ens.n_bar).max() <= 1e-10


def test_smoothed_kernel_rejects_bad_slots():
    params = make_params(0.5, horizon=40.0)
    gen = LindbladGenerator.from_params(params)
    blk = run_block(params, gen, [0], want_kernel=True)
    grid = CorrelationGrid.from_params(params, delta_max=0.0)
    with pytest.raises(DelayOutOfRange):
        smoothed_kernel_sums(blk, np.array([3]), grid)


def test_ensemble_dump(tmp_path):
    params = make_params(0.5, horizon=30.0)
    ens = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    path = tmp_path / "ens.npz"
    ensemble_dump(ens, path)
    data = np.load(path)
    assert set(data.files) >= {"times", "n_bar", "g1_bar", "n_contributing"}
    assert np.array_equal(data["n_bar"], ens.n_bar)
