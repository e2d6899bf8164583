import numpy as np
import pytest

from sps_monitor.correlators import (
    CASE_DEPHASING_NO_FF,
    CASE_NO_DEPHASING,
    CorrelationEnsemble,
    CorrelationGrid,
    deterministic_correlations,
)
from sps_monitor.errors import DegenerateDenominator, InvalidParams, InvariantViolation
from sps_monitor.hom import (
    coincidence_from_arrays,
    coincidence_probability,
    coincidence_probability_expanded,
    emission_probability,
)
from sps_monitor.liouville import default_horizon
from sps_monitor.model import BasisState, initial_state

from conftest import make_params


def _ensemble(n_bar, g1, grid, stochastic=False):
    return CorrelationEnsemble(
        n_bar=n_bar, g1_bar=g1, n_contributing=1, grid=grid, stochastic=stochastic
    )


def _grid(m, h=0.25):
    return CorrelationGrid(h=h, m_total=m, m_snap=m)


def rank_one_kernel(m=60, seed=4):
    rng = np.random.default_rng(seed)
    psi = 0.1 * (rng.normal(size=m) + 1j * rng.normal(size=m))
    n = np.abs(psi) ** 2
    return n, np.triu(np.outer(psi.conj(), psi))


def test_rank_one_kernel_is_perfectly_indistinguishable():
    n, g1 = rank_one_kernel()
    grid = _grid(n.size)
    res = coincidence_probability(_ensemble(n, g1, grid), grid)
    assert abs(res.p_c) <= 1e-12
    assert res.lam == pytest.approx(1.0, abs=1e-12)


def test_incoherent_kernel_sits_exactly_at_one_half():
    n, _ = rank_one_kernel(seed=9)
    grid = _grid(n.size)
    res = coincidence_probability(_ensemble(n, np.diag(n).astype(complex), grid), grid)
    assert res.p_c == 0.5
    assert res.lam == 0.5


def test_expanded_form_equals_reduced_for_identical_sources():
    params = default_horizon(make_params(0.5))
    ens = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    reduced = coincidence_probability(ens, ens.grid, kappa=params.kappa)
    expanded = coincidence_probability_expanded(ens, ens, ens.grid, kappa=params.kappa)
    assert expanded.p_c == pytest.approx(reduced.p_c, abs=1e-12)
    assert expanded.lam == pytest.approx(reduced.lam, abs=1e-12)


def test_expanded_form_orthogonal_photons():
    n, g1 = rank_one_kernel(seed=12)
    grid = _grid(n.size)
    pure = _ensemble(n, g1, grid)
    incoherent = _ensemble(n, np.diag(n).astype(complex), grid)
    res = coincidence_probability_expanded(pure, incoherent, grid)
    assert res.p_c == pytest.approx(0.5, abs=1e-15)


def test_expanded_form_is_symmetric_under_swap():
    params = default_horizon(make_params(0.5))
    ens_a = deterministic_correlations(params, CASE_NO_DEPHASING)
    ens_b = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    ab = coincidence_probability_expanded(ens_a, ens_b, ens_a.grid)
    ba = coincidence_probability_expanded(ens_b, ens_a, ens_a.grid)
    assert ab.p_c == pytest.approx(ba.p_c, abs=1e-15)


def test_expanded_form_grid_mismatch():
    n, g1 = rank_one_kernel()
    grid = _grid(n.size)
    other = _grid(n.size, h=0.5)
    with pytest.raises(InvalidParams):
        coincidence_probability_expanded(_ensemble(n, g1, grid), _ensemble(n, g1, other), grid)


def test_scale_invariance_of_the_ratio():
    params = default_horizon(make_params(0.5))
    ens = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    scaled = CorrelationEnsemble(
        n_bar=0.37 * ens.n_bar,
        g1_bar=0.37 * ens.g1_bar,
        n_contributing=1,
        grid=ens.grid,
        stochastic=False,
    )
    a = coincidence_probability(ens, ens.grid)
    b = coincidence_probability(scaled, ens.grid)
    assert b.p_c == pytest.approx(a.p_c, abs=1e-12)


def test_common_shift_invariance():
    params = default_horizon(make_params(0.5))
    ens = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    m = ens.grid.m_total
    shift = 7
    big = _grid(m + shift, h=ens.grid.h)
    n_shift = np.zeros(m + shift)
    n_shift[shift:] = ens.n_bar
    g_shift = np.zeros((m + shift, m + shift), dtype=complex)
    g_shift[shift:, shift:] = ens.g1_bar
    a = coincidence_probability(ens, ens.grid)
    b = coincidence_probability(_ensemble(n_shift, g_shift, big), big)
    assert b.p_c == pytest.approx(a.p_c, abs=1e-12)


def test_pure_wavepacket_pipeline_limit():
    # only coherent transfer and cavity leakage: a pure single-photon packet
    params = default_horizon(make_params(0.5, gamma=0.0, gamma1=0.0))
    ens = deterministic_correlations(
        params, CASE_DEPHASING_NO_FF, rho0=initial_state(BasisState.X1_0)
    )
    res = coincidence_probability(ens, ens.grid, kappa=params.kappa)
    assert res.lam == pytest.approx(1.0, abs=1e-6)


def test_emission_probability_cases():
    params = default_horizon(make_params(0.5))
    ens = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    zero = CorrelationEnsemble(
        n_bar=np.zeros_like(ens.n_bar),
        g1_bar=np.zeros_like(ens.g1_bar),
        n_contributing=1,
        grid=ens.grid,
        stochastic=False,
    )
    assert emission_probability(zero, params.kappa, ens.grid) == 0.0

    no_loss = default_horizon(make_params(0.5, gamma=0.0, gamma1=0.0))
    ens_i = deterministic_correlations(no_loss, CASE_NO_DEPHASING)
    assert emission_probability(ens_i, no_loss.kappa, ens_i.grid) >= 0.999

    res = coincidence_probability(ens, ens.grid, kappa=params.kappa)
    assert res.p_emit < 1.0
    assert res.p_emit == pytest.approx(0.9715, abs=0.002)


def test_degenerate_denominator():
    grid = _grid(10)
    zero = _ensemble(np.zeros(10), np.zeros((10, 10), dtype=complex), grid)
    with pytest.raises(DegenerateDenominator):
        coincidence_probability(zero, grid)


def test_pc_bounds_over_random_mixtures():
    rng = np.random.default_rng(31)
    grid = _grid(40)
    for _ in range(25):
        g1 = np.zeros((40, 40), dtype=complex)
        n = np.zeros(40)
        for _ in range(rng.integers(1, 6)):
            psi = 0.05 * (rng.normal(size=40) + 1j * rng.normal(size=40))
            g1 += np.triu(np.outer(psi.conj(), psi))
            n += np.abs(psi) ** 2
        res = coincidence_probability(_ensemble(n, g1, grid), grid)
        assert -1e-12 <= res.p_c <= 0.5 + 1e-9


def test_result_invariants_guarded():
    # a kernel grossly violating Cauchy-Schwarz drives p_c negative
    n = np.full(8, 0.1)
    g1 = np.triu(np.full((8, 8), 0.3 + 0.0j))
    grid = _grid(8)
    with pytest.raises(InvariantViolation):
        coincidence_probability(_ensemble(n, g1, grid, stochastic=True), grid)


def test_arrays_helper_matches_public_functional():
    params = default_horizon(make_params(0.5))
    ens = deterministic_correlations(params, CASE_DEPHASING_NO_FF)
    res = coincidence_probability(ens, ens.grid)
    assert coincidence_from_arrays(ens.n_bar, ens.g1_bar, ens.grid.h) == pytest.approx(
        res.p_c, abs=1e-15
    )
