import numpy as np
import pytest
from hypothesis import given, strategies as st

from sps_monitor.errors import InvalidParams, InvariantViolation
from sps_monitor.model import (
    BasisState,
    Params,
    build_operators,
    check_density,
    default_dt,
    initial_state,
    validate_params,
)

from conftest import make_params


def test_basis_indices_are_fixed():
    assert BasisState.X2_0 == 0
    assert BasisState.X1_0 == 1
    assert BasisState.G_1 == 2
    assert BasisState.G_0 == 3


def test_hamiltonian_paper_coupling():
    ops = build_operators(make_params(0.5, g=0.1))
    expected = np.zeros((4, 4), dtype=complex)
    expected[2, 1] = 0.1j
    expected[1, 2] = -0.1j
    assert np.array_equal(ops.H, expected)
    assert np.array_equal(ops.H, ops.H.conj().T)


def test_hamiltonian_zero_coupling():
    ops = build_operators(make_params(0.5, g=0.0))
    assert np.array_equal(ops.H, np.zeros((4, 4)))


def test_observer_is_projector():
    ops = build_operators(make_params(0.5))
    assert np.array_equal(ops.observer @ ops.observer, ops.observer)
    g1 = initial_state(BasisState.G_1)
    x1 = initial_state(BasisState.X1_0)
    assert np.array_equal(ops.observer @ g1, np.zeros((4, 4)))
    assert np.array_equal(ops.observer @ x1, x1)


def test_number_operator_is_adag_a():
    ops = build_operators(make_params(0.5))
    assert np.array_equal(ops.a.conj().T @ ops.a, ops.n_op)


def test_jump_operators_map_basis_into_basis():
    ops = build_operators(make_params(0.5))
    basis = np.eye(4)
    images = {
        "sigma1_minus": {1: 3},
        "sigma2_minus": {0: 1},
        "a": {2: 3},
    }
    for name, mapping in images.items():
        op = getattr(ops, name)
        for src in range(4):
            out = op @ basis[:, src]
            if src in mapping:
                assert np.array_equal(out, basis[:, mapping[src]])
            else:
                assert np.array_equal(out, np.zeros(4))


def test_operators_are_read_only():
    ops = build_operators(make_params(0.5))
    with pytest.raises(ValueError):
        ops.H[0, 0] = 1.0


@given(st.floats(min_value=0.0, max_value=10.0, allow_nan=False))
def test_hamiltonian_structure_any_coupling(g):
    ops = build_operators(Params(g=g, gamma2=0.5))
    assert np.array_equal(ops.H, ops.H.conj().T)
    nonzero = np.argwhere(ops.H != 0)
    if g == 0:
        assert nonzero.size == 0
    else:
        assert sorted(map(tuple, nonzero)) == [(1, 2), (2, 1)]
        assert ops.H[2, 1] == 1j * g


def test_initial_state_examples():
    assert np.array_equal(initial_state(BasisState.X2_0), np.diag([1, 0, 0, 0]).astype(complex))
    assert np.array_equal(initial_state(BasisState.G_0), np.diag([0, 0, 0, 1]).astype(complex))
    assert np.array_equal(initial_state(BasisState.X1_0), np.diag([0, 1, 0, 0]).astype(complex))


def test_initial_state_bad_label():
    with pytest.raises(InvalidParams):
        initial_state(7)


def test_validate_reference_point_is_clean():
    report = validate_params(make_params(0.5, horizon=100.0))
    assert report.clean


def test_validate_bad_cavity_warning():
    report = validate_params(make_params(0.5, gamma1=0.5, horizon=100.0))
    assert not report.clean
    assert "bad-cavity" in report.warnings[0]


@pytest.mark.parametrize(
    "kw",
    [
        {"eta": 1.2},
        {"eta": -0.1},
        {"gamma": -1.0},
        {"g": -0.5},
        {"dt": 0.2},
        {"corr_stride": 0},
        {"n_traj": 0},
        {"hbar": 2.0},
        {"master_seed": -1},
        {"master_seed": 2**64},
    ],
)
def test_validate_hard_errors(kw):
    with pytest.raises(InvalidParams):
        validate_params(make_params(0.5, horizon=100.0, **kw))


def test_horizon_floor_is_one_snapshot_tile():
    # construction rounds tiny horizons up to a single stride quantum
    p = make_params(0.0, horizon=0.01, corr_stride=1, dt=0.05,
                    g=0.0, gamma=0.0, gamma1=0.0, kappa=0.1)
    assert p.horizon == pytest.approx(0.05)
    assert p.n_steps == 1


def test_default_dt_rule():
    assert default_dt(0.1, 1.0, 0.1, 0.001, 0.5) == 0.01
    assert default_dt(0.1, 2.0, 0.1, 0.001, 0.5) == 0.005
    assert default_dt(0.0, 0.0, 0.0, 0.0, 0.0) == 0.01
    assert make_params(2.0).dt == 0.005


def test_horizon_rounds_to_snapshot_grid():
    # quantum is dt * corr_stride = 0.25; 100.13 rounds to the nearest tile
    p = make_params(0.5, horizon=100.13)
    assert p.horizon == pytest.approx(100.25)
    assert p.n_steps % p.corr_stride == 0
    assert p.n_snapshots == p.n_steps // p.corr_stride + 1


def test_unresolved_horizon_blocks_step_count():
    with pytest.raises(InvalidParams):
        _ = make_params(0.5).n_steps


def test_check_density_accepts_valid():
    check_density(initial_state(BasisState.X2_0))


def test_check_density_rejects_nonhermitian():
    rho = initial_state(BasisState.X2_0)
    bad = rho + 1e-6 * np.array([[0, 1j, 0, 0]] + [[0] * 4] * 3)
    with pytest.raises(InvariantViolation):
        check_density(bad)


def test_check_density_rejects_trace():
    with pytest.raises(InvariantViolation):
        check_density(1.1 * initial_state(BasisState.X2_0))


def test_check_density_rejects_negative_eigenvalue():
    rho = np.diag([0.6, 0.5, 0.0, -0.1]).astype(complex)
    with pytest.raises(InvariantViolation):
        check_density(rho)
