"""Built-in invariant suite: quick structural checks, seconds to run."""

from __future__ import annotations

import numpy as np

from .correlators import CorrelationGrid
from .errors import SimulationError
from .estimator import AmmseCoefficients, PriorMoments, ammse_coeffs
from .hom import coincidence_from_arrays
from .liouville import (
    LindbladGenerator,
    evolve_deterministic,
    lindblad_rhs,
    liouvillian_matrix,
    propagator,
    rk4_step,
    unvec,
    vec,
)
from .model import BasisState, Params, build_operators, initial_state
from .trajectory import NoiseStream, run_block, sme_step


def _check_operators() -> None:
    ops = build_operators(Params(g=0.1))
    assert np.array_equal(ops.H, ops.H.conj().T)
    assert ops.H[2, 1] == 0.1j and ops.H[1, 2] == -0.1j
    assert np.array_equal(ops.observer @ ops.observer, ops.observer)
    assert np.array_equal(ops.a.conj().T @ ops.a, ops.n_op)


def _check_liouvillian() -> None:
    gen = LindbladGenerator.from_params(Params(gamma2=0.5, horizon=10.0))
    lmat = liouvillian_matrix(gen)
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = 0.5 * (x + x.conj().T)
        rho /= rho.trace()
        direct = lindblad_rhs(rho, gen)
        assert np.abs(unvec(lmat @ vec(rho)) - direct).max() < 1e-12
        assert abs(direct.trace()) < 1e-12


def _check_rk4() -> None:
    params = Params(g=0.0, gamma=0.0, gamma1=0.0, gamma2=0.0, kappa=1.0, horizon=1.0, dt=0.01)
    gen = LindbladGenerator.from_params(params)
    rho = rk4_step(initial_state(BasisState.G_1), gen, 0.01)
    assert abs(rho[2, 2].real - np.exp(-0.01)) < 1e-12
    p1 = propagator(gen, 0.5)
    p2 = propagator(gen, 1.0)
    assert np.abs(p1.matrix @ p1.matrix - p2.matrix).max() < 1e-10


def _check_bookkeeping() -> None:
    params = Params(gamma2=0.5, horizon=80.0)
    gen = LindbladGenerator.from_params(params)
    series = evolve_deterministic(initial_state(BasisState.X2_0), gen, params)
    leaked = params.kappa * np.trapezoid(series.nphot, series.t)
    lost = params.gamma1 * np.trapezoid(series.pops[:, 1], series.t)
    left = series.pops[-1, :3].sum()
    assert abs(leaked + lost + left - 1.0) < 1e-6


def _check_sme_reduction() -> None:
    params = Params(gamma2=0.5, eta=0.0, horizon=5.0)
    gen = LindbladGenerator.from_params(params)
    rho = initial_state(BasisState.X2_0)
    a = rk4_step(rho, gen, params.dt)
    b = sme_step(rho, gen, 0.0, params.gamma, params.dt, 0.123)
    assert np.array_equal(a, b)


def _check_noise() -> None:
    s1 = NoiseStream(42, 7)
    s2 = NoiseStream(42, 7)
    assert np.array_equal(s1.increments(100, 0.01), s2.increments(100, 0.01))
    var = NoiseStream(42, 8).increments(200_000, 0.01).var()
    assert abs(var - 0.01) < 0.0005


def _check_estimator() -> None:
    coeffs = ammse_coeffs(PriorMoments(m_tau=2.0, sigma_tau_sq=4.0), 1.0, 0.1, 100.0)
    assert abs(coeffs.G - 4.0 / 1004.0) < 1e-15
    assert abs(coeffs.m - 2000.0 / 1004.0) < 1e-12
    assert abs(coeffs.G + coeffs.m / 2.0 - 1.0) < 1e-12
    assert isinstance(coeffs, AmmseCoefficients)


def _check_hom_limits() -> None:
    rng = np.random.default_rng(3)
    m = 40
    psi = rng.normal(size=m) + 1j * rng.normal(size=m)
    psi *= 0.1
    n = np.abs(psi) ** 2
    pure = np.triu(np.outer(psi.conj(), psi))
    assert abs(coincidence_from_arrays(n, pure, 0.25)) < 1e-12
    assert coincidence_from_arrays(n, np.diag(n).astype(complex), 0.25) == 0.5


def _check_trajectory_engine() -> None:
    params = Params(gamma2=0.5, horizon=5.0, n_traj=4)
    gen = LindbladGenerator.from_params(params)
    blk = run_block(params, gen, range(4), want_kernel=True)
    assert blk.nu.shape == (4,)
    assert blk.max_purity <= 1.0 + 1e-8
    grid = CorrelationGrid.from_params(params)
    assert grid.m_snap == params.n_snapshots


CHECKS = [
    ("operator algebra", _check_operators),
    ("liouvillian vs direct right-hand side", _check_liouvillian),
    ("rk4 single-step accuracy and semigroup", _check_rk4),
    ("excitation bookkeeping", _check_bookkeeping),
    ("sme eta=0 reduction", _check_sme_reduction),
    ("noise stream determinism and variance", _check_noise),
    ("estimator coefficients", _check_estimator),
    ("hom exact limits", _check_hom_limits),
    ("trajectory engine", _check_trajectory_engine),
]


def run_selftest() -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            fn()
        except (AssertionError, SimulationError) as exc:
            ok = False
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    return ok
