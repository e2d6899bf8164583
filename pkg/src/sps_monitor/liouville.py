"""Deterministic (Lindblad) propagation and its exact matrix representation.

Density matrices are vectorized column-major, vec(rho)[i + 4j] = rho[i, j],
so that vec(A rho B) = (B^T kron A) vec(rho).  The fixed-step RK4 chain is
the production integrator; the matrix exponential of the Liouvillian is the
independent accuracy oracle and also powers the two-time correlators.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .errors import InvalidParams, NumericalBlowup
from .model import (
    DIM,
    BasisState,
    OperatorSet,
    Params,
    build_operators,
    check_density,
    initial_state,
)

#: Any state entry beyond this magnitude is treated as an integration blowup.
BLOWUP_LIMIT = 1e3

D2 = DIM * DIM

#: Vectorized positions of the density-matrix diagonal.
DIAG_INDICES = np.arange(DIM) * (DIM + 1)

#: Permutation implementing the matrix transpose on column-major vectors.
TRANSPOSE_PERM = np.array([(idx // DIM) + DIM * (idx % DIM) for idx in range(D2)])

#: Ground-state population |G,0><G,0| sits at this vectorized index.
GROUND_INDEX = int(BasisState.G_0) * (DIM + 1)


def vec(rho: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a 4x4 matrix."""
    return np.asarray(rho, dtype=complex).reshape(D2, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec`."""
    return np.asarray(v).reshape(DIM, DIM, order="F")


@dataclass(frozen=True, eq=False)
class LindbladGenerator:
    """Hamiltonian plus the four incoherent channels as (rate, operator) pairs."""

    ops: OperatorSet
    channels: tuple[tuple[float, np.ndarray], ...]

    @classmethod
    def from_params(cls, params: Params) -> "LindbladGenerator":
        ops = build_operators(params)
        channels = (
            (params.gamma1, ops.sigma1_minus),
            (params.gamma2, ops.sigma2_minus),
            (params.kappa, ops.a),
            (params.gamma, ops.observer),
        )
        return cls(ops=ops, channels=channels)


def lindblad_rhs(rho: np.ndarray, gen: LindbladGenerator) -> np.ndarray:
    """Right-hand side -i[H, rho] + sum_c rate_c D[L_c] rho.

    D[L] rho = L rho L^dag - (L^dag L rho + rho L^dag L) / 2.  The result is
    traceless and Hermitian for Hermitian input.
    """
    H = gen.ops.H
    out = -1j * (H @ rho - rho @ H)
    for rate, L in gen.channels:
        if rate == 0.0:
            continue
        Ld = L.conj().T
        LdL = Ld @ L
        out = out + rate * (L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL))
    return out


def liouvillian_matrix(gen: LindbladGenerator) -> np.ndarray:
    """16x16 matrix L with unvec(L vec(rho)) = lindblad_rhs(rho)."""
    eye = np.eye(DIM, dtype=complex)
    H = gen.ops.H
    lmat = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for rate, L in gen.channels:
        if rate == 0.0:
            continue
        LdL = L.conj().T @ L
        lmat += rate * (
            np.kron(L.conj(), L) - 0.5 * (np.kron(eye, LdL) + np.kron(LdL.T, eye))
        )
    return lmat


@dataclass(frozen=True, eq=False)
class Propagator:
    """Exact flow map exp(L * dt) acting on vectorized density matrices."""

    dt: float
    matrix: np.ndarray

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho))


def propagator(gen: LindbladGenerator, dt: float) -> Propagator:
    """Matrix exponential of the Liouvillian over one interval."""
    if dt <= 0:
        raise InvalidParams(f"propagator duration must be > 0, got {dt}")
    return Propagator(dt=dt, matrix=expm(liouvillian_matrix(gen) * dt))


def propagator_cache(gen: LindbladGenerator, dt: float, count: int) -> list[Propagator]:
    """Powers [I, P, P^2, ...] of the one-interval propagator.

    The generator is time independent, so the k-th entry propagates over
    k * dt; building by repeated multiplication keeps the whole cache at one
    matrix-exponential evaluation.
    """
    base = propagator(gen, dt)
    mats = [np.eye(D2, dtype=complex)]
    for _ in range(1, count):
        mats.append(mats[-1] @ base.matrix)
    return [Propagator(dt=k * dt, matrix=m) for k, m in enumerate(mats)]


# --- low-level stepping kernel (shared with the stochastic integrator) ---


def rk4_batch(v: np.ndarray, lmat_t: np.ndarray, h: float) -> np.ndarray:
    """Classical RK4 update of a batch of vectorized states (rows of v)."""
    k1 = v @ lmat_t
    k2 = (v + (0.5 * h) * k1) @ lmat_t
    k3 = (v + (0.5 * h) * k2) @ lmat_t
    k4 = (v + h * k3) @ lmat_t
    return v + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def symmetrize_renormalize(v: np.ndarray) -> np.ndarray:
    """Hermitian-symmetrize each state and divide by its trace."""
    v = 0.5 * (v + v[:, TRANSPOSE_PERM].conj())
    tr = v[:, DIAG_INDICES].real.sum(axis=1)
    return v / tr[:, None]


def check_blowup(v: np.ndarray, t: float) -> None:
    peak = np.abs(v).max()
    if peak > BLOWUP_LIMIT:
        raise NumericalBlowup(f"state entry magnitude {peak:.3e} at t = {t:.6g}")


def rk4_step(rho: np.ndarray, gen: LindbladGenerator, h: float) -> np.ndarray:
    """One deterministic step; output is symmetrized and trace-renormalized."""
    v = vec(rho)[None, :]
    lmat_t = liouvillian_matrix(gen).T
    out = rk4_batch(v, lmat_t, h)
    check_blowup(out, h)
    return unvec(symmetrize_renormalize(out)[0])


@dataclass(frozen=True, eq=False)
class DeterministicSeries:
    """Lindblad evolution sampled on the integration and snapshot grids."""

    t: np.ndarray
    pops: np.ndarray
    expO: np.ndarray
    nphot: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray

    def to_csv(self, path) -> None:
        header = "t,rho00,rho11,rho22,rho33,expO,n"
        data = np.column_stack([self.t, self.pops, self.expO, self.nphot])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def evolve_deterministic(
    rho0: np.ndarray, gen: LindbladGenerator, params: Params
) -> DeterministicSeries:
    """Propagate rho0 over the full horizon with fixed-step RK4.

    Populations and <O> are recorded every step; full density matrices every
    corr_stride steps, where hermiticity, trace and positivity are checked.
    """
    h = params.dt
    n = params.n_steps
    stride = params.corr_stride
    lmat_t = np.ascontiguousarray(liouvillian_matrix(gen).T)

    v = vec(rho0)[None, :].copy()
    pops = np.empty((n + 1, DIM))
    snaps = np.empty((params.n_snapshots, DIM, DIM), dtype=complex)

    snap_idx = 0
    for k in range(n):
        pops[k] = v[0, DIAG_INDICES].real
        if k % stride == 0:
            snaps[snap_idx] = unvec(v[0])
            check_blowup(v, k * h)
            snap_idx += 1
        v = symmetrize_renormalize(rk4_batch(v, lmat_t, h))
    pops[n] = v[0, DIAG_INDICES].real
    snaps[snap_idx] = unvec(v[0])
    check_blowup(v, n * h)

    t = np.arange(n + 1) * h
    snap_times = np.arange(params.n_snapshots) * (h * stride)
    for j, rho in enumerate(snaps):
        check_density(rho, context=f"deterministic snapshot t={snap_times[j]:.6g}")
    return DeterministicSeries(
        t=t,
        pops=pops,
        expO=pops[:, 0] + pops[:, 1],
        nphot=pops[:, 2],
        snapshot_times=snap_times,
        snapshots=snaps,
    )


#: Horizon search proceeds in segments of this many cavity lifetimes.
HORIZON_SEGMENT = 10.0

#: Absolute cap on the automatic horizon, in cavity lifetimes.
HORIZON_CAP = 500.0

#: The run is considered complete once this much population reached |G,0>.
HORIZON_GROUND_TARGET = 0.999


def default_horizon(params: Params) -> Params:
    """Resolve horizon = None to the smallest multiple of 10/kappa at which the
    deterministic ground population reaches 0.999, capped at 500/kappa.

    Uses the exact propagator chain, so the choice is independent of dt.
    """
    if params.horizon is not None:
        return params
    if params.kappa <= 0:
        raise InvalidParams("automatic horizon requires kappa > 0")
    gen = LindbladGenerator.from_params(params)
    segment = HORIZON_SEGMENT / params.kappa
    cap = HORIZON_CAP / params.kappa
    step = expm(liouvillian_matrix(gen) * segment)
    v = vec(initial_state(BasisState.X2_0))
    t = 0.0
    while t < cap - 1e-9:
        v = step @ v
        t += segment
        if v[GROUND_INDEX].real >= HORIZON_GROUND_TARGET:
            break
    return replace(params, horizon=min(t, cap))
