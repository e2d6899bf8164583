"""Stochastic master equation integration and measurement records.

Each trajectory owns an independent Gaussian noise stream derived from
(master_seed, trajectory index), so results never depend on scheduling.
The drift is integrated with the same RK4 kernel as the deterministic path;
the measurement back-action enters through an Euler-Maruyama term

    sqrt(eta * gamma) * ((O - <O>) rho + rho (O - <O>)) * dW,

with <O> taken from the pre-step state.

The integrated record nu = sum_k (<O>_k h + beta dW_k) uses the same dW
realization that conditions the state: record and conditioning noise are one
process.  The record noise scale is beta = 1/(2 sqrt(eta gamma)): for a
diffusive measurement whose back-action coefficient is sqrt(eta gamma), the
physical current is dy = 2 sqrt(eta gamma) <O> dt + dW, and normalizing the
signal to <O> leaves noise dW / (2 sqrt(eta gamma)).  (Quoting the noise as
1/sqrt(eta gamma) instead is a common slip; it is inconsistent with the
back-action term and would halve the record's information content.)

For two-time correlations the engine also carries, per trajectory, the
record-driven propagation of cavity-deformed operators (which closes on the
four matrix entries <m| X |G,0>) and the backward likelihood ("effect")
vector of the remaining record.  Together these give per-shot photon
correlations conditioned on the full record; see `correlators`.

For throughput, blocks of trajectories advance in lockstep as a (B, 16)
array; per-trajectory results are independent of the block partition up to
float round-off, and bit-exactly reproducible for a fixed partition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, RecordUndefined
from .liouville import (
    D2,
    LindbladGenerator,
    check_blowup,
    liouvillian_matrix,
    rk4_batch,
    symmetrize_renormalize,
    unvec,
    vec,
)
from .model import DIM, BasisState, Params, initial_state

_MASK64 = 2**64 - 1
_GOLDEN = 0x9E3779B97F4A7C15

#: vec indices of <O>: populations of |X2,0> and |X1,0>.
_EXC_INDICES = (0, 5)

#: Photon population |G,1><G,1| in vec layout.
_PHOTON_INDEX = 10

#: Third column of rho (entries <m|rho|G,1>) in vec layout.
_CAVITY_COLUMN = slice(2 * DIM, 3 * DIM)

#: vec rows of the deformed-operator support (column |G,0> of rho a^dag).
_DEFORMED_BLOCK = slice(3 * DIM, 4 * DIM)

#: vec index of |G,0><G,0|, the component of the backward effect that closes
#: the two-time correlation (the photon has left; the emitter is dark).
_GROUND_VEC_INDEX = 15

#: Coherences that every channel and the Hamiltonian leave at exactly zero
#: when starting from a basis state of the cascade: everything outside the
#: diagonal and the |X1,0> <-> |G,1> transfer pair.  Their persistence is
#: what makes <a> vanish identically.
FORBIDDEN_COHERENCES = np.array([1, 2, 3, 4, 7, 8, 11, 12, 13, 14])

# The Euler-Maruyama back-action term uses the realized dW^2 rather than its
# mean dt, so near-pure conditional states transiently overshoot purity 1;
# the excursions are heavy-tailed with measured magnitudes up to ~1e-6 at
# dt = 0.01.  The guards below flag genuine pathologies (orders of magnitude
# larger), not that discretization transient.
_PURITY_TOL = 1e-4
_COHERENCE_TOL = 1e-10
_EXPO_FLOOR = -1e-4


def splitmix64(x: int) -> int:
    """One SplitMix64 scramble step (public-domain construction)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Per-trajectory seed: SplitMix-style hash of (master_seed, index)."""
    return splitmix64((splitmix64(master_seed) ^ ((index + 1) * _GOLDEN)) & _MASK64)


def record_noise_scale(eta: float, gamma: float) -> float:
    """Noise amplitude beta of the normalized record J = <O> + beta xi."""
    if eta * gamma <= 0.0:
        raise RecordUndefined(f"measurement record undefined for eta * gamma = {eta * gamma}")
    return 0.5 / np.sqrt(eta * gamma)


class NoiseStream:
    """Reproducible Wiener-increment source for one trajectory."""

    def __init__(self, master_seed: int, index: int):
        self.master_seed = master_seed
        self.index = index
        self.seed = derive_seed(master_seed, index)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def gaussian_increment(self, h: float) -> float:
        """One draw dW ~ Normal(0, h)."""
        return float(self._rng.standard_normal()) * np.sqrt(h)

    def increments(self, n: int, h: float) -> np.ndarray:
        """n consecutive draws; identical to n single draws from this stream."""
        return self._rng.standard_normal(n) * np.sqrt(h)


def gaussian_increment(stream: NoiseStream, h: float) -> float:
    if h <= 0:
        raise InvariantViolation(f"increment duration must be > 0, got {h}")
    return stream.gaussian_increment(h)


def _innovation_weights() -> np.ndarray:
    """Vec-layout weights w[i+4j] = O_ii + O_jj of the back-action term."""
    d = np.array([1.0, 1.0, 0.0, 0.0])
    return np.add.outer(d, d).reshape(D2, order="F")


_WEIGHTS = _innovation_weights()


def _rk4_step_matrix(generator: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 transfer matrix I + hM + ... + (hM)^4/24."""
    out = np.eye(generator.shape[0], dtype=generator.dtype)
    term = out
    for p in range(1, 5):
        term = term @ (h * generator) / p
        out = out + term
    return out


def sme_step(
    rho: np.ndarray,
    gen: LindbladGenerator,
    eta: float,
    gamma: float,
    h: float,
    dW: float,
) -> np.ndarray:
    """One conditioned step: RK4 drift plus Euler-Maruyama diffusion.

    With eta * gamma = 0 or dW = 0 this reproduces the deterministic step
    exactly (same kernel, the diffusion term is skipped).
    """
    v = vec(rho)[None, :]
    lmat_t = liouvillian_matrix(gen).T
    coef = np.sqrt(eta * gamma)
    exp_o = v[:, _EXC_INDICES[0]].real + v[:, _EXC_INDICES[1]].real
    out = rk4_batch(v, lmat_t, h)
    if coef != 0.0 and dW != 0.0:
        out = out + (coef * dW) * ((_WEIGHTS[None, :] - 2.0 * exp_o[:, None]) * v)
    check_blowup(out, h)
    return unvec(symmetrize_renormalize(out)[0])


@dataclass(frozen=True, eq=False)
class TrajectoryOutcome:
    """One stochastic run: conditioned observables plus the integrated record."""

    traj_index: int
    seed: int
    expO_series: np.ndarray
    rho_snapshots: np.ndarray
    nu: float | None
    tau_integral: float


@dataclass(eq=False)
class BlockResult:
    """Lockstep integration output for a contiguous block of trajectories."""

    indices: np.ndarray
    nu: np.ndarray | None
    tau: np.ndarray
    kernel_cols: np.ndarray | None = None  # (B, 4, m): rho[:, |G,1>] at snapshots
    nphot: np.ndarray | None = None  # (B, m)
    smooth_weights: np.ndarray | None = None  # (B, m): full-record closure weights
    slot_transfers: np.ndarray | None = None  # (B, m-1, 4, 4): deformed-block maps
    expO: np.ndarray | None = None  # (B, n_steps + 1)
    state_snapshots: np.ndarray | None = None  # (B, m, 16)
    state_sum: np.ndarray | None = None  # (m, 16)
    max_purity: float = 0.0


def _deformed_generator(lmat: np.ndarray) -> np.ndarray:
    """Restriction of the Liouvillian to the cavity-deformed block.

    Operators of the form rho a^dag live on the matrix column |G,0>; that
    column is invariant under the flow (nothing couples back into it), so its
    four amplitudes evolve with this closed 4x4 real generator.
    """
    leak = np.abs(lmat[: 3 * DIM, _DEFORMED_BLOCK]).max()
    if leak > 0.0:
        raise InvariantViolation(f"deformed block is not invariant (leak {leak:.3e})")
    block = lmat[_DEFORMED_BLOCK, _DEFORMED_BLOCK]
    if np.abs(block.imag).max() > 0.0:
        raise InvariantViolation("deformed-block generator is expected to be real")
    return np.ascontiguousarray(block.real)


def run_block(
    params: Params,
    gen: LindbladGenerator,
    indices,
    *,
    want_kernel: bool = False,
    want_series: bool = False,
    want_states: bool = False,
    want_state_sum: bool = False,
    rho0: np.ndarray | None = None,
) -> BlockResult:
    """Integrate a block of trajectories in lockstep over the full horizon.

    With want_kernel the block also produces everything the smoothed
    correlation estimator needs: snapshot columns rho[:, |G,1>], photon
    populations, per-snapshot-interval transfer matrices of the record-driven
    deformed-operator flow, and the backward-pass smoothing weights
    E_33 / Tr[E rho] built from the remaining record.

    Snapshots every corr_stride steps carry the runtime checks: blowup guard,
    conditional purity <= 1 + 1e-6, and the structurally-zero coherences
    staying below 1e-10 (the <a> = 0 assertion).
    """
    indices = np.asarray(list(indices), dtype=np.int64)
    B = indices.size
    h = params.dt
    n = params.n_steps
    stride = params.corr_stride
    m_snap = params.n_snapshots

    lmat = liouvillian_matrix(gen)
    lmat_t = np.ascontiguousarray(lmat.T)
    coef = float(np.sqrt(params.eta * params.gamma))
    beta = record_noise_scale(params.eta, params.gamma) if coef > 0.0 else None

    v0 = vec(initial_state(BasisState.X2_0) if rho0 is None else rho0)
    v = np.tile(v0, (B, 1))

    dW = np.empty((B, n))
    for b, idx in enumerate(indices):
        dW[b] = NoiseStream(params.master_seed, int(idx)).increments(n, h)

    nu = np.zeros(B) if beta is not None else None
    tau = np.zeros(B)
    expO_path = np.empty((B, n)) if want_kernel else None
    expO_all = np.empty((B, n + 1)) if want_series else None
    kernel_cols = np.empty((B, DIM, m_snap), dtype=complex) if want_kernel else None
    nphot = np.empty((B, m_snap)) if want_kernel else None
    snaps = (
        np.empty((B, m_snap, D2), dtype=complex) if (want_states or want_kernel) else None
    )
    state_sum = np.zeros((m_snap, D2), dtype=complex) if want_state_sum else None
    transfers = np.empty((B, m_snap - 1, DIM, DIM)) if want_kernel else None
    if want_kernel:
        a4 = _rk4_step_matrix(_deformed_generator(lmat), h)
        dweights = _WEIGHTS[_DEFORMED_BLOCK]
        running = None
    max_purity = 0.0

    def take_snapshot(j: int, t: float) -> None:
        nonlocal max_purity
        check_blowup(v, t)
        purity = (v.real**2 + v.imag**2).sum(axis=1).max()
        max_purity = max(max_purity, float(purity))
        if purity > 1.0 + _PURITY_TOL:
            raise InvariantViolation(f"conditional purity {purity!r} exceeds 1 at t = {t:.6g}")
        stray = np.abs(v[:, FORBIDDEN_COHERENCES]).max()
        if stray > _COHERENCE_TOL:
            raise InvariantViolation(
                f"structurally-zero coherence grew to {stray:.3e} at t = {t:.6g}"
            )
        if kernel_cols is not None:
            kernel_cols[:, :, j] = v[:, _CAVITY_COLUMN]
            nphot[:, j] = v[:, _PHOTON_INDEX].real
        if snaps is not None:
            snaps[:, j] = v
        if state_sum is not None:
            state_sum[j] += v.sum(axis=0)

    for k in range(n):
        if k % stride == 0:
            j = k // stride
            if want_kernel and j > 0:
                transfers[:, j - 1] = running
            take_snapshot(j, k * h)
            if want_kernel:
                running = np.tile(np.eye(DIM), (B, 1, 1))
        exp_o = v[:, 0].real + v[:, 5].real
        tau += exp_o * h
        if nu is not None:
            nu += exp_o * h + beta * dW[:, k]
        if expO_path is not None:
            expO_path[:, k] = exp_o
        if expO_all is not None:
            expO_all[:, k] = exp_o
        if want_kernel:
            dvec = (coef * dW[:, k])[:, None] * (dweights[None, :] - 2.0 * exp_o[:, None])
            running = a4 @ running + dvec[:, :, None] * running
        out = rk4_batch(v, lmat_t, h)
        if coef != 0.0:
            out = out + (coef * dW[:, k])[:, None] * (
                (_WEIGHTS[None, :] - 2.0 * exp_o[:, None]) * v
            )
        v = symmetrize_renormalize(out)
    if want_kernel and m_snap >= 2:
        transfers[:, m_snap - 2] = running
    take_snapshot(m_snap - 1, n * h)
    if expO_all is not None:
        expO_all[:, n] = v[:, 0].real + v[:, 5].real
        if expO_all.min() < _EXPO_FLOOR or expO_all.max() > 1.0 + _PURITY_TOL:
            raise InvariantViolation(
                f"<O> left [0, 1]: range [{expO_all.min():.3e}, {expO_all.max():.3e}]"
            )

    smooth_weights = None
    if want_kernel:
        smooth_weights = _backward_smoothing_weights(
            lmat, snaps, expO_path, dW, coef, h, stride
        )

    return BlockResult(
        indices=indices,
        nu=nu,
        tau=tau,
        kernel_cols=kernel_cols,
        nphot=nphot,
        smooth_weights=smooth_weights,
        slot_transfers=transfers,
        expO=expO_all,
        state_snapshots=snaps if want_states else None,
        state_sum=state_sum,
        max_purity=max_purity,
    )


def _backward_smoothing_weights(
    lmat: np.ndarray,
    snaps: np.ndarray,
    expO_path: np.ndarray,
    dW: np.ndarray,
    coef: float,
    h: float,
    stride: int,
) -> np.ndarray:
    """Ground-state component of the backward effect over its normalization.

    The effect row E(t) propagates vec(I) backwards through the adjoints of
    the realized per-step linear maps (RK4 drift matrix plus the diagonal
    back-action weights); E_33(t)/Tr[E(t) rho(t)] is the likelihood weight of
    the record after t given that the photon has already left, which is
    exactly the factor that closes a two-time correlation at its later time.
    With no monitoring the effect stays vec(I) and every weight is 1.
    """
    B, n = dW.shape
    m_snap = snaps.shape[1]
    if np.abs(lmat.imag).max() > 0.0:
        raise InvariantViolation("backward pass expects a real Liouvillian")
    a16 = _rk4_step_matrix(lmat.real, h)
    eff = np.zeros((B, D2))
    eff[:, [0, 5, 10, 15]] = 1.0
    w_ground = np.empty((B, m_snap))
    norm = np.empty((B, m_snap))

    def close(j: int) -> None:
        w_ground[:, j] = eff[:, _GROUND_VEC_INDEX]
        norm[:, j] = (eff * snaps[:, j].real).sum(axis=1)

    close(m_snap - 1)
    for k in range(n - 1, -1, -1):
        dvec = (coef * dW[:, k])[:, None] * (_WEIGHTS[None, :] - 2.0 * expO_path[:, k][:, None])
        eff = eff @ a16 + eff * dvec
        if k % stride == 0:
            close(k // stride)
    bad = np.abs(norm).min()
    if bad < 1e-12:
        raise InvariantViolation(f"record likelihood underflow in smoothing pass ({bad:.3e})")
    return w_ground / norm


def simulate_trajectory(
    params: Params,
    gen: LindbladGenerator,
    index: int,
    *,
    with_record: bool = True,
    rho0: np.ndarray | None = None,
) -> TrajectoryOutcome:
    """Run a single trajectory and keep its full observable series.

    The record nu is the discrete integral of J(t) = <O> + beta xi(t); it is
    undefined (RecordUndefined) when eta * gamma = 0.
    """
    if with_record and params.eta * params.gamma <= 0.0:
        raise RecordUndefined(
            f"measurement record undefined for eta * gamma = {params.eta * params.gamma}"
        )
    blk = run_block(
        params,
        gen,
        [index],
        want_series=True,
        want_states=True,
        rho0=rho0,
    )
    snapshots = np.stack([unvec(s) for s in blk.state_snapshots[0]])
    return TrajectoryOutcome(
        traj_index=index,
        seed=derive_seed(params.master_seed, index),
        expO_series=blk.expO[0],
        rho_snapshots=snapshots,
        nu=float(blk.nu[0]) if (with_record and blk.nu is not None) else None,
        tau_integral=float(blk.tau[0]),
    )


def record_series(params: Params, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Replay one trajectory's measurement record J(t) on the step grid.

    Debug helper: regenerates the identical noise stream from the seed, so
    the returned J matches what conditioned the stored trajectory.
    """
    beta = record_noise_scale(params.eta, params.gamma)
    gen = LindbladGenerator.from_params(params)
    blk = run_block(params, gen, [index], want_series=True)
    h = params.dt
    dW = NoiseStream(params.master_seed, index).increments(params.n_steps, h)
    t = np.arange(params.n_steps) * h
    J = blk.expO[0, :-1] + beta * dW / h
    return t, J
