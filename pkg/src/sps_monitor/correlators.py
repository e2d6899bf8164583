"""First-order field correlations, per trajectory and ensemble averaged.

Deterministic evolutions use the quantum regression theorem: the state at
the earlier time, deformed by the cavity operator, is propagated with the
unconditioned Lindblad flow,

    G1(t, t') = Tr[ a · exp(L (t'-t)) ( rho(t) a^dag ) ].

Because that map is linear in rho and a trajectory delay shifts both time
arguments rigidly, ensemble averages of it reduce to accumulating
delay-shifted vec(rho a^dag) columns and applying the propagator rows once:

    G1(t_j, t_{j+s}) = w P_s vec(rho(t_j) a^dag),   w = row form of Tr[a (.)],

so the whole kernel in (start, lag) layout is one (M,16) @ (16,M) product.
That is the construction behind `regression_g1` / `assemble_ensemble` and
the deterministic comparison cases.

Monitored ensembles need more care: the feed-forward delay is applied after
the whole record exists, so the per-shot correlation must be conditioned on
the full record.  `smoothed_kernel_sums` therefore propagates the deformed
operator along the trajectory's own realized noise (the per-interval
transfer matrices produced by the integration engine) and closes each later
time with the backward-record likelihood weight:

    G1_i(t_j, t_k) = w_i(t_k) * [ T_i(t_k <- t_j) vec4(rho_i(t_j) a^dag) ]_a,

whose noise average still reproduces the unconditioned kernel (the backward
weights and transfer noise are mean-one), so the zero-delay ensemble remains
anchored to the deterministic case.  Without this full-record conditioning,
per-trajectory emission estimates carry filtering-lag noise that a delay
cannot remove, and the feed-forward correction measurably disappears.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .errors import DelayOutOfRange, EmptyBatch, InvalidParams, InvariantViolation
from .liouville import (
    D2,
    DeterministicSeries,
    LindbladGenerator,
    Propagator,
    evolve_deterministic,
    propagator_cache,
    vec,
)
from .model import DIM, BasisState, Params, initial_state

CASE_NO_DEPHASING = "no-dephasing"
CASE_DEPHASING_NO_FF = "dephasing-no-ff"
CASE_DEPHASING_FF = "dephasing-ff"

_DIAG_TOL = 1e-10
_CS_TOL = 1e-10
_NBAR_FLOOR = -1e-8

#: Near the kernel diagonal the Cauchy-Schwarz margin is O(gamma h n^2) and
#: the squared-mean estimator carries O(1/N) sampling noise, so Monte Carlo
#: ensembles get a noise allowance on top of the strict floating-point
#: tolerance (deterministic kernels keep the strict bound).
_CS_NOISE_COEFF = 100.0


@dataclass(frozen=True)
class CorrelationGrid:
    """Uniform two-time grid t_j = j * h covering [0, horizon + delta_max]."""

    h: float
    m_total: int
    m_snap: int

    def __post_init__(self) -> None:
        if self.h <= 0 or self.m_snap < 1 or self.m_total < self.m_snap:
            raise InvalidParams(
                f"bad correlation grid (h={self.h}, m_total={self.m_total}, m_snap={self.m_snap})"
            )

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.m_total) * self.h

    @property
    def max_slots(self) -> int:
        return self.m_total - self.m_snap

    @classmethod
    def from_params(cls, params: Params, delta_max: float = 0.0) -> "CorrelationGrid":
        if delta_max < 0:
            raise InvalidParams(f"delta_max must be >= 0, got {delta_max}")
        h = params.h_corr
        slots = int(np.floor(delta_max / h + 0.5))
        return cls(h=h, m_total=params.n_snapshots + slots, m_snap=params.n_snapshots)


def shift_slots(delay: float, grid: CorrelationGrid) -> int:
    """Quantize a delay to the nearest whole number of grid slots."""
    if delay < 0:
        raise DelayOutOfRange(f"delay must be >= 0, got {delay}")
    slots = int(np.rint(delay / grid.h))
    if slots > grid.max_slots:
        raise DelayOutOfRange(
            f"delay {delay} exceeds the grid headroom of {grid.max_slots} slots"
        )
    return slots


def trace_row(op: np.ndarray) -> np.ndarray:
    """Row vector w with w @ vec(X) = Tr[op @ X] (column-major vec)."""
    return np.asarray(op, dtype=complex).flatten(order="C")


def propagator_rows(prop_cache: list[Propagator], op: np.ndarray) -> np.ndarray:
    """Stack of w @ P_s rows, one per cached lag."""
    w = trace_row(op)
    return np.stack([w @ p.matrix for p in prop_cache])


def snapshot_vec_columns(snapshots: np.ndarray, a_op: np.ndarray) -> np.ndarray:
    """Columns vec(rho(t_j) a^dag), shape (16, n_snapshots)."""
    a_dag = a_op.conj().T
    deformed = np.einsum("jmk,kn->jmn", np.asarray(snapshots, dtype=complex), a_dag)
    return deformed.transpose(1, 2, 0).reshape(D2, -1, order="F")


def _lag_to_upper(g_lag: np.ndarray, m: int) -> np.ndarray:
    """Convert (lag, start) layout to an upper-triangular (M, M) kernel."""
    g1 = np.zeros((m, m), dtype=complex)
    for s in range(m):
        j = np.arange(m - s)
        g1[j, j + s] = g_lag[s, : m - s]
    return g1


def regression_g1(snapshots: np.ndarray, prop_cache: list[Propagator], a_op: np.ndarray) -> np.ndarray:
    """Upper-triangular G1(t_j, t_k), k >= j, for one snapshot series.

    prop_cache[k] must hold the propagator over k grid spacings; the diagonal
    reduces to the photon population since prop_cache[0] is the identity.
    """
    cols = snapshot_vec_columns(snapshots, a_op)
    m = cols.shape[1]
    if len(prop_cache) < m:
        raise InvalidParams(f"propagator cache covers {len(prop_cache)} lags, need {m}")
    rows = propagator_rows(prop_cache[:m], a_op)
    return _lag_to_upper(rows @ cols, m)


@dataclass(frozen=True, eq=False)
class CorrelationEnsemble:
    """Delay-corrected ensemble means of n(t) and G1(t, t')."""

    n_bar: np.ndarray
    g1_bar: np.ndarray
    n_contributing: int
    grid: CorrelationGrid
    stochastic: bool = True

    @property
    def cs_tolerance(self) -> float:
        """Cauchy-Schwarz slack: strict for exact kernels, noise-aware for
        finite Monte Carlo ensembles (conditional-state kernels only satisfy
        the bound in the ensemble mean)."""
        if not self.stochastic:
            return _CS_TOL
        peak = float(self.n_bar.max()) if self.n_bar.size else 0.0
        return _CS_TOL + _CS_NOISE_COEFF * peak * peak / max(self.n_contributing, 1)

    def validate(self) -> None:
        m = self.grid.m_total
        if self.n_bar.shape != (m,) or self.g1_bar.shape != (m, m):
            raise InvariantViolation("correlation ensemble arrays do not match the grid")
        if self.n_bar.min() < _NBAR_FLOOR or self.n_bar.max() > 1.0 + 1e-8:
            raise InvariantViolation(
                f"mean photon number outside [0, 1]: range "
                f"[{self.n_bar.min():.3e}, {self.n_bar.max():.3e}]"
            )
        diag_gap = np.abs(np.diagonal(self.g1_bar) - self.n_bar).max()
        if diag_gap > _DIAG_TOL:
            raise InvariantViolation(f"G1 diagonal deviates from n_bar by {diag_gap:.3e}")
        bound = np.outer(self.n_bar, self.n_bar)
        excess = (np.abs(self.g1_bar) ** 2 - bound).max()
        if excess > self.cs_tolerance:
            raise InvariantViolation(
                f"Cauchy-Schwarz violated by {excess:.3e} (tolerance {self.cs_tolerance:.3e})"
            )


class KernelAccumulator:
    """Index-ordered accumulation of shifted trajectory contributions.

    Workers may pre-reduce contiguous chunks; merging chunk sums in a fixed
    order keeps the result bit-reproducible for any worker count.
    """

    def __init__(self, grid: CorrelationGrid):
        self.grid = grid
        self.col_sum = np.zeros((D2, grid.m_total), dtype=complex)
        self.n_sum = np.zeros(grid.m_total)
        self.count = 0

    def add_trajectory(self, cols: np.ndarray, nphot: np.ndarray, slots: int) -> None:
        m = self.grid.m_snap
        if not 0 <= slots <= self.grid.max_slots:
            raise DelayOutOfRange(f"shift of {slots} slots does not fit the grid")
        self.col_sum[:, slots : slots + m] += cols
        self.n_sum[slots : slots + m] += nphot
        self.count += 1

    def add_chunk(self, col_sum: np.ndarray, n_sum: np.ndarray, count: int) -> None:
        self.col_sum += col_sum
        self.n_sum += n_sum
        self.count += count

    def raw(self, prop_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean photon number and kernel without invariant validation."""
        if self.count == 0:
            raise EmptyBatch("no trajectories accumulated")
        mean_cols = self.col_sum / self.count
        n_bar = self.n_sum / self.count
        return n_bar, _lag_to_upper(prop_rows @ mean_cols, self.grid.m_total)

    def finalize(self, prop_rows: np.ndarray, stochastic: bool = True) -> CorrelationEnsemble:
        n_bar, g1 = self.raw(prop_rows)
        ens = CorrelationEnsemble(
            n_bar=n_bar,
            g1_bar=g1,
            n_contributing=self.count,
            grid=self.grid,
            stochastic=stochastic,
        )
        ens.validate()
        return ens


def population_series(snapshots: np.ndarray) -> np.ndarray:
    """n(t_j) = <a^dag a> = rho_22(t_j) for a snapshot series."""
    return np.asarray(snapshots)[:, BasisState.G_1, BasisState.G_1].real


#: vec(rho a^dag) is supported on these rows only: a^dag moves the |G,1>
#: column of rho into the |G,0> column of the deformed matrix.
DEFORMED_ROWS = slice(3 * DIM, 4 * DIM)

#: Within the deformed block, this component is what Tr[a (.)] reads out.
_DEFORMED_READOUT = int(BasisState.G_1)


def smoothed_kernel_sums(
    block,
    slots: np.ndarray,
    grid: CorrelationGrid,
) -> tuple[np.ndarray, np.ndarray]:
    """Delay-shifted sums of per-shot smoothed kernels for one block.

    Returns (g_lag_sum, n_sum): g_lag_sum[s, j] accumulates the smoothed
    G1_i(t_{j - slots_i}, t_{j - slots_i + s}) contributions in trajectory
    order (lag-by-lag recursion through the per-interval transfer matrices);
    n_sum accumulates the smoothed photon flux, which equals the kernel
    diagonal by construction.
    """
    cols = np.asarray(block.kernel_cols)
    weights = np.asarray(block.smooth_weights)
    transfers = np.asarray(block.slot_transfers)
    B, _, m = cols.shape
    if m != grid.m_snap:
        raise InvalidParams("block snapshots do not match the correlation grid")
    for s in np.asarray(slots, dtype=np.int64):
        if not 0 <= s <= grid.max_slots:
            raise DelayOutOfRange(f"shift of {s} slots does not fit the grid")
    g_lag = np.zeros((m, grid.m_total), dtype=complex)
    n_sum = np.zeros(grid.m_total)
    flux = weights * np.asarray(block.nphot)
    for b in range(B):
        n_sum[slots[b] : slots[b] + m] += flux[b]
    rows = np.zeros((B, m, DIM))
    rows[:, :, _DEFORMED_READOUT] = 1.0
    for s in range(m):
        kern = np.einsum("bji,bij->bj", rows[:, : m - s], cols[:, :, : m - s]) * weights[:, s:]
        for b in range(B):
            g_lag[s, slots[b] : slots[b] + m - s] += kern[b]
        if s < m - 1:
            rows = np.einsum("bji,bjik->bjk", rows[:, 1 : m - s], transfers[:, : m - 1 - s])
    return g_lag, n_sum


def lag_sums_to_upper(g_lag: np.ndarray, count: int, m_total: int) -> np.ndarray:
    """Average lag-layout sums and rearrange into the upper-triangular kernel."""
    g1 = np.zeros((m_total, m_total), dtype=complex)
    for s in range(g_lag.shape[0]):
        j = np.arange(m_total - s)
        g1[j, j + s] = g_lag[s, : m_total - s] / count
    return g1


class SmoothedEnsembleAccumulator:
    """Index-ordered accumulation of smoothed, delay-shifted kernel sums."""

    def __init__(self, grid: CorrelationGrid):
        self.grid = grid
        self.g_lag = np.zeros((grid.m_snap, grid.m_total), dtype=complex)
        self.n_sum = np.zeros(grid.m_total)
        self.count = 0

    def add_chunk(self, g_lag: np.ndarray, n_sum: np.ndarray, count: int) -> None:
        self.g_lag += g_lag
        self.n_sum += n_sum
        self.count += count

    def raw(self) -> tuple[np.ndarray, np.ndarray]:
        if self.count == 0:
            raise EmptyBatch("no trajectories accumulated")
        n_bar = self.n_sum / self.count
        return n_bar, lag_sums_to_upper(self.g_lag, self.count, self.grid.m_total)

    def finalize(self) -> CorrelationEnsemble:
        n_bar, g1 = self.raw()
        ens = CorrelationEnsemble(
            n_bar=n_bar,
            g1_bar=g1,
            n_contributing=self.count,
            grid=self.grid,
            stochastic=True,
        )
        ens.validate()
        return ens


def assemble_ensemble(
    outcomes,
    delays,
    grid: CorrelationGrid,
    prop_cache: list[Propagator],
    a_op: np.ndarray,
) -> CorrelationEnsemble:
    """Shift each trajectory by its delay and average, in index order.

    Shifting acts on both time arguments of the per-trajectory kernel (zero
    padded); by linearity of the regression map this equals averaging the
    shifted vec(rho a^dag) columns first and regressing once.
    """
    outcomes = list(outcomes)
    delays = list(delays)
    if len(outcomes) != len(delays):
        raise InvalidParams("need exactly one delay per trajectory outcome")
    if not outcomes:
        raise EmptyBatch("cannot assemble an ensemble from zero trajectories")
    if len(prop_cache) < grid.m_total:
        raise InvalidParams(
            f"propagator cache covers {len(prop_cache)} lags, grid needs {grid.m_total}"
        )
    acc = KernelAccumulator(grid)
    order = np.argsort([o.traj_index for o in outcomes], kind="stable")
    for i in order:
        cols = snapshot_vec_columns(outcomes[i].rho_snapshots, a_op)
        nphot = population_series(outcomes[i].rho_snapshots)
        acc.add_trajectory(cols, nphot, shift_slots(delays[i], grid))
    rows = propagator_rows(prop_cache[: grid.m_total], a_op)
    return acc.finalize(rows)


def deterministic_correlations(
    params: Params,
    case: str,
    rho0: np.ndarray | None = None,
) -> CorrelationEnsemble:
    """Correlation ensemble of a deterministic (Lindblad) evolution.

    Case "no-dephasing" zeroes gamma; "dephasing-no-ff" keeps the configured
    gamma with the observer ignored.  Either way the evolution is a single
    zero-delay "trajectory" through the same regression machinery.
    """
    if case == CASE_NO_DEPHASING:
        params = dc_replace(params, gamma=0.0)
    elif case != CASE_DEPHASING_NO_FF:
        raise InvalidParams(f"unknown deterministic case {case!r}")
    gen = LindbladGenerator.from_params(params)
    series = evolve_deterministic(
        initial_state(BasisState.X2_0) if rho0 is None else rho0, gen, params
    )
    grid = CorrelationGrid.from_params(params, delta_max=0.0)
    cache = propagator_cache(gen, grid.h, grid.m_total)
    acc = KernelAccumulator(grid)
    acc.add_trajectory(
        snapshot_vec_columns(series.snapshots, gen.ops.a),
        population_series(series.snapshots),
        0,
    )
    return acc.finalize(propagator_rows(cache, gen.ops.a), stochastic=False)


def ensemble_dump(ens: CorrelationEnsemble, path) -> None:
    """Binary debug dump of the ensemble arrays (npz)."""
    np.savez_compressed(
        path,
        times=ens.grid.times,
        n_bar=ens.n_bar,
        g1_bar=ens.g1_bar,
        n_contributing=ens.n_contributing,
    )
