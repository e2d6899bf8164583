"""Truncated model of a monitored single-photon source.

A three-level emitter (ground state |G>, excited states |X1>, |X2>) sits in a
single-mode cavity that holds at most one photon; the cavity couples
resonantly to the X1 <-> G transition.  Starting from |X2,0> the cascade

    |X2,0> --Gamma2--> |X1,0> <--g--> |G,1> --kappa--> |G,0>

never leaves the four-dimensional subspace spanned by

    index 0 : |X2, 0>
    index 1 : |X1, 0>
    index 2 : |G,  1>
    index 3 : |G,  0>

so every operator in this package is a 4x4 complex matrix in that fixed
basis (kets are written |emitter, photon number>).  Rates are quoted in
units of the cavity decay rate kappa, times in 1/kappa, and hbar = 1
(all Hamiltonians are divided through by hbar).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import InvalidParams, InvariantViolation

DIM = 4

#: dt resolves the fastest rate with at least 100 steps, and never exceeds this.
DT_CAP = 0.01

#: "much smaller than" in the bad-cavity check means a factor of at least 10.
BAD_CAVITY_MARGIN = 10.0

_SEED_LIMIT = 2**64


class BasisState(IntEnum):
    """Joint emitter + photon-number basis states, with fixed indices."""

    X2_0 = 0
    X1_0 = 1
    G_1 = 2
    G_0 = 3


def default_dt(g: float, kappa: float, gamma: float, gamma1: float, gamma2: float) -> float:
    """Default integration step: 0.01 / (fastest rate), capped at 0.01."""
    fastest = max(g, kappa, gamma, gamma1, gamma2)
    if fastest <= 0.0:
        return DT_CAP
    return min(DT_CAP, DT_CAP / fastest)


@dataclass(frozen=True)
class Params:
    """Physical and numerical settings for one simulation.

    Attributes
    ----------
    g : float
        Emitter-cavity coupling rate (units of kappa).
    kappa : float
        Cavity leakage rate; sets the rate unit (default 1).
    gamma : float
        Dephasing rate between |X1,0> and |G,1>.
    gamma1 : float
        Spontaneous emission rate for |X1> -> |G>.
    gamma2 : float
        Pump-level decay rate for |X2> -> |X1>.
    eta : float
        Measurement efficiency, in [0, 1].
    dt : float or None
        Integration step.  None selects the default rule.
    horizon : float or None
        Total simulated time T.  None defers to the horizon rule (see
        :func:`sps_monitor.liouville.default_horizon`).  A given horizon is
        rounded at construction to the nearest multiple of dt * corr_stride
        so the snapshot grid tiles [0, T] exactly.
    corr_stride : int
        Decimation factor between the integration grid and the
        correlation-snapshot grid.
    master_seed : int
        64-bit seed from which all per-trajectory streams derive.
    n_traj : int
        Trajectory count for the measurement ensemble.
    hbar : float
        Fixed to 1 by convention; validated, never consumed.
    """

    g: float = 0.1
    kappa: float = 1.0
    gamma: float = 0.1
    gamma1: float = 0.001
    gamma2: float = 0.5
    eta: float = 1.0
    dt: float | None = None
    horizon: float | None = None
    corr_stride: int = 25
    master_seed: int = 2718281828
    n_traj: int = 2000
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if self.dt is None:
            object.__setattr__(
                self, "dt", default_dt(self.g, self.kappa, self.gamma, self.gamma1, self.gamma2)
            )
        if self.horizon is not None and self.dt > 0 and self.corr_stride >= 1:
            quantum = self.dt * self.corr_stride
            steps = max(1, round(self.horizon / quantum))
            object.__setattr__(self, "horizon", steps * quantum)

    @property
    def max_rate(self) -> float:
        return max(self.g, self.kappa, self.gamma, self.gamma1, self.gamma2)

    @property
    def n_steps(self) -> int:
        if self.horizon is None:
            raise InvalidParams("horizon is unresolved; apply default_horizon() first")
        return round(self.horizon / self.dt)

    @property
    def h_corr(self) -> float:
        """Spacing of the correlation-snapshot grid."""
        return self.dt * self.corr_stride

    @property
    def n_snapshots(self) -> int:
        """Number of snapshot grid points covering [0, horizon]."""
        return self.n_steps // self.corr_stride + 1


@dataclass
class ValidationReport:
    """Outcome of a soft parameter check: hard violations raise instead."""

    warnings: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.warnings


def validate_params(params: Params) -> ValidationReport:
    """Check hard constraints (raising InvalidParams) and regime warnings.

    The bad-cavity regime Gamma1 << g, gamma < kappa and g < kappa is a
    warning only: the simulation stays well defined outside it, but the
    feed-forward rationale does not.
    """
    errors = []
    for name in ("g", "kappa", "gamma", "gamma1", "gamma2"):
        if getattr(params, name) < 0:
            errors.append(f"{name} must be >= 0, got {getattr(params, name)}")
    if not 0.0 <= params.eta <= 1.0:
        errors.append(f"eta must lie in [0, 1], got {params.eta}")
    if params.dt is None or params.dt <= 0:
        errors.append(f"dt must be > 0, got {params.dt}")
    elif params.max_rate > 0 and params.dt >= 1.0 / (10.0 * params.max_rate):
        errors.append(
            f"dt = {params.dt} is too coarse: need dt < 1/(10 * max rate) = "
            f"{1.0 / (10.0 * params.max_rate):.6g}"
        )
    if params.horizon is not None and params.dt is not None and params.dt > 0:
        if params.horizon < params.dt:
            errors.append(f"horizon {params.horizon} is shorter than one step {params.dt}")
    if params.corr_stride < 1:
        errors.append(f"corr_stride must be >= 1, got {params.corr_stride}")
    if params.n_traj < 1:
        errors.append(f"n_traj must be >= 1, got {params.n_traj}")
    if not 0 <= params.master_seed < _SEED_LIMIT:
        errors.append(f"master_seed must be an unsigned 64-bit integer, got {params.master_seed}")
    if params.hbar != 1.0:
        errors.append(f"hbar is fixed to 1 by convention, got {params.hbar}")
    if errors:
        raise InvalidParams("; ".join(errors))

    report = ValidationReport()
    bad_cavity_ok = (
        params.gamma1 * BAD_CAVITY_MARGIN <= params.g
        and params.g < params.kappa
        and params.gamma < params.kappa
    )
    if not bad_cavity_ok:
        report.warnings.append(
            "bad-cavity condition violated: need Gamma1 <= g/10, g < kappa and gamma < kappa "
            f"(Gamma1={params.gamma1}, g={params.g}, gamma={params.gamma}, kappa={params.kappa})"
        )
    return report


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """The fixed 4x4 operators of the truncated model (all read-only)."""

    H: np.ndarray
    sigma1_minus: np.ndarray
    sigma2_minus: np.ndarray
    a: np.ndarray
    observer: np.ndarray
    n_op: np.ndarray


def _readonly(m: np.ndarray) -> np.ndarray:
    m.flags.writeable = False
    return m


def build_operators(params: Params) -> OperatorSet:
    """Assemble the Hamiltonian and channel operators for the given coupling.

    H/hbar = i g (|G,1><X1,0| - |X1,0><G,1|); the interaction picture removes
    all free-evolution terms.  The observer operator projects onto the excited
    emitter manifold and doubles as the dephasing channel.
    """
    H = np.zeros((DIM, DIM), dtype=complex)
    H[BasisState.G_1, BasisState.X1_0] = 1j * params.g
    H[BasisState.X1_0, BasisState.G_1] = -1j * params.g

    sigma1_minus = np.zeros((DIM, DIM), dtype=complex)
    sigma1_minus[BasisState.G_0, BasisState.X1_0] = 1.0

    sigma2_minus = np.zeros((DIM, DIM), dtype=complex)
    sigma2_minus[BasisState.X1_0, BasisState.X2_0] = 1.0

    a = np.zeros((DIM, DIM), dtype=complex)
    a[BasisState.G_0, BasisState.G_1] = 1.0

    observer = np.diag([1.0, 1.0, 0.0, 0.0]).astype(complex)
    n_op = np.diag([0.0, 0.0, 1.0, 0.0]).astype(complex)

    return OperatorSet(
        H=_readonly(H),
        sigma1_minus=_readonly(sigma1_minus),
        sigma2_minus=_readonly(sigma2_minus),
        a=_readonly(a),
        observer=_readonly(observer),
        n_op=_readonly(n_op),
    )


def initial_state(label: BasisState | int) -> np.ndarray:
    """Density matrix of a single basis state (rank-1 projector)."""
    idx = int(label)
    if not 0 <= idx < DIM:
        raise InvalidParams(f"basis index must be in 0..3, got {label}")
    rho = np.zeros((DIM, DIM), dtype=complex)
    rho[idx, idx] = 1.0
    return rho


def check_density(
    rho: np.ndarray,
    *,
    herm_tol: float = 1e-10,
    trace_tol: float = 1e-9,
    eig_floor: float = -1e-8,
    context: str = "",
) -> None:
    """Verify hermiticity, unit trace and positivity; raise on violation.

    Violations are reported, never silently repaired.
    """
    where = f" ({context})" if context else ""
    herm = np.abs(rho - rho.conj().T).max()
    if herm > herm_tol:
        raise InvariantViolation(f"density matrix not Hermitian{where}: deviation {herm:.3e}")
    tr = rho.trace().real
    if abs(tr - 1.0) > trace_tol:
        raise InvariantViolation(f"density matrix trace {tr!r} deviates from 1{where}")
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    if min_eig < eig_floor:
        raise InvariantViolation(f"density matrix has negative eigenvalue {min_eig:.3e}{where}")
