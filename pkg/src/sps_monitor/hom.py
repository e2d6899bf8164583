"""Beam-splitter coincidence probability and indistinguishability.

Two identical, independent single-photon sources feed a 50:50 beam splitter,
a3 = (a1 - a2)/sqrt(2), a4 = (a1 + a2)/sqrt(2).  With at most one photon per
source and <a> = 0 (the cascade never builds coherence between photon
sectors), the cross second-order correlation reduces to

    G2_34(t, t') = (1/2) [ nbar(t) nbar(t') - |G1(t, t')|^2 ],

normalized by the accidental rate nbar(t) nbar(t').  Both double integrals
run over the ordered pairs t < t' <= T_total with uniform h^2 weights; the
equal-time line carries no weight, where the numerator vanishes identically
anyway, so the fully incoherent kernel lands exactly on p_c = 1/2 and a
common delay of both sources leaves p_c unchanged.  All mode prefactors
cancel in the ratio, so correlators are taken directly on the cavity
operator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .correlators import CorrelationEnsemble, CorrelationGrid
from .errors import DegenerateDenominator, InvalidParams, InvariantViolation

_DEN_FLOOR = 1e-12
_PC_SLACK = 1e-6


@dataclass(frozen=True)
class HomResult:
    """Coincidence probability, indistinguishability and bookkeeping."""

    p_c: float
    lam: float
    p_emit: float
    numerator: float
    denominator: float
    mc_stderr: float | None = None

    def __post_init__(self) -> None:
        if not -1e-9 <= self.p_c <= 0.5 + _PC_SLACK:
            raise InvariantViolation(f"coincidence probability {self.p_c!r} outside [0, 1/2]")
        if not 0.0 <= self.p_emit <= 1.0 + _PC_SLACK:
            raise InvariantViolation(f"emission probability {self.p_emit!r} outside [0, 1]")


def _pair_sum(x: np.ndarray, y: np.ndarray) -> float:
    """sum_{j != k} x_j y_k, via the closed form (Sx)(Sy) - S(xy)."""
    return float(x.sum() * y.sum() - (x * y).sum())


def _offdiag_abs2_sum(g1: np.ndarray) -> float:
    """sum_{j < k} |g1[j,k]|^2 for an upper-triangular-stored kernel."""
    total = float((g1.real**2 + g1.imag**2).sum())
    diag = np.diagonal(g1)
    return total - float((diag.real**2 + diag.imag**2).sum())


def _offdiag_cross_sum(g1a: np.ndarray, g1b: np.ndarray) -> float:
    """sum_{j < k} Re(g1a[j,k] conj(g1b[j,k])) for upper-triangular storage."""
    prod = g1a * g1b.conj()
    return float(prod.real.sum() - np.diagonal(prod).real.sum())


def emission_probability(ens: CorrelationEnsemble, kappa: float, grid: CorrelationGrid) -> float:
    """P_emit = kappa * integral of the mean photon number (trapezoid)."""
    return float(kappa * np.trapezoid(ens.n_bar, dx=grid.h))


def coincidence_probability(
    ens: CorrelationEnsemble, grid: CorrelationGrid, kappa: float = 1.0
) -> HomResult:
    """p_c and Lambda = 1 - p_c for two copies of the same source ensemble."""
    h2 = grid.h * grid.h
    s_nn = 0.5 * _pair_sum(ens.n_bar, ens.n_bar)
    s_gg = _offdiag_abs2_sum(ens.g1_bar)
    denominator = h2 * s_nn
    if denominator < _DEN_FLOOR:
        raise DegenerateDenominator(
            f"accidental-coincidence integral {denominator:.3e} is numerically zero"
        )
    numerator = h2 * 0.5 * (s_nn - s_gg)
    p_c = numerator / denominator
    return HomResult(
        p_c=p_c,
        lam=1.0 - p_c,
        p_emit=emission_probability(ens, kappa, grid),
        numerator=numerator,
        denominator=denominator,
    )


def coincidence_probability_expanded(
    ens1: CorrelationEnsemble,
    ens2: CorrelationEnsemble,
    grid: CorrelationGrid,
    kappa: float = 1.0,
) -> HomResult:
    """Four-term beam-splitter expansion for two (possibly distinct) sources.

    Same-mode two-photon terms are dropped exactly (one excitation per
    source).  With ens1 is ens2 this reproduces coincidence_probability, which
    keeps the reduced form honest.
    """
    if ens1.grid != grid or ens2.grid != grid:
        raise InvalidParams("both ensembles must live on the supplied grid")
    h2 = grid.h * grid.h
    n1, n2 = ens1.n_bar, ens2.n_bar
    numerator = h2 * 0.25 * (_pair_sum(n1, n2) - 2.0 * _offdiag_cross_sum(ens1.g1_bar, ens2.g1_bar))
    denominator = h2 * 0.25 * 0.5 * _pair_sum(n1 + n2, n1 + n2)
    if denominator < _DEN_FLOOR:
        raise DegenerateDenominator(
            f"accidental-coincidence integral {denominator:.3e} is numerically zero"
        )
    p_c = numerator / denominator
    p_emit = 0.5 * (
        emission_probability(ens1, kappa, grid) + emission_probability(ens2, kappa, grid)
    )
    return HomResult(
        p_c=p_c,
        lam=1.0 - p_c,
        p_emit=p_emit,
        numerator=numerator,
        denominator=denominator,
    )


def with_stderr(result: HomResult, mc_stderr: float) -> HomResult:
    return replace(result, mc_stderr=mc_stderr)


def coincidence_from_arrays(n_bar: np.ndarray, g1_bar: np.ndarray, h: float) -> float:
    """p_c from raw ensemble arrays (no invariant checks); used for batch
    error bars where per-batch kernels are too noisy to validate."""
    s_nn = 0.5 * _pair_sum(n_bar, n_bar)
    if h * h * s_nn < _DEN_FLOOR:
        raise DegenerateDenominator("batch accidental-coincidence integral is zero")
    return 0.5 * (s_nn - _offdiag_abs2_sum(g1_bar)) / s_nn
