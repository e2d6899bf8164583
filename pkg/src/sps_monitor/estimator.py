"""Affine MMSE transition-time estimation and the feed-forward delay policy.

The integrated record nu estimates the transition-time proxy
tau = integral of <O>(t); the affine estimate tau_hat = G nu + m minimizes
the mean squared error when the prior on tau has mean m_tau and variance
sigma_tau^2 and the record noise contributes beta^2 T, beta = 1/sqrt(eta
gamma):

    G = sigma^2 / (sigma^2 + beta^2 T),    m = m_tau beta^2 T / (sigma^2 + beta^2 T).

The quasi-exponential decay of the emitter motivates sigma^2 ~ m_tau^2, and
m_tau comes from the deterministic (eta = 0) evolution.  Record/noise
correlations are deliberately neglected in (G, m).

The delay element then applies Delta = clamp(C - tau_hat, 0, Delta_max):
early estimated transitions wait longest, aligning emissions near the
reference C (an upper quantile of tau_hat over a separate calibration batch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, InvalidParams, InvariantViolation, RecordUndefined
from .liouville import DeterministicSeries

DEFAULT_QUANTILE = 0.95


@dataclass(frozen=True)
class PriorMoments:
    """Mean and variance of the transition-time proxy tau."""

    m_tau: float
    sigma_tau_sq: float
    source: str = "deterministic-integral"

    def __post_init__(self) -> None:
        if self.m_tau < 0 or self.sigma_tau_sq < 0:
            raise InvalidParams(
                f"prior moments must be nonnegative, got ({self.m_tau}, {self.sigma_tau_sq})"
            )


def prior_moments(det_series: DeterministicSeries) -> PriorMoments:
    """Trapezoid integral of the deterministic <O>(t), with the
    exponential-prior approximation sigma^2 = m^2."""
    m_tau = float(np.trapezoid(det_series.expO, det_series.t))
    return PriorMoments(m_tau=m_tau, sigma_tau_sq=m_tau * m_tau)


@dataclass(frozen=True)
class AmmseCoefficients:
    """Gain, offset and noise term of the affine MMSE estimator."""

    G: float
    m: float
    beta_sq_T: float


def ammse_coeffs(prior: PriorMoments, eta: float, gamma: float, T: float) -> AmmseCoefficients:
    """Evaluate the optimal affine coefficients for the given record noise."""
    if eta * gamma <= 0.0:
        raise RecordUndefined(f"estimator undefined for eta * gamma = {eta * gamma}")
    if T <= 0.0:
        raise InvalidParams(f"integration time must be > 0, got {T}")
    beta_sq_T = T / (eta * gamma)
    denom = prior.sigma_tau_sq + beta_sq_T
    return AmmseCoefficients(
        G=prior.sigma_tau_sq / denom,
        m=prior.m_tau * beta_sq_T / denom,
        beta_sq_T=beta_sq_T,
    )


def estimate_transition_time(nu: float, coeffs: AmmseCoefficients) -> float:
    return coeffs.G * nu + coeffs.m


@dataclass(frozen=True)
class DelayPolicy:
    """Feed-forward map from estimated transition time to output delay."""

    C: float
    delta_max: float
    mode: str = "calibrated-quantile"

    def __post_init__(self) -> None:
        if self.C < 0 or self.delta_max < 0:
            raise InvariantViolation(
                f"delay policy needs C >= 0 and delta_max >= 0, got ({self.C}, {self.delta_max})"
            )


def calibrate_reference(tau_hats, quantile: float = DEFAULT_QUANTILE) -> DelayPolicy:
    """Set the alignment reference C to an empirical nearest-rank quantile.

    Delays then span [0, C]; calibration must use trajectories disjoint from
    the measurement batch so the policy is not fitted to the data it corrects.
    """
    values = np.asarray(tau_hats, dtype=float)
    if values.size == 0:
        raise EmptyBatch("calibration requires a nonempty batch of estimates")
    if not 0.0 < quantile <= 1.0:
        raise InvalidParams(f"quantile must lie in (0, 1], got {quantile}")
    rank = max(1, math.ceil(quantile * values.size))
    C = float(np.sort(values)[rank - 1])
    return DelayPolicy(C=C, delta_max=C, mode="calibrated-quantile")


def apply_delay_policy(tau_hat: float, policy: DelayPolicy) -> float:
    """Delta = clamp(C - tau_hat, 0, delta_max); physical delays only."""
    return float(min(max(policy.C - tau_hat, 0.0), policy.delta_max))
