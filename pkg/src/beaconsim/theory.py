"""Analytical inter-transmission-time model for the threshold policy.

After each broadcast, the receivers' picture of a vehicle degrades by pure
prediction; the position error after i predict-only steps is modeled as a
zero-mean bivariate Gaussian with the filter's predicted position covariance.
The probability of the error exceeding the threshold at step i, combined
across steps under an independence approximation (exceedances at different
steps are treated as independent, which slightly overstates the error),
yields a first-passage pmf over the step index of the triggering
transmission.

The disk probability is computed by whitening the covariance and integrating
the closed-form radial part over the angle with adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erf

from .motion import CtraConfig
from .ukf import GaussianState, MeasurementNoise, UkfParams, ukf_predict, ukf_update

_EIG_TOL = 1e-9


@dataclass
class CovSequence:
    """Position-error covariances after 1..n predict-only steps."""

    covs: list  # of (2, 2) arrays

    def __len__(self):
        return len(self.covs)

    def __getitem__(self, i):
        return self.covs[i]


@dataclass
class FirstPassagePmf:
    """P(first exceedance at step i) for i = 1..n, plus the residual mass."""

    probs: np.ndarray
    residual: float

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def quantile_step(self, p: float) -> int:
        """Smallest step whose CDF reaches p; clamped to the horizon."""
        c = self.cdf()
        idx = np.searchsorted(c, p - 1e-12)
        return int(min(idx, len(c) - 1)) + 1


def over_threshold_prob(cov, e_thr: float) -> float:
    """P(|e| > e_thr) for e ~ N(0, cov) on the plane, to ~1e-8 absolute.

    cov must be symmetric positive semidefinite.  Degenerate (rank-deficient)
    covariances collapse to the 1-D or point-mass cases.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2) or abs(cov[0, 1] - cov[1, 0]) > 1e-9:
        raise ValueError("covariance must be symmetric 2x2")
    if e_thr < 0:
        raise ValueError("threshold must be >= 0")
    w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if w[0] < -_EIG_TOL:
        raise ValueError(f"covariance not positive semidefinite (eig {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    if e_thr == 0.0:
        return 1.0
    s2_small, s2_big = float(w[0]), float(w[1])
    if s2_big <= 0.0:
        return 0.0
    if s2_small <= 1e-300 * s2_big:
        # error concentrated on a line: |e| is half-normal
        return 1.0 - float(erf(e_thr / math.sqrt(2.0 * s2_big)))

    inv1, inv2 = 1.0 / s2_small, 1.0 / s2_big
    norm = 1.0 / (2.0 * math.pi * math.sqrt(s2_small * s2_big))
    half_e2 = 0.5 * e_thr * e_thr

    def integrand(theta):
        c = math.cos(theta) ** 2 * inv1 + math.sin(theta) ** 2 * inv2
        return (1.0 - math.exp(-half_e2 * c)) / c

    val, _ = integrate.quad(integrand, 0.0, math.pi / 2, epsabs=1e-10,
                            epsrel=1e-11, limit=200)
    inside = 4.0 * norm * val
    return float(min(1.0, max(0.0, 1.0 - inside)))


def first_passage_pmf(seq: CovSequence, e_thr: float) -> FirstPassagePmf:
    """First-exceedance pmf under the per-step independence approximation."""
    if len(seq) == 0:
        raise ValueError("empty covariance sequence")
    p = np.array([over_threshold_prob(c, e_thr) for c in seq.covs])
    survive = np.concatenate([[1.0], np.cumprod(1.0 - p)[:-1]])
    probs = p * survive
    residual = float(np.prod(1.0 - p))
    return FirstPassagePmf(probs, residual)


def predict_only_cov(initial: GaussianState, n: int, cfg: CtraConfig,
                     p: UkfParams) -> CovSequence:
    """Position covariance blocks along an n-step predict-only rollout."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = initial.copy()
    covs = []
    for _ in range(n):
        g = ukf_predict(g, cfg, p)
        covs.append(g.position_cov())
    return CovSequence(covs)


def steady_state_posterior(nominal_state, cfg: CtraConfig, params: UkfParams,
                           noise: MeasurementNoise, iters: int = 300) -> GaussianState:
    """Converged posterior around a nominal operating state.

    Iterates predict + update with the observation pinned at the propagated
    mean, which drives the covariance to its steady state; used as the
    default initial condition of the predict-only rollout.
    """
    mean = np.asarray(nominal_state, dtype=float)
    g = GaussianState(mean, noise.matrix())
    for _ in range(iters):
        g = ukf_predict(g, cfg, params)
        g = ukf_update(g, g.mean.copy(), noise, params)
    return g


def qq_points(theory: FirstPassagePmf, empirical_slots) -> list:
    """Matched (theoretical, empirical) quantiles at the empirical ranks.

    Both axes are in slots; plotting positions are (k - 0.5) / m for the
    m sorted empirical inter-transmission samples.
    """
    emp = np.sort(np.asarray(empirical_slots, dtype=float))
    if emp.size == 0:
        raise ValueError("empty empirical sample")
    m = emp.size
    out = []
    for k in range(1, m + 1):
        prob = (k - 0.5) / m
        out.append((float(theory.quantile_step(prob)), float(emp[k - 1])))
    return out
