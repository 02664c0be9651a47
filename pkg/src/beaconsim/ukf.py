"""Unscented Kalman filter over the CTRA process with full-state measurements.

The scaled sigma-point parameterization is used throughout.  Heading is an
angle, so three places need circular care: sigma-point headings are wrapped,
the transformed heading mean is the atan2 of weighted sin/cos sums, and
heading residuals are wrapped before covariance accumulation and before the
innovation is applied.

Every operation exists in a batched form working on stacked (n, 6) means and
(n, 6, 6) covariances; the single-estimate functions are thin wrappers.  The
simulation engine drives the batched forms directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import IDX_H, STATE_DIM, VehicleState, wrap_angle
from .motion import CtraConfig, ctra_step_array

_JITTER = 1e-9
_JITTER_RETRIES = 3


class FilterError(RuntimeError):
    """Covariance factorization or innovation inversion failed."""


@dataclass
class GaussianState:
    """State estimate: 6-vector mean plus 6x6 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.cov = np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)

    def copy(self) -> "GaussianState":
        return GaussianState(self.mean.copy(), self.cov.copy())

    def position_cov(self) -> np.ndarray:
        return self.cov[:2, :2].copy()


@dataclass
class UkfParams:
    """Sigma-point scaling constants and the process-noise intensity q.

    The process noise covariance is q times the identity.  n + lambda must be
    positive for the scaled parameterization to be usable.  The default
    alpha = 1 keeps every covariance weight non-negative, so transformed
    covariances are positive semidefinite by construction; smaller alpha
    values are accepted but can produce indefinite covariances under strong
    nonlinearity (negative center weight).
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0
    q: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if STATE_DIM + self.lam() <= 0:
            raise ValueError("n + lambda must be > 0")

    def lam(self) -> float:
        return self.alpha ** 2 * (STATE_DIM + self.kappa) - STATE_DIM

    def weights(self):
        """(mean weights, covariance weights, scaling n + lambda)."""
        lam = self.lam()
        c = STATE_DIM + lam
        wm = np.full(2 * STATE_DIM + 1, 1.0 / (2.0 * c))
        wc = wm.copy()
        wm[0] = lam / c
        wc[0] = lam / c + (1.0 - self.alpha ** 2 + self.beta)
        return wm, wc, c


# Default measurement variances per state component (position x, position y,
# heading, speed, acceleration, turn rate), in SI units.
DEFAULT_MEASUREMENT_VAR = np.array([1.18535, 1.18535, 0.09211, 0.5, 0.39, 0.01587])


@dataclass
class MeasurementNoise:
    """Diagonal measurement-noise covariance in the state layout."""

    var: np.ndarray = None

    def __post_init__(self):
        if self.var is None:
            self.var = DEFAULT_MEASUREMENT_VAR.copy()
        self.var = np.asarray(self.var, dtype=float).reshape(STATE_DIM)
        if np.any(self.var <= 0):
            raise ValueError("measurement variances must be strictly positive")

    def matrix(self) -> np.ndarray:
        return np.diag(self.var)


def _symmetrize(covs: np.ndarray) -> np.ndarray:
    return 0.5 * (covs + np.swapaxes(covs, -1, -2))


def _sqrt_psd_single(cov: np.ndarray) -> np.ndarray:
    """Matrix square root L with L L^T = cov, tolerant of semidefinite input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    a = 0.5 * (cov + cov.T)
    for _ in range(_JITTER_RETRIES + 1):
        w, v = np.linalg.eigh(a)
        if w[0] >= -_JITTER:
            return v * np.sqrt(np.clip(w, 0.0, None))
        a = a + _JITTER * np.eye(STATE_DIM)
    raise FilterError(f"covariance not factorizable (min eigenvalue {w[0]:.3e})")


def _sqrt_psd_batch(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        out = np.empty_like(covs)
        for k in range(covs.shape[0]):
            out[k] = _sqrt_psd_single(covs[k])
        return out


def sigma_points_batch(means: np.ndarray, covs: np.ndarray, c: float) -> np.ndarray:
    """Scaled sigma points for each (mean, cov) pair: (n, 13, 6)."""
    roots = _sqrt_psd_batch(covs * c)
    n = means.shape[0]
    pts = np.empty((n, 2 * STATE_DIM + 1, STATE_DIM))
    pts[:, 0, :] = means
    cols = np.swapaxes(roots, -1, -2)  # row j is column j of the root
    pts[:, 1:STATE_DIM + 1, :] = means[:, None, :] + cols
    pts[:, STATE_DIM + 1:, :] = means[:, None, :] - cols
    pts[..., IDX_H] = wrap_angle(pts[..., IDX_H])
    return pts


def _ut_mean(pts: np.ndarray, wm: np.ndarray) -> np.ndarray:
    mean = np.einsum("i,nij->nj", wm, pts)
    s = np.einsum("i,ni->n", wm, np.sin(pts[..., IDX_H]))
    co = np.einsum("i,ni->n", wm, np.cos(pts[..., IDX_H]))
    mean[:, IDX_H] = wrap_angle(np.arctan2(s, co))
    return mean


def _ut_cov(pts: np.ndarray, mean: np.ndarray, wc: np.ndarray) -> np.ndarray:
    d = pts - mean[:, None, :]
    d[..., IDX_H] = wrap_angle(d[..., IDX_H])
    cov = np.swapaxes(d, 1, 2) @ (d * wc[None, :, None])
    return _symmetrize(cov)


def predict_batch(means, covs, cfg: CtraConfig, params: UkfParams, transition=None):
    """Unscented predict for stacked estimates; returns (means', covs')."""
    wm, wc, c = params.weights()
    pts = sigma_points_batch(means, covs, c)
    shape = pts.shape
    flat = pts.reshape(-1, STATE_DIM)
    prop = transition(flat) if transition is not None else ctra_step_array(flat, cfg)
    prop = prop.reshape(shape)
    mean2 = _ut_mean(prop, wm)
    cov2 = _ut_cov(prop, mean2, wc) + params.q * np.eye(STATE_DIM)
    return mean2, _symmetrize(cov2)


def update_batch(means, covs, obs, noise_cov, params: UkfParams):
    """Unscented update with identity measurement for stacked estimates.

    ``noise_cov`` is a (6, 6) matrix shared by the batch or a stacked
    (n, 6, 6) array (used when fusing received estimates, whose covariance
    plays the role of measurement noise).
    """
    wm, wc, c = params.weights()
    pts = sigma_points_batch(means, covs, c)
    z_mean = _ut_mean(pts, wm)
    p_zz = _ut_cov(pts, z_mean, wc)
    s = p_zz + noise_cov
    try:
        # identity measurement: cross covariance equals p_zz; both symmetric
        gain = np.swapaxes(np.linalg.solve(s, p_zz), -1, -2)
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular innovation covariance") from exc
    innov = np.asarray(obs, dtype=float) - z_mean
    innov[:, IDX_H] = wrap_angle(innov[:, IDX_H])
    mean2 = means + np.einsum("nij,nj->ni", gain, innov)
    mean2[:, IDX_H] = wrap_angle(mean2[:, IDX_H])
    # Joseph form keeps the posterior PSD even when circular residual
    # wrapping makes the sigma reconstruction deviate from the prior
    a = np.eye(STATE_DIM) - gain
    cov2 = a @ covs @ np.swapaxes(a, -1, -2) \
        + gain @ np.asarray(noise_cov, dtype=float) @ np.swapaxes(gain, -1, -2)
    return mean2, _symmetrize(cov2)


# single-estimate wrappers -------------------------------------------------

@dataclass
class SigmaPoints:
    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray


def sigma_points(g: GaussianState, p: UkfParams) -> SigmaPoints:
    wm, wc, c = p.weights()
    pts = sigma_points_batch(g.mean[None, :], g.cov[None, :, :], c)[0]
    return SigmaPoints(pts, wm, wc)


def ukf_predict(g: GaussianState, cfg: CtraConfig, p: UkfParams, transition=None) -> GaussianState:
    m, c = predict_batch(g.mean[None, :], g.cov[None, :, :], cfg, p, transition=transition)
    return GaussianState(m[0], c[0])


def ukf_update(g: GaussianState, obs, noise, p: UkfParams) -> GaussianState:
    """Fold one full-state observation into the estimate.

    ``obs`` may be a VehicleState or a 6-vector; ``noise`` a MeasurementNoise
    or a 6x6 covariance matrix.
    """
    z = obs.to_array() if isinstance(obs, VehicleState) else np.asarray(obs, dtype=float)
    r = noise.matrix() if isinstance(noise, MeasurementNoise) else np.asarray(noise, dtype=float)
    m, c = update_batch(g.mean[None, :], g.cov[None, :, :], z[None, :], r, p)
    return GaussianState(m[0], c[0])
