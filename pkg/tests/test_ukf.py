import math

import numpy as np
import pytest

from beaconsim.model import IDX_H, VehicleState
from beaconsim.motion import CtraConfig
from beaconsim.ukf import (DEFAULT_MEASUREMENT_VAR, FilterError, GaussianState,
                           MeasurementNoise, UkfParams, sigma_points, ukf_predict,
                           ukf_update, wrap_angle)


class LinearKalman:
    """Textbook Kalman filter used as the oracle for the linear stubs."""

    def __init__(self, mean, cov, f_mat, shift, q_mat, r_mat):
        self.mean = np.array(mean, dtype=float)
        self.cov = np.array(cov, dtype=float)
        self.f = f_mat
        self.shift = shift
        self.q = q_mat
        self.r = r_mat

    def predict(self):
        self.mean = self.f @ self.mean + self.shift
        self.cov = self.f @ self.cov @ self.f.T + self.q

    def update(self, z):
        s = self.cov + self.r
        k = self.cov @ np.linalg.inv(s)
        self.mean = self.mean + k @ (z - self.mean)
        self.cov = self.cov - k @ s @ k.T


def translation_stub(shift):
    def f(states):
        return states + shift
    return f


def test_sigma_points_degenerate_spread():
    g = GaussianState(np.arange(6.0), np.zeros((6, 6)))
    sp = sigma_points(g, UkfParams())
    assert np.allclose(sp.points, np.tile(np.arange(6.0), (13, 1)))


def test_sigma_points_unit_cov_displacement():
    g = GaussianState(np.zeros(6), np.eye(6))
    sp = sigma_points(g, UkfParams(alpha=1.0, beta=2.0, kappa=0.0))
    off = sp.points[1:7] - np.zeros(6)
    assert np.allclose(np.abs(np.diag(off[:, :6])), math.sqrt(6.0))
    assert np.allclose(sp.points[1:7], -sp.points[7:13])


def test_sigma_weights_sum_to_one():
    sp = sigma_points(GaussianState(np.zeros(6), np.eye(6)), UkfParams())
    assert sp.mean_weights.sum() == pytest.approx(1.0)


def test_sigma_points_heading_wrapped():
    g = GaussianState(np.array([0, 0, math.pi - 0.01, 0, 0, 0]), np.eye(6))
    sp = sigma_points(g, UkfParams())
    assert np.all(sp.points[:, IDX_H] >= -math.pi)
    assert np.all(sp.points[:, IDX_H] < math.pi)


def test_params_validation():
    with pytest.raises(ValueError):
        UkfParams(alpha=0.0)
    with pytest.raises(ValueError):
        UkfParams(alpha=1.0, kappa=-7.0)  # n + lambda = -1


def test_predict_stationary_mean_fixed():
    p = UkfParams(q=0.0)
    g = GaussianState(np.zeros(6), np.diag([1, 1, 0.1, 1, 0.1, 0.01]))
    out = ukf_predict(g, CtraConfig(dt=0.1), p)
    assert np.allclose(out.mean[:2], 0.0, atol=1e-12)


def test_predict_deterministic_with_zero_cov():
    from beaconsim.motion import ctra_step
    p = UkfParams(q=0.0)
    mean = np.array([1.0, 2.0, 0.3, 8.0, 1.0, 0.2])
    g = GaussianState(mean, np.zeros((6, 6)))
    out = ukf_predict(g, CtraConfig(dt=0.1), p)
    expect = ctra_step(VehicleState.from_array(mean), CtraConfig(dt=0.1))
    assert np.allclose(out.mean, expect.to_array(), atol=1e-12)
    assert np.allclose(out.cov, 0.0, atol=1e-15)


def test_predict_matches_linear_kalman():
    p = UkfParams(q=0.01)
    shift = np.array([1.0, -0.5, 0.01, 0.1, 0.0, 0.0])
    g = GaussianState(np.ones(6) * 0.1, 0.5 * np.eye(6) + 0.05)
    out = ukf_predict(g, CtraConfig(), p, transition=translation_stub(shift))
    kf = LinearKalman(g.mean, g.cov, np.eye(6), shift, 0.01 * np.eye(6),
                      np.diag(DEFAULT_MEASUREMENT_VAR))
    kf.predict()
    assert np.allclose(out.mean, kf.mean, rtol=1e-12, atol=1e-12)
    assert np.allclose(out.cov, kf.cov, rtol=1e-9, atol=1e-12)


def test_update_zero_innovation_keeps_mean_and_shrinks_cov():
    p = UkfParams()
    g = GaussianState(np.array([1, 2, 0.1, 5, 0.5, 0.05]), np.eye(6))
    out = ukf_update(g, g.mean.copy(), MeasurementNoise(), p)
    assert np.allclose(out.mean, g.mean, atol=1e-9)
    assert np.trace(out.cov) < np.trace(g.cov)


def test_update_uninformative_measurement():
    p = UkfParams()
    g = GaussianState(np.array([1, 2, 0.1, 5, 0.5, 0.05]), np.eye(6))
    huge = MeasurementNoise(DEFAULT_MEASUREMENT_VAR * 1e12)
    out = ukf_update(g, g.mean + 0.5, huge, p)
    assert np.allclose(out.mean, g.mean, rtol=1e-6, atol=1e-6)
    assert np.allclose(out.cov, g.cov, rtol=1e-6)


def test_predict_update_sequence_matches_linear_kalman():
    rng = np.random.default_rng(11)
    p = UkfParams(q=0.02)
    shift = np.array([0.5, 0.2, 0.0, 0.05, 0.0, 0.0])
    r = MeasurementNoise()
    g = GaussianState(np.zeros(6), np.eye(6))
    kf = LinearKalman(g.mean, g.cov, np.eye(6), shift, 0.02 * np.eye(6), r.matrix())
    for _ in range(100):
        g = ukf_predict(g, CtraConfig(), p, transition=translation_stub(shift))
        kf.predict()
        z = kf.mean + rng.normal(0, 0.3, 6)
        z[IDX_H] = wrap_angle(z[IDX_H])
        g = ukf_update(g, z.copy(), r, p)
        kf.update(z)
        assert np.allclose(g.mean, kf.mean, rtol=1e-9, atol=1e-9)
        assert np.allclose(g.cov, kf.cov, rtol=1e-9, atol=1e-12)


def test_posterior_psd_over_random_steps():
    rng = np.random.default_rng(5)
    p = UkfParams()
    cfg = CtraConfig(dt=0.1)
    r = MeasurementNoise()
    g = GaussianState(np.array([0, 0, 0.2, 9, 0.5, 0.3]),
                      np.diag([2, 2, 0.2, 1, 0.5, 0.05]))
    for k in range(400):
        g = ukf_predict(g, cfg, p)
        assert np.linalg.eigvalsh(g.cov).min() >= -1e-9
        if k % 3 == 0:
            z = g.mean + rng.normal(0, 1.0, 6)
            z[IDX_H] = wrap_angle(z[IDX_H])
            g = ukf_update(g, z, r, p)
            assert np.linalg.eigvalsh(g.cov).min() >= -1e-9
        assert -math.pi <= g.mean[IDX_H] < math.pi


def test_double_update_never_increases_trace():
    p = UkfParams()
    g = GaussianState(np.array([1, 1, 0.1, 4, 0.2, 0.02]), 2 * np.eye(6))
    z = g.mean + 0.7
    z[IDX_H] = wrap_angle(z[IDX_H])
    once = ukf_update(g, z, MeasurementNoise(), p)
    twice = ukf_update(once, z, MeasurementNoise(), p)
    assert np.trace(twice.cov) <= np.trace(once.cov) + 1e-12


def test_update_heading_wrap_across_pi():
    p = UkfParams()
    g = GaussianState(np.array([0, 0, math.pi - 0.05, 5, 0, 0]),
                      np.diag([1, 1, 0.05, 0.5, 0.1, 0.01]))
    obs = g.mean.copy()
    obs[IDX_H] = -math.pi + 0.05  # only 0.1 rad away across the seam
    out = ukf_update(g, obs, MeasurementNoise(), p)
    # posterior heading must move toward the seam, not spin the long way
    assert abs(wrap_angle(out.mean[IDX_H] - g.mean[IDX_H])) < 0.12
    assert -math.pi <= out.mean[IDX_H] < math.pi


def test_factorization_failure_raises():
    p = UkfParams()
    bad = -np.eye(6)  # far below the jitter budget
    with pytest.raises(FilterError):
        sigma_points(GaussianState(np.zeros(6), bad), p)


def test_measurement_noise_validation():
    with pytest.raises(ValueError):
        MeasurementNoise(np.zeros(6))
    assert MeasurementNoise().matrix()[0, 0] == pytest.approx(1.18535)
    assert MeasurementNoise().matrix()[2, 2] == pytest.approx(0.09211)
