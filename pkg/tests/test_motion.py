import math

import numpy as np
import pytest

from beaconsim.model import VehicleState
from beaconsim.motion import CtraConfig, ctra_propagate, ctra_step, ctra_step_array


def rk4_oracle(state, dt, n_steps, substeps=50):
    """Independent integrator of the kinematics x'=u cos h, y'=u sin h,
    h'=w, u'=a with a, w held constant."""
    x, y, h, u, a, w = state

    def deriv(s):
        return np.array([s[3] * math.cos(s[2]), s[3] * math.sin(s[2]), w, a])

    s = np.array([x, y, h, u], dtype=float)
    hh = dt / substeps
    for _ in range(n_steps * substeps):
        k1 = deriv(s)
        k2 = deriv(s + 0.5 * hh * k1)
        k3 = deriv(s + 0.5 * hh * k2)
        k4 = deriv(s + hh * k3)
        s = s + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


def test_uniform_straight_motion():
    out = ctra_step(VehicleState(0, 0, 0, 10, 0, 0), CtraConfig(dt=0.1))
    assert out.x == pytest.approx(1.0)
    assert out.y == pytest.approx(0.0)
    assert out.u == pytest.approx(10.0)


def test_constant_acceleration():
    out = ctra_step(VehicleState(0, 0, 0, 10, 2, 0), CtraConfig(dt=0.1))
    assert out.x == pytest.approx(1.01)
    assert out.u == pytest.approx(10.2)
    assert out.a == 2.0


def test_half_circle():
    # radius u/w = 1/pi, half turn in one second
    out = ctra_step(VehicleState(0, 0, 0, 1, 0, math.pi), CtraConfig(dt=1.0))
    assert out.x == pytest.approx(0.0, abs=1e-12)
    assert out.y == pytest.approx(2.0 / math.pi)
    assert out.h == pytest.approx(-math.pi)
    assert out.omega == math.pi


def test_propagate_identity_and_count():
    s = VehicleState(1, 2, 0.3, 4, 0.5, 0.1)
    seq = ctra_propagate(s, 0, CtraConfig())
    assert seq == [s]
    seq = ctra_propagate(VehicleState(0, 0, 0, 10, 0, 0), 10, CtraConfig(dt=0.1))
    assert len(seq) == 11
    assert seq[-1].x == pytest.approx(10.0)


def test_propagate_negative_steps():
    with pytest.raises(ValueError):
        ctra_propagate(VehicleState(0, 0, 0, 0, 0, 0), -1, CtraConfig())


def test_against_rk4_general_state():
    cfg = CtraConfig(dt=0.1)
    state = (0.0, 0.0, 0.7, 8.0, 1.5, 0.4)
    seq = ctra_propagate(VehicleState(*state), 10, cfg)
    ref = rk4_oracle(state, cfg.dt, 10)
    assert seq[-1].x == pytest.approx(ref[0], abs=1e-6)
    assert seq[-1].y == pytest.approx(ref[1], abs=1e-6)


def test_against_rk4_small_omega_grid():
    # straddle the singularity threshold in both branches
    cfg = CtraConfig(dt=0.1)
    rng = np.random.default_rng(42)
    eps = cfg.omega_eps
    for w in (0.0, 1e-6, 0.5 * eps, 0.99 * eps, 1.01 * eps, 10 * eps,
              -0.5 * eps, -2 * eps):
        state = (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3),
                 rng.uniform(0, 14), rng.uniform(-3, 3), w)
        got = ctra_propagate(VehicleState(*state), 10, cfg)[-1]
        ref = rk4_oracle(state, cfg.dt, 10)
        assert got.x == pytest.approx(ref[0], abs=1e-6)
        assert got.y == pytest.approx(ref[1], abs=1e-6)


def test_branch_continuity_at_threshold():
    # arc and series forms agree to well below 1e-9 m around omega_eps
    eps = CtraConfig().omega_eps
    lo, hi = CtraConfig(dt=0.1, omega_eps=1e-30), CtraConfig(dt=0.1, omega_eps=1e30)
    rng = np.random.default_rng(3)
    for _ in range(200):
        w = eps * rng.uniform(0.5, 2.0) * rng.choice([-1, 1])
        s = np.array([[rng.uniform(-10, 10), rng.uniform(-10, 10),
                       rng.uniform(-math.pi, math.pi), rng.uniform(0, 14),
                       rng.uniform(-4, 4), w]])
        arc = ctra_step_array(s, lo)[0]
        series = ctra_step_array(s, hi)[0]
        assert abs(arc[0] - series[0]) < 1e-9
        assert abs(arc[1] - series[1]) < 1e-9


def test_exact_composition_closed_cases():
    cfg1 = CtraConfig(dt=0.1)
    cfg2 = CtraConfig(dt=0.2)
    # constant-speed circle
    s = VehicleState(0, 0, 0.5, 6, 0, 0.8)
    twice = ctra_step(ctra_step(s, cfg1), cfg1)
    once = ctra_step(s, cfg2)
    assert twice.x == pytest.approx(once.x, abs=1e-12)
    assert twice.y == pytest.approx(once.y, abs=1e-12)
    # straight constant acceleration
    s = VehicleState(0, 0, 1.1, 6, 2, 0)
    twice = ctra_step(ctra_step(s, cfg1), cfg1)
    once = ctra_step(s, cfg2)
    assert twice.x == pytest.approx(once.x, abs=1e-12)
    assert twice.y == pytest.approx(once.y, abs=1e-12)


def test_negative_speed_not_clamped():
    out = ctra_step(VehicleState(0, 0, 0, 0.1, -5, 0), CtraConfig(dt=0.1))
    assert out.u == pytest.approx(-0.4)


def test_config_validation():
    with pytest.raises(ValueError):
        CtraConfig(dt=0.0)
    with pytest.raises(ValueError):
        CtraConfig(omega_eps=0.0)
