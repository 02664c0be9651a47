"""Constant turn rate and acceleration (CTRA) state propagation.

One step advances speed and heading linearly and moves the position along
the exact constant-curvature arc.  Near zero turn rate the arc expression is
numerically unstable (it divides by omega^2), so a series expansion in omega
is used instead; the expansion carries terms through omega^3 so both branches
agree far below sensor-noise level at the switch point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import IDX_A, IDX_H, IDX_U, IDX_W, IDX_X, IDX_Y, VehicleState, wrap_angle


@dataclass
class CtraConfig:
    # below omega_eps the arc form loses ~|bracket|*eps/omega^2 to
    # cancellation; the omega^3 series is exact to ~1e-14 there, and both
    # forms are accurate beyond 1e-10 m at the default switch point
    dt: float = 0.1
    omega_eps: float = 1e-2

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.omega_eps <= 0:
            raise ValueError("omega_eps must be > 0")


def ctra_step_array(states: np.ndarray, cfg: CtraConfig) -> np.ndarray:
    """Advance a batch of state rows (n, 6) by one slot."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    dt = cfg.dt
    x = states[:, IDX_X]
    y = states[:, IDX_Y]
    h = states[:, IDX_H]
    u = states[:, IDX_U]
    a = states[:, IDX_A]
    w = states[:, IDX_W]

    hn = h + w * dt
    sin_h, cos_h = np.sin(h), np.cos(h)
    sin_n, cos_n = np.sin(hn), np.cos(hn)
    small = np.abs(w) < cfg.omega_eps
    any_small = bool(small.any())
    ws = np.where(small, 1.0, w) if any_small else w  # dummy divisor when small
    inv_w2 = 1.0 / (ws * ws)
    uw = u * ws
    vw = uw + a * ws * dt
    dx = inv_w2 * (vw * sin_n + a * cos_n - uw * sin_h - a * cos_h)
    dy = inv_w2 * (-vw * cos_n + a * sin_n + uw * cos_h - a * sin_h)

    if any_small:
        # integral of (u + a*tau) {cos,sin}(h + w*tau) expanded through w^3
        idx = np.flatnonzero(small)
        us, asub, wsub = u[idx], a[idx], w[idx]
        sh, ch = sin_h[idx], cos_h[idx]
        c1 = us * dt + 0.5 * asub * dt * dt
        c2 = (0.5 * us * dt ** 2 + asub * dt ** 3 / 3.0) * wsub
        c3 = (us * dt ** 3 / 6.0 + asub * dt ** 4 / 8.0) * wsub ** 2
        c4 = (us * dt ** 4 / 24.0 + asub * dt ** 5 / 30.0) * wsub ** 3
        dx[idx] = ch * c1 - sh * c2 - ch * c3 + sh * c4
        dy[idx] = sh * c1 + ch * c2 - sh * c3 - ch * c4

    out = np.empty_like(states)
    out[:, IDX_X] = x + dx
    out[:, IDX_Y] = y + dy
    out[:, IDX_H] = wrap_angle(hn)
    out[:, IDX_U] = u + a * dt
    out[:, IDX_A] = a
    out[:, IDX_W] = w
    return out


def ctra_step(s: VehicleState, cfg: CtraConfig) -> VehicleState:
    """Advance a single state by one slot."""
    return VehicleState.from_array(ctra_step_array(s.to_array()[None, :], cfg)[0])


def ctra_propagate(s: VehicleState, n: int, cfg: CtraConfig) -> list:
    """n-fold composition of ctra_step; element 0 is the input state."""
    if n < 0:
        raise ValueError("n must be >= 0")
    out = [s]
    cur = s.to_array()[None, :]
    for _ in range(n):
        cur = ctra_step_array(cur, cfg)
        out.append(VehicleState.from_array(cur[0]))
    return out
