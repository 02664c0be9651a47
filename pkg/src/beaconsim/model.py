"""Domain types: vehicle state, geometric connectivity and the proximity weight.

Vehicle kinematics are carried as a 6-component state (x, y, heading, speed,
acceleration, turn rate).  The network topology is purely geometric: two
vehicles are connected iff their planar distance is strictly below the
communication range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# State vector layout shared by every module that touches 6-vectors.
IDX_X, IDX_Y, IDX_H, IDX_U, IDX_A, IDX_W = range(6)
STATE_DIM = 6

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass
class VehicleState:
    """Ground-truth kinematic state of one vehicle at one slot.

    Units: meters, radians, seconds.  Heading is stored wrapped to
    [-pi, pi); all angle arithmetic must go through :func:`wrap_angle`.
    """

    x: float
    y: float
    h: float
    u: float
    a: float
    omega: float

    def __post_init__(self):
        self.h = float(wrap_angle(self.h))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.h, self.u, self.a, self.omega], dtype=float)

    @classmethod
    def from_array(cls, v) -> "VehicleState":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2], v[3], v[4], v[5])


def state_distance(s1, s2) -> float:
    """Planar distance between two states; every non-position field is ignored."""
    if isinstance(s1, VehicleState):
        x1, y1 = s1.x, s1.y
    else:
        x1, y1 = float(s1[IDX_X]), float(s1[IDX_Y])
    if isinstance(s2, VehicleState):
        x2, y2 = s2.x, s2.y
    else:
        x2, y2 = float(s2[IDX_X]), float(s2[IDX_Y])
    return math.hypot(x1 - x2, y1 - y2)


def neighbors(positions: dict, r: float, i: int) -> set:
    """All ids strictly within range r of vehicle i.

    ``positions`` maps vehicle id to an (x, y) pair.  Ties at exactly r are
    non-edges.
    """
    if i not in positions:
        raise KeyError(f"unknown vehicle id {i}")
    xi, yi = positions[i]
    out = set()
    for j, (xj, yj) in positions.items():
        if j != i and math.hypot(xi - xj, yi - yj) < r:
            out.add(j)
    return out


@dataclass
class ConnectivityGraph:
    """Snapshot of the geometric connectivity at one slot."""

    positions: dict
    r: float

    def neighbors(self, i: int) -> set:
        return neighbors(self.positions, self.r, i)

    def connected(self, i: int, j: int) -> bool:
        if i == j:
            return False
        xi, yi = self.positions[i]
        xj, yj = self.positions[j]
        return math.hypot(xi - xj, yi - yj) < self.r


@dataclass
class LogisticParams:
    """Shape of the proximity weight: generalized logistic, decreasing in distance.

    ``q_l`` is the logistic growth parameter (named apart from the filter
    process-noise constant).  ``d0`` is the safety distance at which the
    weight starts to fall off.
    """

    a: float = 1.0
    k: float = 0.0
    c: float = 1.0
    q_l: float = 1.0
    b: float = 0.05
    nu: float = 0.2
    d0: float = 42.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("logistic nu must be > 0")


def logistic_weight(d, p: LogisticParams | None = None):
    """Proximity weight in [0, 1] for a true distance d (scalar or array).

    With the defaults the weight is ~1 for d well below d0 and decays toward
    0 as d grows, so close vehicles dominate the error metric.
    """
    if p is None:
        p = LogisticParams()
    d = np.asarray(d, dtype=float)
    base = p.c + p.q_l * np.exp(-p.b * (d - p.d0))
    w = p.a + (p.k - p.a) / base ** (1.0 / p.nu)
    return float(w) if w.ndim == 0 else w
