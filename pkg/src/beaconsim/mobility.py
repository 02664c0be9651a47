"""Ground-truth trajectory supply.

Two sources are supported: floating-car-data XML exports (per-timestep
records with id, x, y, angle in degrees clockwise from north, speed), and a
built-in synthetic generator that drives vehicles over a Manhattan grid with
random trips.  Both produce slot-aligned Trajectory objects carrying the full
6-component state; acceleration and turn rate are derived from speed and
heading by central finite differences when the source does not provide them.

The synthetic generator deliberately produces abrupt maneuvers (braking
before corners, quarter-circle turns): tracking quality under events the
motion model cannot anticipate is exactly what the simulator studies.

The artifact's own line-oriented trace format is one record per line,
``slot,id,x,y,h,u,a,omega``, with a header row; floats are written with
enough digits to round-trip exactly.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .model import IDX_H, IDX_U, IDX_W, VehicleState, wrap_angle
from .motion import CtraConfig, ctra_step_array
from .ukf import MeasurementNoise


class TraceError(ValueError):
    """Malformed or inconsistent trajectory input."""


@dataclass
class Trajectory:
    """Slot-aligned state history of one vehicle over a contiguous slot range."""

    vehicle: int
    start_slot: int
    states: np.ndarray  # (n, 6)
    source_id: str | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[1] != 6:
            raise TraceError("trajectory states must have 6 columns")
        if np.any(self.states[:, IDX_U] < 0):
            raise TraceError(f"vehicle {self.vehicle}: negative speed in trajectory")

    @property
    def end_slot(self) -> int:
        return self.start_slot + len(self.states) - 1

    def covers(self, slot: int) -> bool:
        return self.start_slot <= slot <= self.end_slot

    def state_at(self, slot: int) -> np.ndarray:
        return self.states[slot - self.start_slot]


def _finite_differences(u: np.ndarray, h: np.ndarray, dt: float):
    """Derive acceleration and turn rate; central interior, one-sided ends."""
    n = len(u)
    a = np.zeros(n)
    w = np.zeros(n)
    if n >= 2:
        hu = np.unwrap(h)
        a[1:-1] = (u[2:] - u[:-2]) / (2 * dt)
        a[0] = (u[1] - u[0]) / dt
        a[-1] = (u[-1] - u[-2]) / dt
        w[1:-1] = (hu[2:] - hu[:-2]) / (2 * dt)
        w[0] = (hu[1] - hu[0]) / dt
        w[-1] = (hu[-1] - hu[-2]) / dt
    return a, w


# floating-car-data ingestion ------------------------------------------------

def _fcd_records(path):
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise TraceError(f"{path}: malformed XML: {exc}") from exc
    root = tree.getroot()
    steps = root.findall("timestep")
    if not steps:
        return []
    out = []
    for k, step in enumerate(steps):
        t_attr = step.get("time")
        if t_attr is None:
            raise TraceError(f"timestep #{k}: missing time attribute")
        try:
            t = float(t_attr)
        except ValueError:
            raise TraceError(f"timestep #{k}: bad time {t_attr!r}") from None
        vehicles = []
        for veh in step.findall("vehicle"):
            vid = veh.get("id")
            if vid is None:
                raise TraceError(f"timestep t={t_attr}: vehicle record without id")
            try:
                x = float(veh.get("x"))
                y = float(veh.get("y"))
                angle = float(veh.get("angle"))
                speed = float(veh.get("speed"))
            except (TypeError, ValueError):
                raise TraceError(
                    f"timestep t={t_attr}: vehicle {vid!r}: missing or non-numeric "
                    "x/y/angle/speed") from None
            if speed < 0:
                raise TraceError(f"timestep t={t_attr}: vehicle {vid!r}: negative speed")
            vehicles.append((vid, x, y, angle, speed))
        out.append((t, vehicles))
    return out


def parse_fcd(path, dt: float = 0.1) -> list:
    """Parse a floating-car-data export into slot-aligned trajectories.

    Export angles are degrees clockwise from north; they are converted to
    radians counterclockwise from east here and nowhere else.  A vehicle
    absent from a timestep is out of the network for the matching slots; each
    contiguous presence segment becomes its own Trajectory (ids are dense
    integers in order of appearance).
    """
    records = _fcd_records(path)
    if not records:
        return []
    times = np.array([t for t, _ in records])
    if len(times) > 1:
        gaps = np.diff(times)
        if np.any(gaps <= 0) or not np.allclose(gaps, gaps[0], rtol=0, atol=1e-9):
            raise TraceError("non-uniform timestep spacing in trace")
        spacing = float(gaps[0])
    else:
        spacing = dt

    per_vehicle = {}
    order = []
    for k, (_, vehicles) in enumerate(records):
        for vid, x, y, angle, speed in vehicles:
            if vid not in per_vehicle:
                per_vehicle[vid] = []
                order.append(vid)
            per_vehicle[vid].append((k, x, y, angle, speed))

    aligned = abs(spacing - dt) <= 1e-9
    trajectories = []
    next_id = 0
    for vid in order:
        rows = per_vehicle[vid]
        # split into contiguous presence segments
        segments = [[rows[0]]]
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] == prev[0] + 1:
                segments[-1].append(cur)
            else:
                segments.append([cur])
        for seg in segments:
            idx = np.array([r[0] for r in seg])
            t_seg = times[idx]
            xs = np.array([r[1] for r in seg])
            ys = np.array([r[2] for r in seg])
            hs = wrap_angle(math.pi / 2 - np.radians(np.array([r[3] for r in seg])))
            us = np.array([r[4] for r in seg])
            if aligned:
                slot0 = int(round(t_seg[0] / dt))
                x_g, y_g, h_g, u_g = xs, ys, np.asarray(hs), us
            else:
                k0 = math.ceil(t_seg[0] / dt - 1e-9)
                k1 = math.floor(t_seg[-1] / dt + 1e-9)
                if k1 < k0:
                    continue
                slot0 = k0
                t_grid = np.arange(k0, k1 + 1) * dt
                x_g = np.interp(t_grid, t_seg, xs)
                y_g = np.interp(t_grid, t_seg, ys)
                u_g = np.interp(t_grid, t_seg, us)
                h_g = wrap_angle(np.interp(t_grid, t_seg, np.unwrap(hs)))
            a_g, w_g = _finite_differences(u_g, h_g, dt)
            states = np.column_stack([x_g, y_g, h_g, u_g, a_g, w_g])
            trajectories.append(Trajectory(next_id, slot0, states, source_id=vid))
            next_id += 1
    return trajectories


def write_fcd(trajectories, path, dt: float = 0.1):
    """Serialize trajectories as a floating-car-data export (inverse convention)."""
    last = max(t.end_slot for t in trajectories)
    first = min(t.start_slot for t in trajectories)
    with open(path, "w") as fh:
        fh.write("<fcd-export>\n")
        for slot in range(first, last + 1):
            fh.write(f'  <timestep time="{slot * dt:.17g}">\n')
            for traj in trajectories:
                if traj.covers(slot):
                    s = traj.state_at(slot)
                    angle = math.degrees(math.pi / 2 - s[IDX_H]) % 360.0
                    name = traj.source_id or f"veh{traj.vehicle}"
                    fh.write(f'    <vehicle id="{name}" x="{s[0]:.17g}" y="{s[1]:.17g}" '
                             f'angle="{angle:.17g}" speed="{s[3]:.17g}"/>\n')
            fh.write("  </timestep>\n")
        fh.write("</fcd-export>\n")


# internal plain-text trace ---------------------------------------------------

TRACE_HEADER = "slot,id,x,y,h,u,a,omega"


def write_trace(trajectories, path):
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER + "\n")
        for traj in sorted(trajectories, key=lambda t: t.vehicle):
            for k, s in enumerate(traj.states):
                cols = ",".join(f"{v:.17g}" for v in s)
                fh.write(f"{traj.start_slot + k},{traj.vehicle},{cols}\n")


def read_trace(path) -> list:
    per_vehicle = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRACE_HEADER:
            raise TraceError(f"{path}:1: expected header {TRACE_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise TraceError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                slot = int(parts[0])
                vid = int(parts[1])
                vals = [float(v) for v in parts[2:]]
            except ValueError:
                raise TraceError(f"{path}:{lineno}: non-numeric field") from None
            per_vehicle.setdefault(vid, []).append((slot, vals))
    trajectories = []
    for vid in sorted(per_vehicle):
        rows = sorted(per_vehicle[vid])
        slots = [r[0] for r in rows]
        if slots != list(range(slots[0], slots[0] + len(slots))):
            raise TraceError(f"vehicle {vid}: non-contiguous slots in trace")
        states = np.array([r[1] for r in rows])
        trajectories.append(Trajectory(vid, slots[0], states))
    return trajectories


# synthetic urban grid ---------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Manhattan-grid random-trip scenario.

    The vehicle count is density * area rounded to the nearest integer (at
    least 1).  Streets run along both axes every block_len_m meters; vehicles
    cruise toward v_max, brake before corners they intend to turn at, and
    turn along bounded-curvature arcs.
    """

    grid_blocks: int = 7
    block_len_m: float = 102.7
    v_max: float = 13.89
    density_per_km2: float = 120.0
    area_km2: float = 0.5168
    turn_probability: float = 0.25
    accel: float = 2.0
    decel: float = 3.5
    seed: int | None = 0
    n_slots: int = 3000
    dt: float = 0.1

    def __post_init__(self):
        if self.grid_blocks < 1 or self.block_len_m <= 0:
            raise ValueError("grid must have >= 1 block of positive length")
        if self.v_max <= 0 or self.accel <= 0 or self.decel <= 0:
            raise ValueError("v_max, accel and decel must be > 0")
        if not (0.0 <= self.turn_probability <= 1.0):
            raise ValueError("turn_probability must be in [0, 1]")

    def vehicle_count(self) -> int:
        return max(1, round(self.density_per_km2 * self.area_km2))

    def extent(self) -> float:
        return self.grid_blocks * self.block_len_m


_TURN_RADIUS = 6.0     # m, nominal corner radius
_TURN_SPEED = 4.0      # m/s, target corner entry speed
_OMEGA_CAP = 1.0       # rad/s
_CRUISE, _BRAKE, _TURN = range(3)
_AXIS_H = (0.0, math.pi / 2, -math.pi, -math.pi / 2)  # E, N, W, S
_AXIS_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))


class _Walker:
    """One vehicle's state machine on the grid."""

    def __init__(self, cfg: SyntheticConfig, rng: np.random.Generator):
        self.cfg = cfg
        b = cfg.block_len_m
        extent = cfg.extent()
        self.axis = int(rng.integers(0, 4))
        line = int(rng.integers(0, cfg.grid_blocks + 1)) * b
        along = float(rng.uniform(0.15, 0.85)) * extent
        if self.axis in (0, 2):      # east/west: travel along x on line y
            self.x, self.y = along, line
        else:
            self.x, self.y = line, along
        self.h = _AXIS_H[self.axis]
        self.u = float(rng.uniform(0.3, 0.8)) * cfg.v_max
        self.mode = _CRUISE
        self.turn_sign = 0
        self.turn_rem = 0.0
        self._set_next_node(rng)

    # geometry helpers: coordinate along motion axis, signed direction
    def _coord(self):
        return self.x if self.axis in (0, 2) else self.y

    def _direction(self):
        return 1.0 if self.axis in (0, 1) else -1.0

    def _headroom(self, axis):
        extent = self.cfg.extent()
        coord = self.x if axis in (0, 2) else self.y
        return extent - coord if axis in (0, 1) else coord

    def _node_pos(self):
        if self.axis in (0, 2):
            return (self.next_node, self.y)
        return (self.x, self.next_node)

    def _valid_turns(self, node_pos):
        b = self.cfg.block_len_m
        extent = self.cfg.extent()
        valid = []
        for sign in (1, -1):
            axis = (self.axis + sign) % 4
            nx, ny = node_pos
            coord = nx if axis in (0, 2) else ny
            headroom = extent - coord if axis in (0, 1) else coord
            if headroom >= b - 1e-9:
                valid.append(sign)
        return valid

    def _set_next_node(self, rng):
        b = self.cfg.block_len_m
        extent = self.cfg.extent()
        coord = self._coord()
        if self._direction() > 0:
            node = math.floor(coord / b + 1e-9) * b + b
            self.next_node = min(node, extent)
        else:
            node = math.ceil(coord / b - 1e-9) * b - b
            self.next_node = max(node, 0.0)
        node_pos = self._node_pos()
        at_boundary = self.next_node <= 0.0 or self.next_node >= extent
        valid = self._valid_turns(node_pos)
        if at_boundary or (valid and rng.random() < self.cfg.turn_probability):
            if not valid:
                valid = [1, -1]  # interior nodes always allow both
            self.action = valid[int(rng.integers(0, len(valid)))]
        else:
            self.action = 0

    def _dist_to_node(self):
        return (self.next_node - self._coord()) * self._direction()

    def controls(self, rng):
        """Pick (a, omega) for the coming slot, handling mode transitions."""
        cfg = self.cfg
        dt = cfg.dt
        if self.mode == _TURN:
            if self.turn_rem <= 1e-12:
                self._finish_turn(rng)
            else:
                mag = min(_OMEGA_CAP, max(self.u, 0.5) / _TURN_RADIUS)
                mag = min(mag, self.turn_rem / dt)
                return 0.0, self.turn_sign * mag
        dist = self._dist_to_node()
        if self.action != 0:
            to_corner = dist - _TURN_RADIUS
            if to_corner <= 0.0:
                self.mode = _TURN
                self.turn_sign = self.action
                self.turn_rem = math.pi / 2
                mag = min(_OMEGA_CAP, max(self.u, 0.5) / _TURN_RADIUS)
                mag = min(mag, self.turn_rem / dt)
                return 0.0, self.turn_sign * mag
            brake_dist = max(0.0, (self.u ** 2 - _TURN_SPEED ** 2) / (2 * cfg.decel))
            if to_corner <= brake_dist + self.u * dt:
                self.mode = _BRAKE
                a = max(-cfg.decel, (_TURN_SPEED - self.u) / dt)
                return min(a, 0.0), 0.0
        if dist <= 0.0:
            self._set_next_node(rng)
        self.mode = _CRUISE
        if self.u < cfg.v_max:
            return min(cfg.accel, (cfg.v_max - self.u) / dt), 0.0
        return 0.0, 0.0

    def _finish_turn(self, rng):
        self.axis = (self.axis + self.turn_sign) % 4
        self.h = _AXIS_H[self.axis]
        self.mode = _CRUISE
        self.turn_sign = 0
        self._set_next_node(rng)

    def absorb(self, row, w):
        self.x, self.y, self.h, self.u = row[0], row[1], row[2], row[3]
        if self.mode == _TURN:
            self.turn_rem = max(0.0, self.turn_rem - abs(w) * self.cfg.dt)


def generate_synthetic(cfg: SyntheticConfig) -> list:
    """Deterministic random-trip trajectories on the grid (same seed, same bits)."""
    rng = np.random.default_rng(cfg.seed)
    walkers = [_Walker(cfg, rng) for _ in range(cfg.vehicle_count())]
    n = cfg.n_slots
    m = len(walkers)
    ctra = CtraConfig(dt=cfg.dt)
    states = np.empty((m, n, 6))
    cur = np.empty((m, 6))
    for k in range(n):
        for i, wk in enumerate(walkers):
            a, w = wk.controls(rng)
            cur[i] = (wk.x, wk.y, wk.h, wk.u, a, w)
        states[:, k, :] = cur
        nxt = ctra_step_array(cur, ctra)
        for i, wk in enumerate(walkers):
            wk.absorb(nxt[i], cur[i, IDX_W])
    # CTRA speed update cannot undershoot 0 here (braking clamps at the corner
    # speed), but guard against float dust
    states[:, :, IDX_U] = np.clip(states[:, :, IDX_U], 0.0, cfg.v_max)
    return [Trajectory(i, 0, states[i]) for i in range(m)]


# observation model -----------------------------------------------------------

def observe_batch(states: np.ndarray, noise: MeasurementNoise,
                  rng: np.random.Generator) -> np.ndarray:
    """Add independent zero-mean Gaussian noise per component; re-wrap heading."""
    states = np.atleast_2d(states)
    out = states + rng.standard_normal(states.shape) * np.sqrt(noise.var)
    out[:, IDX_H] = wrap_angle(out[:, IDX_H])
    return out


def observe(s: VehicleState, noise: MeasurementNoise, rng: np.random.Generator) -> VehicleState:
    return VehicleState.from_array(observe_batch(s.to_array()[None, :], noise, rng)[0])
