"""Slot-by-slot simulation orchestration plus the Monte Carlo runners.

Each slot advances in a fixed order: ground truth, own-state sensing and
filtering, policy decisions, channel resolution, packet processing, track
prediction, eviction, metric recording.  The order is fixed so a run is a
pure function of (configuration, seed); a master seed spawns independent
streams for mobility, measurement noise and subcarrier draws, so trajectories
and observations are identical across policy/channel variations of the same
scenario seed.

Filter arithmetic for all vehicles is stacked and executed through the
batched UKF primitives; the per-vehicle state outside the Gaussians lives in
plain dictionaries keyed by vehicle id.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import BeaconPacket, ChannelConfig, TxAttempt, pick_subcarrier, resolve_slot
from .metrics import RunSummary, SlotRecord, TxLog, nearest_rank_percentile, \
    slot_errors_vectorized, summarize
from .mobility import SyntheticConfig, Trajectory, generate_synthetic, observe_batch, \
    parse_fcd, read_trace
from .model import IDX_H, LogisticParams, STATE_DIM
from .motion import CtraConfig
from .policy import PERIODIC, PolicyConfig, should_transmit
from .ukf import GaussianState, MeasurementNoise, UkfParams, predict_batch, update_batch

FUSION_MEASUREMENT = "measurement"
FUSION_REPLACE = "replace"


class EngineError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    duration_s: float = 300.0
    slot_s: float = 0.1
    seeds: tuple = (1,)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    policy: PolicyConfig = field(default_factory=lambda: PolicyConfig(
        kind=PERIODIC, period_s=1.0))
    ukf: UkfParams = field(default_factory=UkfParams)
    ctra: CtraConfig = field(default_factory=CtraConfig)
    logistic: LogisticParams = field(default_factory=LogisticParams)
    noise: MeasurementNoise = field(default_factory=MeasurementNoise)
    trace_path: str | None = None
    synthetic: SyntheticConfig | None = None
    eviction_s: float = 5.0
    track_fusion: str = FUSION_MEASUREMENT

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        n = self.duration_s / self.slot_s
        if abs(n - round(n)) > 1e-9:
            raise ValueError("duration_s must be an integer number of slots")
        if self.trace_path is None and self.synthetic is None:
            raise ValueError("a mobility source (trace or synthetic) is required")
        if self.track_fusion not in (FUSION_MEASUREMENT, FUSION_REPLACE):
            raise ValueError(f"unknown track_fusion {self.track_fusion!r}")
        if self.eviction_s <= 0:
            raise ValueError("eviction_s must be > 0")

    def n_slots(self) -> int:
        return round(self.duration_s / self.slot_s)

    def eviction_slots(self) -> int:
        return math.ceil(self.eviction_s / self.slot_s)


@dataclass
class RunResult:
    summary: RunSummary
    records: list
    tx_log: TxLog


def load_trajectories(cfg: ScenarioConfig, mobility_seed: int | None = None) -> list:
    if cfg.trace_path is not None:
        with open(cfg.trace_path) as fh:
            head = fh.read(1)
        if head == "<":
            return parse_fcd(cfg.trace_path, dt=cfg.slot_s)
        return read_trace(cfg.trace_path)
    syn = cfg.synthetic
    seed = syn.seed if syn.seed is not None else mobility_seed
    syn = replace(syn, seed=seed, n_slots=cfg.n_slots(), dt=cfg.slot_s)
    return generate_synthetic(syn)


class _TrackPool:
    """Flat storage for all (ego, target) predict-only filters."""

    def __init__(self):
        self.mean = np.empty((0, STATE_DIM))
        self.cov = np.empty((0, STATE_DIM, STATE_DIM))
        self.last_update = np.empty(0, dtype=int)
        self.alive = np.empty(0, dtype=bool)
        self.owner = np.empty(0, dtype=int)
        self.target = np.empty(0, dtype=int)
        self.free = []
        self.by_ego = {}  # ego id -> {target id: row}

    def _grow(self, extra=64):
        n = len(self.alive)
        self.mean = np.vstack([self.mean, np.zeros((extra, STATE_DIM))])
        self.cov = np.concatenate([self.cov, np.zeros((extra, STATE_DIM, STATE_DIM))])
        self.last_update = np.concatenate([self.last_update, np.zeros(extra, dtype=int)])
        self.alive = np.concatenate([self.alive, np.zeros(extra, dtype=bool)])
        self.owner = np.concatenate([self.owner, np.full(extra, -1, dtype=int)])
        self.target = np.concatenate([self.target, np.full(extra, -1, dtype=int)])
        self.free.extend(range(n + extra - 1, n - 1, -1))

    def add(self, ego, target, mean, cov, slot) -> int:
        if not self.free:
            self._grow()
        row = self.free.pop()
        self.mean[row] = mean
        self.cov[row] = cov
        self.last_update[row] = slot
        self.alive[row] = True
        self.owner[row] = ego
        self.target[row] = target
        self.by_ego.setdefault(ego, {})[target] = row
        return row

    def kill(self, row):
        ego, target = int(self.owner[row]), int(self.target[row])
        self.alive[row] = False
        self.owner[row] = -1
        self.target[row] = -1
        del self.by_ego[ego][target]
        self.free.append(row)

    def drop_ego(self, ego):
        for row in list(self.by_ego.get(ego, {}).values()):
            self.kill(row)
        self.by_ego.pop(ego, None)

    def alive_rows(self):
        return np.flatnonzero(self.alive)


class World:
    """Mutable state of one simulation replication."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        s_mob, s_noise, s_chan = ss.spawn(3)
        self.noise_rng = np.random.default_rng(s_noise)
        self.chan_rng = np.random.default_rng(s_chan)
        self.trajectories = {t.vehicle: t for t in
                             load_trajectories(cfg, int(s_mob.generate_state(1)[0]))}
        if not self.trajectories:
            raise EngineError("scenario has no vehicles")
        self.max_id = max(self.trajectories)

        self.active = []            # ids present this slot, in arrival order
        self.idx = {}               # id -> row in the own/shadow arrays
        self.idx_arr = np.full(self.max_id + 1, -1, dtype=int)
        self.own_mean = np.empty((0, STATE_DIM))
        self.own_cov = np.empty((0, STATE_DIM, STATE_DIM))
        self.sh_mean = np.empty((0, STATE_DIM))
        self.sh_cov = np.empty((0, STATE_DIM, STATE_DIM))
        self.since_tx = np.empty(0, dtype=int)
        self.force = np.empty(0, dtype=bool)
        self.pending = {}           # id -> TxAttempt
        self.tracks = _TrackPool()
        self.delivery_queue = {}    # due slot -> [(receiver, packet)]
        self.prev_activity = []
        self.tx_log = TxLog(slot_s=cfg.slot_s)
        self.records = []

    # lifecycle ------------------------------------------------------------

    def _sync_active(self, slot):
        now = sorted(v for v, t in self.trajectories.items() if t.covers(slot))
        if now == self.active:
            return []
        prev = set(self.active)
        cur = set(now)
        for vid in sorted(prev - cur):
            row = self.idx[vid]
            for arr_name in ("own_mean", "own_cov", "sh_mean", "sh_cov",
                             "since_tx", "force"):
                setattr(self, arr_name, np.delete(getattr(self, arr_name), row, axis=0))
            self.pending.pop(vid, None)
            self.tracks.drop_ego(vid)
            del self.idx[vid]
            for other, r in list(self.idx.items()):
                if r > row:
                    self.idx[other] = r - 1
            self.active.remove(vid)
        # new arrivals go at the end; rows stay aligned with self.active order
        entered = sorted(cur - prev)
        for vid in entered:
            self.idx[vid] = len(self.active)
            self.active.append(vid)
            self.own_mean = np.vstack([self.own_mean, np.zeros(STATE_DIM)])
            self.own_cov = np.concatenate([self.own_cov,
                                           np.eye(STATE_DIM)[None, :, :]])
            self.sh_mean = np.vstack([self.sh_mean, np.zeros(STATE_DIM)])
            self.sh_cov = np.concatenate([self.sh_cov, np.eye(STATE_DIM)[None, :, :]])
            self.since_tx = np.concatenate([self.since_tx, [0]])
            self.force = np.concatenate([self.force, [False]])
        self.idx_arr[:] = -1
        for vid, row in self.idx.items():
            self.idx_arr[vid] = row
        return entered

    # one slot ---------------------------------------------------------------

    def step(self, slot: int) -> SlotRecord:
        cfg = self.cfg
        # (1) ground truth and lifecycle
        entered = self._sync_active_reindexed(slot)
        n = len(self.active)
        if n == 0:
            rec = SlotRecord(slot, 0.0, 0.0, 0, 0, 0, 0, 0, 0,
                             vehicle_errors=np.empty(0))
            self.records.append(rec)
            self.prev_activity = []
            self.delivery_queue.pop(slot, None)
            return rec
        truth = np.stack([self.trajectories[v].state_at(slot) for v in self.active])
        positions = {v: (truth[k, 0], truth[k, 1]) for k, v in enumerate(self.active)}
        pos = truth[:, :2]
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        in_range = dist < cfg.channel.range_m
        np.fill_diagonal(in_range, False)
        nbr_sets = {vid: {self.active[j] for j in np.flatnonzero(in_range[k])}
                    for k, vid in enumerate(self.active)}

        # (2) sense and filter own state; (3a) shadow predict
        obs = observe_batch(truth, cfg.noise, self.noise_rng)
        fresh = np.array([v in entered for v in self.active], dtype=bool)
        if fresh.any():
            self.own_mean[fresh] = obs[fresh]
            self.own_cov[fresh] = cfg.noise.matrix()
            self.sh_mean[fresh] = obs[fresh]
            self.sh_cov[fresh] = cfg.noise.matrix()
        stacked_mean = np.concatenate([self.own_mean, self.sh_mean])
        stacked_cov = np.concatenate([self.own_cov, self.sh_cov])
        pm, pc = predict_batch(stacked_mean, stacked_cov, cfg.ctra, cfg.ukf)
        prior_mean, self.sh_mean = pm[:n], pm[n:]
        prior_cov, self.sh_cov = pc[:n], pc[n:]
        self.own_mean, self.own_cov = update_batch(
            prior_mean, prior_cov, obs, cfg.noise.matrix(), cfg.ukf)
        self.since_tx += 1
        if fresh.any():
            # entering vehicles start from the first observation and announce
            self.own_mean[fresh] = obs[fresh]
            self.own_cov[fresh] = cfg.noise.matrix()
            self.sh_mean[fresh] = obs[fresh]
            self.sh_cov[fresh] = cfg.noise.matrix()
            self.since_tx[fresh] = cfg.policy.max_period_slots()
            self.force[fresh] = False

        # (3b) transmission decisions; one pending MAC attempt per vehicle
        disp = np.hypot(self.own_mean[:, 0] - self.sh_mean[:, 0],
                        self.own_mean[:, 1] - self.sh_mean[:, 1])
        for k, vid in enumerate(self.active):
            if vid in self.pending:
                continue
            if should_transmit(cfg.policy, int(self.since_tx[k]), float(disp[k]),
                               bool(self.force[k])):
                est = GaussianState(self.own_mean[k].copy(), self.own_cov[k].copy())
                pkt = BeaconPacket(vid, slot, est,
                                   pick_subcarrier(self.chan_rng, cfg.channel.subcarriers))
                self.pending[vid] = TxAttempt(vid, pkt, slot)
                self.since_tx[k] = 0
                self.force[k] = False
                self.sh_mean[k] = self.own_mean[k]
                self.sh_cov[k] = self.own_cov[k]

        # (4) channel access
        attempts = list(self.pending.values())
        transmitted, deferred, deliveries = resolve_slot(
            attempts, self.prev_activity, positions, cfg.channel, self.chan_rng,
            slot, neighbor_sets=nbr_sets)
        self.pending = {at.sender: at for at in deferred}
        for pkt in transmitted:
            self.tx_log.record_sent(pkt.sender, slot)
        if deliveries:
            due = self.delivery_queue.setdefault(slot + cfg.channel.delay_slots, [])
            for recv in sorted(deliveries):
                for pkt in deliveries[recv]:
                    due.append((recv, pkt))
        self.prev_activity = [(pkt.sender, pkt.subcarrier) for pkt in transmitted]
        potential = sum(len(nbr_sets[pkt.sender]) for pkt in transmitted)
        delivered = sum(len(v) for v in deliveries.values())
        collided = potential - delivered

        # (5) process deliveries due this slot
        fuse_rows, fuse_obs, fuse_cov = [], [], []
        for recv, pkt in self.delivery_queue.pop(slot, []):
            if recv not in self.idx:
                continue
            known = self.tracks.by_ego.get(recv, {})
            if pkt.sender in known:
                if cfg.track_fusion == FUSION_REPLACE:
                    row = known[pkt.sender]
                    self.tracks.mean[row] = pkt.estimate.mean
                    self.tracks.cov[row] = pkt.estimate.cov
                    self.tracks.last_update[row] = slot
                else:
                    fuse_rows.append(known[pkt.sender])
                    fuse_obs.append(pkt.estimate.mean)
                    fuse_cov.append(pkt.estimate.cov)
            else:
                self.tracks.add(recv, pkt.sender, pkt.estimate.mean,
                                pkt.estimate.cov, slot)
                self.force[self.idx[recv]] = True
        if fuse_rows:
            rows = np.array(fuse_rows)
            m2, c2 = update_batch(self.tracks.mean[rows], self.tracks.cov[rows],
                                  np.stack(fuse_obs), np.stack(fuse_cov), cfg.ukf)
            self.tracks.mean[rows] = m2
            self.tracks.cov[rows] = c2
            self.tracks.last_update[rows] = slot

        # (6) predict-only step for every track
        rows = self.tracks.alive_rows()
        if rows.size:
            m2, c2 = predict_batch(self.tracks.mean[rows], self.tracks.cov[rows],
                                   cfg.ctra, cfg.ukf)
            self.tracks.mean[rows] = m2
            self.tracks.cov[rows] = c2

        # (7) evict silent tracks whose prediction left the range
        silence = cfg.eviction_slots()
        r = cfg.channel.range_m
        for row in rows:
            if slot - self.tracks.last_update[row] <= silence:
                continue
            ego = int(self.tracks.owner[row])
            k = self.idx[ego]
            d = math.hypot(self.own_mean[k, 0] - self.tracks.mean[row, 0],
                           self.own_mean[k, 1] - self.tracks.mean[row, 1])
            if d >= r:
                self.tracks.kill(row)

        # (8) record metrics
        rec = self._record(slot, truth, dist, in_range, len(attempts),
                           len(transmitted), collided)
        self.records.append(rec)
        return rec

    def _sync_active_reindexed(self, slot):
        entered = self._sync_active(slot)
        for vid in self.active:
            self.tx_log.window_slots[vid] = self.tx_log.window_slots.get(vid, 0) + 1
        return set(entered)

    def _record(self, slot, truth, dist, in_range, attempted, sent, collided):
        cfg = self.cfg
        pool = self.tracks
        rows = pool.alive_rows()
        if rows.size:
            row_owner = self.idx_arr[pool.owner[rows]]
            row_target = self.idx_arr[pool.target[rows]]
            track_pos = pool.mean[rows, :2]
        else:
            row_owner = np.empty(0, dtype=int)
            row_target = np.empty(0, dtype=int)
            track_pos = np.empty((0, 2))
        per_vehicle, tracked_in_range, mis = slot_errors_vectorized(
            truth, self.own_mean, row_owner, row_target, track_pos,
            dist, in_range, cfg.logistic)
        nbrs = in_range.sum(axis=1)
        return SlotRecord(
            slot=slot,
            network_error=float(per_vehicle.mean()),
            p95_error=nearest_rank_percentile(per_vehicle, 95.0),
            undetected=int((nbrs - tracked_in_range).sum()),
            misdetected=int(mis.sum()),
            neighbors=int(nbrs.sum()),
            tx_attempted=attempted,
            tx_sent=sent,
            tx_collided=collided,
            vehicle_errors=per_vehicle,
        )


def run(cfg: ScenarioConfig, seed: int) -> RunResult:
    """Execute one replication; deterministic given (cfg, seed)."""
    world = World(cfg, seed)
    for slot in range(cfg.n_slots()):
        world.step(slot)
    summary = summarize(world.records, world.tx_log,
                        policy="ideal" if cfg.channel.ideal and
                        cfg.policy.kind == PERIODIC and cfg.policy.period_s == 0.0
                        else cfg.policy.kind,
                        parameter=cfg.policy.parameter(),
                        seed=seed, vehicles=len(world.trajectories))
    return RunResult(summary, world.records, world.tx_log)


def ideal_bound_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Per-slot broadcasting on a collision-free channel: the error floor."""
    return replace(cfg,
                   channel=replace(cfg.channel, ideal=True),
                   policy=PolicyConfig(kind=PERIODIC, period_s=0.0,
                                       max_period_s=cfg.policy.max_period_s,
                                       slot_s=cfg.policy.slot_s))


@dataclass
class SweepRow:
    policy: str
    parameter: float
    eff_intertx_s: float
    mean_error_m: float
    p95_error_m: float
    worst5_mean_error_m: float
    detection_error: float
    seeds: int


def _config_for(cfg: ScenarioConfig, kind: str, parameter: float) -> ScenarioConfig:
    if kind == "ideal":
        return ideal_bound_config(cfg)
    if kind == PERIODIC:
        pol = PolicyConfig(kind=PERIODIC, period_s=parameter,
                           max_period_s=cfg.policy.max_period_s, slot_s=cfg.slot_s)
    else:
        pol = PolicyConfig(kind=kind, threshold_m=parameter,
                           max_period_s=cfg.policy.max_period_s, slot_s=cfg.slot_s)
    return replace(cfg, policy=pol)


def _sweep_job(args):
    cfg, kind, parameter, seed = args
    result = run(_config_for(cfg, kind, parameter), seed)
    return (kind, parameter, seed), result.summary


def sweep(cfg: ScenarioConfig, grid, seeds=None, include_ideal=False, jobs=1):
    """Run every (policy point, seed) pair and average rows across seeds.

    ``grid`` is a list of (kind, parameter) pairs.  Returns the rows sorted
    by effective inter-transmission time plus, per policy, the parameter that
    minimizes the mean error.
    """
    if not grid:
        raise ValueError("empty sweep grid")
    seeds = list(seeds if seeds is not None else cfg.seeds)
    points = list(grid)
    if include_ideal:
        points = points + [("ideal", 0.0)]
    jobs_list = [(cfg, kind, param, seed) for kind, param in points for seed in seeds]
    results = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, summary in pool.map(_sweep_job, jobs_list):
                results[key] = summary
    else:
        for args in jobs_list:
            key, summary = _sweep_job(args)
            results[key] = summary
    rows = []
    for kind, param in points:
        runs = [results[(kind, param, s)] for s in seeds]
        rows.append(SweepRow(
            policy=kind,
            parameter=param,
            eff_intertx_s=float(np.mean([r.eff_intertx_s for r in runs])),
            mean_error_m=float(np.mean([r.mean_error_m for r in runs])),
            p95_error_m=float(np.mean([r.p95_error_m for r in runs])),
            worst5_mean_error_m=float(np.mean([r.worst5_mean_error_m for r in runs])),
            detection_error=float(np.mean([r.detection_error for r in runs])),
            seeds=len(seeds),
        ))
    rows.sort(key=lambda r: (r.eff_intertx_s, r.policy, r.parameter))
    best = {}
    for row in rows:
        cur = best.get(row.policy)
        if cur is None or row.mean_error_m < cur.mean_error_m:
            best[row.policy] = row
    return rows, best
