"""Slotted broadcast medium with subcarriers and per-receiver collisions.

One packet occupies one subcarrier for exactly one slot.  Carrier sensing is
1-persistent and evaluated against the previous slot's transmissions: an
attempt defers when some other vehicle within range of the sender used the
attempt's subcarrier in the previous slot (same-slot starts cannot hear each
other, which is what produces collisions).  A deferred attempt re-draws its
subcarrier and retries next slot; the payload is never altered or dropped.

Delivery happens ``delay_slots`` after transmission, to every vehicle within
range of the sender at transmit time.  If a receiver is due two or more
packets on the same subcarrier in the same delivery slot, all of them are
destroyed at that receiver only (hidden-node asymmetry: other receivers in
range of just one sender still get theirs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ukf import GaussianState

TOTAL_SUBCARRIERS = 52


@dataclass
class ChannelConfig:
    range_m: float = 140.0
    subcarriers: int = 8
    delay_slots: int = 1
    ideal: bool = False  # no sensing, no collisions; delay still applies

    def __post_init__(self):
        if not (1 <= self.subcarriers < TOTAL_SUBCARRIERS):
            raise ValueError(f"subcarriers must be in [1, {TOTAL_SUBCARRIERS})")
        if self.delay_slots < 1:
            raise ValueError("delay_slots must be >= 1")
        if self.range_m <= 0:
            raise ValueError("range_m must be > 0")


@dataclass
class BeaconPacket:
    sender: int
    tx_slot: int
    estimate: GaussianState
    subcarrier: int


@dataclass
class TxAttempt:
    sender: int
    packet: BeaconPacket
    deferred_since: int


def pick_subcarrier(rng: np.random.Generator, n_sc: int) -> int:
    if n_sc < 1:
        raise ValueError("n_sc must be >= 1")
    return int(rng.integers(0, n_sc))


def _in_range(positions, i, j, r):
    xi, yi = positions[i]
    xj, yj = positions[j]
    return math.hypot(xi - xj, yi - yj) < r


def resolve_slot(attempts, prev_activity, positions, cfg: ChannelConfig,
                 rng: np.random.Generator, slot: int, neighbor_sets=None):
    """Resolve one slot of channel access.

    Returns (transmitted packets, deferred attempts for next slot,
    deliveries due at slot + delay_slots as {receiver: [packets]}).
    Attempts are processed in sender order so the outcome is a pure function
    of the inputs and the generator state.

    ``neighbor_sets`` optionally precomputes {id: set of in-range ids} from
    the same positions; when absent it is derived here.
    """
    if neighbor_sets is None:
        ids = sorted(positions)
        neighbor_sets = {i: {j for j in ids
                             if j != i and _in_range(positions, i, j, cfg.range_m)}
                         for i in ids}
    attempts = sorted(attempts, key=lambda at: at.sender)
    transmitted = []
    deferred = []
    for at in attempts:
        busy = False
        if not cfg.ideal:
            # the sender is at distance 0 of itself: its own previous-slot
            # transmission also marks the subcarrier busy
            nbrs = neighbor_sets.get(at.sender, ())
            for sender, sc in prev_activity:
                if sc == at.packet.subcarrier and (sender == at.sender or sender in nbrs):
                    busy = True
                    break
        if busy:
            deferred.append(replace(
                at, packet=replace(at.packet, subcarrier=pick_subcarrier(rng, cfg.subcarriers))))
        else:
            transmitted.append(replace(at.packet, tx_slot=slot))

    # group per receiver, then destroy same-subcarrier groups of >= 2
    per_receiver = {}
    for pkt in transmitted:
        for j in neighbor_sets.get(pkt.sender, ()):
            per_receiver.setdefault(j, []).append(pkt)
    deliveries = {}
    for j in sorted(per_receiver):
        pkts = per_receiver[j]
        if cfg.ideal:
            deliveries[j] = sorted(pkts, key=lambda p: p.sender)
            continue
        by_sc = {}
        for pkt in pkts:
            by_sc.setdefault(pkt.subcarrier, []).append(pkt)
        kept = [pkts2[0] for pkts2 in by_sc.values() if len(pkts2) == 1]
        if kept:
            deliveries[j] = sorted(kept, key=lambda p: p.sender)
    return transmitted, deferred, deliveries
