"""Beacon scheduling policies and the shared forcing rules.

Two schedulers are provided: a fixed inter-transmission period, and a
threshold rule that broadcasts when the position gap between the current
posterior estimate and a shadow predict-only replica (what neighbors believe)
exceeds a configured distance.  Both are subject to a maximum silent period
and to a forced broadcast when a packet arrives from an unknown sender.

The shadow resets when a packet is handed to the MAC, not at delivery: a
sender of an unacknowledged broadcast cannot know the delivery outcome, so a
deferred packet transiently lets the real neighbor error exceed the
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import state_distance
from .motion import CtraConfig
from .ukf import GaussianState, UkfParams, ukf_predict

PERIODIC = "periodic"
THRESHOLD = "threshold"


@dataclass
class PolicyConfig:
    kind: str = THRESHOLD
    period_s: float | None = None
    threshold_m: float | None = None
    max_period_s: float = 10.0
    slot_s: float = 0.1

    def __post_init__(self):
        if self.kind not in (PERIODIC, THRESHOLD):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == PERIODIC:
            if self.period_s is None or self.period_s < 0:
                raise ValueError("periodic policy needs period_s >= 0")
        else:
            if self.threshold_m is None or self.threshold_m < 0:
                raise ValueError("threshold policy needs threshold_m >= 0")
        if self.max_period_s <= 0:
            raise ValueError("max_period_s must be > 0")
        if self.slot_s <= 0:
            raise ValueError("slot_s must be > 0")

    def period_slots(self) -> int:
        return math.ceil(self.period_s / self.slot_s)

    def max_period_slots(self) -> int:
        return math.ceil(self.max_period_s / self.slot_s)

    def parameter(self) -> float:
        return self.period_s if self.kind == PERIODIC else self.threshold_m


@dataclass
class PolicyState:
    slots_since_tx: int
    shadow: GaussianState
    force_tx_pending: bool = False


def shadow_predict(ps: PolicyState, cfg: CtraConfig, p: UkfParams) -> PolicyState:
    """Advance the predict-only replica by one slot and age the tx counter."""
    return PolicyState(ps.slots_since_tx + 1, ukf_predict(ps.shadow, cfg, p),
                       ps.force_tx_pending)


def should_transmit(cfg: PolicyConfig, slots_since_tx: int, displacement_m: float,
                    force_pending: bool) -> bool:
    """The scheduling rule on scalars; single source of truth for the engine."""
    if force_pending or slots_since_tx >= cfg.max_period_slots():
        return True
    if cfg.kind == PERIODIC:
        return slots_since_tx >= cfg.period_slots()
    return displacement_m > cfg.threshold_m


def decide(ps: PolicyState, posterior: GaussianState, cfg: PolicyConfig) -> bool:
    """True when a transmission must be initiated this slot.

    Expects shadow_predict to have been applied already this slot.
    """
    disp = state_distance(posterior.mean, ps.shadow.mean)
    return should_transmit(cfg, ps.slots_since_tx, disp, ps.force_tx_pending)


def on_receive(ps: PolicyState, pkt, known) -> PolicyState:
    """Flag a forced broadcast when the packet comes from an untracked sender."""
    if pkt.sender not in known:
        return PolicyState(ps.slots_since_tx, ps.shadow, True)
    return ps


def on_transmit(ps: PolicyState, posterior: GaussianState) -> PolicyState:
    """Reset after handing a packet to the MAC: shadow mirrors the broadcast."""
    return PolicyState(0, posterior.copy(), False)
