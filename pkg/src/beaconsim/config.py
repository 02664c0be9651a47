"""Scenario configuration: one YAML file mirroring the engine's field names.

The file fully describes a scenario; command-line flags only override seeds,
the output directory and the ideal-channel switch.  Unknown keys are
rejected so typos fail loudly before a simulation starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .channel import ChannelConfig
from .engine import ScenarioConfig
from .mobility import SyntheticConfig
from .model import LogisticParams
from .motion import CtraConfig
from .policy import PolicyConfig
from .ukf import MeasurementNoise, UkfParams


class ConfigError(ValueError):
    pass


@dataclass
class TheoryConfig:
    thresholds_m: list = field(default_factory=lambda: [1.94, 4.59, 8.29])
    horizon_steps: int = 300
    initial_state: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 10.0, 0.0, 0.0])
    initial_cov_diag: list | None = None
    tx_log: str | None = None

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ConfigError("theory.horizon_steps must be >= 1")
        if len(self.initial_state) != 6:
            raise ConfigError("theory.initial_state needs 6 components")
        if self.initial_cov_diag is not None and len(self.initial_cov_diag) != 6:
            raise ConfigError("theory.initial_cov_diag needs 6 components")
        if any(t < 0 for t in self.thresholds_m):
            raise ConfigError("theory thresholds must be >= 0")


@dataclass
class LoadedConfig:
    scenario: ScenarioConfig
    sweep_periodic_s: list
    sweep_threshold_m: list
    theory: TheoryConfig

    def sweep_grid(self) -> list:
        grid = [("periodic", float(v)) for v in self.sweep_periodic_s]
        grid += [("threshold", float(v)) for v in self.sweep_threshold_m]
        return grid


def _section(data: dict, name: str, allowed: set) -> dict:
    sub = data.get(name) or {}
    if not isinstance(sub, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sub


def load_config(path: str) -> LoadedConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")

    top_allowed = {"duration_s", "slot_s", "seeds", "eviction_s", "track_fusion",
                   "channel", "policy", "ukf", "ctra", "logistic", "noise",
                   "mobility", "sweep", "theory"}
    unknown = set(data) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    try:
        slot_s = float(data.get("slot_s", 0.1))
        duration_s = float(data.get("duration_s", 300.0))
        seeds = data.get("seeds", [1])
        if isinstance(seeds, int):
            seeds = [seeds]
        seeds = tuple(int(s) for s in seeds)

        ch = _section(data, "channel", {"range_m", "subcarriers", "delay_slots", "ideal"})
        channel = ChannelConfig(
            range_m=float(ch.get("range_m", 140.0)),
            subcarriers=int(ch.get("subcarriers", 8)),
            delay_slots=int(ch.get("delay_slots", 1)),
            ideal=bool(ch.get("ideal", False)),
        )

        po = _section(data, "policy", {"kind", "period_s", "threshold_m", "max_period_s"})
        policy = PolicyConfig(
            kind=str(po.get("kind", "threshold")),
            period_s=None if po.get("period_s") is None else float(po["period_s"]),
            threshold_m=None if po.get("threshold_m") is None else float(po["threshold_m"]),
            max_period_s=float(po.get("max_period_s", 10.0)),
            slot_s=slot_s,
        )

        uk = _section(data, "ukf", {"alpha", "beta", "kappa", "process_noise"})
        ukf = UkfParams(
            alpha=float(uk.get("alpha", 1.0)),
            beta=float(uk.get("beta", 2.0)),
            kappa=float(uk.get("kappa", 0.0)),
            q=float(uk.get("process_noise", 1e-4)),
        )

        ct = _section(data, "ctra", {"omega_eps"})
        ctra = CtraConfig(dt=slot_s, omega_eps=float(ct.get("omega_eps", 1e-4)))

        lo = _section(data, "logistic", {"a", "k", "c", "q", "b", "nu", "d0_m"})
        logistic = LogisticParams(
            a=float(lo.get("a", 1.0)), k=float(lo.get("k", 0.0)),
            c=float(lo.get("c", 1.0)), q_l=float(lo.get("q", 1.0)),
            b=float(lo.get("b", 0.05)), nu=float(lo.get("nu", 0.2)),
            d0=float(lo.get("d0_m", 42.0)),
        )

        no = _section(data, "noise", {"pos", "speed", "accel", "heading", "turn_rate"})
        noise = MeasurementNoise(np.array([
            float(no.get("pos", 1.18535)), float(no.get("pos", 1.18535)),
            float(no.get("heading", 0.09211)), float(no.get("speed", 0.5)),
            float(no.get("accel", 0.39)), float(no.get("turn_rate", 0.01587)),
        ]))

        mo = _section(data, "mobility", {"trace", "synthetic"})
        trace_path = mo.get("trace")
        synthetic = None
        if "synthetic" in mo and mo["synthetic"] is not None:
            sy = mo["synthetic"]
            allowed = {"grid_blocks", "block_len_m", "v_max", "density_per_km2",
                       "area_km2", "turn_probability", "accel", "decel", "seed"}
            unknown = set(sy) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in mobility.synthetic: {sorted(unknown)}")
            synthetic = SyntheticConfig(
                grid_blocks=int(sy.get("grid_blocks", 7)),
                block_len_m=float(sy.get("block_len_m", 102.7)),
                v_max=float(sy.get("v_max", 13.89)),
                density_per_km2=float(sy.get("density_per_km2", 120.0)),
                area_km2=float(sy.get("area_km2", 0.5168)),
                turn_probability=float(sy.get("turn_probability", 0.25)),
                accel=float(sy.get("accel", 2.0)),
                decel=float(sy.get("decel", 3.5)),
                seed=None if sy.get("seed") is None else int(sy["seed"]),
            )
        if trace_path is None and synthetic is None:
            raise ConfigError("mobility must give either 'trace' or 'synthetic'")

        scenario = ScenarioConfig(
            duration_s=duration_s,
            slot_s=slot_s,
            seeds=seeds,
            channel=channel,
            policy=policy,
            ukf=ukf,
            ctra=ctra,
            logistic=logistic,
            noise=noise,
            trace_path=trace_path,
            synthetic=synthetic,
            eviction_s=float(data.get("eviction_s", 5.0)),
            track_fusion=str(data.get("track_fusion", "measurement")),
        )

        sw = _section(data, "sweep", {"periodic_s", "threshold_m"})
        sweep_periodic = [float(v) for v in sw.get("periodic_s", [])]
        sweep_threshold = [float(v) for v in sw.get("threshold_m", [])]

        th = _section(data, "theory", {"thresholds_m", "horizon_steps", "initial_state",
                                       "initial_cov_diag", "tx_log"})
        theory = TheoryConfig(
            thresholds_m=[float(v) for v in th.get("thresholds_m", [1.94, 4.59, 8.29])],
            horizon_steps=int(th.get("horizon_steps", 300)),
            initial_state=[float(v) for v in th.get(
                "initial_state", [0.0, 0.0, 0.0, 10.0, 0.0, 0.0])],
            initial_cov_diag=None if th.get("initial_cov_diag") is None
            else [float(v) for v in th["initial_cov_diag"]],
            tx_log=th.get("tx_log"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc

    return LoadedConfig(scenario, sweep_periodic, sweep_threshold, theory)
