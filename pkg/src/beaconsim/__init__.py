"""Cooperative vehicle position tracking over a beaconing VANET, at desk scale."""

from .channel import BeaconPacket, ChannelConfig, TxAttempt, pick_subcarrier, resolve_slot
from .engine import RunResult, ScenarioConfig, SweepRow, World, ideal_bound_config, run, sweep
from .metrics import RunSummary, SlotRecord, TxLog, detection_error, ego_error, \
    network_error, summarize
from .mobility import SyntheticConfig, Trajectory, generate_synthetic, observe, \
    parse_fcd, read_trace, write_fcd, write_trace
from .model import ConnectivityGraph, LogisticParams, VehicleState, logistic_weight, \
    neighbors, state_distance, wrap_angle
from .motion import CtraConfig, ctra_propagate, ctra_step
from .policy import PolicyConfig, PolicyState, decide, on_receive, on_transmit, \
    shadow_predict
from .theory import CovSequence, FirstPassagePmf, first_passage_pmf, over_threshold_prob, \
    predict_only_cov, qq_points
from .ukf import FilterError, GaussianState, MeasurementNoise, SigmaPoints, UkfParams, \
    sigma_points, ukf_predict, ukf_update

__version__ = "0.1.0"
