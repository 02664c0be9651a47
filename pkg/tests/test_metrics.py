import numpy as np
import pytest

from beaconsim.metrics import (SlotRecord, TxLog, detection_error, ego_error,
                               nearest_rank_percentile, network_error,
                               slot_errors_vectorized, summarize, worst_fraction_mean)
from beaconsim.model import LogisticParams, logistic_weight
from beaconsim.ukf import GaussianState


def est(x, y):
    return GaussianState(np.array([x, y, 0, 0, 0, 0]), np.eye(6))


def state(x, y):
    return np.array([x, y, 0.0, 0.0, 0.0, 0.0])


P = LogisticParams()


def test_ego_error_no_tracks_perfect_self():
    assert ego_error(0, {0: state(5, 5)}, est(5, 5), {}, P) == 0.0


def test_ego_error_one_neighbor_weighted():
    # neighbor at true distance 42 m with a 10 m estimation error,
    # perfect self estimate: (lambda(42) * 10) / 2
    truth = {0: state(0, 0), 1: state(42, 0)}
    tracks = {1: est(42, 10)}
    expected = logistic_weight(42.0, P) * 10.0 / 2.0
    assert ego_error(0, truth, est(0, 0), tracks, P) == pytest.approx(expected)
    assert expected == pytest.approx(4.84375)


def test_ego_error_far_neighbor_negligible():
    truth = {0: state(0, 0), 1: state(1000, 0)}
    tracks = {1: est(1000, 500)}  # huge estimation error, tiny weight
    assert ego_error(0, truth, est(0, 0), tracks, P) < 1e-6


def test_ego_error_order_invariant():
    truth = {0: state(0, 0), 1: state(30, 0), 2: state(0, 50), 3: state(60, 60)}
    tracks_a = {1: est(31, 1), 2: est(2, 50), 3: est(55, 66)}
    tracks_b = dict(reversed(list(tracks_a.items())))
    assert ego_error(0, truth, est(0, 0), tracks_a, P) == \
        pytest.approx(ego_error(0, truth, est(0, 0), tracks_b, P))


def test_ego_error_unit_weights_reduce_to_mean():
    flat = LogisticParams(a=1.0, k=1.0)  # weight identically 1
    truth = {0: state(0, 0), 1: state(30, 0), 2: state(0, 50)}
    tracks = {1: est(30, 4), 2: est(3, 50)}
    got = ego_error(0, truth, est(0, 3), tracks, flat)
    assert got == pytest.approx((3 + 4 + 3) / 3)


def test_vectorized_matches_reference():
    rng = np.random.default_rng(8)
    n = 9
    truth = np.zeros((n, 6))
    truth[:, :2] = rng.uniform(0, 300, (n, 2))
    own = truth + rng.normal(0, 1, (n, 6))
    dist = np.hypot(truth[:, None, 0] - truth[None, :, 0],
                    truth[:, None, 1] - truth[None, :, 1])
    in_range = dist < 140.0
    np.fill_diagonal(in_range, False)
    row_owner, row_target, track_pos = [], [], []
    tracks_by_ego = {i: {} for i in range(n)}
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.5:
                pos = truth[j, :2] + rng.normal(0, 3, 2)
                row_owner.append(i)
                row_target.append(j)
                track_pos.append(pos)
                tracks_by_ego[i][j] = pos
    errors, counts, mis = slot_errors_vectorized(
        truth, own, np.array(row_owner), np.array(row_target),
        np.array(track_pos), dist, in_range, P)
    truth_by_id = {i: truth[i] for i in range(n)}
    for i in range(n):
        visible = {j: GaussianState(np.concatenate([p, np.zeros(4)]), np.eye(6))
                   for j, p in tracks_by_ego[i].items() if in_range[i, j]}
        ref = ego_error(i, truth_by_id, GaussianState(own[i], np.eye(6)), visible, P)
        assert errors[i] == pytest.approx(ref, rel=1e-12)
        assert counts[i] == len(visible)


def test_network_error():
    assert network_error({0: 2.0, 1: 4.0}) == 3.0
    assert network_error({5: 7.25}) == 7.25
    with pytest.raises(ValueError):
        network_error({})


def test_detection_error_cases():
    positions = {0: (0.0, 0.0), 1: (50.0, 0.0), 2: (400.0, 0.0)}
    # perfect: tracked == true neighbors
    assert detection_error({1}, {1}, positions, (0.0, 0.0), 140.0) == (0, 0)
    # new neighbor not yet tracked
    assert detection_error(set(), {1}, positions, (0.0, 0.0), 140.0) == (1, 0)
    # tracked vehicle now out of range, and one that left entirely
    assert detection_error({2}, set(), positions, (0.0, 0.0), 140.0) == (0, 1)
    assert detection_error({9}, set(), positions, (0.0, 0.0), 140.0) == (0, 1)


def test_nearest_rank_percentile():
    vals = list(range(1, 101))
    assert nearest_rank_percentile(vals, 95.0) == 95
    assert nearest_rank_percentile([7.0], 95.0) == 7.0
    assert worst_fraction_mean(vals, 0.05) == pytest.approx(np.mean([96, 97, 98, 99, 100]))


def make_record(slot, err, vehicle_errors=None, **kw):
    defaults = dict(undetected=0, misdetected=0, neighbors=1,
                    tx_attempted=1, tx_sent=1, tx_collided=0)
    defaults.update(kw)
    return SlotRecord(slot, err, err, vehicle_errors=np.asarray(
        vehicle_errors if vehicle_errors is not None else [err]), **defaults)


def test_summarize_constant_error():
    log = TxLog(slot_s=0.1)
    log.window_slots = {0: 100}
    log.record_sent(0, 5)
    records = [make_record(k, 2.5) for k in range(100)]
    s = summarize(records, log)
    assert s.mean_error_m == pytest.approx(2.5)
    assert s.p95_error_m == pytest.approx(2.5)


def test_summarize_p95_nearest_rank_pooled():
    log = TxLog(slot_s=0.1)
    log.window_slots = {0: 1}
    records = [make_record(0, 0.0, vehicle_errors=list(range(1, 101)))]
    s = summarize(records, log)
    assert s.p95_error_m == 95


def test_eff_intertx_time():
    log = TxLog(slot_s=0.1)
    log.window_slots = {0: 3000}
    for k in range(100):
        log.record_sent(0, 30 * k)
    assert log.eff_intertx_s() == pytest.approx(3.0)


def test_eff_intertx_silent_vehicle_counts_whole_window():
    log = TxLog(slot_s=0.1)
    log.window_slots = {0: 3000, 1: 3000}
    for k in range(100):
        log.record_sent(0, 30 * k)
    assert log.eff_intertx_s() == pytest.approx((3.0 + 300.0) / 2)


def test_intertx_gaps():
    log = TxLog(slot_s=0.1)
    log.record_sent(0, 10)
    log.record_sent(0, 25)
    log.record_sent(0, 27)
    log.record_sent(1, 4)
    assert sorted(log.intertx_gaps_slots().tolist()) == [2, 15]


def test_detection_probability_events_over_neighbors():
    log = TxLog(slot_s=0.1)
    log.window_slots = {0: 2}
    records = [make_record(0, 1.0, undetected=2, misdetected=1, neighbors=10),
               make_record(1, 1.0, undetected=0, misdetected=0, neighbors=10)]
    s = summarize(records, log)
    assert s.detection_error == pytest.approx(3 / 20)


def test_summarize_empty_records_raises():
    with pytest.raises(ValueError):
        summarize([], TxLog())
