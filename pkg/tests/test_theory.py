import math

import numpy as np
import pytest

from beaconsim.motion import CtraConfig
from beaconsim.theory import (CovSequence, FirstPassagePmf, first_passage_pmf,
                              over_threshold_prob, predict_only_cov, qq_points,
                              steady_state_posterior)
from beaconsim.ukf import GaussianState, MeasurementNoise, UkfParams


def rayleigh_exceed(sigma, e):
    return math.exp(-e * e / (2 * sigma * sigma))


def test_zero_threshold_is_certain():
    assert over_threshold_prob(np.eye(2), 0.0) == 1.0


def test_isotropic_matches_rayleigh():
    # closed form as the independent oracle for the quadrature path
    assert over_threshold_prob(np.eye(2), math.sqrt(2 * math.log(2))) == \
        pytest.approx(0.5, abs=1e-8)
    for sigma in (0.3, 1.0, 4.7):
        for e in (0.5, 1.0, 2.5, 5 * sigma):
            got = over_threshold_prob(sigma ** 2 * np.eye(2), e)
            assert got == pytest.approx(rayleigh_exceed(sigma, e), abs=1e-8)
    assert over_threshold_prob(np.eye(2), 5.0) == pytest.approx(math.exp(-12.5), rel=1e-6)


def test_monotone_in_threshold_and_scale():
    p_aniso = np.array([[4.0, 1.2], [1.2, 0.8]])
    for cov in (np.eye(2), p_aniso):
        probs = [over_threshold_prob(cov, e) for e in np.linspace(0.0, 8.0, 30)]
        assert all(a >= b - 1e-12 for a, b in zip(probs, probs[1:]))
        assert over_threshold_prob(2.0 * cov, 3.0) > over_threshold_prob(cov, 3.0)


def test_quadrature_matches_monte_carlo_disk():
    rng = np.random.default_rng(17)
    n = 1_000_000
    for _ in range(3):
        a = rng.uniform(-1.5, 1.5, (2, 2))
        cov = a @ a.T + 0.05 * np.eye(2)
        e = rng.uniform(0.5, 2.5)
        samples = rng.multivariate_normal([0, 0], cov, size=n)
        hits = np.hypot(samples[:, 0], samples[:, 1]) > e
        p_mc = hits.mean()
        se = math.sqrt(max(p_mc * (1 - p_mc), 1e-12) / n)
        assert over_threshold_prob(cov, e) == pytest.approx(p_mc, abs=3.5 * se)


def test_degenerate_covariances():
    assert over_threshold_prob(np.zeros((2, 2)), 1.0) == 0.0
    # rank-1: error lives on a line, |e| is half-normal
    cov = np.diag([4.0, 0.0])
    got = over_threshold_prob(cov, 2.0)
    expect = 2 * (1 - 0.8413447460685429)  # 2*(1 - Phi(1))
    assert got == pytest.approx(expect, abs=1e-9)


def test_invalid_covariance_rejected():
    with pytest.raises(ValueError):
        over_threshold_prob(np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0)  # indefinite
    with pytest.raises(ValueError):
        over_threshold_prob(np.eye(2), -1.0)


def test_first_passage_geometric_case():
    seq = CovSequence([np.eye(2)] * 6)
    e = math.sqrt(2 * math.log(2))  # per-step exceedance 0.5
    pmf = first_passage_pmf(seq, e)
    for i, p in enumerate(pmf.probs, start=1):
        assert p == pytest.approx(0.5 ** i, abs=1e-9)
    assert pmf.probs[1] == pytest.approx(0.25, abs=1e-9)
    assert pmf.residual == pytest.approx(0.5 ** 6, abs=1e-9)


def test_first_passage_zero_threshold():
    pmf = first_passage_pmf(CovSequence([np.eye(2)] * 4), 0.0)
    assert pmf.probs[0] == 1.0
    assert np.allclose(pmf.probs[1:], 0.0)


def test_first_passage_partial_sums_bounded():
    seq = CovSequence([k * 0.3 * np.eye(2) + 0.01 * np.eye(2) for k in range(1, 40)])
    pmf = first_passage_pmf(seq, 2.0)
    c = pmf.cdf()
    assert np.all(c <= 1.0 + 1e-12)
    assert pmf.probs[0] == pytest.approx(over_threshold_prob(seq[0], 2.0))
    assert c[-1] + pmf.residual == pytest.approx(1.0, abs=1e-9)


def test_first_passage_matches_monte_carlo():
    rng = np.random.default_rng(23)
    covs = [np.diag([0.05 * k, 0.08 * k]) + 0.02 for k in range(1, 30)]
    seq = CovSequence(covs)
    e = 1.2
    pmf = first_passage_pmf(seq, e)
    n = 100_000
    first = np.full(n, len(covs) + 1)
    alive = np.ones(n, dtype=bool)
    for i, cov in enumerate(covs, start=1):
        draw = rng.multivariate_normal([0, 0], cov, size=n)
        exceed = np.hypot(draw[:, 0], draw[:, 1]) > e
        newly = alive & exceed
        first[newly] = i
        alive &= ~exceed
        if not alive.any():
            break
    cdf_theory = pmf.cdf()
    cdf_mc = np.array([(first <= i).mean() for i in range(1, len(covs) + 1)])
    assert np.max(np.abs(cdf_theory - cdf_mc)) <= 0.02


def test_predict_only_cov_zero_noise():
    g = GaussianState(np.array([0, 0, 0, 5, 0, 0.0]), np.zeros((6, 6)))
    seq = predict_only_cov(g, 5, CtraConfig(dt=0.1), UkfParams(q=0.0))
    assert all(np.allclose(c, 0.0, atol=1e-15) for c in seq.covs)


def test_predict_only_cov_trace_increases():
    g = GaussianState(np.array([0, 0, 0.1, 8, 0.2, 0.05]),
                      np.diag([1, 1, 0.05, 0.3, 0.1, 0.01]))
    seq = predict_only_cov(g, 50, CtraConfig(dt=0.1), UkfParams(q=1e-3))
    traces = [np.trace(c) for c in seq.covs]
    assert all(b > a for a, b in zip(traces, traces[1:]))
    single = predict_only_cov(g, 1, CtraConfig(dt=0.1), UkfParams(q=1e-3))
    assert np.allclose(single[0], seq[0])


def test_steady_state_posterior_converges():
    params = UkfParams(q=1e-4)
    noise = MeasurementNoise()
    g = steady_state_posterior(np.array([0, 0, 0, 10, 0, 0.0]),
                               CtraConfig(dt=0.1), params, noise)
    g2 = steady_state_posterior(np.array([0, 0, 0, 10, 0, 0.0]),
                                CtraConfig(dt=0.1), params, noise, iters=400)
    assert np.allclose(g.cov, g2.cov, rtol=1e-6, atol=1e-9)
    assert np.trace(g.cov) < np.trace(noise.matrix())


def test_qq_diagonal_for_matching_distributions():
    pmf = FirstPassagePmf(np.array([0.5, 0.25, 0.25]), 0.0)
    empirical = [1, 1, 2, 3]
    pairs = qq_points(pmf, empirical)
    assert all(t == e for t, e in pairs)


def test_qq_degenerate_theory_horizontal():
    pmf = FirstPassagePmf(np.array([1.0]), 0.0)
    pairs = qq_points(pmf, [2, 5, 9])
    assert [t for t, _ in pairs] == [1.0, 1.0, 1.0]
    assert [e for _, e in pairs] == [2.0, 5.0, 9.0]


def test_qq_empty_empirical_rejected():
    with pytest.raises(ValueError):
        qq_points(FirstPassagePmf(np.array([1.0]), 0.0), [])
