import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgmc.system import (
    AssignmentState,
    ChannelSet,
    ConfigError,
    DCFunctionSpec,
    SystemConfig,
    consumed_power,
    dbw_to_watts,
    generate_channels,
    qos_satisfied,
    score,
    sinr,
    sinr_matrix,
)

seeds = st.integers(0, 2**31 - 1)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_rejects_invalid_values():
    with pytest.raises(ConfigError):
        SystemConfig(M=1, N=0, G=1, P_T=1.0)
    with pytest.raises(ConfigError):
        SystemConfig(M=3, N=2, G=3, P_T=1.0)
    with pytest.raises(ConfigError):
        SystemConfig(M=2, N=2, G=1, P_T=1.0)
    with pytest.raises(ConfigError):
        SystemConfig(M=1, N=1, G=1, P_T=0.0)
    with pytest.raises(ConfigError):
        SystemConfig(M=1, N=1, G=1, P_T=1.0, psi=0.0)
    with pytest.raises(ConfigError):
        SystemConfig(M=1, N=1, G=1, P_T=1.0, eps=-1.0)
    with pytest.raises(ConfigError):
        SystemConfig(M=1, N=2, G=1, P_T=1.0, interest_mask=np.ones((3, 1)))


def test_config_round_trip():
    cfg = SystemConfig(M=2, N=3, G=2, P_T=4.0, eps=[1.0, 0.5], psi=[1.0, 2.0],
                       interest_mask=[[1, 0], [1, 1], [0, 1]])
    back = SystemConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


def test_dbw_conversion():
    assert dbw_to_watts(20.0) == pytest.approx(100.0)
    assert dbw_to_watts(0.0) == pytest.approx(1.0)


def test_power_function_families():
    DCFunctionSpec().check()
    DCFunctionSpec("exponential", {"scale": 1.0, "c": 0.5}).check()
    DCFunctionSpec("quadratic", {"a": 2.0, "b": 0.0}, "quadratic", {"a": 1.0, "b": 0.0}).check()
    with pytest.raises(ConfigError):
        DCFunctionSpec("cubic", {})
    # p = x - x^2 goes negative
    with pytest.raises(ConfigError):
        DCFunctionSpec("quadratic", {"a": 0.0, "b": 1.0}, "quadratic", {"a": 1.0, "b": 0.0}).check()


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def test_channels_are_deterministic():
    cfg = SystemConfig(M=2, N=2, G=2, P_T=1.0)
    a, b = generate_channels(cfg, 7), generate_channels(cfg, 7)
    assert np.array_equal(a.H, b.H)
    assert not np.array_equal(a.H, generate_channels(cfg, 8).H)


def test_channels_have_unit_variance():
    cfg = SystemConfig(M=100, N=1000, G=100, P_T=1.0)
    H = generate_channels(cfg, 0).H
    assert np.mean(np.abs(H) ** 2) == pytest.approx(1.0, abs=0.02)
    assert np.var(H.real) == pytest.approx(0.5, abs=0.01)
    assert np.var(H.imag) == pytest.approx(0.5, abs=0.01)


def test_channel_json_round_trip():
    cfg = SystemConfig(M=2, N=3, G=2, P_T=1.0)
    ch = generate_channels(cfg, 5)
    back = ChannelSet.from_dict(ch.to_dict())
    assert np.array_equal(back.H, ch.H) and back.seed == 5
    with pytest.raises(ConfigError):
        ChannelSet(np.array([[np.nan]]))


# ---------------------------------------------------------------------------
# SINR and power
# ---------------------------------------------------------------------------

def test_sinr_without_interference():
    H = np.array([[1.0, 0.0]])
    W = np.array([[2.0, 0.0], [0.0, 0.0]])
    assert sinr(H, W, 0, 0, 1.0) == pytest.approx(4.0)


def test_sinr_zero_precoders():
    H = np.ones((3, 2))
    assert np.all(sinr_matrix(H, np.zeros((2, 3)), 1.0) == 0.0)


def test_sinr_with_interference():
    H = np.array([[1.0, 1.0]]) / np.sqrt(2.0)
    assert sinr(H, np.eye(2), 0, 0, 1.0) == pytest.approx(1.0 / 3.0, rel=1e-12)


def test_consumed_power_examples():
    cfg = SystemConfig(M=2, N=2, G=2, P_T=1.0)
    assert consumed_power(cfg, np.zeros((2, 2)), np.zeros(2)) == 16.0
    cfg0 = cfg.replace(Pi_coeff=0.0)
    W = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert consumed_power(cfg0, W, np.zeros(2)) == pytest.approx(21.0)
    W = np.array([[0.6, 0.0], [0.8j, 0.0]])
    assert consumed_power(cfg, W, np.array([2.0, 0.0])) == pytest.approx(16.0 + 1.0 / 0.2 + 9.6)
    with pytest.raises(ValueError):
        consumed_power(cfg, W, np.array([-0.1, 0.0]))


# ---------------------------------------------------------------------------
# score and QoS
# ---------------------------------------------------------------------------

def test_score_empty_schedule():
    cfg = SystemConfig(M=1, N=2, G=2, P_T=1.0)
    W = np.array([[0.5, 0.0]])
    m = score(cfg, np.ones((2, 1)), W, AssignmentState(np.zeros((2, 2)), [1.0, 0.0]))
    assert m.mee == 0.0 and m.ee == 0.0 and m.scheduled_users == 0
    assert m.consumed_power == pytest.approx(16.0 + 0.25 / 0.2)


def test_score_single_user():
    # gamma = 0.3 / 0.1 = 3, rate 2, power 1.7 + 0.3 = 2
    cfg = SystemConfig(M=1, N=1, G=1, P_T=1.0, sigma2=0.1, rho=1.0, Pi_coeff=0.0, P0=1.7)
    m = score(cfg, np.ones((1, 1)), np.array([[math.sqrt(0.3)]]), AssignmentState([[1.0]], [1.0]))
    assert m.min_rates[0] == pytest.approx(2.0)
    assert m.consumed_power == pytest.approx(2.0)
    assert m.mee == pytest.approx(1.0) and m.ee == pytest.approx(1.0)


def test_mee_is_linear_in_group_size():
    cfg = SystemConfig(M=1, N=4, G=1, P_T=1.0)
    H, W = np.ones((4, 1)), np.array([[1.0]])
    one = score(cfg, H, W, AssignmentState([[1.0], [0.0], [0.0], [0.0]], [1.0]))
    four = score(cfg, H, W, AssignmentState(np.ones((4, 1)), [1.0]))
    assert four.mee == pytest.approx(4.0 * one.mee, rel=1e-12)
    assert four.ee == pytest.approx(one.ee, rel=1e-12)


def test_score_rejects_relaxed_assignment():
    cfg = SystemConfig(M=1, N=1, G=1, P_T=1.0)
    with pytest.raises(ValueError):
        score(cfg, np.ones((1, 1)), np.ones((1, 1)), AssignmentState([[0.5]], [1.0]))


def test_qos_examples():
    cfg = SystemConfig(M=1, N=1, G=1, P_T=1.0, eps=1.0)
    H = np.ones((1, 1))
    assert qos_satisfied(cfg, H, np.zeros((1, 1)), AssignmentState([[0.0]], [1.0]))[0]
    assert qos_satisfied(cfg, H, np.array([[1.0]]), AssignmentState([[1.0]], [1.0]))[0]
    ok, viol = qos_satisfied(cfg, H, np.array([[math.sqrt(0.9)]]), AssignmentState([[1.0]], [1.0]))
    assert not ok and viol == [(0, 0)]


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

def _random_instance(seed, N=4, M=2, G=3):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    W = rng.standard_normal((M, G)) + 1j * rng.standard_normal((M, G))
    delta = np.zeros(G)
    delta[rng.choice(G, M, replace=False)] = 1.0
    eta = np.zeros((N, G))
    live = np.flatnonzero(delta)
    for i in range(N):
        pick = rng.integers(-1, M)
        if pick >= 0:
            eta[i, live[pick]] = 1.0
    return rng, H, W, AssignmentState(eta, delta)


@given(seeds)
def test_sinr_below_total_received_over_noise(seed):
    _, H, W, _ = _random_instance(seed)
    sigma2 = 0.7
    gam = sinr_matrix(H, W, sigma2)
    total = np.sum(np.abs(H @ W) ** 2, axis=1)
    assert np.all(gam >= 0)
    assert np.all(gam < total[:, None] / sigma2)


@given(seeds)
def test_score_invariant_under_user_permutation(seed):
    rng, H, W, a = _random_instance(seed)
    cfg = SystemConfig(M=2, N=4, G=3, P_T=10.0, psi=[1.0, 2.0, 0.5])
    perm = rng.permutation(4)
    m1 = score(cfg, H, W, a)
    m2 = score(cfg, H[perm], W, AssignmentState(a.eta[perm], a.delta))
    assert m1.mee == pytest.approx(m2.mee, rel=1e-12)
    assert m1.ee == pytest.approx(m2.ee, rel=1e-12)
    assert m1.scheduled_users == m2.scheduled_users


@given(seeds)
def test_score_invariant_under_group_relabeling(seed):
    rng, H, W, a = _random_instance(seed)
    psi = np.array([1.0, 2.0, 0.5])
    perm = rng.permutation(3)
    cfg1 = SystemConfig(M=2, N=4, G=3, P_T=10.0, psi=psi)
    cfg2 = SystemConfig(M=2, N=4, G=3, P_T=10.0, psi=psi[perm])
    m1 = score(cfg1, H, W, a)
    m2 = score(cfg2, H, W[:, perm], AssignmentState(a.eta[:, perm], a.delta[perm]))
    assert m1.mee == pytest.approx(m2.mee, rel=1e-12)
    assert m1.throughput == pytest.approx(m2.throughput, rel=1e-12)
    assert np.allclose(np.asarray(m1.min_rates)[perm], m2.min_rates)


@given(seeds)
def test_mee_equals_ee_for_singleton_groups(seed):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    W = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    cfg = SystemConfig(M=2, N=3, G=3, P_T=10.0)
    eta = np.zeros((3, 3))
    eta[0, 0] = eta[2, 1] = 1.0
    m = score(cfg, H, W, AssignmentState(eta, [1.0, 1.0, 0.0]))
    assert m.mee == pytest.approx(m.ee, rel=1e-12)


@given(seeds, st.floats(0.1, 10.0))
def test_psi_scaling(seed, c):
    _, H, W, a = _random_instance(seed)
    psi = np.array([1.0, 2.0, 0.5])
    m1 = score(SystemConfig(M=2, N=4, G=3, P_T=1.0, psi=psi), H, W, a)
    m2 = score(SystemConfig(M=2, N=4, G=3, P_T=1.0, psi=c * psi), H, W, a)
    assert m2.mee == pytest.approx(c * m1.mee, rel=1e-12, abs=1e-300)
    assert m2.ee == m1.ee


@given(seeds, st.integers(0, 2), st.floats(1.0, 4.0), st.floats(0.0, 3.0))
def test_power_monotone(seed, j, scale, dr):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(M=2, N=2, G=3, P_T=1.0)
    W = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    r = rng.uniform(0, 3, 3)
    W2 = W.copy()
    W2[:, j] *= scale
    r2 = r.copy()
    r2[j] += dr
    base = consumed_power(cfg, W, r)
    assert consumed_power(cfg, W2, r) >= base
    assert consumed_power(cfg, W, r2) >= base
    assert base >= cfg.P0
