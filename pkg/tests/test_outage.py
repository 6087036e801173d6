import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaysim.channel import ChannelRealization, draw_realization
from relaysim.errors import CapacityError, ComputationError, ParameterError
from relaysim.outage import (is_outage, mutual_info_subset, outage_events, outage_probability,
                             rate_from_multiplexing, rate_scale)
from relaysim.schedule import Protocol, ProtocolSpec, assemble, build_superposition_matrix


def brute_force(H, rho, R):
    """Plain determinant over every subset, no Gram or Cholesky shortcuts."""
    K = H.shape[1]
    for m in range(1, K + 1):
        for S in itertools.combinations(range(K), m):
            Hs = H[:, S]
            det = np.linalg.det(np.eye(H.shape[0]) + rho * Hs @ Hs.conj().T).real
            if m * R > math.log2(det):
                return True
    return False


def test_rate_examples():
    assert rate_from_multiplexing(0, 0.5, "superposition") == 0
    r = rate_from_multiplexing(1 / 6, 1e4, "superposition", L=2)
    assert r == pytest.approx(6.644, abs=1e-3)
    assert rate_from_multiplexing(1 / 6, 1e4, "repetition", L=1) == pytest.approx(r)


def test_rate_scale_values():
    assert rate_scale("direct") == 2 and rate_scale("standard") == 4
    assert rate_scale("repetition", 3) == pytest.approx(7 / 3)
    assert rate_scale("msource", 2, 4) == 5


@pytest.mark.parametrize("rho", [1.0, 0.5])
def test_rate_needs_rho_above_one(rho):
    with pytest.raises(ParameterError):
        rate_from_multiplexing(0.1, rho, "direct")


def test_mutual_info_examples():
    assert mutual_info_subset(np.zeros((3, 1)), 5.0) == 0
    assert mutual_info_subset(np.array([[1], [0]]), 3.0) == pytest.approx(2)
    assert mutual_info_subset(np.eye(2), 1.0) == pytest.approx(2)


def test_mutual_info_rejects_nonfinite():
    with pytest.raises(ComputationError):
        mutual_info_subset(np.array([[np.inf]]), 1.0)


def test_zero_rate_and_zero_channel():
    H = np.random.default_rng(0).normal(size=(4, 2))
    assert not is_outage(H, 10.0, 0.0)
    assert is_outage(np.zeros((4, 2)), 10.0, 0.1)


def test_superposition_l1_hand_example():
    H = build_superposition_matrix(ChannelRealization(np.ones((4, 1), complex)), 1)
    rho = 10.0
    R = rate_from_multiplexing(1 / 6, rho, "superposition", L=1)  # 4/6 * log2(10)
    # H^H H = [[2, 1], [1, 2]]; singletons give log2(21), the pair det(I + 10 G) = 21^2 - 100
    single, pair = math.log2(21), math.log2(341)
    expected = R > single or 2 * R > pair
    assert is_outage(H, rho, R) == expected == brute_force(H.matrix, rho, R)
    # push the rate across the pair constraint
    assert is_outage(H, rho, pair / 2 + 1e-9)
    assert not is_outage(H, rho, pair / 2 - 1e-9)


def test_capacity_limit():
    H = np.eye(4, dtype=complex)
    with pytest.raises(CapacityError):
        is_outage(np.ones((4, 4)), 1.0, 1.0, limit=3)
    with pytest.raises(CapacityError):
        is_outage(H, 10.0, 1.0, limit=3)
    # the fast path only enumerates inside components, here four of size 1
    assert not is_outage(H, 10.0, 1.0, exhaustive=False, limit=3)


@pytest.mark.parametrize("protocol, L", [(Protocol.SUPERPOSITION, 1), (Protocol.SUPERPOSITION, 2),
                                         (Protocol.REPETITION, 2), (Protocol.DIRECT, 2),
                                         (Protocol.STANDARD, 1)])
def test_fast_path_matches_brute_force(protocol, L):
    rng = np.random.default_rng(L)
    spec = ProtocolSpec(protocol, frame_length=L, n_antennas=2)
    H = assemble(draw_realization(rng, 2, size=400), spec).matrix
    for rho_db, r in [(5, 0.1), (15, 1 / 6), (25, 0.3)]:
        rho = 10 ** (rho_db / 10)
        R = rate_from_multiplexing(r, rho, protocol, L)
        fast = outage_events(H, rho, R)
        assert all(fast[i] == brute_force(H[i], rho, R) for i in range(len(H)))


def test_source_columns_restrict_constraints():
    H = np.diag([1.0, 0.0]).astype(complex)
    assert is_outage(H, 10.0, 1.0)
    assert not is_outage(H, 10.0, 1.0, columns=[0])
    assert bool(outage_events(H[None], 10.0, 1.0, columns=[1])[0])


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 6), st.floats(0, 30))
@settings(max_examples=60, deadline=None)
def test_monotone_in_rho(seed, R, rho_db):
    H = assemble(draw_realization(np.random.default_rng(seed), 1),
                 ProtocolSpec(Protocol.SUPERPOSITION, frame_length=2)).matrix
    rho = 10 ** (rho_db / 10)
    # outage can only disappear as SNR grows
    if not is_outage(H, rho, R):
        assert not is_outage(H, rho * 2, R)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 40))
@settings(max_examples=60, deadline=None)
def test_info_grows_with_subset(seed, rho):
    H = np.random.default_rng(seed).normal(size=(4, 3)) + 1j
    assert mutual_info_subset(H[:, :2], rho) >= mutual_info_subset(H[:, :1], rho) - 1e-12
    assert mutual_info_subset(H, rho) >= mutual_info_subset(H[:, :2], rho) - 1e-12


def test_single_trial_probability_is_zero_or_one():
    spec = ProtocolSpec(Protocol.DIRECT, n_antennas=1)
    a = outage_probability(spec, 2.0, [0.0], trials=1, seed=42, fixed_rate=True)
    b = outage_probability(spec, 2.0, [0.0], trials=1, seed=42, fixed_rate=True)
    assert a.points[0].estimate in (0.0, 1.0) and a == b


def test_direct_closed_form_system_and_source():
    spec = ProtocolSpec(Protocol.DIRECT, n_antennas=1)
    grid = [0.0, 5.0, 10.0]
    R = 1.0
    for scope, power in (("source", 1), ("system", 2)):
        res = outage_probability(spec, R, grid, trials=100_000, seed=3, fixed_rate=True, scope=scope)
        for p in res.points:
            exact = 1 - math.exp(-power * (2 ** R - 1) / 10 ** (p.snr_db / 10))
            assert abs(p.estimate - exact) < 3 * math.sqrt(exact * (1 - exact) / p.trials)
