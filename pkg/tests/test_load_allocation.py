"""
Load allocation tests.
"""

import math

import numpy as np
import pytest
from scipy.special import lambertw

from app.core.errors import DomainError, InfeasibleError
from app.core.streams import make_stream
from app.engine.delay_model import cdf_total_delay, expected_delay, sample_total_delays
from app.engine.load_allocation import (
    SEARCH_RTOL,
    aggregate_return,
    allocate,
    expected_return,
    lambert_w_minus1,
    optimal_load_for_piece,
    optimize_client_load,
    optimize_waiting_time,
    optimized_return_sweep,
    return_curve,
)
from app.schemas.allocation import FixedRedundancy, LoadAllocation, OptimizedRedundancy
from app.schemas.delay import ClientProfile


def test_expected_return_zero_load(reference_profile):
    """Zero load returns nothing."""
    assert expected_return(reference_profile, 0.0, 10.0) == 0.0


def test_expected_return_bounded_by_load(reference_profile):
    """Expected return never exceeds the load."""
    for load in np.linspace(0.1, 4.0, 40):
        for t in (5.0, 20.0, 80.0):
            assert expected_return(reference_profile, load, t) <= load


@pytest.mark.slow
def test_expected_return_monte_carlo(reference_profile):
    """l * empirical P(T <= 10) within four standard errors."""
    rng = make_stream(8, "test", "return")
    draws = sample_total_delays(reference_profile, 4, rng, 1_000_000)
    p_hat = np.mean(draws <= 10.0)
    stderr = 4 * np.sqrt(p_hat * (1 - p_hat) / draws.size)
    assert expected_return(reference_profile, 4, 10.0) == pytest.approx(4 * p_hat, abs=4 * stderr)


def test_return_curve_matches_pointwise(reference_profile):
    """The vectorized curve agrees with scalar evaluation."""
    loads = np.linspace(0.0, 4.0, 9)
    curve = return_curve(reference_profile, 12.0, loads)
    assert curve == pytest.approx([expected_return(reference_profile, l, 12.0) for l in loads])


def test_lambert_reference_value():
    """W_-1(-e^-2) is about -3.1462 with a tiny residual."""
    w = lambert_w_minus1(-math.exp(-2.0))
    assert w == pytest.approx(-3.14619322062058, abs=1e-10)
    assert abs(w * math.exp(w) + math.exp(-2.0)) < 1e-12


@pytest.mark.parametrize("x", [-0.05, -0.2, -0.35, -1e-8, -math.exp(-1.0) + 1e-12])
def test_lambert_matches_scipy(x):
    """Agrees with scipy's lower branch."""
    w = lambert_w_minus1(x)
    assert abs(w * math.exp(w) - x) < 1e-12
    assert w <= -1.0
    assert w == pytest.approx(float(lambertw(x, -1).real), rel=1e-6)


def test_lambert_branch_point():
    """W_-1(-1/e) = -1."""
    assert lambert_w_minus1(-math.exp(-1.0)) == -1.0


@pytest.mark.parametrize("x", [0.0, 0.1, -0.5])
def test_lambert_domain(x):
    """Outside [-1/e, 0) is rejected."""
    with pytest.raises(DomainError):
        lambert_w_minus1(x)


def test_piece_maximizer_closed_form():
    """Closed form agrees with a 1e-3 grid search of the piece."""
    profile = ClientProfile(mu=2.0, alpha=1.0, tau=math.sqrt(3.0), p_err=0.0, local_size=100)
    slack = 10.0 - 2 * profile.tau
    closed = optimal_load_for_piece(profile, 10.0, 2)
    assert closed == pytest.approx(-2.0 / (lambert_w_minus1(-math.exp(-2.0)) + 1.0) * slack)
    grid = np.arange(1e-3, profile.mu * slack, 1e-3)
    piece = grid * -np.expm1(-(profile.mu / grid) * (slack - grid / profile.mu))
    assert closed == pytest.approx(grid[np.argmax(piece)], abs=1e-2)


def test_piece_maximizer_requires_two_attempts(reference_profile):
    """nu below 2 is meaningless."""
    with pytest.raises(DomainError):
        optimal_load_for_piece(reference_profile, 10.0, 1)


def test_optimize_client_load_matches_grid():
    """Piecewise optimum is within 1e-6 of an exhaustive grid."""
    profile = ClientProfile(mu=2.0, alpha=2.0, tau=math.sqrt(3.0), p_err=0.9, local_size=10**6)
    point = optimize_client_load(profile, 10.0)
    grid = np.arange(1e-3, profile.mu * 10.0, 1e-3)
    best = float(np.max(return_curve(profile, 10.0, grid)))
    assert point.expected_return >= best * (1 - 1e-6)


def test_optimize_client_load_clamps_to_local_size():
    """A small local dataset on a rising objective is used entirely."""
    profile = ClientProfile(mu=50.0, alpha=2.0, tau=0.1, p_err=0.0, local_size=3)
    point = optimize_client_load(profile, 5.0)
    assert point.load == pytest.approx(3.0)


def test_optimize_client_load_dominates_random_loads(heterogeneous_profiles):
    """No random feasible load beats the optimizer."""
    rng = make_stream(9, "test", "dominance")
    for profile in heterogeneous_profiles:
        point = optimize_client_load(profile, 2.5)
        loads = rng.random(10_000) * profile.local_size
        assert np.all(return_curve(profile, 2.5, loads) <= point.expected_return * (1 + 1e-7) + 1e-12)


def test_optimize_client_load_too_early(reference_profile):
    """Before two transmissions nothing is worth computing."""
    point = optimize_client_load(reference_profile, reference_profile.tau)
    assert point.load == 0.0 and point.expected_return == 0.0


def test_waiting_time_brackets_target(heterogeneous_profiles):
    """Re-evaluated return lies in [target, target + epsilon]."""
    total = sum(p.local_size for p in heterogeneous_profiles)
    target, eps = 0.5 * total, 0.1
    alloc = optimize_waiting_time(heterogeneous_profiles, target, eps)
    recomputed = sum(
        expected_return(p, load, alloc.waiting_time)
        for p, load in zip(heterogeneous_profiles, alloc.relaxed_load)
    )
    assert target - 1e-9 <= recomputed <= target + eps + 1e-9
    assert all(0 <= l <= p.local_size for l, p in zip(alloc.per_client_load, heterogeneous_profiles))


def test_waiting_time_is_minimal(heterogeneous_profiles):
    """Moving the deadline back by twice the search resolution misses the target."""
    total = sum(p.local_size for p in heterogeneous_profiles)
    alloc = optimize_waiting_time(heterogeneous_profiles, 0.6 * total, 0.05)
    earlier, _ = aggregate_return(heterogeneous_profiles, alloc.waiting_time * (1 - 2 * SEARCH_RTOL))
    assert earlier < 0.6 * total


def test_waiting_time_single_lossless_client():
    """Full local size is reached within epsilon at a finite t."""
    profile = ClientProfile(mu=10.0, alpha=2.0, tau=0.1, p_err=0.0, local_size=20)
    alloc = optimize_waiting_time([profile], 20.0, 0.02)
    assert math.isfinite(alloc.waiting_time)
    assert expected_return(profile, alloc.relaxed_load[0], alloc.waiting_time) == pytest.approx(20.0, abs=0.02)


def test_waiting_time_infeasible(heterogeneous_profiles):
    """Targets above the total local data are infeasible."""
    with pytest.raises(InfeasibleError):
        optimize_waiting_time(heterogeneous_profiles, 1e6, 1.0)


def test_waiting_time_rejects_bad_arguments(heterogeneous_profiles):
    """Non-positive target or epsilon and empty profiles are domain errors."""
    with pytest.raises(DomainError):
        optimize_waiting_time(heterogeneous_profiles, 0.0, 1.0)
    with pytest.raises(DomainError):
        optimize_waiting_time(heterogeneous_profiles, 10.0, 0.0)
    with pytest.raises(DomainError):
        optimize_waiting_time([], 10.0, 1.0)


def test_allocate_fixed_full_redundancy(heterogeneous_profiles):
    """u = m: the server does everything and nobody waits."""
    alloc = allocate(heterogeneous_profiles, 100, FixedRedundancy(u=100))
    assert alloc.waiting_time == 0.0
    assert alloc.per_client_load == [0] * len(heterogeneous_profiles)


def test_allocate_fixed_targets_m_minus_u(heterogeneous_profiles):
    """Clients are asked to return m - u points in expectation."""
    alloc = allocate(heterogeneous_profiles, 150, FixedRedundancy(u=30, u_max=30), epsilon=0.15)
    assert alloc.coded_redundancy == 30
    assert 120 - 1e-9 <= alloc.expected_uncoded_return <= 120.15 + 1e-9


def test_allocate_fixed_rejects_excess_redundancy(heterogeneous_profiles):
    """u above m or u_max is a domain error."""
    with pytest.raises(DomainError):
        allocate(heterogeneous_profiles, 10, FixedRedundancy(u=11))
    with pytest.raises(DomainError):
        allocate(heterogeneous_profiles, 100, FixedRedundancy(u=20, u_max=10))


def test_allocate_optimized_dominant_server(heterogeneous_profiles):
    """A server faster than every client fills u_max."""
    server = ClientProfile(mu=1e6, alpha=2.0, tau=1e-4, p_err=0.0, local_size=1)
    alloc = allocate(heterogeneous_profiles, 150, OptimizedRedundancy(u_max=30, server=server))
    assert alloc.coded_redundancy == 30
    assert alloc.u_max == 30


def test_allocation_json_round_trip(heterogeneous_profiles):
    """The printed document re-parses and revalidates."""
    alloc = allocate(heterogeneous_profiles, 150, FixedRedundancy(u=30, u_max=30), epsilon=0.15)
    again = LoadAllocation.model_validate_json(alloc.to_json())
    assert again == alloc
    assert '"waiting_time_s"' in alloc.to_json()


def test_allocation_rejects_broken_invariants():
    """Loads above local size fail validation."""
    with pytest.raises(ValueError):
        LoadAllocation(loads=[5], u=0, waiting_time_s=1.0, expected_return=1.0, local_sizes=[4])


def test_optimized_return_sweep_monotone(reference_profile):
    """Maximized return is non-decreasing in t."""
    profile = reference_profile.model_copy(update={"local_size": 40})
    sweep = optimized_return_sweep([profile], np.linspace(0.0, 120.0, 61))
    values = [v for _, v in sweep]
    assert np.all(np.diff(values) >= -1e-9)
    assert values[0] == 0.0


def _random_profile(rng, mu, alpha, tau, p_err, local_size):
    return ClientProfile(
        mu=rng.uniform(*mu),
        alpha=rng.uniform(*alpha),
        tau=rng.uniform(*tau),
        p_err=rng.uniform(*p_err),
        local_size=local_size,
    )


def test_expected_return_is_load_times_cdf():
    """E[R] equals the load times the closed-form delay CDF."""
    rng = make_stream(21, "test", "identity")
    for _ in range(200):
        profile = _random_profile(rng, (0.5, 20.0), (0.5, 5.0), (0.01, 2.0), (0.0, 0.95), 100)
        load = rng.uniform(0.0, 100.0)
        t = rng.uniform(0.0, 4.0 * expected_delay(profile, load))
        got = expected_return(profile, load, t)
        want = load * cdf_total_delay(profile, load, t)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-300)


def test_return_pieces_strictly_concave():
    """Central second differences are negative inside a piece."""
    rng = make_stream(22, "test", "concavity")
    for _ in range(100):
        profile = _random_profile(rng, (0.5, 20.0), (0.5, 3.0), (0.05, 2.0), (0.0, 0.0), 10**6)
        slack = rng.uniform(0.5, 20.0)
        t = 2.0 * profile.tau + slack
        # p_err = 0 leaves only the two-attempt piece, which ends at mu * slack
        width = profile.mu * slack
        load = rng.uniform(0.2, 0.95) * width
        h = 1e-3 * width
        left, mid, right = return_curve(profile, t, np.array([load - h, load, load + h]))
        assert left - 2.0 * mid + right < 0


@pytest.mark.slow
def test_cdf_matches_sampled_delays():
    """Closed-form P(T <= t) agrees with 10^6 draws on random tuples."""
    rng = make_stream(23, "test", "cdf-tuples")
    samples = 1_000_000
    within_three = 0
    for k in range(50):
        profile = _random_profile(rng, (0.5, 20.0), (0.5, 5.0), (0.01, 2.0), (0.0, 0.9), 100)
        load = int(rng.integers(1, 101))
        t = rng.uniform(0.5, 2.0) * expected_delay(profile, load)
        draws = sample_total_delays(profile, load, make_stream(23, "test", "draws", k), samples)
        p = cdf_total_delay(profile, load, t)
        stderr = max(math.sqrt(p * (1.0 - p) / samples), 1e-12)
        z = abs(np.mean(draws <= t) - p) / stderr
        assert z < 4.0
        within_three += z < 3.0
    assert within_three >= 48


@pytest.mark.parametrize("index", range(20))
def test_client_optimum_matches_grid_search(index):
    """Piecewise optimum is within 1e-6 of a 1e-3 load grid on random profiles."""
    if index == 0:
        profile = ClientProfile(mu=2.0, alpha=2.0, tau=math.sqrt(3.0), p_err=0.9, local_size=10**6)
        t = 10.0
    else:
        rng = make_stream(24, "test", "grid", index)
        profile = _random_profile(rng, (0.5, 4.0), (0.5, 4.0), (0.2, 2.0), (0.0, 0.9), 10**6)
        t = profile.tau * rng.uniform(2.5, 8.0)
    point = optimize_client_load(profile, t)
    grid = np.arange(1e-3, profile.mu * t, 1e-3)
    best = float(np.max(return_curve(profile, t, grid)))
    assert point.expected_return >= best * (1 - 1e-6)
    assert point.expected_return == pytest.approx(expected_return(profile, point.load, t), rel=1e-9)


@pytest.mark.parametrize("index", range(10))
def test_waiting_time_random_instances(index):
    """Random fleets: the return brackets the target and an earlier deadline misses it."""
    rng = make_stream(25, "test", "fleet", index)
    profiles = [
        _random_profile(rng, (5.0, 20.0), (1.0, 4.0), (0.2, 1.0), (0.0, 0.5), int(rng.integers(10, 61)))
        for _ in range(int(rng.integers(2, 9)))
    ]
    capacity = sum(p.local_size for p in profiles)
    target = rng.uniform(0.2, 0.8) * capacity
    eps = 1e-3 * capacity
    alloc = optimize_waiting_time(profiles, target, eps)
    recomputed = sum(
        expected_return(p, load, alloc.waiting_time) for p, load in zip(profiles, alloc.relaxed_load)
    )
    assert target - 1e-9 <= recomputed <= target + eps + 1e-9
    earlier, _ = aggregate_return(profiles, alloc.waiting_time * (1 - 2 * SEARCH_RTOL))
    assert earlier < target
