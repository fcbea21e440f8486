"""
Per-client compute and communication delays.

Compute time for a load l is the shifted exponential l/mu + Exp(rate
alpha*mu/l). Download and upload each take tau times a geometric number
of attempts with success probability 1 - p_err, so the total attempt
count S is negative binomial NB(2, 1 - p_err) on {2, 3, ...}.

Samplers take an explicit stream and are deterministic given its state.
"""

import math

import numpy as np

from app.core.errors import DomainError
from app.core.streams import RandomStream
from app.schemas.delay import ClientProfile, DelaySample


def _check_load(profile: ClientProfile, load: float) -> None:
    if load < 0:
        raise DomainError(f"load must be non-negative, got {load}")
    if load > profile.local_size:
        raise DomainError(f"load {load} exceeds local size {profile.local_size}")


def sample_compute_time(profile: ClientProfile, load: int, rng: RandomStream) -> float:
    """Shifted-exponential compute time; zero load takes no time."""
    _check_load(profile, load)
    if load == 0:
        return 0.0
    det = load / profile.mu
    return det + float(rng.exponential(load / (profile.alpha * profile.mu)))


def sample_transmission_count(p_err: float, rng: RandomStream) -> int:
    """Attempts until the first successful transmission (>= 1)."""
    if not 0 <= p_err < 1:
        raise DomainError(f"erasure probability must be in [0, 1), got {p_err}")
    return int(rng.geometric(1.0 - p_err))


def sample_round_trip(profile: ClientProfile, load: int, rng: RandomStream) -> DelaySample:
    _check_load(profile, load)
    if load == 0:
        det, stoch = 0.0, 0.0
    else:
        det = load / profile.mu
        stoch = float(rng.exponential(load / (profile.alpha * profile.mu)))
    n_down = sample_transmission_count(profile.p_err, rng)
    n_up = sample_transmission_count(profile.p_err, rng)
    return DelaySample(
        t_compute_det=det,
        t_compute_stoch=stoch,
        n_down=n_down,
        n_up=n_up,
        total=det + stoch + profile.tau * (n_down + n_up),
    )


def sample_total_delays(
    profile: ClientProfile, load: float, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Vectorized draws of the total round-trip time (Monte-Carlo oracles)."""
    _check_load(profile, load)
    success = 1.0 - profile.p_err
    attempts = rng.geometric(success, size=size) + rng.geometric(success, size=size)
    total = profile.tau * attempts.astype(np.float64)
    if load > 0:
        total += load / profile.mu
        total += rng.exponential(load / (profile.alpha * profile.mu), size=size)
    return total


def expected_delay(profile: ClientProfile, load: float) -> float:
    """E[T] = (l/mu)(1 + 1/alpha) + 2 tau / (1 - p_err)."""
    _check_load(profile, load)
    compute = (load / profile.mu) * (1.0 + 1.0 / profile.alpha)
    return compute + 2.0 * profile.tau / (1.0 - profile.p_err)


def max_attempts(t: float, tau: float) -> int:
    """Largest attempt count nu with t - tau*nu > 0 (0 when t <= 0)."""
    if t <= 0:
        return 0
    nu_m = math.ceil(t / tau) - 1
    # float guard on the strict inequality
    while nu_m >= 1 and t - tau * nu_m <= 0:
        nu_m -= 1
    while t - tau * (nu_m + 1) > 0:
        nu_m += 1
    return nu_m


def attempt_pmf(p_err: float, nu: np.ndarray) -> np.ndarray:
    """P(S = nu) for the NB(2) attempt count, nu >= 2."""
    nu = np.asarray(nu, dtype=np.float64)
    return (nu - 1.0) * (1.0 - p_err) ** 2 * np.power(p_err, nu - 2.0)


def return_probability(profile: ClientProfile, loads: np.ndarray, t: float) -> np.ndarray:
    """P(T <= t) for each relaxed load in `loads`, no range checks.

    Sum over attempt counts nu = 2..nu_m of P(S = nu) times the
    shifted-exponential CDF evaluated at t - tau*nu.
    """
    loads = np.asarray(loads, dtype=np.float64)
    nu_m = max_attempts(t, profile.tau)
    if nu_m < 2:
        return np.zeros_like(loads)
    nu = np.arange(2, nu_m + 1, dtype=np.float64)
    weights = attempt_pmf(profile.p_err, nu)
    slack = t - profile.tau * nu  # > 0 for every nu in range
    flat = loads.reshape(-1)
    out = np.empty_like(flat)
    positive = flat > 0
    # zero load: the compute CDF is a unit step at 0
    out[~positive] = weights.sum()
    if positive.any():
        ell = flat[positive][:, None]
        margin = slack[None, :] - ell / profile.mu
        rate = profile.alpha * profile.mu / ell
        cdf = np.where(margin > 0, -np.expm1(-rate * np.maximum(margin, 0.0)), 0.0)
        out[positive] = cdf @ weights
    return out.reshape(loads.shape)


def cdf_total_delay(profile: ClientProfile, load: float, t: float) -> float:
    """Closed-form P(T <= t) for a client processing `load` points."""
    if load < 0:
        raise DomainError(f"load must be non-negative, got {load}")
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    return float(return_probability(profile, np.array([load]), t)[0])
