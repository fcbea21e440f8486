"""
Straggler-aware load allocation.

For a waiting time t the expected return of a client processing l points
is l * P(T <= t). As a function of l it is piecewise concave: piece nu
covers loads in (mu(t - (nu+1)tau)^+, mu(t - nu*tau)), where exactly the
attempt counts 2..nu can still finish in time. Each client is maximized
piece by piece; the minimal waiting time reaching a target aggregate
return is then found by binary search over t.
"""

import math
import time
from functools import lru_cache
from typing import Sequence

import numpy as np
import structlog
from scipy.optimize import minimize_scalar

from app.core.errors import DomainError, InfeasibleError
from app.core.monitoring import allocation_solve_seconds
from app.engine.delay_model import max_attempts, return_probability
from app.schemas.allocation import (
    FixedRedundancy,
    LoadAllocation,
    OptimizedRedundancy,
    ReturnCurvePoint,
)
from app.schemas.delay import ClientProfile

logger = structlog.get_logger()

_INV_E = math.exp(-1.0)
_TIE_RTOL = 1e-12
_SCAN_POINTS = 1001
_MAX_BISECTIONS = 400
_MAX_DOUBLINGS = 200

# bisection stops once the bracket is this fraction of its starting upper end
SEARCH_RTOL = 1e-6


def expected_return(profile: ClientProfile, load: float, t: float) -> float:
    """Expected number of points returned by time t for a relaxed load."""
    if load < 0:
        raise DomainError(f"load must be non-negative, got {load}")
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    if load == 0:
        return 0.0
    return float(load * return_probability(profile, np.array([load]), t)[0])


def return_curve(profile: ClientProfile, t: float, loads: np.ndarray) -> np.ndarray:
    """Expected return for each load in `loads` at waiting time t."""
    loads = np.asarray(loads, dtype=np.float64)
    if np.any(loads < 0):
        raise DomainError("loads must be non-negative")
    return loads * return_probability(profile, loads, t)


def lambert_w_minus1(x: float) -> float:
    """Lower real branch W_{-1}(x) for -1/e <= x < 0.

    Bisection on w*exp(w) = x over w <= -1 (the map is decreasing there),
    then a few Halley steps kept only when they reduce the residual.
    """
    # -1/e and -exp(-1) may differ in the last bit
    if not (-_INV_E * (1.0 + 1e-15) <= x < 0):
        raise DomainError(f"W_-1 is defined on [-1/e, 0), got {x}")
    if x <= -_INV_E:
        return -1.0

    def residual(w: float) -> float:
        return w * math.exp(w) - x

    lo, hi = -2.0, -1.0
    while residual(lo) <= 0:
        lo *= 2.0
    # residual(lo) > 0 >= residual(hi)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if residual(mid) > 0:
            lo = mid
        else:
            hi = mid

    w = lo if abs(residual(lo)) < abs(residual(hi)) else hi
    best = abs(residual(w))
    for _ in range(4):
        w1 = w + 1.0
        if abs(w1) < 1e-6 or best == 0.0:
            break
        ew = math.exp(w)
        f = w * ew - x
        step = f / (ew * w1 - (w + 2.0) * f / (2.0 * w1))
        candidate = w - step
        if candidate > -1.0:
            break
        r = abs(residual(candidate))
        if r >= best:
            break
        w, best = candidate, r
    return w


def optimal_load_for_piece(profile: ClientProfile, t: float, nu: int) -> float:
    """Unconstrained maximizer of the nu-th return term over the load.

    l*(t, nu) = -alpha*mu / (W_-1(-e^-(1+alpha)) + 1) * (t - nu*tau)^+
    """
    if nu < 2:
        raise DomainError(f"attempt count must be >= 2, got {nu}")
    slack = t - nu * profile.tau
    if slack <= 0:
        return 0.0
    return -profile.alpha * profile.mu / (_branch_value(profile.alpha) + 1.0) * slack


@lru_cache(maxsize=64)
def _branch_value(alpha: float) -> float:
    return lambert_w_minus1(-math.exp(-(1.0 + alpha)))


def _objective(profile: ClientProfile, t: float):
    def value(load: float) -> float:
        if load <= 0:
            return 0.0
        return float(load * return_probability(profile, np.array([load]), t)[0])

    return value


def _better(value: float, load: float, best_value: float, best_load: float) -> bool:
    tol = _TIE_RTOL * max(abs(value), abs(best_value), 1e-300)
    if value > best_value + tol:
        return True
    # ties go to the larger load, but never trade zero return for load
    return value > 0 and abs(value - best_value) <= tol and load > best_load


def optimize_client_load(profile: ClientProfile, t: float) -> ReturnCurvePoint:
    """Load in [0, local_size] maximizing the expected return at time t."""
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    nu_m = max_attempts(t, profile.tau)
    if nu_m < 2:
        return ReturnCurvePoint(load=0.0, expected_return=0.0)

    cap = float(profile.local_size)
    value = _objective(profile, t)
    best_load, best_value = 0.0, 0.0

    for nu in range(2, nu_m + 1):
        upper = profile.mu * (t - nu * profile.tau)
        # return <= load < upper on this piece and every later one
        if best_value >= min(upper, cap):
            break
        lower = max(profile.mu * (t - (nu + 1) * profile.tau), 0.0)
        upper = min(upper, cap)
        if upper <= lower:
            continue

        candidates = [lower, upper]
        closed = optimal_load_for_piece(profile, t, nu)
        candidates.append(min(max(closed, lower), upper))
        res = minimize_scalar(
            lambda x: -value(x),
            bounds=(lower, upper),
            method="bounded",
            options={"xatol": 1e-10 * max(1.0, upper)},
        )
        candidates.append(float(res.x))

        for load in candidates:
            v = value(load)
            if _better(v, load, best_value, best_load):
                best_load, best_value = load, v

    return ReturnCurvePoint(load=best_load, expected_return=min(best_value, best_load))


def aggregate_return(profiles: Sequence[ClientProfile], t: float) -> tuple[float, list[ReturnCurvePoint]]:
    """Maximized aggregate expected return at time t and the per-node optima."""
    points = [optimize_client_load(p, t) for p in profiles]
    return sum(p.expected_return for p in points), points


def optimized_return_sweep(
    profiles: Sequence[ClientProfile], times: Sequence[float]
) -> list[tuple[float, float]]:
    """(t, maximized aggregate return) for every t in `times`."""
    return [(float(t), aggregate_return(profiles, t)[0]) for t in times]


def _floor_load(load: float, cap: int) -> int:
    return min(cap, int(math.floor(load + 1e-9)))


def _linear_scan(profiles, lo: float, hi: float, target: float) -> tuple[float, float]:
    grid = np.linspace(lo, hi, _SCAN_POINTS)
    prev = lo
    for t in grid:
        if aggregate_return(profiles, float(t))[0] >= target:
            return prev, float(t)
        prev = float(t)
    return prev, hi


def _solve_waiting_time(
    profiles: Sequence[ClientProfile], target: float, epsilon: float
) -> tuple[float, list[ReturnCurvePoint], float]:
    """Smallest t with target <= aggregate(t) <= target + epsilon."""
    lo = 2.0 * min(p.tau for p in profiles)
    a_lo = aggregate_return(profiles, lo)[0]
    hi = 2.0 * lo
    a_hi = aggregate_return(profiles, hi)[0]
    doublings = 0
    while a_hi < target:
        lo, a_lo = hi, a_hi
        hi *= 2.0
        a_hi = aggregate_return(profiles, hi)[0]
        doublings += 1
        if doublings > _MAX_DOUBLINGS:
            raise InfeasibleError(f"target return {target} not reached for t up to {hi:.3g}")

    resolution = SEARCH_RTOL * hi
    slack = 1e-9 * max(1.0, target)
    for _ in range(_MAX_BISECTIONS):
        if hi - lo <= resolution and a_hi <= target + epsilon:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            logger.warning("bisection_float_floor", lo=lo, hi=hi, aggregate=a_hi)
            break
        a_mid = aggregate_return(profiles, mid)[0]
        if a_mid < a_lo - slack or a_mid > a_hi + slack:
            logger.warning("non_monotonic_bracket", lo=lo, mid=mid, hi=hi)
            lo, hi = _linear_scan(profiles, lo, hi, target)
            a_lo = aggregate_return(profiles, lo)[0]
            a_hi = aggregate_return(profiles, hi)[0]
            continue
        if a_mid >= target:
            hi, a_hi = mid, a_mid
        else:
            lo, a_lo = mid, a_mid

    total, points = aggregate_return(profiles, hi)
    return hi, points, total


def optimize_waiting_time(
    profiles: Sequence[ClientProfile],
    target_return: float,
    epsilon: float,
    *,
    u: int = 0,
) -> LoadAllocation:
    """Minimum waiting time whose maximized expected return brackets the target."""
    if not profiles:
        raise DomainError("at least one client profile is required")
    if target_return <= 0:
        raise DomainError(f"target return must be positive, got {target_return}")
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    capacity = sum(p.local_size for p in profiles)
    if target_return > capacity:
        raise InfeasibleError(
            f"target return {target_return} exceeds total local data {capacity}"
        )

    target = target_return
    if target + epsilon > capacity:
        # the return only approaches the capacity asymptotically
        target = capacity - min(epsilon, capacity) / 2.0
        logger.warning("target_clamped", requested=target_return, effective=target)

    started = time.perf_counter()
    t_star, points, total = _solve_waiting_time(profiles, target, epsilon)
    elapsed = time.perf_counter() - started
    allocation_solve_seconds.observe(elapsed)
    logger.info(
        "allocation_solved",
        waiting_time=t_star,
        target=target,
        expected_return=total,
        clients=len(profiles),
        elapsed=f"{elapsed:.3f}s",
    )

    return LoadAllocation(
        per_client_load=[_floor_load(pt.load, p.local_size) for pt, p in zip(points, profiles)],
        coded_redundancy=u,
        waiting_time=t_star,
        expected_uncoded_return=total,
        relaxed_load=[pt.load for pt in points],
        local_sizes=[p.local_size for p in profiles],
        target_return=target,
        epsilon=epsilon,
    )


def allocate(
    profiles: Sequence[ClientProfile],
    total_points: int,
    redundancy_policy: FixedRedundancy | OptimizedRedundancy,
    epsilon: float | None = None,
) -> LoadAllocation:
    """Client loads, redundancy u and waiting time for m = total_points."""
    m = total_points
    eps = epsilon if epsilon is not None else 1e-3 * m

    if isinstance(redundancy_policy, FixedRedundancy):
        u = redundancy_policy.u
        u_max = redundancy_policy.u_max
        if u > m:
            raise DomainError(f"redundancy {u} exceeds total points {m}")
        if u_max is not None and u > u_max:
            raise DomainError(f"redundancy {u} exceeds u_max {u_max}")
        target = m - u
        if target <= 0:
            return LoadAllocation(
                per_client_load=[0] * len(profiles),
                coded_redundancy=u,
                waiting_time=0.0,
                expected_uncoded_return=0.0,
                relaxed_load=[0.0] * len(profiles),
                local_sizes=[p.local_size for p in profiles],
                u_max=u_max,
            )
        alloc = optimize_waiting_time(profiles, target, eps, u=u)
        return alloc.model_copy(update={"u_max": u_max})

    u_max = redundancy_policy.u_max
    if u_max > m:
        raise DomainError(f"u_max {u_max} exceeds total points {m}")
    if u_max == 0:
        return allocate(profiles, m, FixedRedundancy(u=0, u_max=0), epsilon=eps)
    server = redundancy_policy.server.model_copy(update={"local_size": u_max})
    nodes = [*profiles, server]
    joint = optimize_waiting_time(nodes, m, eps)
    u = joint.per_client_load[-1]
    client_return = sum(
        expected_return(p, load, joint.waiting_time)
        for p, load in zip(profiles, joint.relaxed_load[:-1])
    )
    logger.info("redundancy_optimized", u=u, u_max=u_max, waiting_time=joint.waiting_time)
    return LoadAllocation(
        per_client_load=joint.per_client_load[:-1],
        coded_redundancy=u,
        waiting_time=joint.waiting_time,
        expected_uncoded_return=client_return,
        relaxed_load=joint.relaxed_load[:-1],
        local_sizes=joint.local_sizes[:-1],
        u_max=u_max,
    )
