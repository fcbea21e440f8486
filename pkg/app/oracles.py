"""
Brute-force and Monte-Carlo cross-checks of the closed forms.

Each suite is registered by name and returns an OracleReport; the
`oracle NAME` command prints it and exits non-zero when a check fails.
"""

import math
from typing import Callable, Dict

import numpy as np
import structlog
from scipy.special import lambertw

from app.core.errors import UsageError
from app.core.streams import make_stream
from app.engine.coding import aggregate_parity, build_weights, encode_local
from app.engine.delay_model import cdf_total_delay, expected_delay, sample_total_delays
from app.engine.kernel_embedding import kernel_error_stats, sample_rff_params
from app.engine.load_allocation import lambert_w_minus1, optimal_load_for_piece
from app.engine.training import (
    coded_gradient,
    combine,
    full_gradient,
    local_gradient,
    weighted_gradient,
)
from app.schemas.delay import ClientProfile
from app.schemas.oracle import OracleCheck, OracleReport

logger = structlog.get_logger()

Suite = Callable[[int], OracleReport]
SUITES: Dict[str, Suite] = {}

# parameter set used throughout the delay checks
REFERENCE_PROFILE = ClientProfile(mu=2.0, alpha=2.0, tau=math.sqrt(3.0), p_err=0.9, local_size=4)


def suite(name: str):
    def decorator(func: Suite):
        SUITES[name] = func
        return func

    return decorator


def run_suite(name: str, seed: int = 0) -> OracleReport:
    func = SUITES.get(name)
    if func is None:
        raise UsageError(f"unknown oracle suite '{name}'")
    report = func(seed)
    logger.info(
        "oracle_finished",
        suite=name,
        checks=len(report.checks),
        failed=sum(1 for c in report.checks if not c.passed),
    )
    return report


def _rel_frobenius(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@suite("delay-cdf")
def delay_cdf_suite(seed: int, samples: int = 1_000_000) -> OracleReport:
    checks = []
    profiles = {
        "lossy": REFERENCE_PROFILE,
        "clean": REFERENCE_PROFILE.model_copy(update={"p_err": 0.1}),
    }
    for label, profile in profiles.items():
        rng = make_stream(seed, "oracle", "delay-cdf", label)
        load = profile.local_size
        draws = sample_total_delays(profile, load, rng, samples)

        mean = float(draws.mean())
        closed_mean = expected_delay(profile, load)
        se = float(draws.std(ddof=1)) / math.sqrt(samples)
        checks.append(
            OracleCheck(
                name=f"{label}: mean delay",
                value=mean,
                reference=closed_mean,
                tolerance=0.01 * closed_mean,
                samples=samples,
                ci_low=mean - 1.96 * se,
                ci_high=mean + 1.96 * se,
                passed=abs(mean - closed_mean) <= 0.01 * closed_mean,
            )
        )

        grid = np.quantile(draws, [0.05, 0.25, 0.5, 0.75, 0.95])
        if label == "lossy":
            grid = np.append(grid, 10.0)
        worst_gap, worst = -1.0, None
        for t in grid:
            closed = cdf_total_delay(profile, load, float(t))
            empirical = float(np.mean(draws <= t))
            se_t = math.sqrt(max(empirical * (1.0 - empirical), 1e-12) / samples)
            gap = abs(closed - empirical)
            if gap > worst_gap:
                worst_gap, worst = gap, (float(t), closed, empirical, se_t)
        t, closed, empirical, se_t = worst
        tol = min(0.005, max(4.0 * se_t, 1e-4))
        checks.append(
            OracleCheck(
                name=f"{label}: max |closed - empirical| CDF (worst t={t:.4g})",
                value=empirical,
                reference=closed,
                tolerance=tol,
                samples=samples,
                ci_low=empirical - 1.96 * se_t,
                ci_high=empirical + 1.96 * se_t,
                passed=worst_gap <= tol,
            )
        )
    return OracleReport(suite="delay-cdf", checks=checks)


@suite("lambert")
def lambert_suite(seed: int) -> OracleReport:
    checks = []
    points = [-math.exp(-2.0), -0.05, -0.3, -1e-6, -math.exp(-1.0) + 1e-9]
    rng = make_stream(seed, "oracle", "lambert")
    points += list(-math.exp(-1.0) * rng.random(5))
    for x in points:
        if x == 0.0:
            continue
        w = lambert_w_minus1(float(x))
        residual = abs(w * math.exp(w) - x)
        reference = float(lambertw(x, -1).real)
        checks.append(
            OracleCheck(
                name=f"W_-1({x:.6g}) residual",
                value=residual,
                reference=reference,
                tolerance=1e-12,
                passed=residual < 1e-12 and abs(w - reference) <= 1e-7 * abs(reference),
            )
        )

    # closed-form piece maximizer against a 1e-3 grid search
    profile = ClientProfile(mu=2.0, alpha=1.0, tau=math.sqrt(3.0), p_err=0.0, local_size=100)
    t, nu = 10.0, 2
    closed = optimal_load_for_piece(profile, t, nu)
    slack = t - nu * profile.tau
    grid = np.arange(1e-3, profile.mu * slack, 1e-3)
    piece = grid * -np.expm1(-(profile.alpha * profile.mu / grid) * (slack - grid / profile.mu))
    best = float(grid[int(np.argmax(piece))])
    checks.append(
        OracleCheck(
            name="piece maximizer vs grid search",
            value=closed,
            reference=best,
            tolerance=1e-2,
            samples=len(grid),
            passed=abs(closed - best) < 1e-2,
        )
    )
    return OracleReport(suite="lambert", checks=checks)


@suite("kernel")
def kernel_suite(seed: int, pairs: int = 1000) -> OracleReport:
    sigma, d, q = 5.0, 784, 2000
    rng = make_stream(seed, "oracle", "kernel")
    xs = rng.random((pairs, d))
    ys = rng.random((pairs, d))
    rff = sample_rff_params(seed, d, q, sigma)
    stats = kernel_error_stats(rff, xs, ys)

    var = float(np.var(rff.frequencies))
    shift_mean = float(np.mean(rff.shifts))
    n = rff.frequencies.size
    return OracleReport(
        suite="kernel",
        checks=[
            OracleCheck(
                name="mean |phi(x).phi(y) - K(x, y)|",
                value=stats["mean_abs_error"],
                tolerance=0.02,
                samples=pairs,
                passed=stats["mean_abs_error"] < 0.02,
            ),
            OracleCheck(
                name="max |phi(x).phi(y) - K(x, y)|",
                value=stats["max_abs_error"],
                tolerance=0.08,
                samples=pairs,
                passed=stats["max_abs_error"] < 0.08,
            ),
            OracleCheck(
                name="frequency variance",
                value=var,
                reference=1.0 / sigma**2,
                tolerance=0.01 / sigma**2,
                samples=n,
                passed=abs(var - 1.0 / sigma**2) <= 0.01 / sigma**2,
            ),
            OracleCheck(
                name="shift mean",
                value=shift_mean,
                reference=math.pi,
                tolerance=0.05 * math.pi,
                samples=q,
                passed=abs(shift_mean - math.pi) <= 0.05 * math.pi,
            ),
        ],
    )


@suite("unbiasedness")
def unbiasedness_suite(seed: int, trials: int = 2000, u: int = 64) -> OracleReport:
    """Mean combined gradient over straggler and encoding draws vs the full gradient."""
    rng = make_stream(seed, "oracle", "unbiasedness")
    q, c, rows = 4, 3, 6
    profiles = [
        ClientProfile(mu=2.0, alpha=2.0, tau=0.5, p_err=0.1, local_size=rows),
        ClientProfile(mu=3.0, alpha=2.0, tau=0.4, p_err=0.2, local_size=rows),
        ClientProfile(mu=1.5, alpha=2.0, tau=0.6, p_err=0.1, local_size=rows),
    ]
    loads = [4, 6, 3]
    t_star = 6.0
    xs = [rng.standard_normal((rows, q)) for _ in profiles]
    ys = [rng.standard_normal((rows, c)) for _ in profiles]
    beta = rng.standard_normal((q, c))
    m = rows * len(profiles)

    p_return = [cdf_total_delay(p, ell, t_star) for p, ell in zip(profiles, loads)]
    weights = [build_weights(rows, ell, pr, rng) for ell, pr in zip(loads, p_return)]
    grads = [
        local_gradient(x[w.sampled_indices], y[w.sampled_indices], beta)
        for x, y, w in zip(xs, ys, weights)
    ]
    target = full_gradient(np.vstack(xs), np.vstack(ys), beta)
    expected_coded = sum(
        weighted_gradient(x, y, w.weights, beta) for x, y, w in zip(xs, ys, weights)
    )

    total = np.zeros_like(target)
    coded_total = np.zeros_like(target)
    for _ in range(trials):
        parity = aggregate_parity(
            [encode_local(x, y, w, u, rng) for x, y, w in zip(xs, ys, weights)]
        )
        coded = coded_gradient(parity, beta)
        arrived = rng.random(len(profiles)) < np.asarray(p_return)
        returned = [(loads[j], grads[j]) for j in range(len(profiles)) if arrived[j]]
        total += combine(coded, returned, m)
        coded_total += coded

    gap = _rel_frobenius(total / trials, target)
    coded_gap = _rel_frobenius(coded_total / trials, expected_coded)
    return OracleReport(
        suite="unbiasedness",
        checks=[
            OracleCheck(
                name="mean combined gradient vs full gradient (Frobenius-relative)",
                value=gap,
                reference=0.0,
                tolerance=0.03,
                samples=trials,
                passed=gap < 0.03,
            ),
            OracleCheck(
                name="mean coded gradient vs weighted gradient (Frobenius-relative)",
                value=coded_gap,
                reference=0.0,
                tolerance=0.05,
                samples=trials,
                passed=coded_gap < 0.05,
            ),
        ],
    )
