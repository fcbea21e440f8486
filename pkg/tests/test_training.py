"""
Gradient, combination and update tests.
"""

import numpy as np
import pytest

from app.core.errors import DomainError, TrainingError
from app.core.streams import make_stream
from app.engine.coding import CompositeParity, aggregate_parity, build_weights, encode_local
from app.engine.delay_model import cdf_total_delay
from app.engine.training import (
    ModelState,
    argmax_accuracy,
    coded_gradient,
    combine,
    full_gradient,
    local_gradient,
    lr_schedule,
    ridge_loss,
    update_model,
    weighted_gradient,
)
from app.schemas.delay import ClientProfile
from app.schemas.simulation import TrainingHyperparams


def test_local_gradient_scalar():
    """X=[2], Y=[3], beta=[1] gives -2."""
    g = local_gradient(np.array([[2.0]]), np.array([[3.0]]), np.array([[1.0]]))
    assert g == pytest.approx(np.array([[-2.0]]))


def test_local_gradient_zero():
    """beta = 0 and Y = 0 gives zero."""
    x = np.ones((4, 3))
    assert np.array_equal(local_gradient(x, np.zeros((4, 2)), np.zeros((3, 2))), np.zeros((3, 2)))


def test_local_gradient_needs_rows():
    """An empty batch has no gradient."""
    with pytest.raises(DomainError):
        local_gradient(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((3, 2)))


def test_local_gradient_finite_difference():
    """Matches central differences of (1/2l)||X beta - Y||^2."""
    rng = make_stream(1, "test", "fd")
    x, y, beta = rng.random((6, 4)), rng.random((6, 3)), rng.random((4, 3))
    g = local_gradient(x, y, beta)
    h = 1e-6
    numeric = np.zeros_like(beta)
    for i in range(4):
        for k in range(3):
            up, down = beta.copy(), beta.copy()
            up[i, k] += h
            down[i, k] -= h
            numeric[i, k] = (ridge_loss(x, y, up, 0.0) - ridge_loss(x, y, down, 0.0)) / (2 * h)
    assert np.max(np.abs(g - numeric)) < 1e-5


def test_full_gradient_is_weighted_average():
    """Full gradient = (1/m) sum l_j g_j."""
    rng = make_stream(2, "test", "avg")
    parts = [(rng.random((n, 5)), rng.random((n, 2))) for n in (3, 7, 4)]
    beta = rng.random((5, 2))
    x = np.vstack([p[0] for p in parts])
    y = np.vstack([p[1] for p in parts])
    avg = sum(len(px) * local_gradient(px, py, beta) for px, py in parts) / 14
    assert np.max(np.abs(full_gradient(x, y, beta) - avg)) < 1e-10


def test_coded_gradient_simple_cases():
    """Zero parity gives zero; beta = 0 gives -X^T Y."""
    zero = CompositeParity(np.zeros((3, 4)), np.zeros((3, 2)))
    assert np.array_equal(coded_gradient(zero, np.ones((4, 2))), np.zeros((4, 2)))
    rng = make_stream(3, "test", "coded")
    parity = CompositeParity(rng.random((3, 4)), rng.random((3, 2)))
    assert coded_gradient(parity, np.zeros((4, 2))) == pytest.approx(
        -parity.coded_features.T @ parity.coded_labels
    )


def test_coded_gradient_expectation():
    """Averaged over generators, the coded gradient is the weighted gradient."""
    rng = make_stream(4, "test", "expect")
    x, y, beta = rng.random((10, 4)), rng.random((10, 2)), rng.random((4, 2))
    w = build_weights(10, 5, 0.6, rng)
    target = weighted_gradient(x, y, w.weights, beta)
    acc = np.zeros_like(target)
    for _ in range(500):
        parity = aggregate_parity([encode_local(x, y, w, 20, rng)])
        acc += coded_gradient(parity, beta)
    assert np.linalg.norm(acc / 500 - target) / np.linalg.norm(target) < 0.05


def test_combine_degenerate_cases():
    """Empty return list gives coded/m; full return with zero coded gives the full gradient."""
    coded = np.full((2, 2), 6.0)
    assert np.array_equal(combine(coded, [], 3), np.full((2, 2), 2.0))
    g1, g2 = np.ones((2, 2)), 3 * np.ones((2, 2))
    assert combine(np.zeros((2, 2)), [(1, g1), (3, g2)], 4) == pytest.approx(np.full((2, 2), 2.5))
    with pytest.raises(DomainError):
        combine(coded, [], 0)


@pytest.mark.slow
def test_combined_gradient_unbiased():
    """Mean over straggler and generator draws recovers the full gradient."""
    rng = make_stream(5, "test", "unbiased")
    profiles = [
        ClientProfile(mu=2.0, alpha=2.0, tau=0.5, p_err=0.1, local_size=6),
        ClientProfile(mu=3.0, alpha=2.0, tau=0.4, p_err=0.2, local_size=6),
    ]
    loads, t_star = [4, 5], 6.0
    xs = [rng.random((6, 3)) for _ in profiles]
    ys = [rng.random((6, 2)) for _ in profiles]
    beta = rng.standard_normal((3, 2))
    p = [cdf_total_delay(pr, ell, t_star) for pr, ell in zip(profiles, loads)]
    ws = [build_weights(6, ell, pj, rng) for ell, pj in zip(loads, p)]
    grads = [local_gradient(x[w.sampled_indices], y[w.sampled_indices], beta) for x, y, w in zip(xs, ys, ws)]
    target = full_gradient(np.vstack(xs), np.vstack(ys), beta)

    acc = np.zeros_like(target)
    for _ in range(2000):
        parity = aggregate_parity([encode_local(x, y, w, 64, rng) for x, y, w in zip(xs, ys, ws)])
        arrived = rng.random(2) < np.array(p)
        returned = [(loads[j], grads[j]) for j in range(2) if arrived[j]]
        acc += combine(coded_gradient(parity, beta), returned, 12)
    assert np.linalg.norm(acc / 2000 - target) / np.linalg.norm(target) < 0.03


def test_lr_schedule_step_decay():
    """Learning rate decays at the listed epochs."""
    hyper = TrainingHyperparams(lr0=6.0, decay=0.8, decay_epochs=(40, 65))
    assert lr_schedule(0, hyper) == 6.0
    assert lr_schedule(40, hyper) == pytest.approx(4.8)
    assert lr_schedule(79, hyper) == pytest.approx(6.0 * 0.64)
    with pytest.raises(DomainError):
        lr_schedule(-1, hyper)


def test_decay_epochs_from_text():
    """Comma-separated decay epochs parse to a tuple."""
    assert TrainingHyperparams(decay_epochs="10, 20").decay_epochs == (10, 20)


def test_update_model_applies_regularizer():
    """beta <- beta - lr (g + lambda beta)."""
    hyper = TrainingHyperparams(lr0=0.5, decay_epochs=(), **{"lambda": 0.1})
    state = ModelState(beta=np.ones((2, 2)))
    new = update_model(state, np.ones((2, 2)), hyper)
    assert new.beta == pytest.approx(np.full((2, 2), 1 - 0.5 * 1.1))


def test_update_model_rejects_non_finite():
    """NaN gradients and divergence raise a training fault."""
    hyper = TrainingHyperparams()
    state = ModelState.zeros(2, 2)
    with pytest.raises(TrainingError):
        update_model(state, np.full((2, 2), np.nan), hyper)
    with pytest.raises(TrainingError):
        update_model(state, np.full((2, 2), 1e308), hyper.model_copy(update={"lr0": 1e10}))


def test_argmax_accuracy_ties_to_lowest_class():
    """beta = 0 predicts class 0 everywhere."""
    labels = np.eye(3)[[0, 1, 0, 2]]
    assert argmax_accuracy(np.zeros((4, 3)), np.ones((4, 4)), labels) == 0.5


def test_combine_is_linear():
    """combine(a*x + b*y) = a*combine(x) + b*combine(y), argument by argument."""
    rng = make_stream(12, "test", "linear")
    c1, c2 = rng.random((4, 3)), rng.random((4, 3))
    g1, h1, g2 = rng.random((4, 3)), rng.random((4, 3)), rng.random((4, 3))
    a, b = 0.7, -2.5
    mixed = combine(a * c1 + b * c2, [(3, a * g1 + b * h1), (5, a * g2 + b * g2)], 9)
    split = a * combine(c1, [(3, g1), (5, g2)], 9) + b * combine(c2, [(3, h1), (5, g2)], 9)
    assert np.max(np.abs(mixed - split)) < 1e-12


def _lipschitz(x, lambda_, iterations=200):
    # power iteration on X^T X / m
    v = np.ones(x.shape[1]) / np.sqrt(x.shape[1])
    for _ in range(iterations):
        w = x.T @ (x @ v) / x.shape[0]
        v = w / np.linalg.norm(w)
    return float(v @ (x.T @ (x @ v)) / x.shape[0]) + lambda_


def test_gradient_descent_decreases_loss():
    """With lr = 0.9 / L the regularized loss never increases."""
    rng = make_stream(13, "test", "descent")
    x, y = rng.random((30, 6)), rng.random((30, 3))
    lambda_ = 1e-2
    hyper = TrainingHyperparams(lambda_=lambda_, lr0=0.9 / _lipschitz(x, lambda_), decay_epochs=())
    state = ModelState.zeros(6, 3)
    losses = [ridge_loss(x, y, state.beta, lambda_)]
    for _ in range(100):
        state = update_model(state, full_gradient(x, y, state.beta), hyper)
        losses.append(ridge_loss(x, y, state.beta, lambda_))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_full_gradient_vanishes_at_ridge_solution():
    """At the directly solved optimum, g + lambda * beta is zero."""
    rng = make_stream(14, "test", "ridge")
    x, y = rng.random((12, 5)), rng.random((12, 2))
    lambda_, m = 1e-3, 12
    beta = np.linalg.solve(x.T @ x / m + lambda_ * np.eye(5), x.T @ y / m)
    assert np.linalg.norm(full_gradient(x, y, beta) + lambda_ * beta) < 1e-8
