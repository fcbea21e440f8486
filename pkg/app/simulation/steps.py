"""
One global mini-batch step of the simulated training loop.

Coded: the server waits exactly t* for client gradients, drops late ones
and fills the expected shortfall with the coded gradient over the
composite parity. Uncoded: the server waits for every client's full
local batch, so the step lasts as long as the slowest client.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import structlog

from app.core.monitoring import step_wall_seconds, steps_total, straggler_drops_total
from app.core.streams import RandomStream
from app.engine.coding import CompositeParity, WeightAssignment
from app.engine.delay_model import sample_round_trip
from app.engine.training import (
    ModelState,
    argmax_accuracy,
    coded_gradient,
    combine,
    local_gradient,
    update_model,
)
from app.schemas.allocation import LoadAllocation
from app.schemas.delay import ClientProfile
from app.schemas.simulation import TrainingHyperparams

logger = structlog.get_logger()


@dataclass(frozen=True)
class ClientBatch:
    """One client's rows of a global mini-batch, plus its private sampling."""

    features: np.ndarray
    labels: np.ndarray
    weights: WeightAssignment | None = None

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def sampled(self) -> tuple[np.ndarray, np.ndarray]:
        if self.weights is None:
            return self.features, self.labels
        idx = self.weights.sampled_indices
        return self.features[idx], self.labels[idx]


def _gradients(
    jobs: Sequence[tuple[np.ndarray, np.ndarray]], beta: np.ndarray, workers: int
) -> list[np.ndarray]:
    # results keep job order so the reduction is deterministic
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: local_gradient(job[0], job[1], beta), jobs))
    return [local_gradient(x, y, beta) for x, y in jobs]


def run_step_coded(
    model: ModelState,
    batch_index: int,
    allocation: LoadAllocation,
    parity: CompositeParity,
    shards: Sequence[ClientBatch],
    rng: RandomStream,
    *,
    profiles: Sequence[ClientProfile],
    hyper: TrainingHyperparams,
    workers: int = 1,
) -> tuple[float, ModelState]:
    """Wait t*, aggregate on-time client gradients plus the coded gradient."""
    t_star = allocation.waiting_time
    loads = allocation.per_client_load

    on_time: list[int] = []
    for j, (profile, load) in enumerate(zip(profiles, loads)):
        delay = sample_round_trip(profile, load, rng)
        if load > 0 and delay.total <= t_star:
            on_time.append(j)
    dropped = sum(1 for load in loads if load > 0) - len(on_time)

    grads = _gradients([shards[j].sampled() for j in on_time], model.beta, workers)
    coded = coded_gradient(parity, model.beta)
    m = sum(shard.size for shard in shards)
    g_m = combine(coded, [(loads[j], g) for j, g in zip(on_time, grads)], m)
    new_model = update_model(model, g_m, hyper)

    steps_total.labels(scheme="coded").inc()
    step_wall_seconds.labels(scheme="coded").observe(t_star)
    straggler_drops_total.inc(dropped)
    logger.debug(
        "step_completed",
        scheme="coded",
        batch=batch_index,
        returned=len(on_time),
        dropped=dropped,
        wall=t_star,
    )
    return t_star, new_model


def run_step_uncoded(
    model: ModelState,
    batch_index: int,
    shards: Sequence[ClientBatch],
    rng: RandomStream,
    *,
    profiles: Sequence[ClientProfile],
    hyper: TrainingHyperparams,
    workers: int = 1,
) -> tuple[float, ModelState]:
    """Wait for every client's full-batch gradient; exact aggregation."""
    wall = max(sample_round_trip(p, s.size, rng).total for p, s in zip(profiles, shards))
    grads = _gradients([(s.features, s.labels) for s in shards], model.beta, workers)
    m = sum(shard.size for shard in shards)
    g = combine(np.zeros_like(model.beta), [(s.size, g) for s, g in zip(shards, grads)], m)
    new_model = update_model(model, g, hyper)

    steps_total.labels(scheme="uncoded").inc()
    step_wall_seconds.labels(scheme="uncoded").observe(wall)
    logger.debug("step_completed", scheme="uncoded", batch=batch_index, wall=wall)
    return wall, new_model


def evaluate_accuracy(
    model: ModelState, test_features_embedded: np.ndarray, test_labels: np.ndarray
) -> float:
    """Argmax-match fraction on the test set (ties go to the lowest class)."""
    return argmax_accuracy(model.beta, test_features_embedded, test_labels)
