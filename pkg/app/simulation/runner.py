"""
End-to-end training run.

embedding -> non-IID sharding -> per-batch allocation and encoding
(coded scheme) -> epochs x global mini-batch steps, recording simulated
wall-clock time, test accuracy and batch loss after every step.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import structlog

from app.config import settings
from app.core.errors import DomainError
from app.core.monitoring import test_accuracy as accuracy_gauge
from app.core.streams import make_stream, stream_path
from app.data.pipeline import LabeledDataset, dataset_files, load_split, shard_non_iid
from app.engine.coding import (
    CompositeParity,
    aggregate_parity,
    build_weights,
    encode_local,
    save_parity,
)
from app.engine.delay_model import cdf_total_delay
from app.engine.kernel_embedding import RffMap, embed, sample_rff_params
from app.engine.load_allocation import allocate
from app.engine.training import ModelState, ridge_loss
from app.schemas.allocation import FixedRedundancy, LoadAllocation, OptimizedRedundancy
from app.schemas.delay import ClientProfile
from app.schemas.simulation import ConvergenceRecord, RunManifest, SimConfig
from app.simulation.artifacts import time_to_accuracy
from app.simulation.profiles import build_profile_rows, server_profile
from app.simulation.steps import ClientBatch, evaluate_accuracy, run_step_coded, run_step_uncoded

logger = structlog.get_logger()


@dataclass(frozen=True)
class PreparedData:
    """Embedded, sharded data shared by coded and uncoded runs of one config."""

    rff: RffMap
    batches: tuple[tuple[ClientBatch, ...], ...]  # [batch index][client]
    test_features: np.ndarray
    test_labels: np.ndarray
    dataset_files: dict[str, str]

    @property
    def batches_per_epoch(self) -> int:
        return len(self.batches)


@dataclass(frozen=True)
class RunResult:
    records: list[ConvergenceRecord]
    manifest: RunManifest
    parities: tuple[CompositeParity, ...] = ()


def resolve_data_dir(config: SimConfig) -> Path:
    return config.data_dir if config.data_dir is not None else settings.DATA_DIR


def prepare_data(config: SimConfig, workers: int | None = None) -> PreparedData:
    workers = workers or settings.WORKERS
    root = resolve_data_dir(config)
    train = load_split(root, config.dataset, "train")
    test = load_split(root, config.dataset, "test")
    files = {
        f"{split}_{kind}": str(path)
        for split in ("train", "test")
        for kind, path in zip(("images", "labels"), dataset_files(root, config.dataset, split))
    }

    rff = sample_rff_params(config.seed, train.features.shape[1], config.kernel_q, config.kernel_sigma)
    train_x = embed(rff, train.features, settings.EMBED_CHUNK_ROWS, workers)
    test_x = embed(rff, test.features, settings.EMBED_CHUNK_ROWS, workers)

    batches = split_batches(train, train_x, config)
    logger.info(
        "data_prepared",
        dataset=config.dataset,
        train=train.size,
        test=test.size,
        q=config.kernel_q,
        batches_per_epoch=len(batches),
    )
    return PreparedData(
        rff=rff,
        batches=batches,
        test_features=test_x,
        test_labels=test.labels_onehot,
        dataset_files=files,
    )


def epoch_batches(config: SimConfig, train_rows: int) -> int:
    """Global batches per epoch: each client shard cut into local batches."""
    shard_size = train_rows // config.n_clients
    local = config.local_batch_size
    if train_rows % config.n_clients or shard_size % local:
        raise DomainError(
            f"{train_rows} rows do not split into {config.n_clients} shards "
            f"of whole batches of {local}"
        )
    return shard_size // local


def split_batches(
    train: LabeledDataset, embedded: np.ndarray, config: SimConfig
) -> tuple[tuple[ClientBatch, ...], ...]:
    """Each client's shard cut into contiguous local batches; batch b is global batch b."""
    shards = shard_non_iid(train, config.n_clients)
    local = config.local_batch_size
    per_epoch = epoch_batches(config, train.size)
    out = []
    for b in range(per_epoch):
        row = []
        for idx in shards.indices:
            take = idx[b * local : (b + 1) * local]
            row.append(ClientBatch(features=embedded[take], labels=train.labels_onehot[take]))
        out.append(tuple(row))
    return tuple(out)


def redundancy_policy(config: SimConfig) -> FixedRedundancy | OptimizedRedundancy:
    u_max = config.coded_points
    if config.redundancy_mode == "optimized":
        return OptimizedRedundancy(u_max=u_max, server=server_profile(config, u_max))
    return FixedRedundancy(u=u_max, u_max=u_max)


def _encode_batch(
    config: SimConfig,
    b: int,
    clients: tuple[ClientBatch, ...],
    profiles: list[ClientProfile],
    allocation: LoadAllocation,
    workers: int,
) -> tuple[tuple[ClientBatch, ...], CompositeParity]:
    u = allocation.coded_redundancy
    t_star = allocation.waiting_time

    def encode(j: int):
        rng = make_stream(config.seed, "encode", b, j)
        load = allocation.per_client_load[j]
        p_return = cdf_total_delay(profiles[j], load, t_star) if load > 0 else 0.0
        weights = build_weights(clients[j].size, load, p_return, rng)
        shard = encode_local(clients[j].features, clients[j].labels, weights, u, rng) if u else None
        return replace(clients[j], weights=weights), shard

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(encode, range(len(clients))))
    else:
        results = [encode(j) for j in range(len(clients))]
    weighted = tuple(r[0] for r in results)

    q = clients[0].features.shape[1]
    c = clients[0].labels.shape[1]
    if config.coded_gradient_mode == "identity" and u > 0:
        # G^T G replaced by the identity: the parity is the weighted data itself
        feats, labs = [], []
        for cb in weighted:
            keep = cb.weights.weights > 0
            w = cb.weights.weights[keep][:, None]
            feats.append(w * cb.features[keep].astype(np.float64))
            labs.append(w * cb.labels[keep].astype(np.float64))
        parity = CompositeParity(
            coded_features=np.vstack(feats) if feats else np.zeros((0, q)),
            coded_labels=np.vstack(labs) if labs else np.zeros((0, c)),
        )
    elif u == 0:
        parity = CompositeParity(coded_features=np.zeros((0, q)), coded_labels=np.zeros((0, c)))
    else:
        parity = aggregate_parity([r[1] for r in results])
    return weighted, parity


def run_training(
    config: SimConfig,
    prepared: PreparedData | None = None,
    out_dir: Path | None = None,
    workers: int | None = None,
) -> RunResult:
    """Simulate config.scheme for epochs_total epochs."""
    workers = workers or settings.WORKERS
    data = prepared or prepare_data(config, workers)
    hyper = config.hyperparams
    rows = build_profile_rows(config)
    profiles = [r.profile for r in rows]
    scheme = config.scheme
    m = config.batch_size_global

    seeds = {
        "rff": list(stream_path("rff")),
        "profiles_comm": list(stream_path("profiles", "comm")),
        "profiles_mac": list(stream_path("profiles", "mac")),
        "delays": list(stream_path("delays", scheme)),
        "run_seed": [config.seed],
    }

    allocations: list[LoadAllocation] = []
    parities: list[CompositeParity] = []
    batches = data.batches
    artifacts: dict[str, str] = {}
    if scheme == "coded":
        # every global batch sees the same profiles, so one solve serves them all
        allocation = allocate(profiles, m, redundancy_policy(config), epsilon=config.epsilon_fraction * m)
        if allocation.waiting_time <= 0:
            raise DomainError(
                f"coded redundancy {allocation.coded_redundancy} of {m} leaves a zero "
                "waiting time; simulated time would not advance"
            )
        coded_batches = []
        for b, clients in enumerate(batches):
            weighted, parity = _encode_batch(config, b, clients, profiles, allocation, workers)
            allocations.append(allocation)
            parities.append(parity)
            coded_batches.append(weighted)
            seeds[f"encode_batch_{b}"] = list(stream_path("encode", b))
            if config.checkpoint_parity and out_dir is not None and parity.u:
                path = Path(out_dir) / f"parity_{b}.bin"
                save_parity(parity, path)
                artifacts[f"parity_{b}"] = str(path)
        batches = tuple(coded_batches)

    rng = make_stream(config.seed, "delays", scheme)
    q = data.test_features.shape[1]
    c = data.test_labels.shape[1]
    model = ModelState.zeros(q, c)
    wall = 0.0
    step = 0
    records = [
        ConvergenceRecord(
            epoch=0,
            step=0,
            wall_clock_s=0.0,
            test_accuracy=evaluate_accuracy(model, data.test_features, data.test_labels),
            train_loss=_batch_loss(batches[0], model, hyper.lambda_),
        )
    ]

    log = logger.bind(scheme=scheme, dataset=config.dataset)
    log.info("training_started", epochs=hyper.epochs_total, batches=len(batches))
    for epoch in range(hyper.epochs_total):
        for b, clients in enumerate(batches):
            model = replace(model, epoch=epoch, step_in_epoch=b)
            if scheme == "coded":
                dt, model = run_step_coded(
                    model,
                    b,
                    allocations[b],
                    parities[b],
                    clients,
                    rng,
                    profiles=profiles,
                    hyper=hyper,
                    workers=workers,
                )
            else:
                dt, model = run_step_uncoded(
                    model, b, clients, rng, profiles=profiles, hyper=hyper, workers=workers
                )
            wall += dt
            step += 1
            acc = evaluate_accuracy(model, data.test_features, data.test_labels)
            records.append(
                ConvergenceRecord(
                    epoch=epoch,
                    step=step,
                    wall_clock_s=wall,
                    test_accuracy=acc,
                    train_loss=_batch_loss(clients, model, hyper.lambda_),
                )
            )
            accuracy_gauge.labels(scheme=scheme).set(acc)
        log.info("epoch_completed", epoch=epoch, wall_clock_h=wall / 3600.0, accuracy=records[-1].test_accuracy)

    manifest = RunManifest(
        version=settings.APP_VERSION,
        scheme=scheme,
        config=config.model_dump(mode="json", by_alias=True),
        profiles=rows,
        allocations=allocations,
        seeds=seeds,
        dataset_files=data.dataset_files,
        artifacts=artifacts,
        steps=step,
        final_accuracy=records[-1].test_accuracy,
        total_wall_clock_s=wall,
        time_to_target_s=time_to_accuracy(records, config.gamma),
    )
    return RunResult(records=records, manifest=manifest, parities=tuple(parities))


def _batch_loss(clients: tuple[ClientBatch, ...], model: ModelState, lambda_: float) -> float:
    x = np.vstack([cb.features for cb in clients])
    y = np.vstack([cb.labels for cb in clients])
    return ridge_loss(x, y, model.beta, lambda_)
