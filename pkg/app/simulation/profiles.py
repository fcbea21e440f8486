"""
Client profiles from the experiment's network and compute parameters.

Normalized link capacities {1, k1, k1^2, ...} and processing powers
{1, k2, k2^2, ...} are assigned to clients through two independent
seeded permutations. A transmission carries q*c scalars (model and
gradient have the same shape) plus protocol overhead; one data point
costs 2*q*c MACs (forward product and gradient product).
"""

from typing import Sequence

import numpy as np

from app.core.streams import make_stream
from app.data.pipeline import N_CLASSES
from app.schemas.delay import ClientProfile
from app.schemas.simulation import ProfileRow, SimConfig


def payload_bits(config: SimConfig, n_classes: int = N_CLASSES) -> float:
    return config.kernel_q * n_classes * config.bits_per_scalar * (1.0 + config.overhead)


def macs_per_point(config: SimConfig, n_classes: int = N_CLASSES) -> float:
    return 2.0 * config.kernel_q * n_classes


def rate_permutations(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    n = config.n_clients
    comm = make_stream(config.seed, "profiles", "comm").permutation(n)
    mac = make_stream(config.seed, "profiles", "mac").permutation(n)
    return comm, mac


def build_profile_rows(
    config: SimConfig,
    local_size: int | None = None,
    permutations: tuple[Sequence[int], Sequence[int]] | None = None,
) -> list[ProfileRow]:
    comm_rank, mac_rank = permutations or rate_permutations(config)
    size = local_size if local_size is not None else config.local_batch_size
    bits = payload_bits(config)
    macs = macs_per_point(config)
    rows = []
    for j in range(config.n_clients):
        comm_rate = config.max_comm_rate * config.k1 ** int(comm_rank[j])
        mac_rate = config.max_mac_rate * config.k2 ** int(mac_rank[j])
        profile = ClientProfile(
            mu=mac_rate / macs,
            alpha=config.alpha,
            tau=bits / comm_rate,
            p_err=config.p_err,
            local_size=size,
        )
        rows.append(ProfileRow(client=j, comm_rate=comm_rate, mac_rate=mac_rate, profile=profile))
    return rows


def build_profiles(
    config: SimConfig,
    local_size: int | None = None,
    permutations: tuple[Sequence[int], Sequence[int]] | None = None,
) -> list[ClientProfile]:
    """Per-client profiles; local_size defaults to the per-client batch size."""
    return [row.profile for row in build_profile_rows(config, local_size, permutations)]


def server_profile(config: SimConfig, u_max: int) -> ClientProfile:
    """Server treated as one more node bounded by u_max coded points."""
    return ClientProfile(
        mu=config.server_mac_rate / macs_per_point(config),
        alpha=config.alpha,
        tau=payload_bits(config) / config.server_comm_rate,
        p_err=config.server_p_err,
        local_size=max(u_max, 1),
    )
