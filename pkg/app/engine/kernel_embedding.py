"""
Random Fourier feature embedding of the RBF kernel.

x -> sqrt(2/q) * cos(x @ W.T + b), W rows ~ N(0, I / sigma^2),
b ~ Uniform(0, 2*pi]. Inner products of embedded rows approximate
exp(-||x - y||^2 / (2 sigma^2)).

Every client rebuilds the same map from a shared seed, so the map is a
pure function of (seed, d, q, sigma): uniforms come from a Philox stream
and normals use the inverse CDF, which has no platform-dependent
rejection loop.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from app.core.errors import DomainError
from app.core.streams import make_stream

_TWO_PI = 2.0 * np.pi
_HALF_ULP = 2.0**-54


@dataclass(frozen=True)
class RffMap:
    frequencies: np.ndarray  # q x d
    shifts: np.ndarray  # q
    sigma: float
    seed: int

    @property
    def d(self) -> int:
        return self.frequencies.shape[1]

    @property
    def q(self) -> int:
        return self.frequencies.shape[0]


def sample_rff_params(seed: int, d: int, q: int, sigma: float) -> RffMap:
    if d < 1 or q < 1:
        raise DomainError(f"dimensions must be positive, got d={d}, q={q}")
    if sigma <= 0:
        raise DomainError(f"kernel width must be positive, got {sigma}")
    rng = make_stream(seed, "rff")
    u = rng.random((q, d))
    # random() may return exactly 0; ndtri needs the open interval
    u = np.where(u > 0.0, u, _HALF_ULP)
    frequencies = ndtri(u) / sigma
    shifts = _TWO_PI * (1.0 - rng.random(q))
    return RffMap(frequencies=frequencies, shifts=shifts, sigma=float(sigma), seed=seed)


def _embed_block(rff: RffMap, block: np.ndarray) -> np.ndarray:
    z = block.astype(np.float64) @ rff.frequencies.T
    z += rff.shifts
    return (np.sqrt(2.0 / rff.q) * np.cos(z)).astype(np.float32)


def embed(
    rff: RffMap,
    features: np.ndarray,
    chunk_rows: int = 4096,
    workers: int = 1,
) -> np.ndarray:
    """Embed each row of an m x d matrix into q float32 features."""
    features = np.atleast_2d(features)
    if features.shape[1] != rff.d:
        raise DomainError(
            f"feature dimension {features.shape[1]} does not match map dimension {rff.d}"
        )
    m = features.shape[0]
    out = np.empty((m, rff.q), dtype=np.float32)
    starts = range(0, m, chunk_rows)

    def run(start: int) -> None:
        stop = min(start + chunk_rows, m)
        out[start:stop] = _embed_block(rff, features[start:stop])

    if workers > 1 and m > chunk_rows:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    return out


def rbf_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma * sigma)))


def kernel_error_stats(rff: RffMap, xs: np.ndarray, ys: np.ndarray) -> dict[str, float]:
    """Mean and max |<phi(x), phi(y)> - K(x, y)| over paired rows."""
    ex = embed(rff, xs).astype(np.float64)
    ey = embed(rff, ys).astype(np.float64)
    approx = np.einsum("ij,ij->i", ex, ey)
    sq = np.sum((np.asarray(xs, np.float64) - np.asarray(ys, np.float64)) ** 2, axis=1)
    exact = np.exp(-sq / (2.0 * rff.sigma**2))
    err = np.abs(approx - exact)
    return {"pairs": float(len(err)), "mean_abs_error": float(err.mean()), "max_abs_error": float(err.max())}
