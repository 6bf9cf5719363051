"""Counter-based random streams for reproducible parallel ensembles.

Every trajectory owns a stream identified by ``(master_seed, index, lane)``.
The k-th draw of a stream is a pure function of that triple and ``k``, so a
trajectory produces the same numbers whether it runs alone, inside a large
vectorized batch, or on another worker process.

Derivation (all arithmetic modulo 2**64, ``mix`` is the SplitMix64 finalizer)::

    root = mix(master_seed + GOLDEN)
    key  = mix(root ^ (lane * LANE_STRIDE) + (index + 1) * GOLDEN)
    bits = mix(key + (counter + 1) * GOLDEN)
    u    = (bits >> 11) * 2**-53            # uniform in [0, 1)

Gaussians come from Box-Muller on two consecutive uniforms.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
LANE_STRIDE = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_POW_M53 = 2.0**-53

#: lane reserved for the stochastic dynamics of a trajectory
LANE_DYNAMICS = 0
#: lane reserved for drawing the initial state out of a mixture
LANE_INITIAL = 1

ALGORITHM = "splitmix64-counter"


def _u64(x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x))
    if arr.dtype == np.uint64:
        return arr
    if np.issubdtype(arr.dtype, np.integer) and (arr >= 0).all():
        return arr.astype(np.uint64)
    return np.array([int(v) % 2**64 for v in arr.ravel()], dtype=np.uint64).reshape(arr.shape)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function, elementwise on a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):  # wraparound modulo 2**64 is intended
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(master_seed: int, indices, lane: int = LANE_DYNAMICS) -> np.ndarray:
    """Keys of the streams ``(master_seed, i, lane)`` for every ``i`` in ``indices``."""
    root = mix64(_u64(master_seed) + GOLDEN)
    salted = root ^ (_u64(lane) * LANE_STRIDE)
    idx = _u64(indices)
    return mix64(salted + (idx + np.uint64(1)) * GOLDEN)


def uniforms_at(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles for explicit ``(key, counter)`` pairs (broadcasting)."""
    bits = mix64(keys + (np.asarray(counters, dtype=np.uint64) + np.uint64(1)) * GOLDEN)
    return (bits >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53


class Streams:
    """A set of per-trajectory streams with independent draw counters.

    ``random(rows, k)`` returns ``k`` uniforms for each selected row and
    advances only those rows' counters. Row selection lets a vectorized
    engine draw for the subset of trajectories that actually need a number
    (e.g. only the ones that just jumped) without disturbing the others.
    """

    def __init__(self, master_seed: int, indices, lane: int = LANE_DYNAMICS):
        self.master_seed = int(master_seed) % 2**64
        self.indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        self.lane = lane
        self.keys = stream_keys(self.master_seed, self.indices, lane)
        self.counters = np.zeros(self.indices.shape[0], dtype=np.uint64)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def random(self, rows=None, k: int | None = None) -> np.ndarray:
        if rows is None:
            rows = slice(None)
        keys = self.keys[rows]
        start = self.counters[rows]
        if k is None:
            out = uniforms_at(keys, start)
            self.counters[rows] = start + np.uint64(1)
            return out
        offs = np.arange(k, dtype=np.uint64)
        out = uniforms_at(keys[:, None], start[:, None] + offs[None, :])
        self.counters[rows] = start + np.uint64(k)
        return out

    def gaussian_pairs(self, rows=None, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Two independent standard normal arrays of shape (rows, k)."""
        u = self.random(rows, 2 * k)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0::2]))
        angle = 2.0 * np.pi * u[:, 1::2]
        return radius * np.cos(angle), radius * np.sin(angle)


def trajectory_stream(master_seed: int, index: int, lane: int = LANE_DYNAMICS) -> Streams:
    """Stream of a single trajectory, as used inside ensembles."""
    return Streams(master_seed, [index], lane)


def describe() -> dict:
    """Machine-readable description of the stream derivation, for run manifests."""
    return {
        "algorithm": ALGORITHM,
        "golden": hex(int(GOLDEN)),
        "lane_stride": hex(int(LANE_STRIDE)),
        "root": "mix(master_seed + golden)",
        "key": "mix(root ^ (lane * lane_stride) + (index + 1) * golden)",
        "draw": "mix(key + (counter + 1) * golden) >> 11, scaled by 2**-53",
        "gaussian": "Box-Muller on consecutive uniforms (u1, u2): sqrt(-2 ln(1-u1)) * (cos, sin)(2 pi u2)",
        "lanes": {"dynamics": LANE_DYNAMICS, "initial_state": LANE_INITIAL},
    }
