"""Dense float32 tensor helpers, deterministic RNG streams, and the TNS file format.

Tensors are plain numpy arrays stored as float32. Reductions that feed reports
accumulate in float64 with a fixed summation order so repeated runs are
byte-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TnsError",
    "RngStream",
    "STREAM_DATA",
    "STREAM_INIT",
    "STREAM_TRAIN",
    "STREAM_TRIALS",
    "astensor",
    "matmul",
    "l1_norm",
    "channel_minmax",
    "rng_normal",
    "read_tns",
    "write_tns",
]

# Stream ids hang off a single root seed; parallel trials use STREAM_TRIALS + i.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_TRIALS = 3

TNS_MAGIC = b"TNSR"
TNS_VERSION = 1
TNS_DTYPE_F32 = 0


class TnsError(Exception):
    """Malformed TNS file: bad magic, version, dtype code, or payload size."""


def astensor(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a float32 ndarray, rejecting NaN/Inf."""
    a = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def matmul(x, w) -> np.ndarray:
    """Matrix product with float64 accumulation and fixed summation order."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch: {tuple(x.shape)} vs {tuple(w.shape)}")
    # einsum (optimize off) keeps ascending-k summation; BLAS order is not pinned.
    y = np.einsum("ik,kj->ij", x.astype(np.float64), w.astype(np.float64))
    return y.astype(np.float32)


def l1_norm(x) -> float:
    """Sum of absolute values, accumulated in float64."""
    return float(np.sum(np.abs(np.asarray(x, dtype=np.float64))))


def channel_minmax(w, axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (axis="out") or per-row (axis="in") minima and maxima."""
    w = np.asarray(w)
    if w.ndim != 2:
        raise ValueError(f"channel_minmax needs a rank-2 tensor, got rank {w.ndim}")
    if axis == "out":
        return w.min(axis=0), w.max(axis=0)
    if axis == "in":
        return w.min(axis=1), w.max(axis=1)
    raise ValueError(f"axis must be 'in' or 'out', got {axis!r}")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream_id) fully determines the output."""

    seed: int
    stream_id: int

    def __post_init__(self):
        for field in ("seed", "stream_id"):
            v = getattr(self, field)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{field} must fit in an unsigned 64-bit value, got {v}")

    def generator(self) -> np.random.Generator:
        """Fresh generator at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))


def rng_normal(stream: RngStream, shape, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
    """Stateless Gaussian draw: the same stream always yields the same tensor."""
    if stddev < 0:
        raise ValueError(f"stddev must be >= 0, got {stddev}")
    g = stream.generator()
    return astensor(g.normal(loc=mean, scale=stddev, size=shape), "rng_normal output")


def write_tns(path, a) -> None:
    """Write a tensor as a TNS file (f32, little-endian, row-major)."""
    # ascontiguousarray would promote rank-0 to rank-1; order="C" keeps rank
    a = np.asarray(a, dtype="<f4", order="C")
    if a.ndim > 255:
        raise ValueError(f"TNS supports at most 255 dims, got {a.ndim}")
    with open(path, "wb") as f:
        f.write(TNS_MAGIC)
        f.write(struct.pack("<BBBB", TNS_VERSION, TNS_DTYPE_F32, a.ndim, 0))
        f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        f.write(a.tobytes())


def read_tns(path) -> np.ndarray:
    """Read a TNS file, rejecting unknown headers and non-finite payloads."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise TnsError(f"{path}: truncated header")
    if raw[:4] != TNS_MAGIC:
        raise TnsError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype, ndim, _pad = struct.unpack("<BBBB", raw[4:8])
    if version != TNS_VERSION:
        raise TnsError(f"{path}: unsupported version {version}")
    if dtype != TNS_DTYPE_F32:
        raise TnsError(f"{path}: unsupported dtype code {dtype}")
    off = 8 + 8 * ndim
    if len(raw) < off:
        raise TnsError(f"{path}: truncated dimension list")
    shape = struct.unpack(f"<{ndim}Q", raw[8:off])
    count = 1
    for d in shape:
        count *= d
    payload = raw[off:]
    if len(payload) != 4 * count:
        raise TnsError(
            f"{path}: payload holds {len(payload)} bytes, shape {shape} needs {4 * count}"
        )
    a = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if not np.all(np.isfinite(a)):
        raise TnsError(f"{path}: payload contains non-finite values")
    return a
