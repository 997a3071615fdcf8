"""Timestep-indexed activation quantizer.

One quantizer object holds T (delta, zero_point) pairs, calibrated
independently per timestep. A batch whose rows belong to arbitrary timesteps
is quantized in a single vectorized pass: row n uses the parameters of its
timestep index, and the result is bit-identical to grouping rows by timestep
and quantizing each group with plain per-tensor parameters.

Timesteps are 1-indexed at the API boundary (t in 1..T) and converted to
0-based array positions internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .quantizer import calibrate_maxmin, calibrate_mse, fake_quant

__all__ = ["TemporalQuantParams", "tpq_init", "tpq_quantize", "check_index"]


@dataclass
class TemporalQuantParams:
    """Per-timestep activation quantizer parameters.

    ``zero_point`` entries are integers after calibration; the trainer keeps
    real-valued copies while learning and rounds them back at export, so this
    container only insists on finiteness and positive deltas.
    """

    T: int
    bits: int
    delta: np.ndarray
    zero_point: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.zero_point = np.asarray(self.zero_point, dtype=np.float64)
        if self.delta.shape != (self.T,) or self.zero_point.shape != (self.T,):
            raise ValueError(
                f"delta/zero_point must have shape ({self.T},), got"
                f" {self.delta.shape} and {self.zero_point.shape}"
            )
        if not np.all(self.delta > 0):
            raise ValueError("every per-timestep delta must be positive")
        if not (np.all(np.isfinite(self.delta)) and np.all(np.isfinite(self.zero_point))):
            raise ValueError("per-timestep parameters must be finite")

    def to_json(self) -> str:
        doc = {
            "T": self.T,
            "bits": self.bits,
            "delta": self.delta.tolist(),
            "zero_point": self.zero_point.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TemporalQuantParams":
        doc = json.loads(text)
        return cls(
            T=doc["T"], bits=doc["bits"], delta=doc["delta"], zero_point=doc["zero_point"]
        )


def check_index(idx, T: int, n_rows: int | None = None) -> np.ndarray:
    """Validate a 1-indexed timestep vector; returns it as an int64 array."""
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ValueError(f"timestep index must be a vector, got rank {idx.ndim}")
    if idx.size and not np.all(idx == np.floor(idx)):
        raise ValueError("timestep indices must be integers")
    idx = idx.astype(np.int64)
    if idx.size and (idx.min() < 1 or idx.max() > T):
        raise ValueError(
            f"timestep indices must lie in [1, {T}], got range"
            f" [{idx.min()}, {idx.max()}]"
        )
    if n_rows is not None and idx.shape[0] != n_rows:
        raise ValueError(f"index length {idx.shape[0]} does not match {n_rows} rows")
    return idx


def tpq_init(x_per_step, bits: int, method: str = "maxmin") -> TemporalQuantParams:
    """Calibrate one (delta, zero_point) pair per timestep.

    ``x_per_step`` is a length-T sequence of calibration tensors, one per
    timestep, each calibrated independently with per-tensor granularity.
    """
    T = len(x_per_step)
    if T < 1:
        raise ValueError("need at least one timestep")
    if method not in ("maxmin", "mse"):
        raise ValueError(f"method must be 'maxmin' or 'mse', got {method!r}")
    delta = np.empty(T, dtype=np.float64)
    zero = np.empty(T, dtype=np.float64)
    for t, xt in enumerate(x_per_step, start=1):
        xt = np.asarray(xt)
        if xt.size == 0:
            raise ValueError(f"empty calibration set for timestep {t}")
        if method == "maxmin":
            q = calibrate_maxmin(xt, bits)
        else:
            q = calibrate_mse(xt, bits)
        delta[t - 1] = q.delta
        zero[t - 1] = q.zero_point
    return TemporalQuantParams(T=T, bits=bits, delta=delta, zero_point=zero)


def tpq_quantize(x, idx, q: TemporalQuantParams) -> np.ndarray:
    """Quantize a mixed-timestep batch in one pass.

    Row n of ``x`` is quantized with (delta[idx[n]], zero_point[idx[n]]). The
    lookup broadcasts per-row parameters over channels and reuses the shared
    quantize kernel, so the result matches the per-timestep grouped loop
    bit for bit.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"tpq_quantize needs a rank-2 batch, got rank {x.ndim}")
    idx = check_index(idx, q.T, x.shape[0])
    d = q.delta[idx - 1][:, None]
    z = q.zero_point[idx - 1][:, None]
    return fake_quant(x, d, z, q.bits)
