"""Uniform asymmetric fake quantization, calibration, and error reporting.

The quantizer maps a real tensor onto a b-bit integer grid and back:

    Q(x) = delta * (clip(round(x / delta) + z, 0, 2^b - 1) - z)

with round-half-to-even. ``delta`` and ``z`` come either from tensor extremes
(Max-Min: the grid spans [min, max] exactly, so nothing clips) or from a grid
search that shrinks the range symmetrically to minimize squared error (MSE).

Error reporting splits the value-level L1 error into the part caused by
clipping (elements whose integer image falls outside the grid) and the part
caused by rounding, and evaluates the product-level error bound

    ||XW - Q(X)Q(W)||_1 <= ||X||_1 ||W - Q(W)||_1
                           + ||X - Q(X)||_1 (||W||_1 + ||W - Q(W)||_1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorops import channel_minmax

__all__ = [
    "QuantParams",
    "ErrorReport",
    "ERROR_CSV_HEADER",
    "calibrate_maxmin",
    "calibrate_mse",
    "quantize",
    "error_decompose",
    "error_bound",
]

PER_TENSOR = "per-tensor"
PER_CHANNEL = "per-channel"

ERROR_CSV_HEADER = "layer,total_error,bound_rhs,round_error,clip_error,clip_share"


def fake_quant(x, delta, zero_point, bits: int) -> np.ndarray:
    """Shared quantize-dequantize kernel.

    Computes in float64 and returns float32. ``delta``/``zero_point`` may be
    scalars or arrays already broadcast against ``x``; every caller (per-tensor,
    per-channel, per-timestep) funnels through this one kernel so mixed
    granularities stay bit-identical to their grouped equivalents.
    """
    xf = np.asarray(x, dtype=np.float64)
    d = np.asarray(delta, dtype=np.float64)
    z = np.asarray(zero_point, dtype=np.float64)
    qmax = float(2**bits - 1)
    x_int = np.rint(xf / d + z)
    x_clip = np.clip(x_int, 0.0, qmax)
    return ((x_clip - z) * d).astype(np.float32)


@dataclass(frozen=True)
class QuantParams:
    """Asymmetric quantizer parameters.

    ``delta`` and ``zero_point`` are rank-0 arrays for per-tensor granularity or
    length-C_o vectors for per-channel. Zero-points are integer-valued here;
    the training path keeps its own real-valued copies and rounds at export.
    """

    bits: int
    delta: np.ndarray
    zero_point: np.ndarray
    granularity: str = PER_TENSOR

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if self.granularity not in (PER_TENSOR, PER_CHANNEL):
            raise ValueError(f"unknown granularity {self.granularity!r}")
        d = np.asarray(self.delta, dtype=np.float64)
        z = np.asarray(self.zero_point, dtype=np.float64)
        if self.granularity == PER_TENSOR:
            if d.ndim != 0 or z.ndim != 0:
                raise ValueError("per-tensor params need scalar delta and zero_point")
        else:
            if d.ndim != 1 or z.shape != d.shape:
                raise ValueError("per-channel params need matching rank-1 delta and zero_point")
        if not np.all(d > 0):
            raise ValueError("delta must be positive in every lane")
        if not np.all(z == np.rint(z)):
            raise ValueError("zero_point must be integer-valued")
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "zero_point", z)


def _maxmin_from_extremes(mn: np.ndarray, mx: np.ndarray, bits: int):
    """delta/zero from extremes; a degenerate lane (max == min == c) gets
    delta = 1, z = round(-c), which reproduces integer constants exactly."""
    mn = np.asarray(mn, dtype=np.float64)
    mx = np.asarray(mx, dtype=np.float64)
    qmax = float(2**bits - 1)
    degenerate = mx == mn
    delta = np.where(degenerate, 1.0, (mx - mn) / qmax)
    zero = np.rint(-mn / delta)
    return delta, zero


def calibrate_maxmin(x, bits: int, granularity: str = PER_TENSOR) -> QuantParams:
    """Calibrate from tensor extremes: delta = (max - min) / (2^b - 1),
    z = round(-min / delta). z is not clipped to the grid.

    Per-channel granularity treats ``x`` as a C_i x C_o weight and calibrates
    each column independently.
    """
    x = np.asarray(x)
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    if granularity == PER_TENSOR:
        mn, mx = np.float64(x.min()), np.float64(x.max())
    elif granularity == PER_CHANNEL:
        mn, mx = channel_minmax(x, "out")
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    delta, zero = _maxmin_from_extremes(mn, mx, bits)
    return QuantParams(bits=bits, delta=delta, zero_point=zero, granularity=granularity)


def _mse_search_1d(x64: np.ndarray, bits: int, grid_points: int):
    """Grid search over symmetric range-shrink factors alpha in [0.01, 1.0].

    The candidate range keeps the Max-Min midpoint and shrinks the width to
    alpha times the original; ties go to the larger alpha, so alpha = 1.0
    (plain Max-Min) wins whenever shrinking does not strictly help.
    """
    mn = float(x64.min())
    mx = float(x64.max())
    if mx == mn:
        return _maxmin_from_extremes(np.float64(mn), np.float64(mx), bits)
    best = None
    for alpha in np.linspace(0.01, 1.0, grid_points):
        cut = (1.0 - alpha) * (mx - mn) / 2.0
        delta, zero = _maxmin_from_extremes(
            np.float64(mn + cut), np.float64(mx - cut), bits
        )
        xq = fake_quant(x64, delta, zero, bits).astype(np.float64)
        err = float(np.mean((x64 - xq) ** 2))
        if best is None or err <= best[0]:
            best = (err, delta, zero)
    return best[1], best[2]


def calibrate_mse(
    x, bits: int, granularity: str = PER_TENSOR, grid_points: int = 100
) -> QuantParams:
    """Calibrate by minimizing mean squared reconstruction error over a linear
    grid of symmetric range shrinks. The achieved error never exceeds the
    Max-Min error because alpha = 1.0 is in the grid."""
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    if grid_points < 2:
        raise ValueError(f"grid_points must be >= 2, got {grid_points}")
    x64 = np.asarray(x, dtype=np.float64)
    if granularity == PER_TENSOR:
        delta, zero = _mse_search_1d(x64.ravel(), bits, grid_points)
    elif granularity == PER_CHANNEL:
        if x64.ndim != 2:
            raise ValueError("per-channel calibration needs a rank-2 tensor")
        cols = [_mse_search_1d(x64[:, j], bits, grid_points) for j in range(x64.shape[1])]
        delta = np.array([c[0] for c in cols], dtype=np.float64)
        zero = np.array([c[1] for c in cols], dtype=np.float64)
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    return QuantParams(bits=bits, delta=delta, zero_point=zero, granularity=granularity)


def _broadcast_params(x: np.ndarray, q: QuantParams):
    if q.granularity == PER_TENSOR:
        return q.delta, q.zero_point
    if x.ndim != 2 or x.shape[1] != q.delta.shape[0]:
        raise ValueError(
            f"per-channel params for {q.delta.shape[0]} channels do not fit"
            f" tensor of shape {tuple(x.shape)}"
        )
    return q.delta[None, :], q.zero_point[None, :]


def quantize(x, q: QuantParams) -> np.ndarray:
    """Fake-quantize ``x``: round to the grid, clip, and dequantize."""
    x = np.asarray(x)
    d, z = _broadcast_params(x, q)
    return fake_quant(x, d, z, q.bits)


@dataclass
class ErrorReport:
    """Per-layer error record.

    ``round_error`` and ``clip_error`` are value-level L1 sums; they partition
    the value-level error exactly by construction. For product-level reports
    (error_bound) ``total_error`` is ||XW - Q(X)Q(W)||_1, ``bound_rhs`` the
    bound's right-hand side, and ``bound_terms`` its three summands; for plain
    decomposition reports the bound fields stay None and ``total_error`` is
    the value-level L1 error.
    """

    total_error: float
    round_error: float
    clip_error: float
    clip_share: float
    bound_rhs: float | None = None
    bound_terms: tuple[float, float, float] | None = None
    layer: str = ""

    def csv_row(self) -> str:
        rhs = "" if self.bound_rhs is None else repr(float(self.bound_rhs))
        return (
            f"{self.layer},{float(self.total_error)!r},{rhs},"
            f"{float(self.round_error)!r},{float(self.clip_error)!r},"
            f"{float(self.clip_share)!r}"
        )


def error_decompose(x, q: QuantParams) -> ErrorReport:
    """Split ||x - Q(x)||_1 into clip and round contributions.

    An element contributes to the clip part when round(x/delta) + z lands
    outside [0, 2^b - 1]; everything else is rounding error.
    """
    x64 = np.asarray(x, dtype=np.float64)
    d, z = _broadcast_params(x64, q)
    qmax = float(2**q.bits - 1)
    x_int = np.rint(x64 / np.asarray(d, dtype=np.float64) + np.asarray(z, dtype=np.float64))
    outside = (x_int < 0.0) | (x_int > qmax)
    err = np.abs(x64 - quantize(x64, q).astype(np.float64))
    clip_error = float(err[outside].sum())
    round_error = float(err[~outside].sum())
    total = clip_error + round_error
    share = clip_error / total if total > 0.0 else 0.0
    return ErrorReport(
        total_error=total, round_error=round_error, clip_error=clip_error, clip_share=share
    )


def error_bound(x, w, qx: QuantParams, qw: QuantParams) -> ErrorReport:
    """Evaluate both sides of the product error bound.

    total_error (LHS) = ||XW - Q(X)Q(W)||_1; bound_rhs (RHS) sums the three
    terms ||X||_1 ||W - Q(W)||_1, ||X - Q(X)||_1 ||W||_1 and
    ||X - Q(X)||_1 ||W - Q(W)||_1. The round/clip fields combine the X and W
    value-level splits so one report row carries both views.
    """
    x64 = np.asarray(x, dtype=np.float64)
    w64 = np.asarray(w, dtype=np.float64)
    if x64.ndim != 2 or w64.ndim != 2 or x64.shape[1] != w64.shape[0]:
        raise ValueError(f"error_bound shape mismatch: {tuple(x64.shape)} vs {tuple(w64.shape)}")
    xq = quantize(x64, qx).astype(np.float64)
    wq = quantize(w64, qw).astype(np.float64)
    prod = np.einsum("ik,kj->ij", x64, w64)
    prod_q = np.einsum("ik,kj->ij", xq, wq)
    lhs = float(np.sum(np.abs(prod - prod_q)))
    nx = float(np.sum(np.abs(x64)))
    nw = float(np.sum(np.abs(w64)))
    ex = float(np.sum(np.abs(x64 - xq)))
    ew = float(np.sum(np.abs(w64 - wq)))
    t1 = nx * ew
    t2 = ex * nw
    t3 = ex * ew
    dx = error_decompose(x64, qx)
    dw = error_decompose(w64, qw)
    round_error = dx.round_error + dw.round_error
    clip_error = dx.clip_error + dw.clip_error
    value_total = round_error + clip_error
    share = clip_error / value_total if value_total > 0.0 else 0.0
    return ErrorReport(
        total_error=lhs,
        round_error=round_error,
        clip_error=clip_error,
        clip_share=share,
        bound_rhs=t1 + t2 + t3,
        bound_terms=(t1, t2, t3),
    )
