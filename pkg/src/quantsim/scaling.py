"""Equivalent per-in-channel scaling: none, SmoothQuant-style, and weight dilation.

All three policies produce a positive vector ``s`` over in-channels and apply

    x' = x / s (per column),   w' = s * w (per row),

which leaves the product x @ w unchanged. They differ in how ``s`` is chosen:

* none: s = 1 everywhere.
* smoothquant: s_i balances activation and weight magnitudes,
  s_i = max(1, max|X_i|^alpha / max|W_[i,:]|^(1-alpha)); the floor keeps
  activations from growing and can be dropped for baseline comparisons.
* weight dilation (wd): rows that attain no per-column extreme get the largest
  s_i that keeps every scaled entry inside its column's [min, max] envelope,
  so per-out-channel quantization ranges are provably preserved while the
  matching activation channels shrink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .quantizer import PER_CHANNEL, calibrate_maxmin
from .tensorops import channel_minmax

__all__ = [
    "CLAMP",
    "ScalingPlan",
    "EffectStats",
    "EFFECT_CSV_HEADER",
    "identity_plan",
    "wd_plan",
    "smoothquant_plan",
    "apply_scaling",
    "wd_effect_stats",
]

# Magnitude floor used inside dilation ratios: avoids division by zero and sign
# flips without ever mutating stored weights.
CLAMP = 1e-5

EFFECT_CSV_HEADER = "layer,prop_s_gt_1,dx_ratio,dw_ratio"


@dataclass
class ScalingPlan:
    """Per-in-channel scaling decision.

    ``saturated`` holds the in-channel indices that attain some column extreme
    (these keep s = 1 under dilation); ``w_max``/``w_min`` are the per-column
    extremes the plan promises to preserve. ``s1``/``s2`` are the positive-side
    and negative-side per-row candidates (inf when a row has no entry of that
    sign); they are kept for inspection and are None for non-dilation plans.
    """

    s: np.ndarray
    saturated: np.ndarray
    w_max: np.ndarray
    w_min: np.ndarray
    s1: np.ndarray | None = field(default=None, repr=False)
    s2: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.saturated = np.asarray(self.saturated, dtype=np.int64)
        self.w_max = np.asarray(self.w_max, dtype=np.float64)
        self.w_min = np.asarray(self.w_min, dtype=np.float64)
        if self.s.ndim != 1:
            raise ValueError("s must be a vector")
        if not np.all(np.isfinite(self.s)) or not np.all(self.s > 0):
            raise ValueError("s must be strictly positive and finite")

    def to_json(self) -> str:
        doc = {
            "s": self.s.tolist(),
            "saturated": self.saturated.tolist(),
            "w_max": self.w_max.tolist(),
            "w_min": self.w_min.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScalingPlan":
        doc = json.loads(text)
        return cls(
            s=doc["s"], saturated=doc["saturated"], w_max=doc["w_max"], w_min=doc["w_min"]
        )


def identity_plan(w) -> ScalingPlan:
    """The no-op policy: s = 1 for every in-channel."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"identity_plan needs a rank-2 weight, got rank {w.ndim}")
    w_min, w_max = channel_minmax(w, "out")
    return ScalingPlan(
        s=np.ones(w.shape[0]), saturated=np.arange(0), w_max=w_max, w_min=w_min
    )


def wd_plan(w) -> ScalingPlan:
    """Weight dilation.

    Rows attaining any column max or min (all ties included) are saturated and
    keep s = 1. Every other row k gets

        s_k = min( min over positive entries of w_max[j] / w[k,j],
                   min over negative entries of w_min[j] / w[k,j] )

    with both numerator and denominator magnitude-clamped at 1e-5 inside the
    ratio. Zero entries impose no constraint (a scaled zero stays zero, which
    the column envelope already contains). A row with no usable entries in
    either sign keeps s = 1.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"wd_plan needs a rank-2 weight, got rank {w.ndim}")
    w_min, w_max = channel_minmax(w, "out")
    sat_mask = ((w == w_max[None, :]) | (w == w_min[None, :])).any(axis=1)

    pos = w > 0
    neg = w < 0
    # Dense ratios with clamped operands; lanes of the wrong sign are masked to
    # +inf before the row-wise min, so their (finite, meaningless) values never
    # participate.
    ratio_pos = np.where(
        pos, np.maximum(w_max, CLAMP)[None, :] / np.maximum(w, CLAMP), np.inf
    )
    ratio_neg = np.where(
        neg, np.minimum(w_min, -CLAMP)[None, :] / np.minimum(w, -CLAMP), np.inf
    )
    s1 = ratio_pos.min(axis=1)
    s2 = ratio_neg.min(axis=1)
    s = np.minimum(s1, s2)
    s[~np.isfinite(s)] = 1.0  # all-zero row: nothing to dilate
    s[sat_mask] = 1.0
    return ScalingPlan(
        s=s,
        saturated=np.flatnonzero(sat_mask),
        w_max=w_max,
        w_min=w_min,
        s1=s1,
        s2=s2,
    )


def smoothquant_plan(x_stats, w, alpha: float, floor: bool = True) -> ScalingPlan:
    """Activation/weight magnitude smoothing.

    ``x_stats`` is the per-in-channel max-abs of the activations. With
    ``floor`` (the default) s is clamped at 1 so activations never grow;
    ``floor=False`` gives the textbook unfloored rule. The saturated set is
    empty: this policy makes no range-preservation promise.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"smoothquant_plan needs a rank-2 weight, got rank {w.ndim}")
    x_stats = np.asarray(x_stats, dtype=np.float64)
    if x_stats.shape != (w.shape[0],):
        raise ValueError(
            f"x_stats length {x_stats.shape} does not match {w.shape[0]} in-channels"
        )
    if np.any(x_stats < 0):
        raise ValueError("x_stats must be nonnegative max-abs values")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    w_absmax = np.abs(w).max(axis=1)
    s = np.maximum(x_stats, CLAMP) ** alpha / np.maximum(w_absmax, CLAMP) ** (1.0 - alpha)
    if floor:
        s = np.maximum(s, 1.0)
    w_min, w_max = channel_minmax(w, "out")
    return ScalingPlan(s=s, saturated=np.arange(0), w_max=w_max, w_min=w_min)


def apply_scaling(x, w, plan: ScalingPlan):
    """Divide activation columns and multiply weight rows by s.

    Returns float32 (x', w'). The matrix product is preserved up to floating
    error; with s = 1 both tensors come back bit-identical.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    s = plan.s
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError("apply_scaling needs rank-2 activation and weight tensors")
    if x.shape[1] != s.shape[0] or w.shape[0] != s.shape[0]:
        raise ValueError(
            f"plan covers {s.shape[0]} in-channels; got x {tuple(x.shape)}, w {tuple(w.shape)}"
        )
    if not np.all(np.isfinite(s)) or not np.all(s > 0):
        raise ValueError("s must be strictly positive and finite")
    x2 = (x.astype(np.float64) / s[None, :]).astype(np.float32)
    w2 = (w.astype(np.float64) * s[:, None]).astype(np.float32)
    return x2, w2


@dataclass
class EffectStats:
    """What scaling did to quantization ranges for one layer."""

    prop_s_gt_1: float
    dx_ratio: float
    dw_ratio: float
    dw_ratio_channels: np.ndarray = field(repr=False, default=None)
    layer: str = ""

    def csv_row(self) -> str:
        return (
            f"{self.layer},{float(self.prop_s_gt_1)!r},"
            f"{float(self.dx_ratio)!r},{float(self.dw_ratio)!r}"
        )


def wd_effect_stats(x, w, plan: ScalingPlan, bits: int) -> EffectStats:
    """Report the range effects of a plan at a given bit-width.

    * prop_s_gt_1: fraction of in-channels with s > 1.
    * dx_ratio: layer-wise Max-Min delta of x' over that of x.
    * dw_ratio: mean over out-channels of the per-channel Max-Min delta ratio
      of w' over w (per-channel values in ``dw_ratio_channels``).
    """
    x2, w2 = apply_scaling(x, w, plan)
    prop = float(np.mean(plan.s > 1.0))
    dx = float(calibrate_maxmin(x, bits).delta)
    dx2 = float(calibrate_maxmin(x2, bits).delta)
    dw = calibrate_maxmin(np.asarray(w), bits, PER_CHANNEL).delta
    dw2 = calibrate_maxmin(w2, bits, PER_CHANNEL).delta
    channels = dw2 / dw
    return EffectStats(
        prop_s_gt_1=prop,
        dx_ratio=dx2 / dx,
        dw_ratio=float(channels.mean()),
        dw_ratio_channels=channels,
    )
