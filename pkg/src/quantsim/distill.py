"""Block-wise distillation of quantized blocks against full-precision targets.

Each block of the quantized model trains to match the output of its frozen
full-precision counterpart under MSE loss. Trainables per layer: the weights
(and biases), the per-out-channel weight step sizes, and the per-timestep
activation step sizes and zero-points. Weight zero-points stay fixed at their
calibrated integer values; activation zero-points train as real numbers and
round to integers at export.

Gradient rules through the quantizer (the only non-smooth part):

* rounding passes gradients straight through inside the clip range and blocks
  them outside (derivative 1 inside, 0 outside);
* a step size delta receives (round(t) - t) per element inside the range and
  (clip_bound - z) outside, where t = x/delta + z;
* a zero-point receives 0 inside the range and -delta on clipped elements.

Everything runs in float64; the float32 storage boundary is at block inputs
and outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BlockSpec, Model, act_forward, act_grad, block_forward_fp
from .quantizer import PER_CHANNEL, QuantParams
from .temporal import TemporalQuantParams, check_index

__all__ = [
    "NumericalError",
    "LayerState",
    "TrainConfig",
    "TrainResult",
    "init_layer_state",
    "export_layer_state",
    "block_forward_q",
    "bkd_loss",
    "bkd_backward",
    "bkd_train",
]


class NumericalError(RuntimeError):
    """Raised when training hits a non-finite loss."""


DELTA_FLOOR = 1e-8  # step sizes are projected back above this after each update


@dataclass
class LayerState:
    """Trainable state of one quantized linear layer."""

    spec_act: str
    bits_w: int
    bits_a: int
    T: int
    w: np.ndarray  # (C_i, C_o) float64, trainable
    b: np.ndarray | None  # (C_o,) float64, trainable
    s: np.ndarray  # (C_i,) float64, fixed input divisor from the scaling plan
    wd: np.ndarray  # (C_o,) weight delta, trainable
    wz: np.ndarray  # (C_o,) weight zero-point, fixed integers
    ad: np.ndarray  # (T,) activation delta per timestep, trainable
    az: np.ndarray  # (T,) activation zero-point per timestep, trainable reals


def init_layer_state(
    layer_act: str,
    w,
    b,
    s,
    aq: TemporalQuantParams,
    wq: QuantParams,
) -> LayerState:
    """Copy calibrated parameters into trainable float64 state."""
    w = np.asarray(w, dtype=np.float64).copy()
    c_out = w.shape[1]
    if wq.granularity == PER_CHANNEL:
        wd = wq.delta.astype(np.float64).copy()
        wz = wq.zero_point.astype(np.float64).copy()
    else:
        wd = np.full(c_out, float(wq.delta), dtype=np.float64)
        wz = np.full(c_out, float(wq.zero_point), dtype=np.float64)
    return LayerState(
        spec_act=layer_act,
        bits_w=wq.bits,
        bits_a=aq.bits,
        T=aq.T,
        w=w,
        b=None if b is None else np.asarray(b, dtype=np.float64).copy(),
        s=np.asarray(s, dtype=np.float64).copy(),
        wd=wd,
        wz=wz,
        ad=aq.delta.astype(np.float64).copy(),
        az=aq.zero_point.astype(np.float64).copy(),
    )


def export_layer_state(L: LayerState) -> tuple[np.ndarray, np.ndarray | None, TemporalQuantParams, QuantParams]:
    """Deployable view: float32 weights, integer zero-points."""
    w = L.w.astype(np.float32)
    b = None if L.b is None else L.b.astype(np.float32)
    aq = TemporalQuantParams(T=L.T, bits=L.bits_a, delta=L.ad.copy(), zero_point=np.rint(L.az))
    wq = QuantParams(
        bits=L.bits_w, delta=L.wd.copy(), zero_point=L.wz.copy(), granularity=PER_CHANNEL
    )
    return w, b, aq, wq


def _exported_layers(layers: list[LayerState]) -> list[LayerState]:
    out = []
    for L in layers:
        w, b, aq, wq = export_layer_state(L)
        out.append(init_layer_state(L.spec_act, w, b, L.s, aq, wq))
    return out


def _layer_forward(L: LayerState, h: np.ndarray, idx0: np.ndarray, cache: list | None):
    """One quantized layer in float64; optionally records what backward needs."""
    qmax_a = float(2**L.bits_a - 1)
    qmax_w = float(2**L.bits_w - 1)

    u = h / L.s[None, :]
    d = L.ad[idx0][:, None]
    z = L.az[idx0][:, None]
    t = u / d + z
    i = np.rint(t)
    in_a = (i >= 0.0) & (i <= qmax_a)
    ic = np.clip(i, 0.0, qmax_a)
    uq = (ic - z) * d

    tw = L.w / L.wd[None, :] + L.wz[None, :]
    iw = np.rint(tw)
    in_w = (iw >= 0.0) & (iw <= qmax_w)
    iwc = np.clip(iw, 0.0, qmax_w)
    wq = (iwc - L.wz[None, :]) * L.wd[None, :]

    y = np.einsum("ni,ij->nj", uq, wq)
    if L.b is not None:
        y = y + L.b[None, :]
    a = act_forward(L.spec_act, y)
    if cache is not None:
        cache.append(
            dict(
                d=d, z=z, t=t, i=i, in_a=in_a, ic=ic, uq=uq,
                tw=tw, iw=iw, in_w=in_w, iwc=iwc, wq=wq, y=y,
            )
        )
    return a


def _forward(layers: list[LayerState], x, idx, cache: list | None = None) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"block input must be rank 2, got rank {h.ndim}")
    idx0 = check_index(idx, layers[0].T, h.shape[0]) - 1
    for L in layers:
        h = _layer_forward(L, h, idx0, cache)
    return h


def block_forward_q(layers: list[LayerState], x, idx) -> np.ndarray:
    """Quantized forward through one block (float32 out)."""
    return _forward(layers, x, idx).astype(np.float32)


def _backward(layers: list[LayerState], caches: list, idx0: np.ndarray, g_out: np.ndarray):
    """Reverse pass; returns one grad dict per layer (keys w, b, wd, ad, az)."""
    grads = [None] * len(layers)
    g = g_out
    for li in range(len(layers) - 1, -1, -1):
        L = layers[li]
        c = caches[li]
        g_y = g * act_grad(L.spec_act, c["y"])
        g_b = g_y.sum(axis=0) if L.b is not None else None
        g_uq = np.einsum("nj,ij->ni", g_y, c["wq"])
        g_wq = np.einsum("ni,nj->ij", c["uq"], g_y)

        # weight quantizer: straight-through for w, step-size rule for wd
        g_w = g_wq * c["in_w"]
        dq_dwd = np.where(c["in_w"], c["iw"] - c["tw"], c["iwc"] - L.wz[None, :])
        g_wd = (g_wq * dq_dwd).sum(axis=0)

        # activation quantizer: per-timestep scatter via bincount
        dq_dad = np.where(c["in_a"], c["i"] - c["t"], c["ic"] - c["z"])
        g_ad = np.bincount(idx0, weights=(g_uq * dq_dad).sum(axis=1), minlength=L.T)
        dq_daz = np.where(c["in_a"], 0.0, -c["d"])
        g_az = np.bincount(idx0, weights=(g_uq * dq_daz).sum(axis=1), minlength=L.T)

        grads[li] = dict(w=g_w, b=g_b, wd=g_wd, ad=g_ad, az=g_az)
        g = (g_uq * c["in_a"]) / L.s[None, :]
    return grads


def discretization_signature(layers: list[LayerState], x, idx) -> bytes:
    """Byte string identifying every rounding/clipping decision of a forward
    pass; finite-difference checks compare it across perturbed evaluations to
    stay away from rounding boundaries."""
    cache: list = []
    _forward(layers, x, idx, cache)
    parts = []
    for c in cache:
        parts.append(c["iw"].tobytes())
        parts.append(c["i"].tobytes())
    return b"".join(parts)


def bkd_loss(
    block: BlockSpec, fp_weights, fp_biases, layers: list[LayerState], x, idx
) -> float:
    """MSE between the frozen FP block and the quantized block on one batch."""
    scales = [L.s for L in layers]
    fp = block_forward_fp(block, fp_weights, fp_biases, x, scales).astype(np.float64)
    qq = _forward(layers, x, idx)
    return float(np.mean((fp - qq) ** 2))


def loss_and_grads(layers: list[LayerState], x, idx, target):
    """MSE against a precomputed target plus gradients for every trainable."""
    x64 = np.asarray(x, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    idx0 = check_index(idx, layers[0].T, x64.shape[0]) - 1
    cache: list = []
    out = _forward(layers, x64, idx, cache)
    diff = out - tgt
    loss = float(np.mean(diff**2))
    g_out = (2.0 / diff.size) * diff
    grads = _backward(layers, cache, idx0, g_out)
    return loss, grads


def bkd_backward(
    block: BlockSpec, fp_weights, fp_biases, layers: list[LayerState], x, idx
):
    """Loss and gradients with the FP block output as the target."""
    scales = [L.s for L in layers]
    target = block_forward_fp(block, fp_weights, fp_biases, x, scales)
    return loss_and_grads(layers, x, idx, target)


@dataclass
class TrainConfig:
    iters: int = 500
    batch_size: int = 32
    lr_qparams: float = 1e-4
    lr_weights: float = 1e-2
    input_source: str = "quantized"  # block inputs from quantized or fp predecessors
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.input_source not in ("quantized", "fp"):
            raise ValueError(f"input_source must be 'quantized' or 'fp', got {self.input_source!r}")


@dataclass
class TrainResult:
    layers: list  # trained LayerState lists, one per block (real-valued az)
    exported: list  # same states with zero-points rounded at export
    history: list  # (step, block, loss) rows, step counted per block
    pre_mse: list  # per-block MSE with every block at its calibrated state
    post_mse: list  # per-block MSE with every block trained and exported
    nan_event: str | None = None


def _adam_step(opt: dict, key, value: np.ndarray, grad: np.ndarray, lr: float, t: int, cfg: TrainConfig):
    m, v = opt.get(key, (None, None))
    if m is None:
        m = np.zeros_like(value)
        v = np.zeros_like(value)
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad**2
    opt[key] = (m, v)
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    value -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train_block(
    layers: list[LayerState],
    x_pool: np.ndarray,
    idx_pool: np.ndarray,
    target_pool: np.ndarray,
    cfg: TrainConfig,
    gen: np.random.Generator,
    block_no: int,
) -> list[float]:
    """Adam training of one block against fixed targets; returns the per-step
    loss history. Aborts with NumericalError on a non-finite loss."""
    n = x_pool.shape[0]
    opt: dict = {}
    losses = []
    t = 0
    for step in range(1, cfg.iters + 1):
        rows = gen.integers(0, n, size=cfg.batch_size)
        loss, grads = loss_and_grads(
            layers, x_pool[rows], idx_pool[rows], target_pool[rows]
        )
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at block {block_no} step {step}")
        t += 1
        for li, (L, g) in enumerate(zip(layers, grads)):
            _adam_step(opt, (li, "w"), L.w, g["w"], cfg.lr_weights, t, cfg)
            if L.b is not None:
                _adam_step(opt, (li, "b"), L.b, g["b"], cfg.lr_weights, t, cfg)
            _adam_step(opt, (li, "wd"), L.wd, g["wd"], cfg.lr_qparams, t, cfg)
            _adam_step(opt, (li, "ad"), L.ad, g["ad"], cfg.lr_qparams, t, cfg)
            _adam_step(opt, (li, "az"), L.az, g["az"], cfg.lr_qparams, t, cfg)
            np.maximum(L.wd, DELTA_FLOOR, out=L.wd)
            np.maximum(L.ad, DELTA_FLOOR, out=L.ad)
        losses.append(loss)
    return losses


def _chain_mse(model: Model, states: list, x0: np.ndarray, idx, input_source: str):
    """Per-block MSE of the quantized chain against the FP chain."""
    x_fp = x0
    x_q = x0
    mses = []
    for k, blk in enumerate(model.spec.blocks):
        target = block_forward_fp(
            blk, model.weights[k], model.biases[k], x_fp, model.scales[k]
        )
        q_in = x_q if input_source == "quantized" else x_fp
        q_out = block_forward_q(states[k], q_in, idx)
        mses.append(
            float(np.mean((target.astype(np.float64) - q_out.astype(np.float64)) ** 2))
        )
        x_fp = target
        x_q = q_out
    return mses


def bkd_train(
    model: Model,
    x_by_step: list,
    act_params: list,
    weight_params: list,
    cfg: TrainConfig,
    gen: np.random.Generator,
) -> TrainResult:
    """Train every block in order.

    ``x_by_step`` is the length-T list of calibration batches feeding block 1;
    ``act_params[k][j]`` / ``weight_params[k][j]`` are the calibrated
    per-layer quantizer parameters that seed the trainable state. Block k
    trains on inputs from its (already trained) predecessors, quantized or
    full-precision per ``cfg.input_source``, against targets from the frozen
    FP chain.
    """
    T = model.spec.T
    if len(x_by_step) != T:
        raise ValueError(f"expected {T} calibration steps, got {len(x_by_step)}")
    x0 = np.vstack([np.asarray(x, dtype=np.float32) for x in x_by_step])
    idx = np.concatenate(
        [np.full(np.asarray(x).shape[0], t, dtype=np.int64) for t, x in enumerate(x_by_step, start=1)]
    )

    states = []
    for k, blk in enumerate(model.spec.blocks):
        states.append(
            [
                init_layer_state(
                    layer.act,
                    model.weights[k][j],
                    model.biases[k][j],
                    model.scales[k][j],
                    act_params[k][j],
                    weight_params[k][j],
                )
                for j, layer in enumerate(blk.layers)
            ]
        )

    pre_mse = _chain_mse(model, states, x0, idx, cfg.input_source)

    history = []
    x_fp = x0
    x_q = x0
    for k, blk in enumerate(model.spec.blocks):
        target = block_forward_fp(
            blk, model.weights[k], model.biases[k], x_fp, model.scales[k]
        ).astype(np.float64)
        train_in = x_q if cfg.input_source == "quantized" else x_fp
        losses = train_block(
            states[k], np.asarray(train_in, dtype=np.float64), idx, target, cfg, gen, k + 1
        )
        history.extend((step, k + 1, loss) for step, loss in enumerate(losses, start=1))
        x_q = block_forward_q(states[k], train_in, idx)
        x_fp = target.astype(np.float32)

    exported = [_exported_layers(st) for st in states]
    post_mse = _chain_mse(model, exported, x0, idx, cfg.input_source)
    return TrainResult(
        layers=states,
        exported=exported,
        history=history,
        pre_mse=pre_mse,
        post_mse=post_mse,
    )
