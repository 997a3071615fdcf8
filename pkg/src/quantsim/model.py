"""Toy block models: linear+activation stacks, persistence, and FP forwards.

A model is K blocks, each an ordered list of linear layers with optional bias
and an elementwise activation (relu, silu, or none). Dimensions must chain
inside a block and across consecutive blocks. The structure serializes to
JSON; weights and biases go to TNS files next to it (w_b{k}_l{j}.tns,
b_b{k}_l{j}.tns, 1-indexed). A layer may carry a fixed per-in-channel scale
vector ``s`` (from an equivalent-scaling plan); the layer input is divided by
``s`` before anything else, which is also what any attached quantizer sees.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .scaling import ScalingPlan
from .tensorops import astensor, read_tns, write_tns

__all__ = [
    "ACTIVATIONS",
    "LayerSpec",
    "BlockSpec",
    "ModelSpec",
    "Model",
    "act_forward",
    "act_grad",
    "block_forward_fp",
    "save_model",
    "load_model",
]

ACTIVATIONS = ("relu", "silu", "none")


def _sigmoid(y: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    e = np.exp(y[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def act_forward(name: str, y: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(y, 0.0)
    if name == "silu":
        return y * _sigmoid(y)
    if name == "none":
        return y
    raise ValueError(f"unknown activation {name!r}")


def act_grad(name: str, y: np.ndarray) -> np.ndarray:
    """Elementwise derivative evaluated at the pre-activation y."""
    if name == "relu":
        return (y > 0).astype(np.float64)
    if name == "silu":
        sig = _sigmoid(y)
        return sig * (1.0 + y * (1.0 - sig))
    if name == "none":
        return np.ones_like(y)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    bias: bool
    act: str

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")


@dataclass(frozen=True)
class BlockSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a block needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims do not chain inside block: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass(frozen=True)
class ModelSpec:
    T: int
    blocks: tuple[BlockSpec, ...]

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not self.blocks:
            raise ValueError("a model needs at least one block")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for a, b in zip(self.blocks, self.blocks[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"block dims do not chain: {a.out_dim} -> {b.in_dim}"
                )

    def to_json(self) -> str:
        doc = {
            "T": self.T,
            "blocks": [
                {
                    "layers": [
                        {"in": l.in_dim, "out": l.out_dim, "bias": l.bias, "act": l.act}
                        for l in blk.layers
                    ]
                }
                for blk in self.blocks
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        doc = json.loads(text)
        blocks = tuple(
            BlockSpec(
                layers=tuple(
                    LayerSpec(
                        in_dim=l["in"], out_dim=l["out"], bias=l["bias"], act=l["act"]
                    )
                    for l in blk["layers"]
                )
            )
            for blk in doc["blocks"]
        )
        return cls(T=doc["T"], blocks=blocks)


@dataclass
class Model:
    """Structure plus parameters.

    ``weights[k][j]`` is the (in, out) float32 matrix of layer j in block k;
    ``biases[k][j]`` is the (out,) vector or None; ``scales[k][j]`` is the
    per-in-channel divisor applied to the layer input (all ones when no
    scaling plan is attached); ``plans[k][j]`` keeps the originating plan for
    reporting, or None.
    """

    spec: ModelSpec
    weights: list
    biases: list
    scales: list = field(default=None)
    plans: list = field(default=None)

    def __post_init__(self):
        if self.scales is None:
            self.scales = [
                [np.ones(l.in_dim, dtype=np.float64) for l in blk.layers]
                for blk in self.spec.blocks
            ]
        if self.plans is None:
            self.plans = [[None for _ in blk.layers] for blk in self.spec.blocks]
        for k, blk in enumerate(self.spec.blocks):
            for j, l in enumerate(blk.layers):
                w = self.weights[k][j]
                if w.shape != (l.in_dim, l.out_dim):
                    raise ValueError(
                        f"weight b{k + 1} l{j + 1} has shape {tuple(w.shape)},"
                        f" spec says {(l.in_dim, l.out_dim)}"
                    )
                b = self.biases[k][j]
                if l.bias and (b is None or b.shape != (l.out_dim,)):
                    raise ValueError(f"bias b{k + 1} l{j + 1} missing or misshaped")
                if not l.bias and b is not None:
                    raise ValueError(f"bias b{k + 1} l{j + 1} present but spec says none")

    @property
    def n_blocks(self) -> int:
        return len(self.spec.blocks)


def block_forward_fp(block: BlockSpec, weights, biases, x, scales=None) -> np.ndarray:
    """Full-precision forward through one block.

    ``weights``/``biases`` are the per-layer lists; ``scales`` are the fixed
    per-layer input divisors (None means no scaling anywhere). Math runs in
    float64 and the result is returned as float32.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != block.in_dim:
        raise ValueError(
            f"block expects input of width {block.in_dim}, got shape {tuple(h.shape)}"
        )
    for j, layer in enumerate(block.layers):
        if scales is not None:
            h = h / np.asarray(scales[j], dtype=np.float64)[None, :]
        y = np.einsum("ik,kj->ij", h, np.asarray(weights[j], dtype=np.float64))
        if biases[j] is not None:
            y = y + np.asarray(biases[j], dtype=np.float64)[None, :]
        h = act_forward(layer.act, y)
    return h.astype(np.float32)


def save_model(model: Model, out_dir) -> None:
    """Write model.json plus per-layer TNS weight/bias files and plan JSONs."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "model.json"), "w") as f:
        f.write(model.spec.to_json())
        f.write("\n")
    for k, blk in enumerate(model.spec.blocks, start=1):
        for j, layer in enumerate(blk.layers, start=1):
            write_tns(
                os.path.join(out_dir, f"w_b{k}_l{j}.tns"), model.weights[k - 1][j - 1]
            )
            if layer.bias:
                write_tns(
                    os.path.join(out_dir, f"b_b{k}_l{j}.tns"), model.biases[k - 1][j - 1]
                )
            plan = model.plans[k - 1][j - 1]
            if plan is not None:
                with open(os.path.join(out_dir, f"plan_b{k}_l{j}.json"), "w") as f:
                    f.write(plan.to_json())
                    f.write("\n")


def load_model(model_dir) -> Model:
    """Read a model directory written by save_model."""
    with open(os.path.join(model_dir, "model.json")) as f:
        spec = ModelSpec.from_json(f.read())
    weights, biases, scales, plans = [], [], [], []
    for k, blk in enumerate(spec.blocks, start=1):
        wk, bk, sk, pk = [], [], [], []
        for j, layer in enumerate(blk.layers, start=1):
            w = astensor(read_tns(os.path.join(model_dir, f"w_b{k}_l{j}.tns")), "weight")
            wk.append(w)
            if layer.bias:
                bk.append(astensor(read_tns(os.path.join(model_dir, f"b_b{k}_l{j}.tns")), "bias"))
            else:
                bk.append(None)
            plan_path = os.path.join(model_dir, f"plan_b{k}_l{j}.json")
            if os.path.exists(plan_path):
                with open(plan_path) as f:
                    plan = ScalingPlan.from_json(f.read())
                pk.append(plan)
                sk.append(plan.s.copy())
            else:
                pk.append(None)
                sk.append(np.ones(layer.in_dim, dtype=np.float64))
        weights.append(wk)
        biases.append(bk)
        scales.append(sk)
        plans.append(pk)
    return Model(spec=spec, weights=weights, biases=biases, scales=scales, plans=plans)
