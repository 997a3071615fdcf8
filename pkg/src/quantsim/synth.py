"""Synthetic workloads: timestep-drifting activation data and toy models.

Activations follow the shape the rest of the toolkit is built to handle: a
per-timestep Gaussian whose spread grows with the timestep, with rare
large-magnitude outliers injected independently per element, so outliers land
in every channel rather than a privileged few.

Toy-model weights draw per-row magnitude spreads (log-uniform) so that only a
minority of in-channel rows host per-column extremes; the rest are strictly
interior and give equivalent scaling something to act on.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .model import BlockSpec, LayerSpec, Model, ModelSpec
from .tensorops import RngStream, STREAM_DATA, STREAM_INIT, astensor, write_tns

__all__ = ["GenConfig", "gen_data", "default_model_spec", "init_model", "load_data"]


@dataclass(frozen=True)
class GenConfig:
    T: int = 10
    N: int = 256
    C: int = 32
    sigma_base: float = 1.0
    gamma: float = 1.0  # per-step stddev growth: sigma_t = sigma_base * (1 + gamma * t / T)
    outlier_prob: float = 0.005
    outlier_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or self.N < 1 or self.C < 1:
            raise ValueError("T, N and C must all be >= 1")
        if self.sigma_base <= 0:
            raise ValueError(f"sigma_base must be > 0, got {self.sigma_base}")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError(f"outlier_prob must lie in [0, 1], got {self.outlier_prob}")
        if self.outlier_scale < 1.0:
            raise ValueError(f"outlier_scale must be >= 1, got {self.outlier_scale}")


def sample_steps(cfg: GenConfig) -> list[np.ndarray]:
    """Draw the T activation tensors in memory.

    The outlier mask is drawn even when outlier_prob is 0 so that runs with
    different outlier settings but the same seed share the Gaussian stream.
    """
    gen = RngStream(cfg.seed, STREAM_DATA).generator()
    steps = []
    for t in range(1, cfg.T + 1):
        sigma = cfg.sigma_base * (1.0 + cfg.gamma * t / cfg.T)
        x = gen.normal(0.0, sigma, size=(cfg.N, cfg.C))
        mask = gen.random(size=(cfg.N, cfg.C)) < cfg.outlier_prob
        x[mask] *= cfg.outlier_scale
        steps.append(astensor(x, f"act_t{t}"))
    return steps


def gen_data(cfg: GenConfig, out_dir) -> list[str]:
    """Write act_t{t}.tns files plus a manifest; returns the file names."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for t, x in enumerate(sample_steps(cfg), start=1):
        name = f"act_t{t}.tns"
        write_tns(os.path.join(out_dir, name), x)
        names.append(name)
    manifest = {"T": cfg.T, "N": cfg.N, "C": cfg.C, "files": names, "config": asdict(cfg)}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return names


def load_data(data_dir) -> tuple[GenConfig, list[np.ndarray]]:
    """Read a manifest and its per-timestep tensors."""
    from .tensorops import read_tns

    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    cfg = GenConfig(**manifest["config"])
    steps = [read_tns(os.path.join(data_dir, name)) for name in manifest["files"]]
    return cfg, steps


def default_model_spec(T: int = 10, width: int = 32, blocks: int = 2, layers_per_block: int = 3) -> ModelSpec:
    """The standard toy network: ``blocks`` blocks of ``layers_per_block``
    equal-width linear layers, silu between layers, linear block outputs."""
    block = BlockSpec(
        layers=tuple(
            LayerSpec(
                in_dim=width,
                out_dim=width,
                bias=True,
                act="silu" if j < layers_per_block - 1 else "none",
            )
            for j in range(layers_per_block)
        )
    )
    return ModelSpec(T=T, blocks=tuple(block for _ in range(blocks)))


def init_model(
    spec: ModelSpec,
    seed: int,
    row_scale_lo: float = 0.05,
    row_scale_hi: float = 1.0,
) -> Model:
    """Initialize weights with a log-uniform per-row magnitude spread.

    Entries of row i are N(0, (r_i / sqrt(C_i))^2) with r_i log-uniform in
    [row_scale_lo, row_scale_hi]; biases are small. The spread concentrates
    per-column extremes in the largest rows, leaving most rows unsaturated.
    """
    if not 0 < row_scale_lo <= row_scale_hi:
        raise ValueError("need 0 < row_scale_lo <= row_scale_hi")
    gen = RngStream(seed, STREAM_INIT).generator()
    weights, biases = [], []
    for blk in spec.blocks:
        wk, bk = [], []
        for layer in blk.layers:
            r = np.exp(
                gen.uniform(np.log(row_scale_lo), np.log(row_scale_hi), size=layer.in_dim)
            )
            w = gen.normal(0.0, 1.0, size=(layer.in_dim, layer.out_dim))
            w *= (r / np.sqrt(layer.in_dim))[:, None]
            wk.append(astensor(w, "weight"))
            if layer.bias:
                bk.append(astensor(gen.normal(0.0, 0.01, size=layer.out_dim), "bias"))
            else:
                bk.append(None)
        weights.append(wk)
        biases.append(bk)
    return Model(spec=spec, weights=weights, biases=biases)
