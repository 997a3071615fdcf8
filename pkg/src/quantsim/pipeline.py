"""Experiment orchestration: scale, calibrate, train, analyze, compare.

A run directory owns everything one experiment produces:

    run/
      data/      act_t{t}.tns + manifest.json        (gen-data)
      model/     model.json + w/b TNS files          (gen-data)
      scaled/    model with baked row scaling + plan_b{k}_l{j}.json  (dilate)
      calib/     aq_b{k}_l{j}.json + wq_b{k}_l{j}.json               (calibrate)
      trained/   exported model + params + loss.csv + train_summary.json
      reports/   report.csv + effect_stats.csv + summary.json        (analyze)
      figures/   rendered PNGs next to the delimited reports

Stages refuse to overwrite: each writes a fresh subdirectory or fails. All
randomness flows from the config seed through fixed stream ids, so a rerun
with the same config is byte-identical on the CSV/JSON side.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import asdict, dataclass, replace

import numpy as np

from .distill import TrainConfig, TrainResult, bkd_train, export_layer_state
from .model import Model, act_forward, load_model, save_model
from .quantizer import (
    ERROR_CSV_HEADER,
    PER_CHANNEL,
    ErrorReport,
    QuantParams,
    calibrate_maxmin,
    calibrate_mse,
    error_bound,
)
from .scaling import (
    EFFECT_CSV_HEADER,
    EffectStats,
    identity_plan,
    smoothquant_plan,
    wd_effect_stats,
    wd_plan,
)
from .synth import GenConfig, default_model_spec, gen_data, init_model, load_data
from .temporal import TemporalQuantParams, tpq_init
from .tensorops import RngStream, STREAM_TRAIN, STREAM_TRIALS

__all__ = [
    "ExperimentConfig",
    "SCALERS",
    "trial_seed",
    "stage_gen",
    "stage_dilate",
    "stage_calibrate",
    "stage_train",
    "stage_analyze",
    "run_pipeline",
    "compare_scalers",
    "layer_names",
    "collect_layer_inputs",
]

SCALERS = ("none", "wd", "smoothquant")

LOSS_CSV_HEADER = "step,block,loss"
COMPARE_CSV_HEADER = "arm,layer,total_error"
COMPARE_MSE_CSV_HEADER = "arm,block,pre_mse,post_mse"


@dataclass(frozen=True)
class ExperimentConfig:
    bits_w: int = 4
    bits_a: int = 4
    scaler: str = "wd"
    alpha: float = 0.5
    sq_floor: bool = True
    calibration: str = "mse"  # initial quantization ranges: "mse" or "maxmin"
    iters: int = 500
    # training knobs retuned for the desk-scale toy blocks; TrainConfig keeps
    # the reference defaults (batch 32, lr 1e-2/1e-4) used at full scale
    batch_size: int = 128
    lr_qparams: float = 3e-4
    lr_weights: float = 2e-3
    input_source: str = "quantized"
    seed: int = 0
    figures: bool = True

    def __post_init__(self):
        if self.bits_w < 1 or self.bits_a < 1:
            raise ValueError("bit-widths must be >= 1")
        if self.scaler not in SCALERS:
            raise ValueError(f"scaler must be one of {SCALERS}, got {self.scaler!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.calibration not in ("mse", "maxmin"):
            raise ValueError(f"calibration must be 'mse' or 'maxmin', got {self.calibration!r}")
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if self.input_source not in ("quantized", "fp"):
            raise ValueError(
                f"input_source must be 'quantized' or 'fp', got {self.input_source!r}"
            )

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**doc)


def trial_seed(root_seed: int, i: int) -> int:
    """Derived root seed for independent trial i; never collides with the
    data/init/training streams of any trial."""
    g = RngStream(root_seed, STREAM_TRIALS + i).generator()
    return int(g.integers(0, 2**63))


def _fresh_dir(path: str) -> str:
    # append-free rule: a stage writes to a brand-new directory or fails
    os.makedirs(path, exist_ok=False)
    return path


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)
        if not text.endswith("\n"):
            f.write("\n")


def _write_json(path: str, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True))


def layer_names(model: Model) -> list[tuple[int, int, str]]:
    """(block_index, layer_index, "b{k}_l{j}") for every layer, 1-indexed."""
    out = []
    for k, blk in enumerate(model.spec.blocks):
        for j in range(len(blk.layers)):
            out.append((k, j, f"b{k + 1}_l{j + 1}"))
    return out


def collect_layer_inputs(model: Model, steps: list) -> list:
    """inputs[k][j][t]: the float32 tensor arriving at layer (k, j) for
    timestep t, from the full-precision chain. The attached quantizer sees
    this divided by the layer's scale vector."""
    inputs = [
        [[None] * len(steps) for _ in blk.layers] for blk in model.spec.blocks
    ]
    for t, x in enumerate(steps):
        h = np.asarray(x, dtype=np.float64)
        for k, blk in enumerate(model.spec.blocks):
            for j, layer in enumerate(blk.layers):
                inputs[k][j][t] = h.astype(np.float32)
                u = h / model.scales[k][j][None, :]
                y = np.einsum(
                    "ik,kj->ij", u, np.asarray(model.weights[k][j], dtype=np.float64)
                )
                if model.biases[k][j] is not None:
                    y = y + np.asarray(model.biases[k][j], dtype=np.float64)[None, :]
                h = act_forward(layer.act, y)
    return inputs


# ---------------------------------------------------------------------------
# stages


def stage_gen(run_dir: str, gen_cfg: GenConfig, spec_kw: dict | None = None) -> None:
    """Generate the dataset and the toy model into run_dir/data and run_dir/model."""
    gen_data(gen_cfg, _fresh_dir(os.path.join(run_dir, "data")))
    spec_kw = dict(spec_kw or {})
    spec_kw.setdefault("T", gen_cfg.T)
    spec_kw.setdefault("width", gen_cfg.C)
    spec = default_model_spec(**spec_kw)
    model = init_model(spec, gen_cfg.seed)
    save_model(model, _fresh_dir(os.path.join(run_dir, "model")))


def stage_dilate(run_dir: str, cfg: ExperimentConfig) -> None:
    """Compute a scaling plan per layer and bake it into run_dir/scaled."""
    model = load_model(os.path.join(run_dir, "model"))
    plans = [[None] * len(blk.layers) for blk in model.spec.blocks]
    if cfg.scaler == "smoothquant":
        _, steps = load_data(os.path.join(run_dir, "data"))
        inputs = collect_layer_inputs(model, steps)
    for k, blk in enumerate(model.spec.blocks):
        for j in range(len(blk.layers)):
            w = model.weights[k][j]
            if cfg.scaler == "none":
                plan = identity_plan(w)
            elif cfg.scaler == "wd":
                plan = wd_plan(w)
            else:
                pooled = np.vstack(inputs[k][j])
                x_stats = np.abs(pooled).max(axis=0)
                plan = smoothquant_plan(x_stats, w, cfg.alpha, floor=cfg.sq_floor)
            plans[k][j] = plan
    scaled = Model(
        spec=model.spec,
        weights=[
            [
                (model.weights[k][j].astype(np.float64) * plans[k][j].s[:, None]).astype(
                    np.float32
                )
                for j in range(len(blk.layers))
            ]
            for k, blk in enumerate(model.spec.blocks)
        ],
        biases=model.biases,
        scales=[[plans[k][j].s.copy() for j in range(len(blk.layers))] for k, blk in enumerate(model.spec.blocks)],
        plans=plans,
    )
    save_model(scaled, _fresh_dir(os.path.join(run_dir, "scaled")))


def _calibrate_params(model: Model, steps: list, cfg: ExperimentConfig):
    """Per-layer temporal activation params and per-out-channel weight params."""
    inputs = collect_layer_inputs(model, steps)
    act_params = [[None] * len(blk.layers) for blk in model.spec.blocks]
    weight_params = [[None] * len(blk.layers) for blk in model.spec.blocks]
    for k, blk in enumerate(model.spec.blocks):
        for j in range(len(blk.layers)):
            s = model.scales[k][j]
            u_per_step = [x.astype(np.float64) / s[None, :] for x in inputs[k][j]]
            act_params[k][j] = tpq_init(u_per_step, cfg.bits_a, method=cfg.calibration)
            cal = calibrate_mse if cfg.calibration == "mse" else calibrate_maxmin
            weight_params[k][j] = cal(model.weights[k][j], cfg.bits_w, PER_CHANNEL)
    return act_params, weight_params


def _quant_params_to_doc(q: QuantParams) -> dict:
    return {
        "bits": q.bits,
        "granularity": q.granularity,
        "delta": np.atleast_1d(q.delta).tolist(),
        "zero_point": np.atleast_1d(q.zero_point).tolist(),
    }


def _quant_params_from_doc(doc: dict) -> QuantParams:
    if doc["granularity"] == PER_CHANNEL:
        delta = np.asarray(doc["delta"], dtype=np.float64)
        zero = np.asarray(doc["zero_point"], dtype=np.float64)
    else:
        delta = np.float64(doc["delta"][0])
        zero = np.float64(doc["zero_point"][0])
    return QuantParams(
        bits=doc["bits"], delta=delta, zero_point=zero, granularity=doc["granularity"]
    )


def _save_params(out_dir: str, model: Model, act_params, weight_params) -> None:
    for k, j, name in layer_names(model):
        _write_text(os.path.join(out_dir, f"aq_{name}.json"), act_params[k][j].to_json())
        _write_json(os.path.join(out_dir, f"wq_{name}.json"), _quant_params_to_doc(weight_params[k][j]))


def _load_params(in_dir: str, model: Model):
    act_params = [[None] * len(blk.layers) for blk in model.spec.blocks]
    weight_params = [[None] * len(blk.layers) for blk in model.spec.blocks]
    for k, j, name in layer_names(model):
        with open(os.path.join(in_dir, f"aq_{name}.json")) as f:
            act_params[k][j] = TemporalQuantParams.from_json(f.read())
        with open(os.path.join(in_dir, f"wq_{name}.json")) as f:
            weight_params[k][j] = _quant_params_from_doc(json.load(f))
    return act_params, weight_params


def stage_calibrate(run_dir: str, cfg: ExperimentConfig) -> None:
    """Initialize quantizer parameters from the scaled model's activations."""
    model = load_model(os.path.join(run_dir, "scaled"))
    _, steps = load_data(os.path.join(run_dir, "data"))
    act_params, weight_params = _calibrate_params(model, steps, cfg)
    out = _fresh_dir(os.path.join(run_dir, "calib"))
    _save_params(out, model, act_params, weight_params)


def stage_train(run_dir: str, cfg: ExperimentConfig) -> TrainResult:
    """Block-wise distillation; writes the exported model and loss history."""
    model = load_model(os.path.join(run_dir, "scaled"))
    _, steps = load_data(os.path.join(run_dir, "data"))
    act_params, weight_params = _load_params(os.path.join(run_dir, "calib"), model)
    tc = TrainConfig(
        iters=cfg.iters,
        batch_size=cfg.batch_size,
        lr_qparams=cfg.lr_qparams,
        lr_weights=cfg.lr_weights,
        input_source=cfg.input_source,
    )
    gen = RngStream(cfg.seed, STREAM_TRAIN).generator()
    result = bkd_train(model, steps, act_params, weight_params, tc, gen)

    out = _fresh_dir(os.path.join(run_dir, "trained"))
    trained_w, trained_b = [], []
    act_out = [[None] * len(blk.layers) for blk in model.spec.blocks]
    w_out = [[None] * len(blk.layers) for blk in model.spec.blocks]
    for k, blk in enumerate(model.spec.blocks):
        wk, bk = [], []
        for j in range(len(blk.layers)):
            w, b, aq, wq = export_layer_state(result.layers[k][j])
            wk.append(w)
            bk.append(b)
            act_out[k][j] = aq
            w_out[k][j] = wq
        trained_w.append(wk)
        trained_b.append(bk)
    trained = Model(
        spec=model.spec,
        weights=trained_w,
        biases=trained_b,
        scales=model.scales,
        plans=model.plans,
    )
    save_model(trained, out)
    _save_params(out, trained, act_out, w_out)
    rows = [LOSS_CSV_HEADER] + [
        f"{step},{block},{loss!r}" for step, block, loss in result.history
    ]
    _write_text(os.path.join(out, "loss.csv"), "\n".join(rows))
    _write_json(
        os.path.join(out, "train_summary.json"),
        {
            "pre_mse": result.pre_mse,
            "post_mse": result.post_mse,
            "iters": cfg.iters,
            "input_source": cfg.input_source,
        },
    )
    if cfg.figures and result.history:
        from . import plots

        fig_dir = os.path.join(run_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        plots.loss_curve(result.history, os.path.join(fig_dir, "loss_curve.png"))
    return result


def _layer_report(
    u_per_step: list,
    w: np.ndarray,
    aq: TemporalQuantParams,
    wq: QuantParams,
    name: str,
) -> ErrorReport:
    """Per-layer report: per-timestep bound evaluations summed over steps."""
    total = ErrorReport(
        total_error=0.0, round_error=0.0, clip_error=0.0, clip_share=0.0,
        bound_rhs=0.0, bound_terms=(0.0, 0.0, 0.0), layer=name,
    )
    for t, u in enumerate(u_per_step, start=1):
        qx = QuantParams(
            bits=aq.bits,
            delta=np.float64(aq.delta[t - 1]),
            zero_point=np.float64(aq.zero_point[t - 1]),
        )
        r = error_bound(u, w, qx, wq)
        total.total_error += r.total_error
        total.round_error += r.round_error
        total.clip_error += r.clip_error
        total.bound_rhs += r.bound_rhs
        total.bound_terms = tuple(a + b for a, b in zip(total.bound_terms, r.bound_terms))
    value_total = total.round_error + total.clip_error
    total.clip_share = total.clip_error / value_total if value_total > 0 else 0.0
    return total


def analyze_state(
    run_dir: str, cfg: ExperimentConfig, state: str
) -> tuple[list[ErrorReport], list[EffectStats]]:
    """Error reports and effect stats for the calibrated or trained state."""
    original = load_model(os.path.join(run_dir, "model"))
    scaled = load_model(os.path.join(run_dir, "scaled"))
    state_dir = os.path.join(run_dir, state)
    state_model = load_model(state_dir) if state == "trained" else scaled
    act_params, weight_params = _load_params(state_dir, state_model)
    _, steps = load_data(os.path.join(run_dir, "data"))
    inputs = collect_layer_inputs(scaled, steps)

    reports, stats = [], []
    for k, j, name in layer_names(scaled):
        s = scaled.scales[k][j]
        u_per_step = [x.astype(np.float64) / s[None, :] for x in inputs[k][j]]
        reports.append(
            _layer_report(
                u_per_step, state_model.weights[k][j], act_params[k][j], weight_params[k][j], name
            )
        )
        plan = scaled.plans[k][j]
        if plan is None:
            plan = identity_plan(original.weights[k][j])
        per_step = [
            wd_effect_stats(x, original.weights[k][j], plan, cfg.bits_a)
            for x in inputs[k][j]
        ]
        stats.append(
            EffectStats(
                prop_s_gt_1=per_step[0].prop_s_gt_1,
                dx_ratio=float(np.mean([st.dx_ratio for st in per_step])),
                dw_ratio=per_step[0].dw_ratio,
                dw_ratio_channels=per_step[0].dw_ratio_channels,
                layer=name,
            )
        )
    return reports, stats


def stage_analyze(run_dir: str, cfg: ExperimentConfig, state: str = "auto") -> list[ErrorReport]:
    """Write reports/report.csv, effect_stats.csv and summary.json."""
    if state == "auto":
        state = "trained" if os.path.isdir(os.path.join(run_dir, "trained")) else "calib"
    if state not in ("calib", "trained"):
        raise ValueError(f"state must be 'auto', 'calib' or 'trained', got {state!r}")
    reports, stats = analyze_state(run_dir, cfg, state)
    out = _fresh_dir(os.path.join(run_dir, "reports"))
    _write_text(
        os.path.join(out, "report.csv"),
        "\n".join([ERROR_CSV_HEADER] + [r.csv_row() for r in reports]),
    )
    _write_text(
        os.path.join(out, "effect_stats.csv"),
        "\n".join([EFFECT_CSV_HEADER] + [st.csv_row() for st in stats]),
    )
    summary = {
        "state": state,
        "config": asdict(cfg),
        "layers": {
            r.layer: {
                "total_error": r.total_error,
                "bound_rhs": r.bound_rhs,
                "clip_share": r.clip_share,
            }
            for r in reports
        },
    }
    train_summary = os.path.join(run_dir, "trained", "train_summary.json")
    if os.path.exists(train_summary):
        with open(train_summary) as f:
            summary["train"] = json.load(f)
    _write_json(os.path.join(out, "summary.json"), summary)
    if cfg.figures:
        from . import plots

        fig_dir = os.path.join(run_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        plots.layer_errors(reports, os.path.join(fig_dir, "layer_errors.png"))
        plots.effect_stats(stats, os.path.join(fig_dir, "effect_stats.png"))
    return reports


def _run_stage(name: str, fn, *args):
    try:
        return fn(*args)
    except Exception as e:
        e.args = (f"[{name}] {e.args[0] if e.args else e}",) + e.args[1:]
        raise


def run_pipeline(run_dir: str, cfg: ExperimentConfig) -> list[ErrorReport]:
    """dilate -> calibrate -> (train unless iters == 0) -> analyze.

    Expects run_dir/data and run_dir/model to exist (see stage_gen). Errors
    propagate with the failing stage's name attached.
    """
    _run_stage("dilate", stage_dilate, run_dir, cfg)
    _run_stage("calibrate", stage_calibrate, run_dir, cfg)
    if cfg.iters > 0:
        _run_stage("train", stage_train, run_dir, cfg)
    return _run_stage("analyze", stage_analyze, run_dir, cfg)


def compare_scalers(run_dir: str, cfg: ExperimentConfig) -> dict:
    """Run the none / smoothquant / wd arms on bit-identical inputs.

    Each arm gets its own run directory seeded with the same data and model
    files; emits compare.csv (post-calibration layer errors) and, when
    training ran, compare_mse.csv (per-block pre/post MSE).
    """
    arms_root = _fresh_dir(os.path.join(run_dir, "arms"))
    results: dict = {}
    for arm in SCALERS:
        arm_dir = os.path.join(arms_root, arm)
        os.makedirs(arm_dir)
        shutil.copytree(os.path.join(run_dir, "data"), os.path.join(arm_dir, "data"))
        shutil.copytree(os.path.join(run_dir, "model"), os.path.join(arm_dir, "model"))
        arm_cfg = replace(cfg, scaler=arm, figures=False)
        stage_dilate(arm_dir, arm_cfg)
        stage_calibrate(arm_dir, arm_cfg)
        reports, _ = analyze_state(arm_dir, arm_cfg, "calib")
        arm_result = {"calib_reports": reports}
        if cfg.iters > 0:
            arm_result["train"] = stage_train(arm_dir, arm_cfg)
        results[arm] = arm_result

    rows = [COMPARE_CSV_HEADER]
    for arm in SCALERS:
        for r in results[arm]["calib_reports"]:
            rows.append(f"{arm},{r.layer},{float(r.total_error)!r}")
    _write_text(os.path.join(run_dir, "compare.csv"), "\n".join(rows))

    if cfg.iters > 0:
        mrows = [COMPARE_MSE_CSV_HEADER]
        for arm in SCALERS:
            tr = results[arm]["train"]
            for b, (pre, post) in enumerate(zip(tr.pre_mse, tr.post_mse), start=1):
                mrows.append(f"{arm},{b},{pre!r},{post!r}")
        _write_text(os.path.join(run_dir, "compare_mse.csv"), "\n".join(mrows))

    if cfg.figures:
        from . import plots

        fig_dir = os.path.join(run_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        plots.scaler_comparison(
            {arm: results[arm]["calib_reports"] for arm in SCALERS},
            os.path.join(fig_dir, "scaler_comparison.png"),
        )
    return results
