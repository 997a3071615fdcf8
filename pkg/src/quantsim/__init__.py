"""Quantization simulation toolkit.

Uniform asymmetric fake quantization with Max-Min and MSE range search,
row-scaling transforms that widen weight quantization bins without touching
the represented function, timestep-indexed activation quantizers, and
block-wise distillation that fine-tunes weights and quantizer parameters
against a frozen full-precision reference.
"""

from .distill import (
    DELTA_FLOOR,
    LayerState,
    NumericalError,
    TrainConfig,
    TrainResult,
    bkd_loss,
    bkd_train,
    block_forward_q,
    export_layer_state,
    init_layer_state,
    loss_and_grads,
    train_block,
)
from .model import (
    ACTIVATIONS,
    BlockSpec,
    LayerSpec,
    Model,
    ModelSpec,
    act_forward,
    act_grad,
    block_forward_fp,
    load_model,
    save_model,
)
from .pipeline import (
    ExperimentConfig,
    SCALERS,
    compare_scalers,
    run_pipeline,
    stage_analyze,
    stage_calibrate,
    stage_dilate,
    stage_gen,
    stage_train,
    trial_seed,
)
from .quantizer import (
    ERROR_CSV_HEADER,
    PER_CHANNEL,
    PER_TENSOR,
    ErrorReport,
    QuantParams,
    calibrate_maxmin,
    calibrate_mse,
    error_bound,
    error_decompose,
    quantize,
)
from .scaling import (
    CLAMP,
    EFFECT_CSV_HEADER,
    EffectStats,
    ScalingPlan,
    apply_scaling,
    identity_plan,
    smoothquant_plan,
    wd_effect_stats,
    wd_plan,
)
from .synth import GenConfig, default_model_spec, gen_data, init_model, load_data, sample_steps
from .temporal import TemporalQuantParams, check_index, tpq_init, tpq_quantize
from .tensorops import (
    RngStream,
    STREAM_DATA,
    STREAM_INIT,
    STREAM_TRAIN,
    STREAM_TRIALS,
    TnsError,
    astensor,
    channel_minmax,
    l1_norm,
    matmul,
    read_tns,
    rng_normal,
    write_tns,
)

__version__ = "0.1.0"
