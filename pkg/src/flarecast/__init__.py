"""Imbalance-aware losses, solar-cycle embedding, forecast verification, and a
desk-scale trainer for 72-hour solar flare class prediction."""

from .core import (
    ClassWeights,
    ConfusionMatrix,
    FlareClass,
    Sample,
    ScoringMatrix,
    build_confusion,
    class_weights,
    one_hot,
    one_hot_to_class,
    prob_dist,
)
from .cycle import CycleConfig, cycle_phase
from .losses import (
    HeadState,
    LossBreakdown,
    bss_grad_w,
    bss_loss,
    ce_loss,
    flare_loss,
    flare_loss_grad,
    ib_factor_bss,
    ib_factor_ce,
    residual,
    softmax,
)
from .metrics import (
    InfluenceEntry,
    MetricReport,
    bss_ge_m,
    build_report,
    gerrity_matrix,
    gmgs,
    gmgs_influence,
    harmonic_mean,
    tss_ge_m,
)
from .pipeline import (
    FlareEvent,
    Fold,
    SplitSpec,
    apply_channel_policy,
    gen_synthetic,
    label_max_class,
    label_samples,
    split_timeseries,
)
from .trainer import Checkpoint, TrainConfig, TrainResult, adamw_step, forward, train

__version__ = "0.1.0"
