"""Desk-scale feed-forward classifier trained with the composite loss.

Two tanh hidden layers over the feature vector, an optional solar-cycle phase
appended to the last hidden representation, and a bias-free linear head whose
softmax output feeds the loss family. Optimization is AdamW with decoupled
weight decay, implemented here so gradients stay fully inspectable.

Checkpoint selection follows validation GMGS: the checkpoint with the highest
validation score wins, earliest epoch on ties.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ClassWeights, FlareClass, N_CLASSES, Sample, class_weights
from .cycle import DEFAULT_CYCLE, CycleConfig, cycle_phase
from .losses import (
    HeadState,
    LossBreakdown,
    batch_factors_arrays,
    flare_loss_arrays,
    flare_loss_grad_arrays,
    softmax,
)
from .metrics import MetricReport, build_report
from .pipeline import Fold

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "EpochRecord",
    "TrainResult",
    "init_params",
    "forward",
    "adamw_step",
    "train",
    "predict_probs",
    "evaluate_fold",
    "config_hash",
    "write_history",
    "save_checkpoint",
    "load_checkpoint",
]

HISTORY_HEADER = "epoch,wce,ib_ce,wbss,ib_bss,total,val_gmgs,val_tss,val_bss"
CHECKPOINT_MAGIC = "flarecast-checkpoint v1"

Params = Dict[str, np.ndarray]
Moments = Dict[str, Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. Defaults mirror the reference full-scale run;
    desk-scale experiments usually override the learning rate (see README)."""

    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 4.0e-5
    weight_decay: float = 5.0e-2
    beta1: float = 0.9
    beta2: float = 0.95
    lambda_bss: float = 3.0
    warmup_epochs: int = 5
    seed: int = 0
    hidden_sizes: Tuple[int, int] = (64, 64)
    use_cycle_embedding: bool = True
    use_class_weights: bool = True
    ib_ce_mode: str = "residual"
    adam_eps: float = 1e-8
    verify_gradients: bool = False
    cycle: CycleConfig = DEFAULT_CYCLE

    def __post_init__(self) -> None:
        if not (0 <= self.warmup_epochs <= self.epochs):
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ValueError("rates must be positive")
        if self.weight_decay < 0 or self.lambda_bss < 0:
            raise ValueError("weight_decay and lambda_bss must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if len(self.hidden_sizes) != 2 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be two positive widths")


def config_hash(cfg: TrainConfig) -> str:
    """Stable hash of the full configuration, embedded in checkpoints."""
    items = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, CycleConfig):
            v = f"{v.base_time.isoformat()}|{v.period_hours!r}"
        items.append(f"{f.name}={v!r}")
    return hashlib.sha256("\n".join(sorted(items)).encode()).hexdigest()[:16]


def head_width(cfg: TrainConfig) -> int:
    return cfg.hidden_sizes[1] + (1 if cfg.use_cycle_embedding else 0)


def init_params(feature_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> Params:
    """Symmetric uniform initialization scaled by fan-in."""
    h1, h2 = cfg.hidden_sizes
    shapes = {
        "w0": (h1, feature_dim),
        "b0": (h1,),
        "w1": (h2, h1),
        "b1": (h2,),
        "head": (N_CLASSES, head_width(cfg)),
    }
    params = {}
    for name, shape in shapes.items():
        fan_in = shape[-1] if len(shape) > 1 else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _forward_arrays(x: np.ndarray, phis: Optional[np.ndarray], params: Params):
    """Vectorized forward pass; returns activations needed for backprop."""
    if x.shape[1] != params["w0"].shape[1]:
        raise ValueError(
            f"feature dimension mismatch: got {x.shape[1]}, parameters expect {params['w0'].shape[1]}"
        )
    a0 = np.tanh(x @ params["w0"].T + params["b0"])
    a1 = np.tanh(a0 @ params["w1"].T + params["b1"])
    head_in = a1 if phis is None else np.hstack([a1, phis[:, None]])
    logits = head_in @ params["head"].T
    return a0, a1, head_in, logits, softmax(logits)


def _phis(samples: Sequence[Sample], cfg: TrainConfig) -> Optional[np.ndarray]:
    if not cfg.use_cycle_embedding:
        return None
    return np.array([cycle_phase(s.timestamp, cfg.cycle) for s in samples])


def forward(sample: Sample, params: Params, cfg: TrainConfig) -> HeadState:
    """Head state of one sample under the current parameters."""
    phis = _phis([sample], cfg)
    _, _, head_in, logits, probs = _forward_arrays(sample.features[None, :], phis, params)
    return HeadState(head_in[0], params["head"], logits[0], probs[0])


def _backprop(x, a0, a1, head_in, d_logits, params: Params, has_phi: bool) -> Params:
    grads = {"head": d_logits.T @ head_in}
    d_head_in = d_logits @ params["head"]
    d_a1 = d_head_in[:, :-1] if has_phi else d_head_in
    d_pre1 = d_a1 * (1.0 - a1 * a1)
    grads["w1"] = d_pre1.T @ a0
    grads["b1"] = d_pre1.sum(axis=0)
    d_pre0 = (d_pre1 @ params["w1"]) * (1.0 - a0 * a0)
    grads["w0"] = d_pre0.T @ x
    grads["b0"] = d_pre0.sum(axis=0)
    return grads


def adamw_step(
    params: Params, grads: Params, moments: Moments, cfg: TrainConfig, step_index: int
) -> Tuple[Params, Moments]:
    """One decoupled-weight-decay Adam update with bias correction.

    Weight decay multiplies every parameter by ``(1 - lr * wd)`` before the
    moment-based update, so a zero-gradient step shrinks parameters by exactly
    that factor.
    """
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    new_params: Params = {}
    new_moments: Moments = {}
    bc1 = 1.0 - cfg.beta1 ** step_index
    bc2 = 1.0 - cfg.beta2 ** step_index
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise RuntimeError("diverged: non-finite gradient")
        m, v = moments.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        p = p * (1.0 - cfg.learning_rate * cfg.weight_decay)
        p = p - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        new_params[name] = p
        new_moments[name] = (m, v)
    return new_params, new_moments


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    val_gmgs: float
    val_tss: float
    val_bss: float


@dataclass(frozen=True)
class Checkpoint:
    """Best-so-far parameter snapshot with its validation scores."""

    epoch: int
    params: Params
    val_gmgs: float
    val_report: MetricReport


@dataclass(frozen=True)
class TrainResult:
    best: Checkpoint
    history: List[EpochRecord]


def _one_hot_rows(labels: np.ndarray) -> np.ndarray:
    return np.eye(N_CLASSES)[labels]


def _verify_first_batch(x, phis, params, cfg, y_rows, sample_w, ib_active) -> None:
    """Central-difference check of parameter gradients on one batch.

    Influence factors are frozen at their base-point values, matching the
    detached treatment in the analytic gradient.
    """
    def loss_at(p: Params) -> float:
        _, _, head_in, _, probs = _forward_arrays(x, phis, p)
        h_l1 = np.abs(head_in).sum(axis=1)
        return flare_loss_arrays(
            probs, y_rows, h_l1, sample_w, cfg.lambda_bss, ib_active, cfg.ib_ce_mode, frozen
        ).total

    a0, a1, head_in, _, probs = _forward_arrays(x, phis, params)
    h_l1 = np.abs(head_in).sum(axis=1)
    frozen = batch_factors_arrays(probs, y_rows, h_l1, cfg.ib_ce_mode) if ib_active else None
    d_logits = flare_loss_grad_arrays(
        probs, y_rows, h_l1, sample_w, cfg.lambda_bss, ib_active, cfg.ib_ce_mode, frozen
    )
    grads = _backprop(x, a0, a1, head_in, d_logits, params, phis is not None)
    step = 1e-6
    worst = 0.0
    for name in params:
        flat = params[name].ravel()
        fd = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at(params)
            flat[i] = orig - step
            down = loss_at(params)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * step)
        a = grads[name].ravel()
        denom = max(1.0, float(np.max(np.abs(a))))
        worst = max(worst, float(np.max(np.abs(a - fd))) / denom)
    if worst > 1e-5:
        raise RuntimeError(f"diverged: gradient verification failed (relative error {worst:.3e})")


def train(samples: Sequence[Sample], fold: Fold, cfg: TrainConfig) -> TrainResult:
    """Run the full training loop on one chronological fold.

    Influence terms activate at ``epoch == warmup_epochs``; validation GMGS is
    computed every epoch and drives checkpoint selection (argmax, earliest on
    ties). Deterministic given (seed, config, data).

    Raises
    ------
    ValueError
        If the train or validation range is missing a flare class.
    RuntimeError
        On numerical divergence.
    """
    labels = np.array([int(s.label) for s in samples if s.label is not None])
    if len(labels) != len(samples):
        raise ValueError("all samples must be labeled for training")
    x_all = np.stack([s.features for s in samples])
    phis_all = _phis(samples, cfg)
    train_idx = np.array(fold.train)
    for name, idx in (("training", train_idx), ("validation", np.array(fold.validation))):
        present = np.unique(labels[idx])
        if len(present) < N_CLASSES:
            missing = [FlareClass(c).name for c in range(N_CLASSES) if c not in present]
            raise ValueError(f"degenerate split: {name} range is missing class(es) {', '.join(missing)}")

    counts = np.bincount(labels[train_idx], minlength=N_CLASSES)
    weights = class_weights(counts) if cfg.use_class_weights else ClassWeights.uniform()
    gamma_by_class = weights.weights

    rng = np.random.default_rng(cfg.seed)
    params = init_params(x_all.shape[1], cfg, rng)
    moments: Moments = {}
    step_index = 0

    val_idx = np.array(fold.validation)
    x_val = x_all[val_idx]
    phis_val = None if phis_all is None else phis_all[val_idx]
    val_labels = labels[val_idx]

    best: Optional[Checkpoint] = None
    history: List[EpochRecord] = []
    for epoch in range(cfg.epochs):
        ib_active = epoch >= cfg.warmup_epochs
        order = rng.permutation(train_idx)
        sums = np.zeros(4)
        seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            x = x_all[idx]
            phis = None if phis_all is None else phis_all[idx]
            y_rows = _one_hot_rows(labels[idx])
            sample_w = gamma_by_class[labels[idx]]
            if cfg.verify_gradients and epoch == 0 and lo == 0:
                _verify_first_batch(x, phis, params, cfg, y_rows, sample_w, ib_active)
            a0, a1, head_in, _, probs = _forward_arrays(x, phis, params)
            h_l1 = np.abs(head_in).sum(axis=1)
            breakdown = flare_loss_arrays(
                probs, y_rows, h_l1, sample_w, cfg.lambda_bss, ib_active, cfg.ib_ce_mode
            )
            d_logits = flare_loss_grad_arrays(
                probs, y_rows, h_l1, sample_w, cfg.lambda_bss, ib_active, cfg.ib_ce_mode
            )
            grads = _backprop(x, a0, a1, head_in, d_logits, params, phis is not None)
            step_index += 1
            params, moments = adamw_step(params, grads, moments, cfg, step_index)
            b = len(idx)
            sums += b * np.array([breakdown.wce, breakdown.ib_ce, breakdown.wbss, breakdown.ib_bss])
            seen += b
        wce, ib_ce, wbss, ib_bss = (float(v) for v in sums / seen)
        epoch_losses = LossBreakdown(
            wce=wce,
            ib_ce=ib_ce,
            wbss=wbss,
            ib_bss=ib_bss,
            total=(wce + ib_ce) + cfg.lambda_bss * (wbss + ib_bss),
            ib_active=ib_active,
        )

        probs_val = _predict_arrays(x_val, phis_val, params)
        report = _report_from_probs(probs_val, val_labels)
        record = EpochRecord(
            epoch=epoch,
            losses=epoch_losses,
            val_gmgs=report.gmgs,
            val_tss=report.tss_ge_m,
            val_bss=report.bss_ge_m if report.bss_ge_m is not None else float("nan"),
        )
        history.append(record)
        if best is None or report.gmgs > best.val_gmgs:
            snapshot = {k: v.copy() for k, v in params.items()}
            best = Checkpoint(epoch=epoch, params=snapshot, val_gmgs=report.gmgs, val_report=report)
    assert best is not None
    return TrainResult(best=best, history=history)


def _predict_arrays(x: np.ndarray, phis: Optional[np.ndarray], params: Params) -> np.ndarray:
    _, _, _, _, probs = _forward_arrays(x, phis, params)
    return probs


def _report_from_probs(probs: np.ndarray, labels: np.ndarray) -> MetricReport:
    preds = probs.argmax(axis=1)
    pairs = [(FlareClass(int(o)), FlareClass(int(p))) for o, p in zip(labels, preds)]
    forecasts = [(probs[i], FlareClass(int(labels[i]))) for i in range(len(labels))]
    return build_report(pairs, prob_forecasts=forecasts)


def predict_probs(samples: Sequence[Sample], params: Params, cfg: TrainConfig) -> np.ndarray:
    """Predicted class distributions for a batch of samples."""
    x = np.stack([s.features for s in samples])
    return _predict_arrays(x, _phis(samples, cfg), params)


def evaluate_fold(samples: Sequence[Sample], idx: Sequence[int], params: Params, cfg: TrainConfig) -> MetricReport:
    """Metric report of the parameters on one index range of the dataset."""
    subset = [samples[i] for i in idx]
    probs = predict_probs(subset, params, cfg)
    labels = np.array([int(s.label) for s in subset])
    return _report_from_probs(probs, labels)


# ---------------------------------------------------------------------------
# History and checkpoint files
# ---------------------------------------------------------------------------

def write_history(path, history: Sequence[EpochRecord]) -> None:
    lines = [HISTORY_HEADER]
    for r in history:
        b = r.losses
        lines.append(
            f"{r.epoch},{b.wce!r},{b.ib_ce!r},{b.wbss!r},{b.ib_bss!r},{b.total!r},"
            f"{r.val_gmgs!r},{r.val_tss!r},{r.val_bss!r}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_checkpoint(path, checkpoint: Checkpoint, cfg: TrainConfig) -> None:
    """Plain-text parameter dump: versioned header, config hash, named arrays."""
    lines = [
        CHECKPOINT_MAGIC,
        f"config_hash={config_hash(cfg)}",
        f"epoch={checkpoint.epoch}",
        f"val_gmgs={checkpoint.val_gmgs!r}",
    ]
    for name in sorted(checkpoint.params):
        arr = checkpoint.params[name]
        shape = "x".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {shape}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Tuple[Params, Dict[str, str]]:
    """Read a checkpoint file back into (params, metadata)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a flarecast checkpoint: {path}")
    meta: Dict[str, str] = {}
    params: Params = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("array "):
        key, _, value = lines[i].partition("=")
        meta[key] = value
        i += 1
    while i < len(lines):
        _, name, shape = lines[i].split()
        dims = tuple(int(d) for d in shape.split("x"))
        values = np.array([float(v) for v in lines[i + 1].split()])
        params[name] = values.reshape(dims)
        i += 2
    return params, meta
