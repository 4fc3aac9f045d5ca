"""Domain types shared by every flarecast module.

Four ordinal flare classes (O < C < M < X), probability vectors over them,
confusion matrices, inverse-frequency class weights, and the scoring matrix
container used by the Gerrity-based skill score. Everything here is immutable
after construction; arrays are frozen so instances can be shared freely
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

N_CLASSES = 4

# GOES peak soft X-ray flux thresholds, W/m^2 (domain convention).
FLUX_THRESHOLD_X = 1e-4
FLUX_THRESHOLD_M = 1e-5
FLUX_THRESHOLD_C = 1e-6

SAMPLE_CADENCE_HOURS = 2.0
N_CHANNELS = 10


class FlareClass(IntEnum):
    """Ordinal flare category, ascending severity. Rank doubles as array index."""

    O = 0
    C = 1
    M = 2
    X = 3

    @classmethod
    def from_name(cls, name: str) -> "FlareClass":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown flare class {name!r}") from None

    @classmethod
    def from_flux(cls, flux_wm2: float) -> "FlareClass":
        """Classify a peak X-ray flux value by the GOES thresholds."""
        if flux_wm2 >= FLUX_THRESHOLD_X:
            return cls.X
        if flux_wm2 >= FLUX_THRESHOLD_M:
            return cls.M
        if flux_wm2 >= FLUX_THRESHOLD_C:
            return cls.C
        return cls.O

    def __str__(self) -> str:
        return self.name


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def prob_dist(values: Iterable[float]) -> np.ndarray:
    """Validate a length-4 probability vector indexed by flare-class rank.

    Components must lie in [0, 1] and sum to 1 within 1e-9. Returns a frozen
    float64 array.
    """
    p = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if p.shape != (N_CLASSES,):
        raise ValueError(f"probability vector must have {N_CLASSES} components, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probability components must lie in [0, 1]")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"probabilities must sum to 1 (got {p.sum()!r})")
    return _frozen(p.copy())


def one_hot(label: FlareClass) -> np.ndarray:
    """One-hot indicator vector for a flare class."""
    y = np.zeros(N_CLASSES)
    y[int(label)] = 1.0
    return _frozen(y)


def one_hot_to_class(y: np.ndarray) -> FlareClass:
    """Inverse of :func:`one_hot`; rejects vectors that are not exactly one-hot."""
    y = np.asarray(y, dtype=float)
    if y.shape != (N_CLASSES,) or not np.all((y == 0.0) | (y == 1.0)) or y.sum() != 1.0:
        raise ValueError("not a one-hot label vector")
    return FlareClass(int(np.argmax(y)))


def _check_utc_grid(ts: datetime) -> None:
    if ts.tzinfo is None or ts.utcoffset() != timezone.utc.utcoffset(None):
        raise ValueError(f"timestamp must be UTC: {ts!r}")
    if ts.timestamp() % (SAMPLE_CADENCE_HOURS * 3600.0) != 0.0:
        raise ValueError(f"timestamp not aligned to the {SAMPLE_CADENCE_HOURS:g}-hour grid: {ts.isoformat()}")


@dataclass(frozen=True)
class Sample:
    """One observation instant: features, per-channel presence mask, optional label."""

    id: str
    timestamp: datetime
    features: np.ndarray
    channel_mask: Tuple[bool, ...]
    label: Optional[FlareClass] = None

    def __post_init__(self) -> None:
        _check_utc_grid(self.timestamp)
        if len(self.channel_mask) != N_CHANNELS:
            raise ValueError(f"channel_mask must have {N_CHANNELS} entries, got {len(self.channel_mask)}")
        object.__setattr__(self, "channel_mask", tuple(bool(b) for b in self.channel_mask))
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 1:
            raise ValueError("features must be a 1-d vector")
        object.__setattr__(self, "features", _frozen(feats.copy()))

    @property
    def missing_channels(self) -> int:
        return N_CHANNELS - sum(self.channel_mask)


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 counts: row = observed class, column = predicted class (O,C,M,X order)."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts)
        if c.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {c.shape}")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise ValueError("confusion matrix entries must be integers")
            c = c.astype(np.int64)
        if np.any(c < 0):
            raise ValueError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", _frozen(c.astype(np.int64)))

    @property
    def n(self) -> int:
        """Total number of counted pairs."""
        return int(self.counts.sum())

    def observed_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def predicted_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def build_confusion(pairs: Sequence[Tuple[FlareClass, FlareClass]]) -> ConfusionMatrix:
    """Count (observed, predicted) pairs into a confusion matrix.

    Parameters
    ----------
    pairs : sequence of (FlareClass, FlareClass)
        Observed and predicted class per evaluated sample.

    Raises
    ------
    ValueError
        If the sequence is empty.
    """
    if len(pairs) == 0:
        raise ValueError("empty evaluation set")
    c = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for obs, pred in pairs:
        c[int(obs), int(pred)] += 1
    return ConfusionMatrix(c)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights, inversely proportional to class frequency."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (N_CLASSES,):
            raise ValueError(f"class weights must have {N_CLASSES} entries")
        if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("class weights must be positive and finite")
        object.__setattr__(self, "weights", _frozen(w.copy()))

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls(np.ones(N_CLASSES))

    def for_label(self, label: FlareClass) -> float:
        return float(self.weights[int(label)])


def class_weights(counts: Sequence[int]) -> ClassWeights:
    """Inverse-frequency weights, normalized to mean one over the dataset.

    With per-class counts ``n_k`` and ``N = sum(n_k)``, the weight of class k is
    ``(N / 4) / n_k``, so ``w_k * n_k`` is constant and ``sum_k (n_k / N) w_k = 1``.
    The normalization keeps weighted losses on the same scale as their
    unweighted counterparts.
    """
    n = np.asarray(counts, dtype=float)
    if n.shape != (N_CLASSES,):
        raise ValueError(f"expected {N_CLASSES} class counts")
    if np.any(n <= 0):
        raise ValueError("empty class")
    total = n.sum()
    return ClassWeights((total / N_CLASSES) / n)


@dataclass(frozen=True)
class ScoringMatrix:
    """Symmetric, equitable 4x4 reward matrix built from climatology.

    Invariants checked at construction: symmetry (1e-12), column equitability
    ``sum_i p_i s_ij = 0`` (1e-10), perfect-forecast normalization
    ``sum_i p_i s_ii = 1`` (1e-10), and per-row diagonal dominance.
    """

    scores: np.ndarray
    climatology: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=float)
        p = np.asarray(self.climatology, dtype=float)
        if s.shape != (N_CLASSES, N_CLASSES):
            raise ValueError("scoring matrix must be 4x4")
        p = prob_dist(p)
        if np.max(np.abs(s - s.T)) > 1e-12:
            raise ValueError("scoring matrix must be symmetric")
        col = p @ s
        if np.max(np.abs(col)) > 1e-10:
            raise ValueError(f"scoring matrix violates equitability (max column bias {np.max(np.abs(col)):.3e})")
        norm = float(p @ np.diag(s))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"scoring matrix diagonal not normalized (got {norm!r})")
        if np.any(np.diag(s)[:, None] < s):
            raise ValueError("scoring matrix violates diagonal dominance")
        object.__setattr__(self, "scores", _frozen(s.copy()))
        object.__setattr__(self, "climatology", p)
