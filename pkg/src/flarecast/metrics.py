"""Categorical and probabilistic forecast-verification scores.

Implements the Gerrity scoring matrix and the multicategory skill score built
on it (GMGS), the binarized true skill statistic and Brier skill score for
the >=M event, the per-cell influence decomposition of the GMGS, and the
harmonic mean used to summarize performance/reliability trade-offs.

All functions are pure; inputs are immutable containers from
:mod:`flarecast.core`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import N_CLASSES, ConfusionMatrix, FlareClass, ScoringMatrix, build_confusion

__all__ = [
    "gerrity_matrix",
    "gmgs",
    "tss_ge_m",
    "bss_ge_m",
    "gmgs_influence",
    "harmonic_mean",
    "InfluenceEntry",
    "MetricReport",
    "build_report",
]

# Classes at or above this rank count as the binary "event" for TSS/BSS.
EVENT_THRESHOLD = FlareClass.M


def _validated_climatology(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (N_CLASSES,):
        raise ValueError(f"climatology must have {N_CLASSES} probabilities")
    if np.any(p <= 0.0):
        raise ValueError("degenerate climatology")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"climatology must sum to 1 (got {p.sum()!r})")
    return p


def gerrity_matrix(climatology) -> ScoringMatrix:
    """Build the Gerrity scoring matrix for a 4-class ordinal climatology.

    Parameters
    ----------
    climatology : array_like
        Class probabilities ``p_i > 0`` summing to 1, in ascending class order.

    Returns
    -------
    ScoringMatrix
        Symmetric, equitable reward matrix whose climatology-weighted diagonal
        sums to 1. With cumulative odds ``a_r = (1 - D_r) / D_r`` over the
        cumulative probabilities ``D_r``, the entries are

        ``s_ii = (1/3) [ sum_{r<i} 1/a_r + sum_{r=i..3} a_r ]``
        ``s_ij = (1/3) [ sum_{r<i} 1/a_r - (j - i) + sum_{r=j..3} a_r ]``  (i < j)

        using 1-indexed classes, and ``s_ji = s_ij``.

    Raises
    ------
    ValueError
        If any probability is non-positive, or the cumulative probability
        reaches 1 before the last class.
    """
    p = _validated_climatology(climatology)
    cum = np.cumsum(p)[:-1]
    if np.any(cum >= 1.0):
        raise ValueError("degenerate climatology: cumulative probability reaches 1 before last class")
    odds = (1.0 - cum) / cum
    inv = 1.0 / odds
    s = np.zeros((N_CLASSES, N_CLASSES))
    for i in range(N_CLASSES):
        for j in range(i, N_CLASSES):
            s[i, j] = (inv[:i].sum() - (j - i) + odds[j:].sum()) / (N_CLASSES - 1)
            s[j, i] = s[i, j]
    return ScoringMatrix(s, p)


def gmgs(cm: ConfusionMatrix, climatology=None) -> float:
    """Multicategory Gerrity-based skill score of a confusion matrix.

    Parameters
    ----------
    cm : ConfusionMatrix
        Observed-by-predicted counts.
    climatology : array_like, optional
        Explicit class probabilities for the scoring matrix. By default the
        observed (row-sum) distribution of ``cm`` is used.

    Returns
    -------
    float
        ``(1/N) sum_ij c_ij s_ij``. Perfect forecasts score 1; constant
        forecasts score 0 by equitability.
    """
    if climatology is None:
        climatology = cm.observed_counts() / cm.n
    s = gerrity_matrix(climatology)
    return float((cm.counts * s.scores).sum() / cm.n)


def _binarize(cm: ConfusionMatrix) -> Tuple[int, int, int, int]:
    t = int(EVENT_THRESHOLD)
    c = cm.counts
    tp = int(c[t:, t:].sum())
    fn = int(c[t:, :t].sum())
    fp = int(c[:t, t:].sum())
    tn = int(c[:t, :t].sum())
    return tp, fn, fp, tn


def tss_ge_m(cm: ConfusionMatrix) -> float:
    """True skill statistic after binarizing at the M-class threshold.

    Events are observations/predictions in {M, X}. Returns the hit rate minus
    the false-alarm rate, ``TP/(TP+FN) - FP/(FP+TN)``.

    Raises
    ------
    ValueError
        If the observed set is all-positive or all-negative after
        binarization.
    """
    tp, fn, fp, tn = _binarize(cm)
    if tp + fn == 0 or fp + tn == 0:
        raise ValueError("undefined TSS: binarized observations are single-class")
    return tp / (tp + fn) - fp / (fp + tn)


def bss_ge_m(forecasts: Sequence[Tuple[np.ndarray, FlareClass]]) -> float:
    """Brier skill score for the >=M event from probabilistic forecasts.

    Parameters
    ----------
    forecasts : sequence of (probabilities, observed class)
        Each probability vector is a 4-class distribution; the event forecast
        is ``q = p_M + p_X``.

    Returns
    -------
    float
        ``1 - BS / BS_clim`` where ``BS`` is the mean squared error of ``q``
        against the binary outcome and ``BS_clim = r (1 - r)`` uses the event
        base rate ``r`` of the evaluated sequence itself.

    Raises
    ------
    ValueError
        If the sequence is empty or its base rate is 0 or 1.
    """
    if len(forecasts) == 0:
        raise ValueError("empty evaluation set")
    t = int(EVENT_THRESHOLD)
    q = np.array([float(np.asarray(p)[t:].sum()) for p, _ in forecasts])
    o = np.array([1.0 if int(label) >= t else 0.0 for _, label in forecasts])
    rate = float(o.mean())
    if rate == 0.0 or rate == 1.0:
        raise ValueError("degenerate climatology for BSS")
    bs = float(((q - o) ** 2).mean())
    bs_clim = rate * (1.0 - rate)
    return 1.0 - bs / bs_clim


@dataclass(frozen=True)
class InfluenceEntry:
    """How much one misclassification cell degrades the GMGS."""

    observed: FlareClass
    predicted: FlareClass
    influence: float


def gmgs_influence(cm: ConfusionMatrix, s: ScoringMatrix) -> List[InfluenceEntry]:
    """Per-cell GMGS degradation ``c_ij (s_ii - s_ij) / N`` for i != j.

    Returns all off-diagonal cells sorted by descending influence (ties broken
    by class order for determinism). Diagonal cells contribute exactly zero
    and are excluded.
    """
    entries = []
    n = cm.n
    for i in range(N_CLASSES):
        for j in range(N_CLASSES):
            if i == j:
                continue
            infl = float(cm.counts[i, j] * (s.scores[i, i] - s.scores[i, j]) / n)
            entries.append(InfluenceEntry(FlareClass(i), FlareClass(j), infl))
    entries.sort(key=lambda e: (-e.influence, int(e.observed), int(e.predicted)))
    return entries


def harmonic_mean(a: float, b: float) -> float:
    """Harmonic mean ``2ab / (a + b)`` of two strictly positive scores."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("harmonic mean undefined for non-positive inputs")
    return 2.0 * a * b / (a + b)


@dataclass(frozen=True)
class MetricReport:
    """Bundle of verification scores for one evaluated forecast set."""

    gmgs: float
    tss_ge_m: float
    bss_ge_m: Optional[float]
    hm: Optional[float]
    confusion: ConfusionMatrix
    influence_table: Tuple[InfluenceEntry, ...]

    def __post_init__(self) -> None:
        vals = [e.influence for e in self.influence_table]
        if any(a < b for a, b in zip(vals, vals[1:])):
            raise ValueError("influence table must be sorted descending")
        if any(e.observed == e.predicted for e in self.influence_table):
            raise ValueError("influence table must exclude diagonal pairs")
        object.__setattr__(self, "influence_table", tuple(self.influence_table))

    def to_text(self) -> str:
        """Plain-text table: scores, confusion matrix, top influence rows."""
        out = io.StringIO()
        out.write("metric        value\n")
        out.write(f"gmgs          {self.gmgs: .6f}\n")
        out.write(f"tss_ge_m      {self.tss_ge_m: .6f}\n")
        out.write(f"bss_ge_m      {self.bss_ge_m: .6f}\n" if self.bss_ge_m is not None else "bss_ge_m      n/a\n")
        out.write(f"hm            {self.hm: .6f}\n" if self.hm is not None else "hm            n/a\n")
        names = [c.name for c in FlareClass]
        out.write("\nconfusion (rows observed, cols predicted)\n")
        out.write("      " + "".join(f"{n:>8}" for n in names) + "\n")
        for i, name in enumerate(names):
            row = "".join(f"{int(v):>8}" for v in self.confusion.counts[i])
            out.write(f"  {name:>4}{row}\n")
        out.write("\ntop influence (observed -> predicted)\n")
        for e in self.influence_table[:5]:
            out.write(f"  {e.observed.name} -> {e.predicted.name}  {e.influence:.6f}\n")
        return out.getvalue()

    def to_csv(self) -> str:
        """Machine-readable companion, one `metric,value` row per line."""
        rows = ["metric,value"]
        rows.append(f"gmgs,{self.gmgs!r}")
        rows.append(f"tss_ge_m,{self.tss_ge_m!r}")
        rows.append(f"bss_ge_m,{self.bss_ge_m!r}" if self.bss_ge_m is not None else "bss_ge_m,n/a")
        rows.append(f"hm,{self.hm!r}" if self.hm is not None else "hm,n/a")
        for i, obs in enumerate(FlareClass):
            for j, pred in enumerate(FlareClass):
                rows.append(f"confusion_{obs.name}_{pred.name},{int(self.confusion.counts[i, j])}")
        for e in self.influence_table:
            rows.append(f"influence_{e.observed.name}_{e.predicted.name},{e.influence!r}")
        return "\n".join(rows) + "\n"


def build_report(
    pairs: Sequence[Tuple[FlareClass, FlareClass]],
    prob_forecasts: Optional[Sequence[Tuple[np.ndarray, FlareClass]]] = None,
    climatology=None,
) -> MetricReport:
    """Assemble a MetricReport from hard (observed, predicted) pairs.

    ``prob_forecasts`` enables the Brier skill score; without it the report
    carries ``bss_ge_m=None``. The harmonic mean of GMGS and BSS is filled in
    only when both are strictly positive.
    """
    cm = build_confusion(pairs)
    clim = cm.observed_counts() / cm.n if climatology is None else np.asarray(climatology, dtype=float)
    s = gerrity_matrix(clim)
    g = float((cm.counts * s.scores).sum() / cm.n)
    tss = tss_ge_m(cm)
    bss = bss_ge_m(prob_forecasts) if prob_forecasts is not None else None
    hm = harmonic_mean(g, bss) if (bss is not None and g > 0.0 and bss > 0.0) else None
    return MetricReport(
        gmgs=g,
        tss_ge_m=tss,
        bss_ge_m=bss,
        hm=hm,
        confusion=cm,
        influence_table=tuple(gmgs_influence(cm, s)),
    )
