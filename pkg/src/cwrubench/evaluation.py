"""ROC analysis of multi-label detector outputs.

A single model serves both bearing locations: every segment is scored by the
three fault-type detectors (inner, outer, ball), and the segment counts
towards the detectors of the location its accelerometer sits at.  That gives
six detectors, each evaluated as an independent binary problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import ALL_CONDITIONS, LABEL_TYPES, Accelerometer, FaultType
from .nn.functional import sigmoid

TPR_GRID = np.linspace(0.0, 1.0, 1001)

_LOC_NAME = {"FE": "fan", "DE": "drive"}
_TYPE_INDEX = {ft: i for i, ft in enumerate(LABEL_TYPES)}
# Table column order: fan ball/inner/outer, then drive ball/inner/outer
DISPLAY_TYPES = (FaultType.BALL, FaultType.INNER, FaultType.OUTER)
DETECTORS: tuple[tuple[str, FaultType], ...] = tuple((acc, ft) for acc in ("FE", "DE") for ft in DISPLAY_TYPES)


def detector_name(acc: str, ft: FaultType) -> str:
    return f"{_LOC_NAME[acc]}-{ft.value.lower()}"


DETECTOR_NAMES = tuple(detector_name(a, t) for a, t in DETECTORS)


class UndefinedAurocError(ValueError):
    pass


# --------------------------------------------------------------------------- scored sets


@dataclass(frozen=True, eq=False)
class ScoredSet:
    logits: np.ndarray  # (n, 3): inner, outer, ball
    labels: np.ndarray  # (n, 3)
    accelerometers: np.ndarray
    conditions: np.ndarray
    record_ids: np.ndarray

    def __len__(self):
        return len(self.logits)

    def subset(self, mask) -> "ScoredSet":
        return ScoredSet(self.logits[mask], self.labels[mask], self.accelerometers[mask],
                         self.conditions[mask], self.record_ids[mask])

    @classmethod
    def concat(cls, parts: Sequence["ScoredSet"]) -> "ScoredSet":
        cat = lambda n: np.concatenate([getattr(p, n) for p in parts])  # noqa: E731
        return cls(cat("logits"), cat("labels"), cat("accelerometers"), cat("conditions"), cat("record_ids"))

    def signal_level(self) -> "ScoredSet":
        """One entry per record with the mean logit of its segments."""
        ids, first, inverse = np.unique(self.record_ids, return_index=True, return_inverse=True)
        sums = np.zeros((len(ids), 3))
        np.add.at(sums, inverse, self.logits)
        counts = np.bincount(inverse, minlength=len(ids))[:, None]
        return ScoredSet(sums / counts, self.labels[first], self.accelerometers[first],
                         self.conditions[first], ids.astype(object))


def score(model, features, batch_size: int = 512) -> ScoredSet:
    """Raw logits for every segment of ``features`` (already normalized with the model's stats)."""
    logits = model.predict_logits(features.inputs, batch_size=batch_size)
    if logits.shape != (len(features), 3):
        raise ValueError(f"model returned logits of shape {logits.shape} for {len(features)} inputs")
    return ScoredSet(np.asarray(logits, dtype=np.float64), np.asarray(features.labels), features.accelerometers,
                     features.conditions, features.record_ids)


def detector_data(scored: ScoredSet, acc: str, ft: FaultType) -> tuple[np.ndarray, np.ndarray]:
    mask = scored.accelerometers == Accelerometer(acc).value
    j = _TYPE_INDEX[FaultType(ft)]
    return scored.logits[mask, j], scored.labels[mask, j]


# --------------------------------------------------------------------------- ROC


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auroc: float

    def to_dict(self):
        return {"fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(), "auroc": self.auroc}


def roc(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores (descending); tied scores form one step."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAurocError(f"AUROC undefined with {n_pos} positives and {n_neg} negatives")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    auroc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(fpr, tpr, np.r_[np.inf, s[last]], auroc)


def detector_aurocs(scored: ScoredSet) -> dict[str, float]:
    return {detector_name(a, t): roc(*detector_data(scored, a, t)).auroc for a, t in DETECTORS}


def macro_auroc(scored: ScoredSet) -> float:
    """Mean AUROC over the detectors of every location present in ``scored``.

    A set holding one accelerometer's segments (a per-location model) is
    averaged over that location's three detectors.
    """
    present = set(scored.accelerometers.tolist())
    vals = [roc(*detector_data(scored, a, t)).auroc for a, t in DETECTORS if a in present]
    if not vals:
        raise UndefinedAurocError("no segments to score")
    return float(np.mean(vals))


@dataclass(frozen=True, eq=False)
class AveragedRoc:
    tpr: np.ndarray
    mean_fpr: np.ndarray
    std_fpr: np.ndarray
    n_curves: int

    def to_dict(self):
        return {"tpr": self.tpr.tolist(), "mean_fpr": self.mean_fpr.tolist(),
                "std_fpr": self.std_fpr.tolist(), "n_curves": self.n_curves}


def fpr_on_grid(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """Smallest FPR among the curve's points whose TPR reaches each grid value."""
    idx = np.searchsorted(curve.tpr, np.asarray(grid) - 1e-12, side="left")
    return curve.fpr[np.minimum(idx, curve.fpr.size - 1)]


def average_rocs_horizontal(curves: Sequence[RocCurve], grid=None) -> AveragedRoc:
    if not curves:
        raise ValueError("need at least one curve")
    grid = TPR_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty TPR grid")
    table = np.stack([fpr_on_grid(c, grid) for c in curves])
    std = table.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(grid.size)
    return AveragedRoc(grid, table.mean(axis=0), std, len(curves))


def fpr_at_tpr(avg: AveragedRoc, tpr: float) -> float:
    if not 0 < tpr <= 1:
        raise ValueError(f"tpr must be in (0, 1], got {tpr}")
    return float(avg.mean_fpr[int(np.argmin(np.abs(avg.tpr - tpr)))])


# --------------------------------------------------------------------------- fault detection


@dataclass(frozen=True, eq=False)
class DetectionSet:
    probability: np.ndarray
    label: np.ndarray
    accelerometers: np.ndarray
    conditions: np.ndarray


def fault_detection(scored: ScoredSet) -> DetectionSet:
    """Soft-voting ensemble: mean of the three fault-type probabilities; label is any fault."""
    p = sigmoid(scored.logits).mean(axis=1)
    label = scored.labels.max(axis=1).astype(np.uint8)
    return DetectionSet(p, label, scored.accelerometers, scored.conditions)


def detection_curves(det: DetectionSet) -> dict[str, RocCurve]:
    out = {}
    for acc in ("FE", "DE"):
        m = det.accelerometers == acc
        out[_LOC_NAME[acc]] = roc(det.probability[m], det.label[m])
    return out


# --------------------------------------------------------------------------- logit summaries


def logit_summaries(realizations: Sequence[tuple[int, ScoredSet]]) -> dict:
    """Five-number summaries of test logits per detector and condition, pooled over realizations."""
    out = {}
    for acc, ft in DETECTORS:
        j = _TYPE_INDEX[ft]
        per_cond = {}
        for cond in ALL_CONDITIONS:
            pooled, seeds = [], []
            for seed, sc in realizations:
                m = (sc.conditions == cond.key) & (sc.accelerometers == acc)
                if m.any():
                    pooled.append(sc.logits[m, j])
                    seeds.append(seed)
            if pooled:
                v = np.concatenate(pooled)
                q = np.percentile(v, [0, 25, 50, 75, 100])
                per_cond[cond.key] = {"min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4],
                                      "n": int(v.size), "realizations": seeds}
            else:
                per_cond[cond.key] = {"n": 0, "realizations": []}
        out[detector_name(acc, ft)] = per_cond
    return out


# --------------------------------------------------------------------------- aggregation


@dataclass
class Realization:
    seed: int
    aurocs: dict[str, float]
    curves: dict[str, RocCurve]
    detection_aurocs: dict[str, float]
    detection_curves: dict[str, RocCurve]
    scored: ScoredSet | None = None
    test_records: list[str] = field(default_factory=list)

    @property
    def macro(self) -> float:
        return float(np.mean([self.aurocs[n] for n in DETECTOR_NAMES]))


def evaluate_realization(scored: ScoredSet, seed: int, keep_scores: bool = True) -> Realization:
    curves = {detector_name(a, t): roc(*detector_data(scored, a, t)) for a, t in DETECTORS}
    det = detection_curves(fault_detection(scored))
    return Realization(
        seed,
        {k: c.auroc for k, c in curves.items()},
        curves,
        {k: c.auroc for k, c in det.items()},
        det,
        scored if keep_scores else None,
    )


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class RunReport:
    seeds: list[int]
    cells: dict[str, tuple[float, float]]
    fe_de_average: dict[str, tuple[float, float]]
    macro: tuple[float, float]
    detection: dict[str, tuple[float, float]]
    detection_macro: tuple[float, float]
    per_realization: dict[int, dict[str, float]]
    averaged_curves: dict[str, AveragedRoc] = field(default_factory=dict)
    type_curves: dict[str, AveragedRoc] = field(default_factory=dict)
    detection_avg_curves: dict[str, AveragedRoc] = field(default_factory=dict)
    fpr_at_90_tpr: dict[str, float] = field(default_factory=dict)
    logit_boxplots: dict = field(default_factory=dict)
    single_realization: bool = False
    failed_seeds: dict[int, str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "single_realization": self.single_realization,
            "cells": {k: {"mean": m, "std": s} for k, (m, s) in self.cells.items()},
            "fe_de_average": {k: {"mean": m, "std": s} for k, (m, s) in self.fe_de_average.items()},
            "macro": {"mean": self.macro[0], "std": self.macro[1]},
            "detection": {k: {"mean": m, "std": s} for k, (m, s) in self.detection.items()},
            "detection_macro": {"mean": self.detection_macro[0], "std": self.detection_macro[1]},
            "per_realization": {str(k): v for k, v in self.per_realization.items()},
            "fpr_at_90_tpr": self.fpr_at_90_tpr,
            "averaged_curves": {k: v.to_dict() for k, v in self.averaged_curves.items()},
            "type_curves": {k: v.to_dict() for k, v in self.type_curves.items()},
            "detection_curves": {k: v.to_dict() for k, v in self.detection_avg_curves.items()},
            "logit_boxplots": self.logit_boxplots,
            "failed_seeds": {str(k): v for k, v in self.failed_seeds.items()},
            "metadata": self.metadata,
        }


def summarize_cells(cells: dict[str, tuple[float, float]]):
    """Location-average and macro columns from the six detector means.

    The location average of a fault type carries the sample std of its two
    location means; the macro average carries the population std of the six
    detector means (this is how the published tables are computed).
    """
    fe_de = {}
    for ft in DISPLAY_TYPES:
        pair = [cells[detector_name(a, ft)][0] for a in ("FE", "DE")]
        fe_de[ft.value.lower()] = (float(np.mean(pair)), float(np.std(pair, ddof=1)))
    six = [cells[n][0] for n in DETECTOR_NAMES]
    return fe_de, (float(np.mean(six)), float(np.std(six)))


def aggregate(realizations: Sequence[Realization], failed: dict[int, str] | None = None,
              metadata: dict | None = None) -> RunReport:
    if not realizations:
        raise ValueError("nothing to aggregate")
    cells = {n: _mean_std([r.aurocs[n] for r in realizations]) for n in DETECTOR_NAMES}
    fe_de, macro = summarize_cells(cells)
    detection = {k: _mean_std([r.detection_aurocs[k] for r in realizations]) for k in ("fan", "drive")}
    det_macro = float(np.mean([m for m, _ in detection.values()]))
    det_std = float(np.std([m for m, _ in detection.values()]))

    averaged = {n: average_rocs_horizontal([r.curves[n] for r in realizations]) for n in DETECTOR_NAMES}
    type_curves = {}
    for ft in DISPLAY_TYPES:
        pooled = [r.curves[detector_name(a, ft)] for r in realizations for a in ("FE", "DE")]
        type_curves[ft.value.lower()] = average_rocs_horizontal(pooled)
    det_curves = {k: average_rocs_horizontal([r.detection_curves[k] for r in realizations]) for k in ("fan", "drive")}

    scored = [(r.seed, r.scored) for r in realizations if r.scored is not None]
    return RunReport(
        seeds=[r.seed for r in realizations],
        cells=cells,
        fe_de_average=fe_de,
        macro=macro,
        detection=detection,
        detection_macro=(det_macro, det_std),
        per_realization={r.seed: dict(r.aurocs, macro=r.macro) for r in realizations},
        averaged_curves=averaged,
        type_curves=type_curves,
        detection_avg_curves=det_curves,
        fpr_at_90_tpr={k: fpr_at_tpr(v, 0.9) for k, v in type_curves.items()},
        logit_boxplots=logit_summaries(scored) if scored else {},
        single_realization=len(realizations) == 1,
        failed_seeds=dict(failed or {}),
        metadata=dict(metadata or {}),
    )
