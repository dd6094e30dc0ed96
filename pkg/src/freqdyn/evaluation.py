"""Event decoding and intersection-based detection scoring.

Frame posteriors become timestamped events by thresholding filtered
activation curves. Detections are matched to ground truth with the
intersection criteria: a detection is valid when same-class ground truth
covers at least `dtc` of it, and a ground-truth event counts as found when
valid detections cover at least `gtc` of it. The headline score integrates
the per-class true-positive-rate envelope over effective false positives
per hour, penalizing cross-class spread.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import EvalConfig
from .errors import ConfigurationError
from .events import Event


# -- posterior smoothing and decoding -----------------------------------------

def median_filter_posteriors(posteriors: np.ndarray,
                             widths) -> np.ndarray:
    """Median-filter each class row along time with edge replication.

    `widths` is one odd window size for all classes or a per-class sequence.
    """
    if posteriors.ndim != 2:
        raise ConfigurationError(
            f"posteriors must be [C, T], got shape {posteriors.shape}")
    n_classes = posteriors.shape[0]
    if np.isscalar(widths):
        widths = [int(widths)] * n_classes
    widths = list(widths)
    if len(widths) != n_classes:
        raise ConfigurationError(
            f"{len(widths)} filter widths for {n_classes} classes")
    out = np.empty_like(posteriors)
    for c, width in enumerate(widths):
        if width < 1 or width % 2 == 0:
            raise ConfigurationError(
                f"median filter width must be odd and positive, got {width}")
        out[c] = ndimage.median_filter(posteriors[c], size=width,
                                       mode="nearest")
    return out


def decode_events(posteriors: np.ndarray, class_names: tuple[str, ...],
                  threshold: float, hop_seconds: float,
                  filename: str) -> list[Event]:
    """Maximal runs at or above the threshold become events.

    Each event spans [start*hop, end*hop) and carries the mean activation
    over its run as confidence.
    """
    if posteriors.shape[0] != len(class_names):
        raise ConfigurationError(
            f"{posteriors.shape[0]} posterior rows for "
            f"{len(class_names)} classes")
    events = []
    for c, name in enumerate(class_names):
        active = np.concatenate([[False], posteriors[c] >= threshold,
                                 [False]])
        edges = np.flatnonzero(np.diff(active.astype(np.int8)))
        for a, b in zip(edges[::2], edges[1::2]):
            events.append(Event(filename, a * hop_seconds, b * hop_seconds,
                                name,
                                float(posteriors[c, a:b].mean())))
    return events


# -- intersection matching -----------------------------------------------------

def _overlap(a: Event, b: Event) -> float:
    return max(0.0, min(a.offset, b.offset) - max(a.onset, b.onset))


def _by_class_file(events: list[Event]) -> dict[tuple[str, str],
                                                list[Event]]:
    table: dict[tuple[str, str], list[Event]] = {}
    for e in events:
        table.setdefault((e.label, e.filename), []).append(e)
    return table


def intersection_counts(detections: list[Event], ground_truth: list[Event],
                        dtc: float, gtc: float) -> dict[str,
                                                        tuple[int, int]]:
    """Per-class (true positives, false positives) under the intersection
    criteria. True positives count ground-truth events with enough coverage;
    false positives count detections that failed the detection criterion."""
    det_table = _by_class_file(detections)
    gt_table = _by_class_file(ground_truth)
    classes = sorted({label for label, _ in det_table} |
                     {label for label, _ in gt_table})
    counts = {}
    for label in classes:
        tp = fp = 0
        files = {f for l, f in det_table if l == label} | \
                {f for l, f in gt_table if l == label}
        for filename in files:
            dets = det_table.get((label, filename), [])
            gts = gt_table.get((label, filename), [])
            valid = []
            for d in dets:
                inter = sum(_overlap(d, g) for g in gts)
                if inter >= dtc * (d.offset - d.onset):
                    valid.append(d)
                else:
                    fp += 1
            for g in gts:
                cover = sum(_overlap(d, g) for d in valid)
                if cover >= gtc * (g.offset - g.onset):
                    tp += 1
        counts[label] = (tp, fp)
    return counts


def intersection_f1(detections: list[Event], ground_truth: list[Event],
                    dtc: float = 0.7, gtc: float = 0.7) -> dict:
    """Per-class and macro F1 from the intersection counts."""
    counts = intersection_counts(detections, ground_truth, dtc, gtc)
    n_gt = {}
    for g in ground_truth:
        n_gt[g.label] = n_gt.get(g.label, 0) + 1
    per_class = {}
    for label in sorted(n_gt):
        tp, fp = counts.get(label, (0, 0))
        fn = n_gt[label] - tp
        denom = 2 * tp + fp + fn
        per_class[label] = {"tp": tp, "fp": fp, "fn": fn,
                            "f1": 2 * tp / denom if denom else 0.0}
    macro = (sum(v["f1"] for v in per_class.values()) / len(per_class)
             if per_class else 0.0)
    return {"per_class": per_class, "macro_f1": macro}


# -- the area score ------------------------------------------------------------

@dataclass(frozen=True)
class PsdsReport:
    value: float
    class_names: tuple[str, ...]
    excluded: tuple[str, ...]
    n_gt: dict[str, int]
    duration_hours: float
    n_thresholds: int

    def format_text(self) -> str:
        lines = [f"psds1 = {self.value:.6f}",
                 f"dataset hours = {self.duration_hours:.6f}",
                 f"thresholds = {self.n_thresholds}"]
        for name in self.class_names:
            lines.append(f"  {name}: n_gt = {self.n_gt[name]}")
        for name in self.excluded:
            lines.append(f"  {name}: excluded (no ground truth)")
        return "\n".join(lines)


def threshold_grid(n: int) -> np.ndarray:
    """n thresholds centered in equal slices of (0, 1)."""
    if n < 1:
        raise ConfigurationError(f"need at least one threshold, got {n}")
    return (np.arange(n) + 0.5) / n


def psds1(detections_per_threshold: list[list[Event]],
          ground_truth: list[Event], durations: dict[str, float],
          config: EvalConfig,
          class_names: tuple[str, ...] | None = None) -> PsdsReport:
    """Area under the effective-TPR curve over [0, e_max] false positives
    per hour, normalized to [0, 1].

    Every threshold contributes one operating point per class; the curve at
    a given rate is the best TPR among points at or below that rate, and
    the effective TPR at each rate is mean minus `alpha_st` standard
    deviations across classes, floored at zero. Classes with no ground
    truth are excluded with a warning.
    """
    if not durations:
        raise ConfigurationError("durations table is empty")
    duration_hours = sum(durations.values()) / 3600.0

    n_gt: dict[str, int] = {}
    for g in ground_truth:
        n_gt[g.label] = n_gt.get(g.label, 0) + 1
    if class_names is None:
        class_names = tuple(sorted(n_gt))
    excluded = tuple(c for c in class_names if n_gt.get(c, 0) == 0)
    scored = tuple(c for c in class_names if c not in excluded)
    if excluded:
        warnings.warn("classes without ground truth excluded from scoring: "
                      + ", ".join(excluded))
    if not scored:
        return PsdsReport(0.0, (), excluded, n_gt, duration_hours,
                          len(detections_per_threshold))

    points = {c: [] for c in scored}
    for dets in detections_per_threshold:
        counts = intersection_counts(dets, ground_truth, config.dtc,
                                     config.gtc)
        for c in scored:
            tp, fp = counts.get(c, (0, 0))
            points[c].append((fp / duration_hours, tp / n_gt[c]))

    value = _envelope_area(points, config.e_max, config.alpha_st)
    return PsdsReport(value, scored, excluded, n_gt, duration_hours,
                      len(detections_per_threshold))


def _envelope_area(points: dict[str, list[tuple[float, float]]],
                   e_max: float, alpha_st: float) -> float:
    """Integrate the clipped mean-minus-std envelope between breakpoints.

    Each class curve is a step function: sort its points by false-positive
    rate, take the running best TPR, and look up values at every breakpoint
    with a binary search.
    """
    classes = sorted(points)
    efprs = np.concatenate([[0.0, e_max]] +
                           [np.array([e for e, _ in points[c]])
                            for c in classes])
    breaks = np.unique(efprs[efprs <= e_max])
    if breaks[-1] != e_max:
        breaks = np.append(breaks, e_max)

    curves = np.zeros((len(classes), len(breaks)))
    for i, c in enumerate(classes):
        pts = np.array(points[c], dtype=np.float64).reshape(-1, 2)
        order = np.argsort(pts[:, 0], kind="stable")
        ef = pts[order, 0]
        best = np.maximum.accumulate(pts[order, 1])
        idx = np.searchsorted(ef, breaks, side="right") - 1
        curves[i] = np.where(idx >= 0, best[np.maximum(idx, 0)], 0.0)

    eff = curves.mean(axis=0) - alpha_st * curves.std(axis=0, ddof=0)
    eff = np.clip(eff, 0.0, None)
    return float(np.sum(eff[:-1] * np.diff(breaks)) / e_max)
