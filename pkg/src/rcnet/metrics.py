"""Segmentation metrics inside a field-of-view mask, plus error overlays.

Vessel pixels are the positive class.  Per-image values are aggregated two
ways: POOLED (confusion counts summed over images, AUC over the concatenated
pixels; the primary aggregate) and MEAN (average of per-image values, with
undefined entries left out).  Undefined ratios (absent class) are reported
as the sentinel None, rendered "n/a" in CSV.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def _check_maps(pred, gt, fov):
    if pred.shape != gt.shape or gt.shape != fov.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, "
                         f"fov {fov.shape}")


def confusion(pred: np.ndarray, gt: np.ndarray, fov: np.ndarray
              ) -> ConfusionCounts:
    _check_maps(pred, gt, fov)
    m = fov != 0
    if not m.any():
        raise ValueError("field of view is empty")
    p = pred[m] != 0
    g = gt[m] != 0
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
    )


def _ratio(num, den):
    return num / den if den > 0 else None


def scalar_metrics(c: ConfusionCounts):
    """(se, sp, acc, f1); None marks a ratio with an empty denominator."""
    if c.total == 0:
        raise ValueError("confusion counts are all zero")
    se = _ratio(c.tp, c.tp + c.fn)
    sp = _ratio(c.tn, c.tn + c.fp)
    acc = (c.tp + c.tn) / c.total
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return se, sp, acc, f1


def _tied_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing their average rank."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def auc_roc(scores: np.ndarray, gt: np.ndarray, fov: np.ndarray) -> float:
    """Probability that a random vessel pixel outscores a random background
    pixel, ties counted half (the rank form of the ROC area)."""
    _check_maps(scores, gt, fov)
    m = fov != 0
    s = np.asarray(scores, dtype=np.float64)[m]
    g = gt[m] != 0
    n_pos = int(np.count_nonzero(g))
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes inside the field of view")
    ranks = _tied_ranks(s)
    pos_rank_sum = ranks[g].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


OVERLAY_COLORS = {
    "tp": (0, 255, 0),
    "tn": (0, 0, 0),
    "fp": (255, 0, 0),
    "fn": (0, 0, 255),
    "outside": (32, 32, 32),
}


def render_overlay(pred: np.ndarray, gt: np.ndarray, fov: np.ndarray
                   ) -> np.ndarray:
    """uint8 [h, w, 3] error map: green TP, black TN, red FP, blue FN, dark
    gray outside the field of view."""
    _check_maps(pred, gt, fov)
    h, w = pred.shape
    out = np.empty((h, w, 3), np.uint8)
    out[:] = OVERLAY_COLORS["outside"]
    m = fov != 0
    p = pred != 0
    g = gt != 0
    out[m & p & g] = OVERLAY_COLORS["tp"]
    out[m & ~p & ~g] = OVERLAY_COLORS["tn"]
    out[m & p & ~g] = OVERLAY_COLORS["fp"]
    out[m & ~p & g] = OVERLAY_COLORS["fn"]
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ImageMetrics:
    image_id: str
    se: float | None
    sp: float | None
    acc: float | None
    f1: float | None
    auc: float | None

    def values(self):
        return (self.se, self.sp, self.acc, self.f1, self.auc)


@dataclass
class MetricsReport:
    per_image: list[ImageMetrics]
    pooled: ImageMetrics
    mean: ImageMetrics


def _image_metrics(image_id, counts, auc) -> ImageMetrics:
    se, sp, acc, f1 = scalar_metrics(counts)
    return ImageMetrics(image_id, se, sp, acc, f1, auc)


def evaluate_images(items, threshold: float = 0.5) -> MetricsReport:
    """items: iterable of (image_id, scores, gt, fov), reduced in id order.

    Per-image AUC is None when an image's FOV holds a single class; pooled
    AUC runs over all FOV pixels of all images concatenated.
    """
    items = sorted(items, key=lambda it: it[0])
    if not items:
        raise ValueError("nothing to evaluate")
    per_image = []
    pooled_counts = ConfusionCounts(0, 0, 0, 0)
    all_scores, all_gt = [], []
    for image_id, scores, gt, fov in items:
        pred = (np.asarray(scores, dtype=np.float64) >= threshold).astype(
            np.uint8)
        counts = confusion(pred, gt, fov)
        m = fov != 0
        g = gt[m] != 0
        try:
            auc = auc_roc(scores, gt, fov)
        except ValueError:
            auc = None
        per_image.append(_image_metrics(image_id, counts, auc))
        pooled_counts = pooled_counts + counts
        all_scores.append(np.asarray(scores, np.float64)[m])
        all_gt.append(g)
    scores_cat = np.concatenate(all_scores)
    gt_cat = np.concatenate(all_gt)
    ones = np.ones_like(gt_cat, np.uint8)
    if 0 < np.count_nonzero(gt_cat) < gt_cat.size:
        pooled_auc = auc_roc(scores_cat, gt_cat, ones)
    else:
        pooled_auc = None
    pooled = _image_metrics("POOLED", pooled_counts, pooled_auc)
    mean_vals = []
    for k in range(5):
        defined = [im.values()[k] for im in per_image
                   if im.values()[k] is not None]
        mean_vals.append(sum(defined) / len(defined) if defined else None)
    mean = ImageMetrics("MEAN", *mean_vals)
    return MetricsReport(per_image, pooled, mean)


def format_cell(v) -> str:
    return "n/a" if v is None else f"{v:.6f}"


def report_to_csv(report: MetricsReport) -> str:
    """Per-image rows then the POOLED row (the mean aggregate is available
    on the report object but is not a CSV row)."""
    lines = ["image_id,se,sp,acc,f1,auc"]
    for im in list(report.per_image) + [report.pooled]:
        cells = ",".join(format_cell(v) for v in im.values())
        lines.append(f"{im.image_id},{cells}")
    return "\n".join(lines) + "\n"
