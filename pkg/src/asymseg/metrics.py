"""Voxel-wise, lesion-wise, surface and precision-recall evaluation.

Metrics whose denominator vanishes are reported as ``None`` rather than 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .volume import as_array

# pairs of boundary points above which surface distance switches to a k-d tree
BRUTE_FORCE_PAIRS = 10**8


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ComponentLabeling:
    labels: np.ndarray
    component_count: int
    component_sizes: np.ndarray  # index i holds the size of component i+1


REPORT_FIELDS = ("dsc", "jaccard", "ppv", "tpr", "specificity", "f2",
                 "ltpr", "lfpr", "vd", "sd_mm", "apr", "seg_volume")


@dataclass
class MetricsReport:
    dsc: float | None = None
    jaccard: float | None = None
    ppv: float | None = None
    tpr: float | None = None
    specificity: float | None = None
    f2: float | None = None
    ltpr: float | None = None
    lfpr: float | None = None
    vd: float | None = None
    sd_mm: float | None = None
    apr: float | None = None
    seg_volume: int = 0
    pr_curve: list = field(default_factory=list)

    def as_dict(self):
        """Flat scalar fields; the curve is written separately."""
        d = asdict(self)
        d.pop("pr_curve")
        return d

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerow(["" if v is None else repr(v) for v in (getattr(self, k) for k in REPORT_FIELDS)])
        return buf.getvalue()

    def pr_curve_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("threshold", "precision", "recall"))
        for row in self.pr_curve:
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def _masks(p, g):
    p = as_array(p).astype(bool)
    g = as_array(g).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def _ratio(num, den):
    return None if den == 0 else num / den


def confusion(p, g):
    p, g = _masks(p, g)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def voxel_metrics(c):
    """dsc, jaccard, ppv, tpr, specificity, f2 and vd from confusion counts."""
    tp, fp, fn, tn = c.tp, c.fp, c.fn, c.tn
    vd = _ratio(abs((tp + fp) - (tp + fn)), tp + fn)
    return {
        "dsc": _ratio(2 * tp, 2 * tp + fp + fn),
        "jaccard": _ratio(tp, tp + fp + fn),
        "ppv": _ratio(tp, tp + fp),
        "tpr": _ratio(tp, tp + fn),
        "specificity": _ratio(tn, tn + fp),
        "f2": _ratio(5 * tp, 5 * tp + 4 * fn + fp),
        "vd": vd,
    }


def connected_components(m):
    """26-connected components, ids assigned in raster (x, y, z) scan order."""
    m = np.ascontiguousarray(as_array(m).astype(bool))
    labels, count = _kernels.label_components(m)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return ComponentLabeling(labels, count, sizes)


def lesion_metrics(p, g):
    """Lesion-count LTPR and LFPR with any-overlap detection."""
    p, g = _masks(p, g)
    lg = connected_components(g)
    lp = connected_components(p)
    hit_gt = np.unique(lg.labels[p & g])
    hit_pred = np.unique(lp.labels[p & g])
    ltpr = _ratio(int(np.count_nonzero(hit_gt)), lg.component_count)
    lfpr = _ratio(lp.component_count - int(np.count_nonzero(hit_pred)), lp.component_count)
    return ltpr, lfpr


def lesion_metrics_voxelwise(p, g):
    """The voxel-ratio reading, TP/(TP+FN) and FP/(FP+TN)."""
    c = confusion(p, g)
    return _ratio(c.tp, c.tp + c.fn), _ratio(c.fp, c.fp + c.tn)


def boundary(m):
    """Voxels of ``m`` with a 6-neighbour outside ``m`` or outside the grid."""
    m = as_array(m).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = m.copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return m & ~interior


def _boundary_points(m, spacing):
    return np.argwhere(boundary(m)).astype(np.float64) * np.asarray(spacing, dtype=np.float64)


def _nearest(src, dst):
    if len(src) * len(dst) <= BRUTE_FORCE_PAIRS:
        return _kernels.nearest_distances(np.ascontiguousarray(src), np.ascontiguousarray(dst))
    d, _ = cKDTree(dst).query(src)
    return d


def surface_distance(p, g, spacing=(1.0, 1.0, 1.0)):
    """Average symmetric surface distance in mm, or None if either mask is empty."""
    p, g = _masks(p, g)
    if not p.any() or not g.any():
        return None
    bp = _boundary_points(p, spacing)
    bg = _boundary_points(g, spacing)
    return 0.5 * (float(_nearest(bp, bg).mean()) + float(_nearest(bg, bp).mean()))


def pr_curve(prob, g, n_thresholds=100):
    """Precision-recall points and area.

    ``n_thresholds`` evenly spaced cut-offs k/n on [0, 1] are used; pass
    ``n_thresholds=None`` to cut at every distinct score instead.  Points
    without positive predictions are dropped.  The area is the trapezoid rule
    over recall after keeping the best precision per recall value, with the
    curve extended flat from its lowest-recall point back to recall 0.

    Returns ``(points, apr)`` with points as (threshold, precision, recall),
    ordered by increasing threshold.
    """
    s = as_array(prob, np.float64).ravel()
    y = as_array(g).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("shape mismatch between probabilities and ground truth")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("precision-recall undefined for empty ground truth")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp_cum = np.concatenate(([0], np.cumsum(y[order])))
    if n_thresholds is None:
        thresholds = np.unique(s)
    else:
        n = int(n_thresholds)
        thresholds = np.arange(n + 1) / n  # exactly k/n, unlike linspace
    # predicted positives at cut-off t: scores >= t
    n_pred = np.searchsorted(-s_sorted, -thresholds, side="right")
    tp = tp_cum[n_pred]
    keep = n_pred > 0
    points = [(float(t), tp_i / k, tp_i / n_pos)
              for t, tp_i, k in zip(thresholds[keep], tp[keep], n_pred[keep])]
    return points, _area(points)


def _area(points):
    if not points:
        return 0.0
    best = {}
    for _, prec, rec in points:
        best[rec] = max(prec, best.get(rec, -1.0))
    rec = np.array(sorted(best))
    prec = np.array([best[r] for r in rec])
    rec = np.concatenate(([0.0], rec))
    prec = np.concatenate(([prec[0]], prec))
    return float(np.sum(np.diff(rec) * (prec[1:] + prec[:-1]) / 2.0))


def evaluate(pred, g, spacing=(1.0, 1.0, 1.0), prob=None, n_thresholds=100):
    """Full report for a binary prediction (plus PR curve if ``prob`` is given)."""
    p, gm = _masks(pred, g)
    vm = voxel_metrics(confusion(p, gm))
    ltpr, lfpr = lesion_metrics(p, gm)
    report = MetricsReport(
        **vm,
        ltpr=ltpr,
        lfpr=lfpr,
        sd_mm=surface_distance(p, gm, spacing),
        seg_volume=int(p.sum()),
    )
    if prob is not None and gm.any():
        report.pr_curve, report.apr = pr_curve(prob, gm, n_thresholds)
    return report
