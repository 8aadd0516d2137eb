"""Ranking metrics: image AUROC / AP, pixel AUROC, and region-overlap PRO.

AUROC uses the Mann-Whitney statistic (ties get half credit), AP the
threshold-sweep sum with tied scores grouped, and PRO the region-overlap
convention: connected components with 8-connectivity, mean per-region overlap
integrated over the false-positive-rate interval [0, fpr_limit] and normalized
by the limit. Only operating points actually attainable by thresholding enter
the PRO curve; past the last attainable point the curve extends as a constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .errors import ShapeError, UndefinedMetricError, ValidationError

_EIGHT_CONN = np.ones((3, 3), dtype=int)


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    pos_rank_sum = float(np.sum(ranks[labels == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Area under the precision-recall steps, tied scores grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise UndefinedMetricError("AP needs at least one positive")

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    # last index of each tied group
    ends = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([ends, [len(sorted_scores) - 1]])
    tp = np.cumsum(sorted_labels == 1)[ends].astype(np.float64)
    total = ends + 1.0
    precision = tp / total
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def _pro_curve(maps, masks):
    """Attainable (fpr, mean region overlap) operating points, fpr ascending."""
    region_values = []  # per region: ascending pixel scores inside the region
    normal_values = []
    for amap, mask in zip(maps, masks):
        amap = np.asarray(amap, dtype=np.float64)
        mask = np.asarray(mask)
        if amap.shape != mask.shape:
            raise ShapeError(f"map shape {amap.shape} != mask shape {mask.shape}")
        labeled, n_regions = ndimage.label(mask, structure=_EIGHT_CONN)
        for r in range(1, n_regions + 1):
            region_values.append(np.sort(amap[labeled == r]))
        normal_values.append(amap[mask == 0])
    if not region_values:
        raise UndefinedMetricError("PRO needs at least one anomalous region")
    normal_sorted = np.sort(np.concatenate(normal_values)) if normal_values else np.empty(0)
    n_normal = normal_sorted.size

    pooled = np.concatenate([np.concatenate(region_values), normal_sorted])
    thresholds = np.unique(pooled)[::-1]  # descending: predictions grow monotonically

    mean_overlap = np.zeros(len(thresholds))
    for vals in region_values:
        hits = vals.size - np.searchsorted(vals, thresholds, side="left")
        mean_overlap += hits / vals.size
    mean_overlap /= len(region_values)

    if n_normal:
        fp = n_normal - np.searchsorted(normal_sorted, thresholds, side="left")
        fpr = fp / n_normal
    else:
        fpr = np.zeros(len(thresholds))

    # prepend the empty prediction; every curve starts at (0, 0)
    fpr = np.concatenate([[0.0], fpr])
    overlap = np.concatenate([[0.0], mean_overlap])
    return fpr, overlap


def pro(maps, masks, fpr_limit: float = 0.3) -> float:
    """Area under mean-region-overlap vs FPR on [0, fpr_limit], normalized."""
    if not 0.0 < fpr_limit <= 1.0:
        raise ValidationError(f"fpr_limit must be in (0, 1], got {fpr_limit}")
    fpr, overlap = _pro_curve(maps, masks)

    # keep the best overlap attained at each distinct FPR (later thresholds win)
    xs, ys = [], []
    for x, y in zip(fpr, overlap):
        if xs and x == xs[-1]:
            ys[-1] = max(ys[-1], y)
        else:
            xs.append(x)
            ys.append(y)

    area = 0.0
    prev_x, prev_y = xs[0], ys[0]
    for x, y in zip(xs[1:], ys[1:]):
        if x > fpr_limit:
            break
        area += (x - prev_x) * (y + prev_y) / 2.0
        prev_x, prev_y = x, y
    area += (fpr_limit - prev_x) * prev_y  # constant extension to the limit
    return area / fpr_limit


@dataclass
class EvalReport:
    """Detection/segmentation metrics, overall and per dataset."""

    image_auroc: float | None
    image_ap: float | None
    pixel_auroc: float | None
    pixel_pro: float | None
    n_images: int
    n_pixels: int
    per_dataset: dict

    def to_dict(self) -> dict:
        return {
            "image_auroc": self.image_auroc,
            "image_ap": self.image_ap,
            "pixel_auroc": self.pixel_auroc,
            "pixel_pro": self.pixel_pro,
            "n_images": self.n_images,
            "n_pixels": self.n_pixels,
            "per_dataset": self.per_dataset,
        }

    def to_json(self, config_echo: dict | None = None, indent: int = 2) -> str:
        payload = self.to_dict()
        if config_echo is not None:
            payload["config"] = config_echo
        return json.dumps(payload, indent=indent)

    def to_text(self) -> str:
        def fmt(v):
            return "  n/a " if v is None else f"{v:.4f}"

        lines = [
            f"{'dataset':<16}{'img AUROC':>10}{'img AP':>10}{'pix AUROC':>10}{'pix PRO':>10}",
            "-" * 56,
        ]
        for name, m in self.per_dataset.items():
            lines.append(
                f"{name:<16}{fmt(m['image_auroc']):>10}{fmt(m['image_ap']):>10}"
                f"{fmt(m['pixel_auroc']):>10}{fmt(m['pixel_pro']):>10}"
            )
        lines.append("-" * 56)
        lines.append(
            f"{'mean':<16}{fmt(self.image_auroc):>10}{fmt(self.image_ap):>10}"
            f"{fmt(self.pixel_auroc):>10}{fmt(self.pixel_pro):>10}"
        )
        lines.append(f"images: {self.n_images}   scored pixels: {self.n_pixels}")
        return "\n".join(lines)


def _metric_block(scores, labels, maps, masks) -> dict:
    out = {"image_auroc": None, "image_ap": None, "pixel_auroc": None, "pixel_pro": None}
    try:
        out["image_auroc"] = auroc(scores, labels)
    except UndefinedMetricError:
        pass
    try:
        out["image_ap"] = average_precision(scores, labels)
    except UndefinedMetricError:
        pass
    if maps:
        flat_maps = np.concatenate([m.reshape(-1) for m in maps])
        flat_masks = np.concatenate([m.reshape(-1) for m in masks])
        try:
            out["pixel_auroc"] = auroc(flat_maps, flat_masks)
        except UndefinedMetricError:
            pass
        try:
            out["pixel_pro"] = pro(maps, masks)
        except UndefinedMetricError:
            pass
    return out


def evaluate(outputs, records) -> EvalReport:
    """Score predicted outputs against ground-truth records, aligned by id.

    Image metrics run over every record; pixel metrics only over records that
    carry a mask. Metrics undefined for a slice (single class, no anomalous
    region) are reported as None rather than raised.
    """
    outputs = list(outputs)
    records = list(records)
    if len(outputs) != len(records):
        raise ValidationError(
            f"got {len(outputs)} outputs for {len(records)} records"
        )
    for i, (o, r) in enumerate(zip(outputs, records)):
        if o.id != r.id:
            raise ValidationError(f"id mismatch at index {i}: {o.id!r} vs {r.id!r}")

    scores = np.array([o.score for o in outputs])
    labels = np.array([r.label for r in records])
    masked = [(o, r) for o, r in zip(outputs, records) if r.mask is not None]
    maps = [o.amap for o, _ in masked]
    masks = [r.mask for _, r in masked]
    for o, r in masked:
        if o.amap.shape != r.mask.shape:
            raise ShapeError(
                f"record {r.id!r}: map shape {o.amap.shape} != mask shape {r.mask.shape}"
            )

    overall = _metric_block(scores, labels, maps, masks)
    per_dataset = {}
    names = dict.fromkeys(r.class_name for r in records)
    for name in names:
        idx = [i for i, r in enumerate(records) if r.class_name == name]
        sub_masked = [
            (outputs[i], records[i]) for i in idx if records[i].mask is not None
        ]
        per_dataset[name] = _metric_block(
            scores[idx],
            labels[idx],
            [o.amap for o, _ in sub_masked],
            [r.mask for _, r in sub_masked],
        )

    return EvalReport(
        image_auroc=overall["image_auroc"],
        image_ap=overall["image_ap"],
        pixel_auroc=overall["pixel_auroc"],
        pixel_pro=overall["pixel_pro"],
        n_images=len(records),
        n_pixels=int(sum(m.size for m in maps)),
        per_dataset=per_dataset,
    )


def aggregate_reports(reports) -> dict:
    """Mean and std of each metric across seeds, as table-cell pairs."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to aggregate")
    out = {"n_seeds": len(reports), "mean": {}, "std": {}}
    for key in ("image_auroc", "image_ap", "pixel_auroc", "pixel_pro"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if vals:
            out["mean"][key] = float(np.mean(vals))
            out["std"][key] = float(np.std(vals))
        else:
            out["mean"][key] = None
            out["std"][key] = None
    return out
