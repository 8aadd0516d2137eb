"""The evaluation suite: AUROC, AP, and region-overlap PRO on toy predictions.

PRO differs from pixel AUROC in that it scores each connected ground-truth
region by its own overlap, so one huge easy defect cannot hide ten missed
small ones. Integration runs over the false-positive-rate budget [0, 0.3].

Run:  python demos/05_evaluation.py
"""

import numpy as np

from gads import AnomalyOutput, FeatureRecord, auroc, average_precision, evaluate, pro

rng = np.random.default_rng(3)

# ---------------------------------------------------------------------------
# 1. Ranking metrics on hand-made scores.
# ---------------------------------------------------------------------------
labels = [0, 0, 0, 1, 1]
print("separable scores :", auroc([0.1, 0.2, 0.3, 0.8, 0.9], labels))
print("inverted scores  :", auroc([0.9, 0.8, 0.7, 0.2, 0.1], labels))
print("tied scores      :", auroc([0.5] * 5, labels))
print("AP, positive last:", average_precision([0.9, 0.8, 0.7, 0.6, 0.95], [0, 0, 0, 1, 1]))

# ---------------------------------------------------------------------------
# 2. PRO on a two-region mask: a predictor that only finds the big region
#    earns half the per-region credit, not the pixel-share it would get from
#    pixel AUROC.
# ---------------------------------------------------------------------------
mask = np.zeros((8, 8), dtype=np.uint8)
mask[0:4, 0:4] = 1   # 16-pixel region
mask[6, 6] = 1       # single-pixel region
big_only = np.zeros((8, 8))
big_only[0:4, 0:4] = 1.0
print(f"\nprediction covering only the large region: PRO = {pro([big_only], [mask]):.3f}")
both = big_only.copy()
both[6, 6] = 1.0
print(f"prediction covering both regions:          PRO = {pro([both], [mask]):.3f}")

# ---------------------------------------------------------------------------
# 3. The full report over a small mixed set, with a per-dataset breakdown.
# ---------------------------------------------------------------------------
outputs, records = [], []
for i in range(12):
    label = i % 3 == 0
    mask = np.zeros((8, 8), dtype=np.uint8)
    if label:
        mask[2:5, 2:5] = 1
    rec = FeatureRecord(
        id=f"r{i}",
        class_name=f"ds{i % 2}",
        label=int(label),
        class_embed=rng.standard_normal(4),
        patch_grids={0: rng.standard_normal((2, 2, 4))},
        image_dims=(8, 8),
        mask=mask,
    )
    amap = 0.15 * rng.random((8, 8)) + 0.7 * mask  # decent but imperfect detector
    outputs.append(AnomalyOutput(id=rec.id, score=0.2 + 0.6 * label + 0.1 * rng.random(),
                                 amap=amap))
    records.append(rec)

report = evaluate(outputs, records)
print("\n" + report.to_text())
