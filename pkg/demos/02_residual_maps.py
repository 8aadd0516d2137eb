"""In-context residuals: how a query is compared against few-shot normals.

Two mechanisms, both parameter-light:
  * image level: adapt the global embedding, subtract the bank prototype,
    squash through a logistic head;
  * patch level: for every query patch, one minus the cosine similarity of the
    nearest patch anywhere in the bank, averaged over layers.

Run:  python demos/02_residual_maps.py
"""

import numpy as np

from gads import (
    FeatureRecord,
    ImageAdapter,
    PromptBank,
    ResidualHead,
    image_prototype,
    image_residual,
    patch_residual_map,
    residual_score,
)

rng = np.random.default_rng(7)

def record(rec_id, shift=None):
    base = rng.standard_normal(10)
    grids = {0: 0.1 * rng.standard_normal((6, 6, 10)) + base}
    if shift is not None:
        grids[0][1:4, 2:5, :] += shift  # plant a block of off-manifold patches
    return FeatureRecord(
        id=rec_id,
        class_name="widget",
        label=int(shift is not None),
        class_embed=base + 0.05 * rng.standard_normal(10),
        patch_grids=grids,
        image_dims=(12, 12),
    )

bank = PromptBank(prompts=[record(f"normal-{k}") for k in range(2)])
clean = record("query-clean")
defect = record("query-defect", shift=1.5 * rng.standard_normal(10))

# ---------------------------------------------------------------------------
# 1. Image-level residual scoring (untrained adapters: near-identity, head at
#    zero, so every score starts at 0.5 before training).
# ---------------------------------------------------------------------------
psi = ImageAdapter.init(10, rng)
head = ResidualHead.init(10)
proto = image_prototype(bank, psi)
for query in (clean, defect):
    res = image_residual(query, proto, psi)
    print(f"{query.id}: |residual| = {np.linalg.norm(res):.3f}, "
          f"untrained score = {residual_score(res, head):.3f}")

# ---------------------------------------------------------------------------
# 2. Patch-level nearest-neighbor residual map. No training involved at all:
#    the planted block has no close counterpart in the bank, so its cells
#    light up. Values are rescaled into [0, 1].
# ---------------------------------------------------------------------------
for query in (clean, defect):
    amap = patch_residual_map(query, bank, layers=[0])
    print(f"\n{query.id}: patch residual map (max {amap.max_score:.3f})")
    for row in amap.values:
        print("  " + " ".join(f"{v:.2f}" for v in row))

# ---------------------------------------------------------------------------
# 3. Self-reference nullity: a query that IS the bank scores exactly zero.
# ---------------------------------------------------------------------------
self_bank = PromptBank(prompts=[clean])
self_map = patch_residual_map(clean, self_bank, layers=[0])
print(f"\nself-bank map max: {self_map.values.max():.1e} (numerically zero)")
