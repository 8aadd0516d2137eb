"""Walk through the feature container: build records, write, read, sample prompts.

The engine never sees images. Everything it consumes is packed into one binary
container per split: a class-token embedding, per-layer patch grids, the label,
and (optionally) a packed ground-truth mask per record.

Run:  python demos/01_feature_containers.py
"""

import tempfile
from pathlib import Path

import numpy as np

from gads import (
    FeatureRecord,
    FeatureSet,
    read_feature_file,
    sample_prompts,
    write_feature_file,
)

rng = np.random.default_rng(0)
workdir = Path(tempfile.mkdtemp())

# ---------------------------------------------------------------------------
# 1. Build a handful of records by hand.
#    Grids are (h, w, d_patch); layer indices name the backbone blocks they
#    were tapped from. Masks live at image resolution, not grid resolution.
# ---------------------------------------------------------------------------
records = []
for i in range(6):
    label = int(i >= 4)  # last two records are anomalous
    mask = np.zeros((16, 16), dtype=np.uint8)
    if label:
        mask[4:8, 4:8] = 1
    records.append(
        FeatureRecord(
            id=f"demo-{i}",
            class_name="widget",
            label=label,
            class_embed=rng.standard_normal(12),
            patch_grids={l: rng.standard_normal((4, 4, 10)) for l in (2, 5)},
            image_dims=(16, 16),
            mask=mask,
        )
    )

fset = FeatureSet.from_records(records)
print(f"built a set: {len(fset)} records, dims (d_cls, d_patch, h, w) = {fset.dims}")
print(f"tapped layers: {fset.layer_set}")

# ---------------------------------------------------------------------------
# 2. Round-trip through the binary container. Floats are float32 on disk and
#    in memory, so the round trip is bit-exact.
# ---------------------------------------------------------------------------
path = workdir / "demo.gadsft"
write_feature_file(fset, path)
loaded = read_feature_file(path)
same = all(
    a.class_embed.tobytes() == b.class_embed.tobytes()
    for a, b in zip(fset.records, loaded.records)
)
print(f"container at {path} ({path.stat().st_size} bytes), bit-exact round trip: {same}")

# ---------------------------------------------------------------------------
# 3. Prompt banks: the K normal reference images every query is compared to.
#    Sampling is seeded and indexes the canonical record order, so the same
#    seed always reproduces the same bank.
# ---------------------------------------------------------------------------
for seed in (1, 1, 2):
    bank = sample_prompts(loaded, K=2, seed=seed)
    print(f"seed {seed}: bank = {[p.id for p in bank.prompts]}")
