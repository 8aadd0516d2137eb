"""Semantic guidance: scoring queries against normal/abnormal text prototypes.

The text side contributes two things: an image-level semantic score (softmax
over cosines of the global embedding against both prototypes) and per-cell
semantic maps from adapter-projected patches. A second, independent adapter
produces the one-class branch's maps. Both fuse with the residual map.

Run:  python demos/03_semantic_scoring.py
"""

import numpy as np

from gads import (
    FeatureRecord,
    PatchTextAdapter,
    PromptBank,
    ResidualMap,
    TextPrototypes,
    dasl_pixel_map,
    fuse_image_score,
    oasl_maps,
    semantic_maps,
    semantic_score,
)

rng = np.random.default_rng(21)
d = 8

# orthonormal prototype pair, as a clean geometry to reason about
basis, _ = np.linalg.qr(rng.standard_normal((d, 2)))
protos = TextPrototypes(f_normal=basis[:, 0], f_abnormal=basis[:, 1])

# ---------------------------------------------------------------------------
# 1. The image-level semantic score s_q. A pure function of the embedding and
#    the prototypes: 0.5 when equidistant, rising toward 1 as the embedding
#    aligns with the abnormal prototype.
# ---------------------------------------------------------------------------
for blend in (0.0, 0.25, 0.5, 0.75, 1.0):
    g = (1 - blend) * protos.f_normal + blend * protos.f_abnormal
    print(f"blend {blend:.2f} toward abnormal -> s_q = {semantic_score(g, protos):.4f}")

# ---------------------------------------------------------------------------
# 2. Semantic maps per branch. The adapters project patch features into the
#    text space; the two branches share the formula but never the parameters.
# ---------------------------------------------------------------------------
query = FeatureRecord(
    id="q",
    class_name="widget",
    label=1,
    class_embed=protos.f_abnormal + 0.1 * rng.standard_normal(d),
    patch_grids={0: rng.standard_normal((4, 4, 6))},
    image_dims=(8, 8),
)
phi1 = PatchTextAdapter.init(d, 6, rng, tag="dasl")
phi2 = PatchTextAdapter.init(d, 6, rng, tag="oasl")
maps_d = semantic_maps(query, protos, phi1, layers=[0])
maps_o = oasl_maps(query, protos, phi2, layers=[0])
print(f"\ndiscriminative S_a mean {maps_d.s_abnormal.mean():.3f}; "
      f"one-class S_a mean {maps_o.s_abnormal.mean():.3f}")
print(f"complement check: max |S_n + S_a - 1| = "
      f"{np.abs(maps_d.s_normal + maps_d.s_abnormal - 1).max():.1e}")

# ---------------------------------------------------------------------------
# 3. Fusion. The image score mixes the residual score, the semantic score, and
#    the max of the patch map; the pixel map averages residual and semantic
#    channels. alpha=0.5 is the default operating point.
# ---------------------------------------------------------------------------
res_map = ResidualMap(values=rng.uniform(0.0, 0.4, (4, 4)), rescaled=True)
s_q = semantic_score(query.class_embed, protos)
for alpha in (0.0, 0.5, 1.0):
    s = fuse_image_score(0.62, s_q, res_map, alpha)
    print(f"alpha={alpha}: fused score = {s:.4f}")
m_p = dasl_pixel_map(res_map, maps_d)
print(f"fused pixel map range: [{m_p.min():.3f}, {m_p.max():.3f}]")
