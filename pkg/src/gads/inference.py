"""End-to-end scoring of query records with trained adapters.

Per query: the image score fuses the residual score, the semantic score, and
the max of the rescaled patch residual map; the pixel map blends the
discriminative and one-class maps after upsampling to image resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dasl import dasl_pixel_map, fuse_image_score, semantic_maps, semantic_score
from .errors import ConfigError, InsufficientNormalsError
from .features import FeatureRecord, FeatureSet, PromptBank, TextPrototypes, sample_prompts
from .oasl import oasl_maps, oasl_pixel_map
from .residual import image_prototype, image_residual, patch_residual_map, residual_score
from .training import AdapterParams, TrainConfig, upsample


@dataclass
class AnomalyOutput:
    """Image-level score in [0, 1] plus the pixel map at image resolution."""

    id: str
    score: float
    amap: np.ndarray


def infer_record(
    record: FeatureRecord,
    bank: PromptBank,
    params: AdapterParams,
    protos: TextPrototypes,
    cfg: TrainConfig,
) -> AnomalyOutput:
    layers = list(cfg.layers) if cfg.layers is not None else record.layers
    res_map = patch_residual_map(record, bank, layers, rescale=True)

    proto = image_prototype(bank, params.psi)
    s_i = residual_score(image_residual(record, proto, params.psi), params.head)
    s_q = semantic_score(record.class_embed, protos, cfg.tau)
    score = fuse_image_score(s_i, s_q, res_map, cfg.alpha)

    maps_d = semantic_maps(record, protos, params.phi1, layers, cfg.tau)
    maps_o = oasl_maps(record, protos, params.phi2, layers, cfg.tau)
    m_p = dasl_pixel_map(res_map, maps_d)
    m_n = oasl_pixel_map(res_map, maps_o)
    amap = (1.0 - cfg.beta) * upsample(m_p, record.image_dims) + cfg.beta * upsample(
        m_n, record.image_dims
    )
    return AnomalyOutput(id=record.id, score=score, amap=amap)


def build_prompt_banks(
    pool: FeatureSet,
    K: int,
    seed: int,
    prompt_ids: list[str] | None = None,
    per_class: bool = True,
):
    """Resolve the prompt source for a whole inference run.

    Either an explicit id list (one shared bank) or seeded sampling from the
    pool's normal records, per class when class names are available. Returns
    (per-class bank dict, fallback bank).
    """
    if prompt_ids is not None:
        by_id = {r.id: r for r in pool.records}
        missing = [i for i in prompt_ids if i not in by_id]
        if missing:
            raise ConfigError(f"prompt ids not found in pool: {missing}")
        bank = PromptBank(prompts=[by_id[i] for i in prompt_ids])
        return {}, bank

    fallback = sample_prompts(pool, K, seed)
    banks = {}
    if per_class:
        for name in pool.class_names():
            try:
                banks[name] = sample_prompts(pool, K, seed, class_name=name)
            except InsufficientNormalsError:
                banks[name] = fallback
    return banks, fallback


def infer_set(
    testset: FeatureSet,
    banks: dict,
    fallback: PromptBank,
    params: AdapterParams,
    protos: TextPrototypes,
    cfg: TrainConfig,
) -> list[AnomalyOutput]:
    outputs = []
    for record in testset.records:
        bank = banks.get(record.class_name, fallback)
        outputs.append(infer_record(record, bank, params, protos, cfg))
    return outputs
