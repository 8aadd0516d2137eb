"""Discriminative anomaly score learning: semantic score, semantic maps, fusion.

Similarities against the text prototypes are cosines of L2-normalized vectors
pushed through a two-way softmax, optionally sharpened by a temperature. The
default temperature of 1 reproduces the plain softmax-of-cosines form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NormalizationError, ShapeError
from .features import FeatureRecord, TextPrototypes
from .residual import ResidualMap


@dataclass
class PatchTextAdapter:
    """Affine projection from patch space to text embedding space."""

    weight: np.ndarray  # (d_text, d_patch)
    bias: np.ndarray  # (d_text,)
    tag: str  # "dasl" | "oasl"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError("patch-text adapter weight must be a matrix")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("patch-text adapter bias must match output dim")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ShapeError("patch-text adapter parameters must be finite")
        if self.tag not in ("dasl", "oasl"):
            raise ConfigError(f"unknown adapter tag {self.tag!r}")

    @classmethod
    def init(
        cls,
        d_text: int,
        d_patch: int,
        rng: np.random.Generator,
        tag: str,
        std: float = 0.02,
    ) -> "PatchTextAdapter":
        return cls(
            weight=std * rng.standard_normal((d_text, d_patch)),
            bias=np.zeros(d_text),
            tag=tag,
        )

    def project(self, patches: np.ndarray) -> np.ndarray:
        """(n, d_patch) -> (n, d_text)."""
        if patches.shape[-1] != self.weight.shape[1]:
            raise ShapeError(
                f"patch dim {patches.shape[-1]} != adapter input dim {self.weight.shape[1]}"
            )
        return patches @ self.weight.T + self.bias


@dataclass
class SemanticMaps:
    """Complementary per-cell class probabilities against the two prototypes."""

    s_normal: np.ndarray
    s_abnormal: np.ndarray

    def __post_init__(self):
        self.s_normal = np.asarray(self.s_normal, dtype=np.float64)
        self.s_abnormal = np.asarray(self.s_abnormal, dtype=np.float64)
        if self.s_normal.shape != self.s_abnormal.shape:
            raise ShapeError("semantic map channels must share one shape")
        if not (np.isfinite(self.s_normal).all() and np.isfinite(self.s_abnormal).all()):
            raise ShapeError("semantic maps contain non-finite values")
        if np.max(np.abs(self.s_normal + self.s_abnormal - 1.0)) > 1e-6:
            raise ShapeError("semantic map channels must sum to 1 per cell")


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise NormalizationError(f"zero-norm vector: {what}")
    return v / n


def _pair_softmax(sim_a: np.ndarray, sim_n: np.ndarray, tau: float):
    """Stable two-way softmax over (abnormal, normal) similarities."""
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    za, zn = sim_a / tau, sim_n / tau
    m = np.maximum(za, zn)
    ea, en = np.exp(za - m), np.exp(zn - m)
    total = ea + en
    return ea / total, en / total


def semantic_score(class_embed: np.ndarray, protos: TextPrototypes, tau: float = 1.0) -> float:
    """Softmax over cosine similarities of the class embedding to both prototypes.

    Requires the class embedding and the text prototypes to share one
    dimensionality; no projection is applied to the global embedding.
    """
    g = np.asarray(class_embed, dtype=np.float64)
    if g.shape != (protos.d_text,):
        raise ShapeError(
            f"class embedding dim {g.shape} incompatible with text dim {protos.d_text}"
        )
    g = _unit(g, "class embedding")
    sim_a = float(g @ _unit(protos.f_abnormal.astype(np.float64), "abnormal prototype"))
    sim_n = float(g @ _unit(protos.f_normal.astype(np.float64), "normal prototype"))
    s_a, _ = _pair_softmax(np.asarray(sim_a), np.asarray(sim_n), tau)
    return float(s_a)


def softmax_maps_layers(
    query: FeatureRecord,
    protos: TextPrototypes,
    adapter: PatchTextAdapter,
    layers,
    tau: float,
):
    """Per-layer (S_a^l, S_n^l) grids for the given adapter.

    Shared core of the discriminative and one-class branches; they differ only
    in which adapter parameters are plugged in.
    """
    layers = sorted(set(layers))
    if not layers:
        raise ConfigError("layer set must be nonempty")
    f_a = _unit(protos.f_abnormal.astype(np.float64), "abnormal prototype")
    f_n = _unit(protos.f_normal.astype(np.float64), "normal prototype")
    per_layer = []
    for l in layers:
        if l not in query.patch_grids:
            raise ConfigError(f"layer {l} not present in record {query.id!r}")
        h, w, d = query.patch_grids[l].shape
        flat = query.patch_grids[l].astype(np.float64).reshape(h * w, d)
        proj = adapter.project(flat)
        norms = np.linalg.norm(proj, axis=1)
        if np.any(norms == 0.0):
            idx = int(np.argmin(norms))
            raise NormalizationError(
                f"zero-norm projected patch in record {query.id!r}, layer {l}, "
                f"position ({idx // w}, {idx % w})"
            )
        unit = proj / norms[:, None]
        s_a, s_n = _pair_softmax(unit @ f_a, unit @ f_n, tau)
        per_layer.append((l, s_a.reshape(h, w), s_n.reshape(h, w)))
    return per_layer


def semantic_maps(
    query: FeatureRecord,
    protos: TextPrototypes,
    phi: PatchTextAdapter,
    layers,
    tau: float = 1.0,
) -> SemanticMaps:
    """Layer-averaged semantic probability maps for the discriminative branch."""
    per_layer = softmax_maps_layers(query, protos, phi, layers, tau)
    s_a = np.mean([m for _, m, _ in per_layer], axis=0)
    s_n = np.mean([m for _, _, m in per_layer], axis=0)
    return SemanticMaps(s_normal=s_n, s_abnormal=s_a)


def fuse_image_score(
    s_i: float, s_q: float, residual_map: ResidualMap, alpha: float
) -> float:
    """(1 - alpha) * (s_i + s_q) / 2 + alpha * max(residual map)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if not residual_map.rescaled:
        raise ConfigError("residual map must be rescaled to [0, 1] before fusion")
    return (1.0 - alpha) * (s_i + s_q) / 2.0 + alpha * residual_map.max_score


def dasl_pixel_map(residual_map: ResidualMap, maps: SemanticMaps) -> np.ndarray:
    """Element-wise mean of the rescaled residual map and the abnormality map."""
    if not residual_map.rescaled:
        raise ConfigError("residual map must be rescaled to [0, 1] before fusion")
    if residual_map.values.shape != maps.s_abnormal.shape:
        raise ShapeError(
            f"map shapes differ: {residual_map.values.shape} vs {maps.s_abnormal.shape}"
        )
    return 0.5 * (residual_map.values + maps.s_abnormal)
