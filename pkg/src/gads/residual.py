"""In-context residual learning over few-shot normal prompts.

Image level: the query's adapted global embedding minus the adapted prototype
of the prompt bank, scored by a logistic head. Patch level: per layer, one
minus the cosine similarity to the nearest patch across every prompt image,
averaged over layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NormalizationError, ShapeError
from .features import FeatureRecord, PromptBank


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@dataclass
class ImageAdapter:
    """Affine map on class-token embeddings: v -> weight @ v + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.weight.shape[1]:
            raise ShapeError(f"adapter weight must be square, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("adapter bias length must match weight size")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ShapeError("adapter parameters must be finite")

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, noise_std: float = 1e-3) -> "ImageAdapter":
        # near-identity start: untrained residuals approximate raw feature residuals
        weight = np.eye(dim) + noise_std * rng.standard_normal((dim, dim))
        return cls(weight=weight, bias=np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeError(f"expected vector of length {self.dim}, got {v.shape}")
        return self.weight @ v + self.bias


@dataclass
class ResidualHead:
    """Logistic scorer on residual vectors: r -> sigmoid(weight . r + bias)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 1:
            raise ShapeError("head weight must be a vector")
        if self.bias.shape != ():
            self.bias = self.bias.reshape(())
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias)):
            raise ShapeError("head parameters must be finite")

    @classmethod
    def init(cls, dim: int) -> "ResidualHead":
        # zeros: untrained image score is exactly 0.5
        return cls(weight=np.zeros(dim), bias=np.asarray(0.0))


@dataclass
class ResidualMap:
    """Patch residual grid. Raw values live in [0, 2]; rescaled ones in [0, 1]."""

    values: np.ndarray
    rescaled: bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError("residual map must be 2-D")
        hi = 1.0 if self.rescaled else 2.0
        if not np.isfinite(self.values).all():
            raise ShapeError("residual map contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > hi:
            raise ShapeError(
                f"residual map values outside [0, {hi}] (rescaled={self.rescaled})"
            )

    @property
    def max_score(self) -> float:
        return float(self.values.max())


def image_prototype(bank: PromptBank, psi: ImageAdapter) -> np.ndarray:
    """Mean adapted embedding of the prompt bank."""
    acc = np.zeros(psi.dim)
    for p in bank.prompts:
        acc += psi.apply(p.class_embed)
    return acc / bank.K


def image_residual(query: FeatureRecord, proto: np.ndarray, psi: ImageAdapter) -> np.ndarray:
    """Element-wise difference between the adapted query embedding and the prototype."""
    proto = np.asarray(proto, dtype=np.float64)
    if proto.shape != (psi.dim,):
        raise ShapeError(f"prototype shape {proto.shape} != adapter dim {psi.dim}")
    return psi.apply(query.class_embed) - proto


def residual_score(residual: np.ndarray, head: ResidualHead) -> float:
    """Logistic score of a residual vector, in [0, 1]."""
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != head.weight.shape:
        raise ShapeError(
            f"residual shape {residual.shape} != head weight shape {head.weight.shape}"
        )
    return _sigmoid(float(head.weight @ residual + head.bias))


def _normalized_patches(record: FeatureRecord, layer: int) -> np.ndarray:
    """Row-normalized (h*w, d) patch matrix; zero-norm patches are an error."""
    grid = record.patch_grids[layer].astype(np.float64)
    h, w, d = grid.shape
    flat = grid.reshape(h * w, d)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        idx = int(np.argmin(norms))
        raise NormalizationError(
            f"zero-norm patch in record {record.id!r}, layer {layer}, "
            f"position ({idx // w}, {idx % w})"
        )
    return flat / norms[:, None]


def patch_residual_map_layer(
    query: FeatureRecord, bank: PromptBank, layer: int
) -> ResidualMap:
    """One minus the best cosine similarity over every patch of every prompt.

    The search is exhaustive over all K*h*w candidate patches, not restricted
    to the query patch's own grid position.
    """
    if layer not in query.patch_grids:
        raise ConfigError(f"layer {layer} not present in record {query.id!r}")
    h, w, _ = query.grid_shape
    q = _normalized_patches(query, layer)
    candidates = np.concatenate([_normalized_patches(p, layer) for p in bank.prompts], axis=0)
    best = (q @ candidates.T).max(axis=1)
    values = np.clip(1.0 - best, 0.0, 2.0).reshape(h, w)
    return ResidualMap(values=values, rescaled=False)


def patch_residual_map(
    query: FeatureRecord, bank: PromptBank, layers, rescale: bool = True
) -> ResidualMap:
    """Layer-averaged patch residual map.

    Raw per-layer values lie in [0, 2]; with rescale=True the mean is halved so
    the map shares [0, 1] with the semantic maps it gets fused with. The
    rescaled map is what max-pooling for the patch residual score runs on.
    """
    layers = sorted(set(layers))
    if not layers:
        raise ConfigError("layer set must be nonempty")
    acc = None
    for l in layers:
        m = patch_residual_map_layer(query, bank, l)
        acc = m.values if acc is None else acc + m.values
    mean = acc / len(layers)
    if rescale:
        return ResidualMap(values=mean / 2.0, rescaled=True)
    return ResidualMap(values=mean, rescaled=False)
