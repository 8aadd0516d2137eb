"""One-class anomaly score learning, the auxiliary branch trained on normals.

Functionally identical to the discriminative branch's semantic maps but
evaluated with the independent second adapter, so the two decision spaces
never share parameters.
"""

from __future__ import annotations

import numpy as np

from . import dasl
from .dasl import PatchTextAdapter, SemanticMaps
from .errors import ConfigError
from .features import FeatureRecord, TextPrototypes
from .residual import ResidualMap


def oasl_maps(
    query: FeatureRecord,
    protos: TextPrototypes,
    phi2: PatchTextAdapter,
    layers,
    tau: float = 1.0,
) -> SemanticMaps:
    """Layer-averaged semantic probability maps for the one-class branch."""
    if phi2.tag != "oasl":
        raise ConfigError(f"expected an adapter tagged 'oasl', got {phi2.tag!r}")
    per_layer = dasl.softmax_maps_layers(query, protos, phi2, layers, tau)
    s_a = np.mean([m for _, m, _ in per_layer], axis=0)
    s_n = np.mean([m for _, _, m in per_layer], axis=0)
    return SemanticMaps(s_normal=s_n, s_abnormal=s_a)


def oasl_pixel_map(residual_map: ResidualMap, maps: SemanticMaps) -> np.ndarray:
    """Element-wise mean of the rescaled residual map and the one-class abnormality map."""
    return dasl.dasl_pixel_map(residual_map, maps)
