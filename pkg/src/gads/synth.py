"""Seeded synthetic feature generator for desk-scale end-to-end runs.

Normal records are Gaussian clouds around per-class patch and embedding means.
Abnormal records shift a contiguous patch block toward the abnormal text
prototype direction and mark the matching image region in the mask; their
global embeddings drift the same way. Every anomaly signal scales with
`magnitude`, so magnitude zero produces abnormal records that are
statistically identical to normals (a null control).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .features import (
    FeatureRecord,
    FeatureSet,
    TextPrototypes,
    write_feature_file,
    write_prototype_file,
)

TRAIN_FILE = "train.gadsft"
TEST_FILE = "test.gadsft"
PROTO_FILE = "protos.gadstp"


@dataclass
class SynthConfig:
    classes: int = 3
    train_normal: int = 200
    train_abnormal: int = 50
    test_normal: int = 100
    test_abnormal: int = 50
    dim: int = 16  # shared by class embeddings, patches, and text prototypes
    grid: int = 8
    image: int = 32
    layers: tuple = (0, 1)
    block: int = 4
    magnitude: float = 1.0
    patch_noise: float = 0.1
    embed_noise: float = 0.1
    embed_shift: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1 or self.dim < 2 or self.grid < 1 or self.image < self.grid:
            raise ConfigError("degenerate synthetic dimensions")
        if not (1 <= self.block <= self.grid):
            raise ConfigError(f"block {self.block} must fit the {self.grid}x{self.grid} grid")
        if self.image % self.grid != 0:
            raise ConfigError("image size must be a multiple of the grid size")
        if self.magnitude < 0:
            raise ConfigError("magnitude must be >= 0")
        self.layers = tuple(sorted(set(int(l) for l in self.layers)))


def _class_bases(rng: np.random.Generator, cfg: SynthConfig):
    def unit(v):
        return v / np.linalg.norm(v)

    # orthonormal prototype pair, then per-class unit means
    basis, _ = np.linalg.qr(rng.standard_normal((cfg.dim, 2)))
    f_n, f_a = basis[:, 0], basis[:, 1]
    patch_mu = {
        c: {l: unit(rng.standard_normal(cfg.dim)) for l in cfg.layers}
        for c in range(cfg.classes)
    }
    embed_mu = {c: unit(rng.standard_normal(cfg.dim)) for c in range(cfg.classes)}
    return f_n, f_a, patch_mu, embed_mu


def _make_record(
    rng: np.random.Generator,
    rec_id: str,
    class_idx: int,
    abnormal: bool,
    f_n: np.ndarray,
    f_a: np.ndarray,
    patch_mu: dict,
    embed_mu: dict,
    cfg: SynthConfig,
) -> FeatureRecord:
    g, block = cfg.grid, cfg.block
    scale = cfg.image // cfg.grid
    mask = np.zeros((cfg.image, cfg.image), dtype=np.uint8)
    ti = tj = 0
    if abnormal:
        ti = int(rng.integers(0, g - block + 1))
        tj = int(rng.integers(0, g - block + 1))
        mask[ti * scale : (ti + block) * scale, tj * scale : (tj + block) * scale] = 1

    grids = {}
    for l in cfg.layers:
        grid = patch_mu[class_idx][l][None, None, :] + cfg.patch_noise * rng.standard_normal(
            (g, g, cfg.dim)
        )
        if abnormal:
            grid[ti : ti + block, tj : tj + block, :] += cfg.magnitude * f_a
        grids[l] = grid

    drift = f_a if abnormal else f_n
    embed = (
        embed_mu[class_idx]
        + cfg.embed_noise * rng.standard_normal(cfg.dim)
        + cfg.magnitude * cfg.embed_shift * drift
    )
    return FeatureRecord(
        id=rec_id,
        class_name=f"class{class_idx}",
        label=int(abnormal),
        class_embed=embed,
        patch_grids=grids,
        image_dims=(cfg.image, cfg.image),
        mask=mask,
    )


def _make_split(rng, prefix, n_normal, n_abnormal, f_n, f_a, patch_mu, embed_mu, cfg):
    records = []
    for i in range(n_normal):
        records.append(
            _make_record(
                rng, f"{prefix}-{i:04d}", i % cfg.classes, False, f_n, f_a, patch_mu, embed_mu, cfg
            )
        )
    for i in range(n_abnormal):
        records.append(
            _make_record(
                rng,
                f"{prefix}-{n_normal + i:04d}",
                i % cfg.classes,
                True,
                f_n,
                f_a,
                patch_mu,
                embed_mu,
                cfg,
            )
        )
    return FeatureSet.from_records(records)


def generate(cfg: SynthConfig):
    """Build (train set, test set, text prototypes), fully determined by the seed."""
    rng = np.random.default_rng(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    f_n, f_a, patch_mu, embed_mu = _class_bases(rng, cfg)
    train = _make_split(
        rng, "train", cfg.train_normal, cfg.train_abnormal, f_n, f_a, patch_mu, embed_mu, cfg
    )
    test = _make_split(
        rng, "test", cfg.test_normal, cfg.test_abnormal, f_n, f_a, patch_mu, embed_mu, cfg
    )
    protos = TextPrototypes(f_normal=f_n, f_abnormal=f_a)
    return train, test, protos


def write_synth(cfg: SynthConfig, out_dir) -> dict:
    """Generate and write the three engine input files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, protos = generate(cfg)
    paths = {
        "train": out / TRAIN_FILE,
        "test": out / TEST_FILE,
        "protos": out / PROTO_FILE,
    }
    write_feature_file(train, paths["train"])
    write_feature_file(test, paths["test"])
    write_prototype_file(protos, paths["protos"])
    return paths
