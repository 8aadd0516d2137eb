"""Losses, analytic gradients, Adam, and the dual-branch training loop.

Only the four adapters are trainable. Backbone features, the nearest-neighbor
selection inside the patch residual maps, and the semantic score of the global
embedding are constants of each step, so gradients flow through:

  * psi / head   via the fused image score inside the image-level focal loss,
  * phi1         via the semantic maps in the discriminative pixel terms,
  * phi2         via the one-class pixel terms.

All arithmetic is float64 and single-threaded per step; for a fixed seed the
parameter trajectory is bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dasl import PatchTextAdapter, _pair_softmax, _unit, semantic_score
from .errors import (
    ConfigError,
    CorruptFileError,
    DivergenceError,
    FormatError,
    InsufficientNormalsError,
    NormalizationError,
    ShapeError,
    ValidationError,
)
from .features import FeatureRecord, FeatureSet, PromptBank, TextPrototypes
from .residual import ImageAdapter, ResidualHead, patch_residual_map

CKPT_MAGIC = b"GADSCP01"
CKPT_VERSION = 1

_CLAMP = 1e-7

# Fixed tensor order, shared by the optimizer groups and the checkpoint layout.
DASL_TENSORS = ("psi.weight", "psi.bias", "head.weight", "head.bias",
                "phi1.weight", "phi1.bias")
OASL_TENSORS = ("phi2.weight", "phi2.bias")
ALL_TENSORS = DASL_TENSORS + OASL_TENSORS


@dataclass
class TrainConfig:
    """Hyperparameters. Defaults follow the reference training recipe."""

    alpha: float = 0.5
    beta: float = 0.75
    tau: float = 1.0
    focal_gamma: float = 2.0
    focal_balance: float = 0.25
    dice_eps: float = 1.0
    lr: float = 1e-3
    epochs: int = 10
    batch: int = 48
    shots: int = 2
    layers: tuple | None = None
    seed: int = 0
    grad_mode: str = "analytic"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.focal_gamma < 0.0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0.0 <= self.focal_balance <= 1.0:
            raise ConfigError(f"focal_balance must be in [0, 1], got {self.focal_balance}")
        if self.dice_eps <= 0.0:
            raise ConfigError(f"dice_eps must be positive, got {self.dice_eps}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.shots < 1:
            raise ConfigError(f"shots must be >= 1, got {self.shots}")
        if self.layers is not None:
            self.layers = tuple(sorted(set(int(l) for l in self.layers)))
        if self.grad_mode not in ("analytic", "finite_diff_check"):
            raise ConfigError(f"unknown grad_mode {self.grad_mode!r}")


@dataclass
class AdapterParams:
    """The trainable parameter set: image adapter, scoring head, two patch-text adapters."""

    psi: ImageAdapter
    head: ResidualHead
    phi1: PatchTextAdapter
    phi2: PatchTextAdapter

    @classmethod
    def init(cls, d_cls: int, d_patch: int, d_text: int, seed: int) -> "AdapterParams":
        # independent streams so phi2 is not born equal to phi1
        ss = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF)
        rng_psi, rng_phi1, rng_phi2 = (np.random.default_rng(s) for s in ss.spawn(3))
        return cls(
            psi=ImageAdapter.init(d_cls, rng_psi),
            head=ResidualHead.init(d_cls),
            phi1=PatchTextAdapter.init(d_text, d_patch, rng_phi1, tag="dasl"),
            phi2=PatchTextAdapter.init(d_text, d_patch, rng_phi2, tag="oasl"),
        )

    def tensor(self, name: str) -> np.ndarray:
        obj_name, attr = name.split(".")
        return getattr(getattr(self, obj_name), attr)

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            psi=ImageAdapter(self.psi.weight.copy(), self.psi.bias.copy()),
            head=ResidualHead(self.head.weight.copy(), self.head.bias.copy()),
            phi1=PatchTextAdapter(self.phi1.weight.copy(), self.phi1.bias.copy(), "dasl"),
            phi2=PatchTextAdapter(self.phi2.weight.copy(), self.phi2.bias.copy(), "oasl"),
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return (
            self.psi.dim,
            self.phi1.weight.shape[1],
            self.phi1.weight.shape[0],
        )


# ---------------------------------------------------------------------------
# Loss primitives
# ---------------------------------------------------------------------------


def focal_loss_binary(p: float, y: int, gamma: float, balance: float) -> float:
    """Class-balanced focal loss of a single probability."""
    loss, _ = _focal_binary_grad(p, y, gamma, balance)
    return loss


def _focal_binary_grad(p: float, y: int, gamma: float, balance: float):
    pc = min(max(p, _CLAMP), 1.0 - _CLAMP)
    if y == 1:
        loss = -balance * (1.0 - pc) ** gamma * np.log(pc)
        grad = balance * (
            gamma * (1.0 - pc) ** (gamma - 1.0) * np.log(pc) - (1.0 - pc) ** gamma / pc
        )
    else:
        loss = -(1.0 - balance) * pc**gamma * np.log(1.0 - pc)
        grad = (1.0 - balance) * (
            pc**gamma / (1.0 - pc) - gamma * pc ** (gamma - 1.0) * np.log(1.0 - pc)
        )
    if p <= _CLAMP or p >= 1.0 - _CLAMP:
        grad = 0.0  # clamped region is flat
    return float(loss), float(grad)


def focal_loss_map(
    p_normal: np.ndarray,
    p_abnormal: np.ndarray,
    mask: np.ndarray,
    gamma: float,
    balance: float,
) -> float:
    """Pixel-mean focal loss over a complementary two-channel prediction.

    At anomalous pixels the target probability is the abnormal channel
    (weighted by `balance`), at normal pixels the normal channel (weighted by
    1 - balance).
    """
    loss, _, _ = _focal_map_grad(p_normal, p_abnormal, mask, gamma, balance)
    return loss


def _focal_map_grad(p_normal, p_abnormal, mask, gamma, balance):
    p_normal = np.asarray(p_normal, dtype=np.float64)
    p_abnormal = np.asarray(p_abnormal, dtype=np.float64)
    mask = np.asarray(mask)
    if p_normal.shape != mask.shape or p_abnormal.shape != mask.shape:
        raise ShapeError(
            f"focal map shapes differ: {p_normal.shape}/{p_abnormal.shape} vs mask {mask.shape}"
        )
    if np.max(np.abs(p_normal + p_abnormal - 1.0)) > 1e-6:
        raise ValidationError("focal map channels must sum to 1 per pixel")

    anom = mask.astype(bool)
    p_t = np.where(anom, p_abnormal, p_normal)
    w_t = np.where(anom, balance, 1.0 - balance)
    pc = np.clip(p_t, _CLAMP, 1.0 - _CLAMP)
    n_pix = mask.size

    loss = float(np.sum(-w_t * (1.0 - pc) ** gamma * np.log(pc)) / n_pix)

    grad_pt = w_t * (
        gamma * (1.0 - pc) ** (gamma - 1.0) * np.log(pc) - (1.0 - pc) ** gamma / pc
    )
    grad_pt = np.where((p_t > _CLAMP) & (p_t < 1.0 - _CLAMP), grad_pt, 0.0) / n_pix
    grad_abnormal = np.where(anom, grad_pt, 0.0)
    grad_normal = np.where(anom, 0.0, grad_pt)
    return loss, grad_normal, grad_abnormal


def dice_loss(pred: np.ndarray, mask: np.ndarray, eps: float = 1.0) -> float:
    """Smoothed dice loss; the epsilon keeps empty targets well-defined."""
    loss, _ = _dice_grad(pred, mask, eps)
    return loss


def _dice_grad(pred, mask, eps):
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != mask.shape:
        raise ShapeError(f"dice shapes differ: {pred.shape} vs {mask.shape}")
    numer = 2.0 * float(np.sum(pred * mask)) + eps
    denom = float(np.sum(pred)) + float(np.sum(mask)) + eps
    loss = 1.0 - numer / denom
    grad = -(2.0 * mask * denom - numer) / denom**2
    return float(loss), grad


# ---------------------------------------------------------------------------
# Spatial upsampling (corner-aligned bilinear), shared forward / transpose.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _axis_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) corner-aligned linear interpolation weights for one axis."""
    if dst <= 0 or src <= 0:
        raise ConfigError("upsample target and source must be positive")
    if dst < src:
        raise ConfigError(f"target size {dst} smaller than source size {src}")
    mat = np.zeros((dst, src))
    if src == 1:
        mat[:, 0] = 1.0
        return mat
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    i0 = np.minimum(np.floor(pos).astype(int), src - 2)
    t = pos - i0
    mat[np.arange(dst), i0] = 1.0 - t
    mat[np.arange(dst), i0 + 1] += t
    return mat


def upsample(grid: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear, corner-aligned resize from (h, w) up to (h_img, w_img)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeError("upsample expects a 2-D grid")
    ry = _axis_matrix(grid.shape[0], int(target[0]))
    rx = _axis_matrix(grid.shape[1], int(target[1]))
    return ry @ grid @ rx.T


def _upsample_transpose(grad: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    ry = _axis_matrix(source[0], grad.shape[0])
    rx = _axis_matrix(source[1], grad.shape[1])
    return ry.T @ grad @ rx


# ---------------------------------------------------------------------------
# Per-sample forward + backward
# ---------------------------------------------------------------------------


def _zero_grads(params: AdapterParams, names) -> dict:
    return {n: np.zeros_like(params.tensor(n)) for n in names}


def _pixel_terms_grad(
    record: FeatureRecord,
    mask: np.ndarray,
    res_values: np.ndarray,
    adapter: PatchTextAdapter,
    protos: TextPrototypes,
    layers,
    cfg: TrainConfig,
):
    """Focal + dice + dice pixel losses and their gradient w.r.t. one adapter.

    res_values is the rescaled patch residual map, a constant in the graph;
    the fused map's dice term therefore back-propagates only through the
    semantic abnormality map.
    """
    f_a = _unit(protos.f_abnormal.astype(np.float64), "abnormal prototype")
    f_n = _unit(protos.f_normal.astype(np.float64), "normal prototype")
    h, w, d = record.grid_shape
    n_layers = len(layers)

    cache = []
    s_a_sum = np.zeros(h * w)
    for l in layers:
        flat = record.patch_grids[l].astype(np.float64).reshape(h * w, d)
        proj = adapter.project(flat)
        norms = np.linalg.norm(proj, axis=1)
        if np.any(norms == 0.0):
            idx = int(np.argmin(norms))
            raise NormalizationError(
                f"zero-norm projected patch in record {record.id!r}, layer {l}, "
                f"position ({idx // w}, {idx % w})"
            )
        unit = proj / norms[:, None]
        sim_a = unit @ f_a
        sim_n = unit @ f_n
        s_a_l, s_n_l = _pair_softmax(sim_a, sim_n, cfg.tau)
        cache.append((flat, norms, unit, sim_a, sim_n, s_a_l, s_n_l))
        s_a_sum += s_a_l

    s_a = (s_a_sum / n_layers).reshape(h, w)
    s_n = 1.0 - s_a
    target_hw = record.image_dims
    up_a = upsample(s_a, target_hw)
    up_n = upsample(s_n, target_hw)
    fused = 0.5 * (res_values + s_a)
    up_fused = upsample(fused, target_hw)

    mask_f = mask.astype(np.float64)
    l_focal, g_up_n, g_up_a = _focal_map_grad(
        up_n, up_a, mask_f, cfg.focal_gamma, cfg.focal_balance
    )
    l_dice_sem, g_dice_a = _dice_grad(up_a, mask_f, cfg.dice_eps)
    l_dice_fused, g_dice_fused = _dice_grad(up_fused, mask_f, cfg.dice_eps)
    loss = l_focal + l_dice_sem + l_dice_fused

    d_s_a = (
        _upsample_transpose(g_up_a + g_dice_a, (h, w))
        - _upsample_transpose(g_up_n, (h, w))
        + 0.5 * _upsample_transpose(g_dice_fused, (h, w))
    ).reshape(h * w)

    d_weight = np.zeros_like(adapter.weight)
    d_bias = np.zeros_like(adapter.bias)
    for flat, norms, unit, sim_a, sim_n, s_a_l, s_n_l in cache:
        d_pair = (d_s_a / n_layers) * s_a_l * s_n_l / cfg.tau
        d_proj = (
            d_pair[:, None]
            * ((f_a - f_n)[None, :] - (sim_a - sim_n)[:, None] * unit)
            / norms[:, None]
        )
        d_weight += d_proj.T @ flat
        d_bias += d_proj.sum(axis=0)

    return loss, d_weight, d_bias


def _dasl_sample_grad(
    record: FeatureRecord,
    bank: PromptBank,
    params: AdapterParams,
    protos: TextPrototypes,
    layers,
    cfg: TrainConfig,
    grads: dict,
) -> float:
    g = record.class_embed.astype(np.float64)
    prompt_mean = np.mean(
        [p.class_embed.astype(np.float64) for p in bank.prompts], axis=0
    )
    residual = params.psi.weight @ (g - prompt_mean)  # adapter bias cancels
    z = float(params.head.weight @ residual + params.head.bias)
    s_i = float(1.0 / (1.0 + np.exp(-z))) if z >= 0 else float(np.exp(z) / (1.0 + np.exp(z)))
    if g.shape[0] == protos.d_text:
        s_q = semantic_score(g, protos, cfg.tau)
    else:
        # class embedding not comparable to the text prototypes; the semantic
        # image score degrades to its symmetric value and contributes no signal
        s_q = 0.5
    res_map = patch_residual_map(record, bank, layers, rescale=True)
    s_p = res_map.max_score
    fused = (1.0 - cfg.alpha) * (s_i + s_q) / 2.0 + cfg.alpha * s_p

    loss, d_fused = _focal_binary_grad(fused, record.label, cfg.focal_gamma, cfg.focal_balance)
    d_z = d_fused * (1.0 - cfg.alpha) / 2.0 * s_i * (1.0 - s_i)
    grads["head.weight"] += d_z * residual
    grads["head.bias"] += d_z
    d_residual = d_z * params.head.weight
    grads["psi.weight"] += np.outer(d_residual, g - prompt_mean)
    # psi.bias cancels in the residual; its gradient is identically zero

    if record.mask is not None:
        pixel_loss, d_w, d_b = _pixel_terms_grad(
            record, record.mask, res_map.values, params.phi1, protos, layers, cfg
        )
        grads["phi1.weight"] += d_w
        grads["phi1.bias"] += d_b
        loss += pixel_loss
    return loss


def _oasl_sample_grad(
    record: FeatureRecord,
    bank: PromptBank,
    params: AdapterParams,
    protos: TextPrototypes,
    layers,
    cfg: TrainConfig,
    grads: dict,
) -> float:
    if record.label != 0:
        raise ValidationError(
            f"one-class branch received abnormal record {record.id!r}"
        )
    mask = record.mask
    if mask is None:
        mask = np.zeros(record.image_dims, dtype=np.uint8)
    res_map = patch_residual_map(record, bank, layers, rescale=True)
    loss, d_w, d_b = _pixel_terms_grad(
        record, mask, res_map.values, params.phi2, protos, layers, cfg
    )
    grads["phi2.weight"] += d_w
    grads["phi2.bias"] += d_b
    return loss


def _as_bank_list(banks, n: int) -> list:
    if isinstance(banks, PromptBank):
        return [banks] * n
    banks = list(banks)
    if len(banks) != n:
        raise ShapeError(f"got {len(banks)} banks for {n} records")
    return banks


def _resolve_layers(records, cfg: TrainConfig):
    if cfg.layers is not None:
        return list(cfg.layers)
    return records[0].layers


def loss_dasl(
    records,
    banks,
    params: AdapterParams,
    protos: TextPrototypes,
    cfg: TrainConfig,
    require_masks: bool = False,
):
    """Batch-mean discriminative loss and gradients for psi, head, and phi1.

    Maskless records contribute the image term only. With require_masks=True a
    batch in which no record carries a mask is rejected instead of silently
    dropping every pixel term.
    """
    records = list(records)
    if not records:
        raise ConfigError("empty batch")
    if require_masks and all(r.mask is None for r in records):
        raise ConfigError("pixel terms requested but no record in the batch has a mask")
    banks = _as_bank_list(banks, len(records))
    layers = _resolve_layers(records, cfg)

    grads = _zero_grads(params, DASL_TENSORS)
    total = 0.0
    for rec, bank in zip(records, banks):
        total += _dasl_sample_grad(rec, bank, params, protos, layers, cfg, grads)
    scale = 1.0 / len(records)
    for name in grads:
        grads[name] *= scale
    return total * scale, grads


def loss_oasl(
    records,
    banks,
    params: AdapterParams,
    protos: TextPrototypes,
    cfg: TrainConfig,
):
    """Batch-mean one-class loss and gradients for phi2 only.

    Every record must be normal; absent masks default to all-zero ground truth.
    """
    records = list(records)
    if not records:
        raise ConfigError("empty batch")
    banks = _as_bank_list(banks, len(records))
    layers = _resolve_layers(records, cfg)

    grads = _zero_grads(params, OASL_TENSORS)
    total = 0.0
    for rec, bank in zip(records, banks):
        total += _oasl_sample_grad(rec, bank, params, protos, layers, cfg, grads)
    scale = 1.0 / len(records)
    for name in grads:
        grads[name] *= scale
    return total * scale, grads


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------


class Adam:
    """Plain Adam over a named subset of the adapter tensors."""

    def __init__(self, names, params: AdapterParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.names = tuple(names)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(params.tensor(n)) for n in self.names}
        self.v = {n: np.zeros_like(params.tensor(n)) for n in self.names}

    def step(self, params: AdapterParams, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + self.eps)
            params.tensor(n)[...] -= update


def finite_difference_gradients(loss_fn, tensors, step: float = 1e-4):
    """Central-difference gradients of a zero-argument loss over given arrays.

    The arrays are perturbed in place and restored; loss_fn must read them on
    every call.
    """
    out = []
    for t in tensors:
        g = np.zeros_like(t)
        it = np.nditer(t, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t[idx]
            t[idx] = orig + step
            lp = loss_fn()
            t[idx] = orig - step
            lm = loss_fn()
            t[idx] = orig
            g[idx] = (lp - lm) / (2.0 * step)
        out.append(g)
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Worst element-wise relative deviation; near-zero pairs count as equal."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a), np.abs(b))
    err = np.abs(a - b) / np.where(denom > floor, denom, 1.0)
    err[denom <= floor] = 0.0
    return float(err.max()) if err.size else 0.0


class Trainer:
    """Owns the parameters and the two disjoint Adam optimizers."""

    def __init__(self, params: AdapterParams, protos: TextPrototypes, cfg: TrainConfig):
        self.params = params
        self.protos = protos
        self.cfg = cfg
        self.opt_dasl = Adam(DASL_TENSORS, params, cfg.lr)
        self.opt_oasl = Adam(OASL_TENSORS, params, cfg.lr)
        self.steps = 0

    def _checked(self, loss: float) -> float:
        if not np.isfinite(loss):
            raise DivergenceError(self.steps)
        return loss

    def _verify_grads(self, loss_fn, names, grads):
        analytic = [grads[n] for n in names]
        numeric = finite_difference_gradients(loss_fn, [self.params.tensor(n) for n in names])
        for n, a, f in zip(names, analytic, numeric):
            err = max_relative_error(a, f)
            if err > 1e-3:
                raise ValidationError(
                    f"gradient check failed for {n}: max relative error {err:.2e}"
                )

    def step_dasl(self, records, banks) -> float:
        loss, grads = loss_dasl(records, banks, self.params, self.protos, self.cfg)
        self._checked(loss)
        if self.cfg.grad_mode == "finite_diff_check":
            self._verify_grads(
                lambda: loss_dasl(records, banks, self.params, self.protos, self.cfg)[0],
                DASL_TENSORS,
                grads,
            )
        self.opt_dasl.step(self.params, grads)
        self.steps += 1
        return loss

    def step_oasl(self, records, banks) -> float:
        loss, grads = loss_oasl(records, banks, self.params, self.protos, self.cfg)
        self._checked(loss)
        if self.cfg.grad_mode == "finite_diff_check":
            self._verify_grads(
                lambda: loss_oasl(records, banks, self.params, self.protos, self.cfg)[0],
                OASL_TENSORS,
                grads,
            )
        self.opt_oasl.step(self.params, grads)
        self.steps += 1
        return loss


def _draw_bank(fset: FeatureSet, pool: list[int], K: int, rng: np.random.Generator) -> PromptBank:
    chosen = sorted(rng.choice(len(pool), size=K, replace=False).tolist())
    return PromptBank(prompts=[fset.records[pool[i]] for i in chosen])


def _step_banks(
    fset: FeatureSet,
    class_names,
    by_class: dict,
    all_normals: list[int],
    K: int,
    rng: np.random.Generator,
) -> dict:
    """One fresh K-shot bank per class present in this step's batches.

    Classes with fewer than K normal records fall back to the whole normal pool.
    """
    banks = {}
    for name in class_names:
        pool = by_class.get(name, [])
        if len(pool) < K:
            pool = all_normals
        banks[name] = _draw_bank(fset, pool, K, rng)
    return banks


def train(
    trainset: FeatureSet,
    protos: TextPrototypes,
    cfg: TrainConfig,
    log_fn=None,
) -> AdapterParams:
    """Run the dual-branch training loop and return the trained adapters.

    Each step draws a shuffled mixed batch for the discriminative branch and an
    independent normal-only batch for the one-class branch, with per-class
    K-shot banks redrawn every step from the normal training records.
    """
    d_cls, d_patch, h, w = trainset.dims
    layers = list(cfg.layers) if cfg.layers is not None else list(trainset.layer_set)
    if not set(layers) <= set(trainset.layer_set):
        raise ConfigError(f"layers {layers} not a subset of {trainset.layer_set}")

    all_normals = trainset.normal_indices()
    if len(all_normals) < cfg.shots:
        raise InsufficientNormalsError(
            f"training set has {len(all_normals)} normals, need K={cfg.shots} for banks"
        )
    by_class = {
        name: trainset.normal_indices(name) for name in trainset.class_names()
    }

    params = AdapterParams.init(d_cls, d_patch, protos.d_text, cfg.seed)
    run_cfg = replace(cfg, layers=tuple(layers))
    trainer = Trainer(params, protos, run_cfg)

    ss = np.random.SeedSequence(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    rng = np.random.default_rng(ss.spawn(4)[3])  # children 0-2 seed the adapters

    n = len(trainset)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            batch_idx = perm[start : start + cfg.batch]
            records = [trainset.records[i] for i in batch_idx]

            oasl_size = min(cfg.batch, len(all_normals))
            oasl_pick = rng.choice(len(all_normals), size=oasl_size, replace=False)
            oasl_records = [trainset.records[all_normals[i]] for i in oasl_pick]

            step_classes = dict.fromkeys(
                r.class_name for r in records + oasl_records
            )
            banks = _step_banks(trainset, step_classes, by_class, all_normals, cfg.shots, rng)

            dasl_loss = trainer.step_dasl(records, [banks[r.class_name] for r in records])
            oasl_loss = trainer.step_oasl(
                oasl_records, [banks[r.class_name] for r in oasl_records]
            )
            if log_fn is not None:
                log_fn(epoch, trainer.steps, dasl_loss, oasl_loss)
    return params


# ---------------------------------------------------------------------------
# Checkpoint file: magic, version, dims, then all tensors float64 little-endian
# in the fixed ALL_TENSORS order.
# ---------------------------------------------------------------------------


def save_checkpoint(params: AdapterParams, path) -> None:
    d_cls, d_patch, d_text = params.dims
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<4I", CKPT_VERSION, d_cls, d_patch, d_text))
        for name in ALL_TENSORS:
            fh.write(np.ascontiguousarray(params.tensor(name), dtype="<f8").tobytes())


def load_checkpoint(path) -> AdapterParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
        version, d_cls, d_patch, d_text = struct.unpack("<4I", fh.read(16))
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        shapes = {
            "psi.weight": (d_cls, d_cls),
            "psi.bias": (d_cls,),
            "head.weight": (d_cls,),
            "head.bias": (),
            "phi1.weight": (d_text, d_patch),
            "phi1.bias": (d_text,),
            "phi2.weight": (d_text, d_patch),
            "phi2.bias": (d_text,),
        }
        tensors = {}
        for name in ALL_TENSORS:
            shape = shapes[name]
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise CorruptFileError(f"{path}: truncated while reading {name}")
            tensors[name] = np.frombuffer(buf, dtype="<f8").copy().reshape(shape)
        if fh.read(1):
            raise CorruptFileError(f"{path}: trailing bytes")
    return AdapterParams(
        psi=ImageAdapter(tensors["psi.weight"], tensors["psi.bias"]),
        head=ResidualHead(tensors["head.weight"], tensors["head.bias"]),
        phi1=PatchTextAdapter(tensors["phi1.weight"], tensors["phi1.bias"], "dasl"),
        phi2=PatchTextAdapter(tensors["phi2.weight"], tensors["phi2.bias"], "oasl"),
    )
