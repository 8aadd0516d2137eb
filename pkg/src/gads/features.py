"""Feature data model, the binary feature container, manifests, and prompt sampling.

All embeddings travel through the engine as float32 (the container's on-disk
precision); numerical code upcasts to float64 at the point of use. Masks are
uint8 grids in {0, 1} at image resolution.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    CorruptFileError,
    FormatError,
    InsufficientNormalsError,
    ValidationError,
)

CONTAINER_MAGIC = b"GADSFT01"
CONTAINER_VERSION = 1
PROTO_MAGIC = b"GADSTP01"


@dataclass
class FeatureRecord:
    """One image's extracted features plus its ground truth.

    Attributes:
        id: unique string identifier.
        class_name: category label used for per-class prompt banks.
        label: 0 = normal, 1 = abnormal.
        class_embed: (d_cls,) float32 global embedding.
        patch_grids: layer index -> (h, w, d_patch) float32 patch token grid.
        image_dims: (h_img, w_img) of the source image.
        mask: optional (h_img, w_img) uint8 grid in {0, 1}.
    """

    id: str
    class_name: str
    label: int
    class_embed: np.ndarray
    patch_grids: dict[int, np.ndarray]
    image_dims: tuple[int, int]
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.class_embed = np.ascontiguousarray(self.class_embed, dtype=np.float32)
        self.patch_grids = {
            int(l): np.ascontiguousarray(g, dtype=np.float32)
            for l, g in self.patch_grids.items()
        }
        self.image_dims = (int(self.image_dims[0]), int(self.image_dims[1]))
        if self.mask is not None:
            self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        self.validate()

    def validate(self):
        if self.label not in (0, 1):
            raise ValidationError(f"record {self.id!r}: label must be 0 or 1, got {self.label}")
        if self.class_embed.ndim != 1:
            raise ValidationError(f"record {self.id!r}: class_embed must be a vector")
        if not np.all(np.isfinite(self.class_embed)):
            raise ValidationError(f"record {self.id!r}: non-finite class embedding")
        if not self.patch_grids:
            raise ValidationError(f"record {self.id!r}: no patch grids")
        shapes = {g.shape for g in self.patch_grids.values()}
        if len(shapes) != 1 or any(len(s) != 3 for s in shapes):
            raise ValidationError(f"record {self.id!r}: patch grids must share one (h, w, d) shape")
        for l, g in self.patch_grids.items():
            if not np.all(np.isfinite(g)):
                raise ValidationError(f"record {self.id!r}: non-finite values in layer {l} grid")
        h_img, w_img = self.image_dims
        if h_img <= 0 or w_img <= 0:
            raise ValidationError(f"record {self.id!r}: image_dims must be positive")
        if self.mask is not None:
            if self.mask.shape != (h_img, w_img):
                raise ValidationError(
                    f"record {self.id!r}: mask shape {self.mask.shape} != image dims {(h_img, w_img)}"
                )
            if not np.isin(self.mask, (0, 1)).all():
                raise ValidationError(f"record {self.id!r}: mask values must be 0 or 1")

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return next(iter(self.patch_grids.values())).shape

    @property
    def layers(self) -> list[int]:
        return sorted(self.patch_grids)


@dataclass
class FeatureSet:
    """An ordered collection of records with consistent dimensions.

    Record order is canonical: seeds for prompt sampling index into this order,
    so two files with the same records in the same order sample identically.
    """

    records: list[FeatureRecord]
    layer_set: list[int]
    dims: tuple[int, int, int, int]  # (d_cls, d_patch, h, w)

    @classmethod
    def from_records(cls, records: list[FeatureRecord]) -> "FeatureSet":
        if not records:
            raise ValidationError("cannot infer dimensions from an empty record list")
        first = records[0]
        h, w, d_patch = first.grid_shape
        fset = cls(
            records=list(records),
            layer_set=first.layers,
            dims=(first.class_embed.shape[0], d_patch, h, w),
        )
        fset.validate()
        return fset

    def validate(self):
        d_cls, d_patch, h, w = self.dims
        if self.layer_set != sorted(self.layer_set):
            raise ValidationError("layer_set must be sorted")
        for rec in self.records:
            if rec.layers != self.layer_set:
                raise CorruptFileError(
                    f"record {rec.id!r}: layers {rec.layers} != set layers {self.layer_set}"
                )
            if rec.class_embed.shape[0] != d_cls or rec.grid_shape != (h, w, d_patch):
                raise CorruptFileError(
                    f"record {rec.id!r}: dims {rec.class_embed.shape[0], *rec.grid_shape} "
                    f"!= set dims {self.dims}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def normal_indices(self, class_name: str | None = None) -> list[int]:
        return [
            i
            for i, r in enumerate(self.records)
            if r.label == 0 and (class_name is None or r.class_name == class_name)
        ]

    def class_names(self) -> list[str]:
        seen = dict.fromkeys(r.class_name for r in self.records)
        return list(seen)


@dataclass
class PromptBank:
    """The K-shot normal reference set used for residual computation."""

    prompts: list[FeatureRecord]

    def __post_init__(self):
        if not self.prompts:
            raise ValidationError("prompt bank must contain at least one record")
        bad = [p.id for p in self.prompts if p.label != 0]
        if bad:
            raise ValidationError(f"prompt bank contains abnormal records: {bad}")

    @property
    def K(self) -> int:
        return len(self.prompts)


@dataclass
class TextPrototypes:
    """Averaged normal / abnormal text prompt embeddings."""

    f_normal: np.ndarray
    f_abnormal: np.ndarray

    def __post_init__(self):
        self.f_normal = np.ascontiguousarray(self.f_normal, dtype=np.float32)
        self.f_abnormal = np.ascontiguousarray(self.f_abnormal, dtype=np.float32)
        for name, v in (("f_normal", self.f_normal), ("f_abnormal", self.f_abnormal)):
            if v.ndim != 1:
                raise ValidationError(f"{name} must be a vector")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} contains non-finite values")
            if np.linalg.norm(v) == 0.0:
                raise ValidationError(f"{name} has zero norm")
        if self.f_normal.shape != self.f_abnormal.shape:
            raise ValidationError("normal and abnormal prototypes must share one dimension")

    @property
    def d_text(self) -> int:
        return self.f_normal.shape[0]

    def swapped(self) -> "TextPrototypes":
        return TextPrototypes(f_normal=self.f_abnormal.copy(), f_abnormal=self.f_normal.copy())


# ---------------------------------------------------------------------------
# Binary feature container
#
# Layout (little-endian):
#   magic "GADSFT01" | u32 version | u32 d_cls | u32 d_patch | u32 h | u32 w
#   | u32 n_layers | n_layers x u32 layer indices | u64 record_count
# then per record:
#   u16 id_len + id utf-8 | u16 name_len + name utf-8 | u8 label | u8 has_mask
#   | u32 h_img | u32 w_img | [ceil(h_img*w_img/8) packed mask bytes, MSB first]
#   | d_cls float32 class embedding
#   | n_layers x (h*w*d_patch) float32 grids, sorted by layer index, row-major
# ---------------------------------------------------------------------------


def write_feature_file(fset: FeatureSet, path) -> None:
    """Serialize a FeatureSet; read_feature_file inverts this bit-exactly."""
    fset.validate()
    d_cls, d_patch, h, w = fset.dims
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<6I", CONTAINER_VERSION, d_cls, d_patch, h, w, len(fset.layer_set)))
        fh.write(struct.pack(f"<{len(fset.layer_set)}I", *fset.layer_set))
        fh.write(struct.pack("<Q", len(fset.records)))
        for rec in fset.records:
            id_bytes = rec.id.encode("utf-8")
            name_bytes = rec.class_name.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            h_img, w_img = rec.image_dims
            fh.write(struct.pack("<BBII", rec.label, int(rec.mask is not None), h_img, w_img))
            if rec.mask is not None:
                fh.write(np.packbits(rec.mask.reshape(-1)).tobytes())
            fh.write(rec.class_embed.astype("<f4").tobytes())
            for l in fset.layer_set:
                fh.write(rec.patch_grids[l].astype("<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"truncated file while reading {what}")
    return buf


def read_feature_file(path) -> FeatureSet:
    """Parse a feature container, validating every record invariant."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CONTAINER_MAGIC))
        if magic != CONTAINER_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, d_cls, d_patch, h, w, n_layers = struct.unpack(
            "<6I", _read_exact(fh, 24, "header")
        )
        if version != CONTAINER_VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        layer_set = list(
            struct.unpack(f"<{n_layers}I", _read_exact(fh, 4 * n_layers, "layer indices"))
        )
        if layer_set != sorted(layer_set) or len(set(layer_set)) != n_layers:
            raise CorruptFileError(f"{path}: layer indices must be sorted and unique")
        (record_count,) = struct.unpack("<Q", _read_exact(fh, 8, "record count"))

        grid_count = h * w * d_patch
        records = []
        for _ in range(record_count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "id length"))
            rec_id = _read_exact(fh, id_len, "id").decode("utf-8")
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "class name length"))
            name = _read_exact(fh, name_len, "class name").decode("utf-8")
            label, has_mask, h_img, w_img = struct.unpack(
                "<BBII", _read_exact(fh, 10, "record header")
            )
            mask = None
            if has_mask:
                n_bytes = (h_img * w_img + 7) // 8
                packed = np.frombuffer(_read_exact(fh, n_bytes, "mask"), dtype=np.uint8)
                mask = np.unpackbits(packed, count=h_img * w_img).reshape(h_img, w_img)
            embed = np.frombuffer(
                _read_exact(fh, 4 * d_cls, "class embedding"), dtype="<f4"
            ).copy()
            grids = {}
            for l in layer_set:
                flat = np.frombuffer(
                    _read_exact(fh, 4 * grid_count, f"layer {l} grid"), dtype="<f4"
                )
                grids[l] = flat.reshape(h, w, d_patch).copy()
            records.append(
                FeatureRecord(
                    id=rec_id,
                    class_name=name,
                    label=label,
                    class_embed=embed,
                    patch_grids=grids,
                    image_dims=(h_img, w_img),
                    mask=mask,
                )
            )
        if fh.read(1):
            raise CorruptFileError(f"{path}: trailing bytes after last record")

    fset = FeatureSet(records=records, layer_set=layer_set, dims=(d_cls, d_patch, h, w))
    fset.validate()
    return fset


def write_prototype_file(protos: TextPrototypes, path) -> None:
    """Text prototype file: magic GADSTP01, u32 d_text, then F_n and F_a float32."""
    with open(path, "wb") as fh:
        fh.write(PROTO_MAGIC)
        fh.write(struct.pack("<I", protos.d_text))
        fh.write(protos.f_normal.astype("<f4").tobytes())
        fh.write(protos.f_abnormal.astype("<f4").tobytes())


def read_prototype_file(path) -> TextPrototypes:
    with open(path, "rb") as fh:
        magic = fh.read(len(PROTO_MAGIC))
        if magic != PROTO_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (d_text,) = struct.unpack("<I", _read_exact(fh, 4, "d_text"))
        f_n = np.frombuffer(_read_exact(fh, 4 * d_text, "normal prototype"), dtype="<f4").copy()
        f_a = np.frombuffer(_read_exact(fh, 4 * d_text, "abnormal prototype"), dtype="<f4").copy()
        if fh.read(1):
            raise CorruptFileError(f"{path}: trailing bytes")
    return TextPrototypes(f_normal=f_n, f_abnormal=f_a)


# ---------------------------------------------------------------------------
# Manifest (JSON lines), the hand-off format consumed by feature exporters.
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    path: str
    class_name: str
    label: int
    mask_path: str | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """One JSON object per line: {id, path, class_name, label, mask_path}."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in ("id", "path", "class_name", "label"):
                if key not in obj:
                    raise ValidationError(f"{path}:{lineno}: missing manifest field {key!r}")
            entries.append(
                ManifestEntry(
                    id=str(obj["id"]),
                    path=str(obj["path"]),
                    class_name=str(obj["class_name"]),
                    label=int(obj["label"]),
                    mask_path=obj.get("mask_path"),
                )
            )
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            obj = {"id": e.id, "path": e.path, "class_name": e.class_name, "label": e.label}
            if e.mask_path is not None:
                obj["mask_path"] = e.mask_path
            fh.write(json.dumps(obj) + "\n")


def sample_prompts(
    fset: FeatureSet, K: int, seed: int, class_name: str | None = None
) -> PromptBank:
    """Draw K distinct normal records, deterministically for a fixed seed.

    Selection indexes into the set's canonical record order, so one seed yields
    the same bank for any loader of the same file. When class_name is given the
    pool is restricted to that class.
    """
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    pool = fset.normal_indices(class_name)
    if len(pool) < K:
        where = f"class {class_name!r}" if class_name else "set"
        raise InsufficientNormalsError(
            f"{where} has {len(pool)} normal records, need K={K}"
        )
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    chosen = sorted(rng.choice(len(pool), size=K, replace=False).tolist())
    return PromptBank(prompts=[fset.records[pool[i]] for i in chosen])
