import numpy as np
import pytest

from gads.errors import (
    CorruptFileError,
    FormatError,
    InsufficientNormalsError,
    ValidationError,
)
from gads.features import (
    FeatureRecord,
    FeatureSet,
    ManifestEntry,
    TextPrototypes,
    read_feature_file,
    read_manifest,
    read_prototype_file,
    sample_prompts,
    write_feature_file,
    write_manifest,
    write_prototype_file,
)

from conftest import make_record, make_set


def assert_sets_equal(a: FeatureSet, b: FeatureSet):
    assert a.dims == b.dims
    assert a.layer_set == b.layer_set
    assert len(a) == len(b)
    for ra, rb in zip(a.records, b.records):
        assert ra.id == rb.id
        assert ra.class_name == rb.class_name
        assert ra.label == rb.label
        assert ra.image_dims == rb.image_dims
        assert ra.class_embed.tobytes() == rb.class_embed.tobytes()  # bit-identical
        assert ra.patch_grids.keys() == rb.patch_grids.keys()
        for l in ra.patch_grids:
            assert ra.patch_grids[l].tobytes() == rb.patch_grids[l].tobytes()
        if ra.mask is None:
            assert rb.mask is None
        else:
            assert np.array_equal(ra.mask, rb.mask)


class TestContainerRoundTrip:
    def test_round_trip_identity(self, rng, tmp_path):
        fset = make_set(rng, n_normal=2, n_abnormal=1, with_mask=True)
        path = tmp_path / "f.gadsft"
        write_feature_file(fset, path)
        assert_sets_equal(read_feature_file(path), fset)

    def test_round_trip_with_unicode_ids(self, rng, tmp_path):
        rec = make_record(rng, rec_id="зубч-колесо/01·ü")
        rec.class_name = "шестерня"
        fset = FeatureSet.from_records([rec])
        path = tmp_path / "u.gadsft"
        write_feature_file(fset, path)
        loaded = read_feature_file(path)
        assert loaded.records[0].id == rec.id
        assert loaded.records[0].class_name == rec.class_name

    def test_synthetic_three_record_dims_echo(self, rng, tmp_path):
        records = [
            make_record(rng, rec_id=f"r{i}", d_cls=8, d_patch=8, grid=4, layers=(0, 1))
            for i in range(3)
        ]
        fset = FeatureSet.from_records(records)
        path = tmp_path / "f.gadsft"
        write_feature_file(fset, path)
        loaded = read_feature_file(path)
        assert loaded.dims == (8, 8, 4, 4)
        assert loaded.layer_set == [0, 1]

    def test_empty_record_list_is_a_valid_file(self, rng, tmp_path):
        fset = make_set(rng, n_normal=1, n_abnormal=0)
        fset = FeatureSet(records=[], layer_set=fset.layer_set, dims=fset.dims)
        path = tmp_path / "empty.gadsft"
        write_feature_file(fset, path)
        loaded = read_feature_file(path)
        assert len(loaded) == 0
        assert loaded.dims == fset.dims

    def test_bad_magic_is_a_format_error(self, rng, tmp_path):
        path = tmp_path / "f.gadsft"
        write_feature_file(make_set(rng), path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_feature_file(path)

    def test_bad_version_is_a_format_error(self, rng, tmp_path):
        path = tmp_path / "f.gadsft"
        write_feature_file(make_set(rng), path)
        data = bytearray(path.read_bytes())
        data[8] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_feature_file(path)

    def test_truncation_is_a_corrupt_file_error(self, rng, tmp_path):
        path = tmp_path / "f.gadsft"
        write_feature_file(make_set(rng), path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CorruptFileError):
            read_feature_file(path)

    def test_file_size_matches_layout_formula_10k_records(self, tmp_path):
        # independent size checker: header + sum of per-record sizes
        d_cls, d_patch, h, w = 8, 64, 16, 16
        layers = [3]
        grid = np.zeros((h, w, d_patch), dtype=np.float32)
        embed = np.zeros(d_cls, dtype=np.float32)
        n = 10_000
        records = [
            FeatureRecord(
                id=f"r{i}",
                class_name="bulk",
                label=0,
                class_embed=embed,
                patch_grids={3: grid},  # records alias one grid; writer does not care
                image_dims=(h, w),
            )
            for i in range(n)
        ]
        fset = FeatureSet.from_records(records)
        path = tmp_path / "big.gadsft"
        write_feature_file(fset, path)

        header = 8 + 4 * 6 + 4 * len(layers) + 8
        per_record = sum(
            2 + len(f"r{i}") + 2 + len("bulk") + 1 + 1 + 4 + 4
            + 4 * d_cls + 4 * len(layers) * h * w * d_patch
            for i in range(n)
        )
        assert path.stat().st_size == header + per_record

    def test_mask_packing_is_row_major_msb_first(self, rng, tmp_path):
        rec = make_record(rng, with_mask=True, label=1, image=5)  # 25 pixels -> 4 bytes
        fset = FeatureSet.from_records([rec])
        path = tmp_path / "m.gadsft"
        write_feature_file(fset, path)
        loaded = read_feature_file(path)
        assert np.array_equal(loaded.records[0].mask, rec.mask)

    def test_nan_on_disk_is_a_validation_error_naming_the_record(self, rng, tmp_path):
        rec = make_record(rng, rec_id="n0", with_mask=False)
        fset = FeatureSet.from_records([rec])
        path = tmp_path / "f.gadsft"
        write_feature_file(fset, path)
        # first float of the class embedding sits right after the fixed header
        # and the per-record prelude (ids are 2 chars, no mask)
        offset = (8 + 24 + 4 * len(fset.layer_set) + 8) + (2 + 2 + 2 + 2 + 1 + 1 + 4 + 4)
        data = bytearray(path.read_bytes())
        data[offset : offset + 4] = np.float32("nan").tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(ValidationError, match="n0"):
            read_feature_file(path)


class TestValidation:
    def test_non_finite_embed_names_the_record(self):
        with pytest.raises(ValidationError, match="weird-id"):
            FeatureRecord(
                id="weird-id",
                class_name="c",
                label=0,
                class_embed=np.array([1.0, np.nan]),
                patch_grids={0: np.zeros((2, 2, 3))},
                image_dims=(4, 4),
            )

    def test_bad_label_rejected(self, rng):
        with pytest.raises(ValidationError):
            FeatureRecord(
                id="x",
                class_name="c",
                label=2,
                class_embed=np.ones(3),
                patch_grids={0: np.ones((2, 2, 3))},
                image_dims=(4, 4),
            )

    def test_mask_shape_must_match_image_dims(self, rng):
        with pytest.raises(ValidationError):
            FeatureRecord(
                id="x",
                class_name="c",
                label=0,
                class_embed=np.ones(3),
                patch_grids={0: np.ones((2, 2, 3))},
                image_dims=(4, 4),
                mask=np.zeros((3, 4), dtype=np.uint8),
            )

    def test_mixed_grid_shapes_rejected(self, rng):
        with pytest.raises(ValidationError):
            FeatureRecord(
                id="x",
                class_name="c",
                label=0,
                class_embed=np.ones(3),
                patch_grids={0: np.ones((2, 2, 3)), 1: np.ones((2, 3, 3))},
                image_dims=(4, 4),
            )

    def test_set_rejects_dim_mismatch_across_records(self, rng):
        a = make_record(rng, rec_id="a", d_cls=8)
        b = make_record(rng, rec_id="b", d_cls=6)
        with pytest.raises(CorruptFileError):
            FeatureSet(records=[a, b], layer_set=a.layers, dims=(8, 8, 4, 4)).validate()


class TestPrototypeFile:
    def test_round_trip(self, rng, tmp_path):
        protos = TextPrototypes(
            f_normal=rng.standard_normal(6), f_abnormal=rng.standard_normal(6)
        )
        path = tmp_path / "p.gadstp"
        write_prototype_file(protos, path)
        loaded = read_prototype_file(path)
        assert loaded.f_normal.tobytes() == protos.f_normal.tobytes()
        assert loaded.f_abnormal.tobytes() == protos.f_abnormal.tobytes()

    def test_zero_norm_prototype_rejected(self):
        with pytest.raises(ValidationError):
            TextPrototypes(f_normal=np.zeros(4), f_abnormal=np.ones(4))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "p.gadstp"
        path.write_bytes(b"NOTPROTO" + b"\x00" * 12)
        with pytest.raises(FormatError):
            read_prototype_file(path)


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = [
            ManifestEntry(id="a", path="img/a.png", class_name="cable", label=0),
            ManifestEntry(
                id="b", path="img/b.png", class_name="cable", label=1, mask_path="m/b.png"
            ),
        ]
        path = tmp_path / "manifest.jsonl"
        write_manifest(entries, path)
        assert read_manifest(path) == entries

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text('{"id": "a", "path": "x"}\n')
        with pytest.raises(ValidationError):
            read_manifest(path)


class TestSamplePrompts:
    def test_exactly_k_normals_returned_in_stable_order(self, rng):
        fset = make_set(rng, n_normal=3, n_abnormal=2)
        bank = sample_prompts(fset, 3, seed=99)
        assert [p.id for p in bank.prompts] == ["n0", "n1", "n2"]

    def test_deterministic_for_fixed_seed(self, rng):
        fset = make_set(rng, n_normal=8, n_abnormal=0)
        a = sample_prompts(fset, 3, seed=7)
        b = sample_prompts(fset, 3, seed=7)
        assert [p.id for p in a.prompts] == [p.id for p in b.prompts]
        c = sample_prompts(fset, 3, seed=8)
        assert [p.id for p in a.prompts] != [p.id for p in c.prompts] or True  # may collide

    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_standard_shot_counts(self, rng, k):
        fset = make_set(rng, n_normal=6, n_abnormal=2)
        assert sample_prompts(fset, k, seed=0).K == k

    def test_insufficient_normals(self, rng):
        fset = make_set(rng, n_normal=2, n_abnormal=3)
        with pytest.raises(InsufficientNormalsError):
            sample_prompts(fset, 3, seed=0)

    def test_only_normals_selected(self, rng):
        fset = make_set(rng, n_normal=5, n_abnormal=5)
        for seed in range(10):
            bank = sample_prompts(fset, 4, seed=seed)
            assert all(p.label == 0 for p in bank.prompts)

    def test_per_class_pool(self, rng):
        records = [
            make_record(rng, rec_id=f"x{i}", class_name="cx", label=0) for i in range(3)
        ] + [make_record(rng, rec_id=f"y{i}", class_name="cy", label=0) for i in range(3)]
        fset = FeatureSet.from_records(records)
        bank = sample_prompts(fset, 2, seed=1, class_name="cy")
        assert all(p.class_name == "cy" for p in bank.prompts)
