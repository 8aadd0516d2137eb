import numpy as np
import pytest

from gads.errors import ConfigError, ShapeError
from gads.features import FeatureSet, TextPrototypes
from gads.inference import build_prompt_banks, infer_record, infer_set
from gads.training import AdapterParams, TrainConfig

from conftest import make_bank, make_protos, make_record


class TestInferRecord:
    def test_refuses_mismatched_text_dims(self, rng):
        # the semantic image score compares the class embedding to the
        # prototypes directly; projected fallbacks are a training-only concern
        rec = make_record(rng, d_cls=8)
        bank = make_bank(rng, K=2, d_cls=8)
        protos = make_protos(rng, d_text=6)  # != d_cls
        params = AdapterParams.init(8, 8, 6, seed=0)
        with pytest.raises(ShapeError):
            infer_record(rec, bank, params, protos, TrainConfig())

    def test_map_lives_at_image_resolution_in_unit_range(self, rng):
        rec = make_record(rng, d_cls=6, image=10)
        bank = make_bank(rng, K=2, d_cls=6)
        protos = make_protos(rng, d_text=6)
        params = AdapterParams.init(6, 8, 6, seed=0)
        out = infer_record(rec, bank, params, protos, TrainConfig())
        assert out.amap.shape == (10, 10)
        assert 0.0 <= out.amap.min() and out.amap.max() <= 1.0
        assert 0.0 <= out.score <= 1.0


class TestPromptBanks:
    def _pool(self, rng):
        records = []
        for i in range(6):
            records.append(
                make_record(rng, rec_id=f"x{i}", class_name="cx", label=0, d_cls=6)
            )
        records.append(make_record(rng, rec_id="y0", class_name="cy", label=0, d_cls=6))
        records.append(make_record(rng, rec_id="y1", class_name="cy", label=1, d_cls=6))
        return FeatureSet.from_records(records)

    def test_per_class_with_whole_pool_fallback(self, rng):
        pool = self._pool(rng)
        banks, fallback = build_prompt_banks(pool, K=2, seed=0)
        assert all(p.class_name == "cx" for p in banks["cx"].prompts)
        # class cy has a single normal record, short of K=2: falls back
        assert banks["cy"] is fallback
        assert fallback.K == 2

    def test_explicit_ids_build_one_shared_bank(self, rng):
        pool = self._pool(rng)
        banks, bank = build_prompt_banks(pool, K=2, seed=0, prompt_ids=["x1", "x3"])
        assert banks == {}
        assert [p.id for p in bank.prompts] == ["x1", "x3"]

    def test_unknown_prompt_id_rejected(self, rng):
        pool = self._pool(rng)
        with pytest.raises(ConfigError):
            build_prompt_banks(pool, K=2, seed=0, prompt_ids=["nope"])

    def test_infer_set_routes_by_class(self, rng):
        pool = self._pool(rng)
        protos = make_protos(rng, d_text=6)
        params = AdapterParams.init(6, 8, 6, seed=0)
        banks, fallback = build_prompt_banks(pool, K=2, seed=0)
        outputs = infer_set(pool, banks, fallback, params, protos, TrainConfig())
        assert [o.id for o in outputs] == [r.id for r in pool.records]
        assert all(np.isfinite(o.score) for o in outputs)
