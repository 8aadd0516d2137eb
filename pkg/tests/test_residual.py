import numpy as np
import pytest

from gads.errors import ConfigError, NormalizationError, ShapeError
from gads.features import PromptBank
from gads.residual import (
    ImageAdapter,
    ResidualHead,
    ResidualMap,
    image_prototype,
    image_residual,
    patch_residual_map,
    patch_residual_map_layer,
    residual_score,
)

from conftest import make_bank, make_record
from oracles import nn_residual_reference


def identity_adapter(d):
    return ImageAdapter(weight=np.eye(d), bias=np.zeros(d))


class TestImagePrototype:
    def test_singleton_mean_is_the_adapted_prompt(self, rng):
        bank = make_bank(rng, K=1)
        psi = ImageAdapter(
            weight=rng.standard_normal((8, 8)), bias=rng.standard_normal(8)
        )
        expected = psi.apply(bank.prompts[0].class_embed)
        np.testing.assert_allclose(image_prototype(bank, psi), expected)

    def test_identity_adapter_two_prompts(self, rng):
        bank = make_bank(rng, K=2)
        u = bank.prompts[0].class_embed.astype(np.float64)
        v = bank.prompts[1].class_embed.astype(np.float64)
        np.testing.assert_allclose(
            image_prototype(bank, identity_adapter(8)), (u + v) / 2, rtol=1e-12
        )

    def test_matches_affine_mean_loop_oracle(self, rng):
        bank = make_bank(rng, K=4)
        psi = ImageAdapter(
            weight=rng.standard_normal((8, 8)), bias=rng.standard_normal(8)
        )
        acc = np.zeros(8)
        for p in bank.prompts:  # brute-force: mean of affine maps
            acc += psi.weight @ p.class_embed.astype(np.float64) + psi.bias
        np.testing.assert_allclose(image_prototype(bank, psi), acc / 4, rtol=1e-12)

    def test_dim_mismatch(self, rng):
        bank = make_bank(rng, K=2, d_cls=8)
        with pytest.raises(ShapeError):
            image_prototype(bank, identity_adapter(6))


class TestImageResidual:
    def test_query_equal_to_single_prompt_gives_zero(self, rng):
        rec = make_record(rng, label=0)
        bank = PromptBank(prompts=[rec])
        psi = ImageAdapter(
            weight=rng.standard_normal((8, 8)), bias=rng.standard_normal(8)
        )
        res = image_residual(rec, image_prototype(bank, psi), psi)
        np.testing.assert_allclose(res, 0.0, atol=1e-12)

    def test_identity_adapter_is_plain_subtraction(self, rng):
        rec = make_record(rng)
        proto = rng.standard_normal(8)
        res = image_residual(rec, proto, identity_adapter(8))
        np.testing.assert_allclose(res, rec.class_embed.astype(np.float64) - proto)

    def test_matches_elementwise_loop_oracle(self, rng):
        rec = make_record(rng)
        proto = rng.standard_normal(8)
        psi = ImageAdapter(
            weight=rng.standard_normal((8, 8)), bias=rng.standard_normal(8)
        )
        adapted = psi.apply(rec.class_embed)
        expected = np.array([adapted[i] - proto[i] for i in range(8)])
        np.testing.assert_allclose(image_residual(rec, proto, psi), expected)


class TestResidualScore:
    def test_zero_residual_zero_bias_is_half(self):
        head = ResidualHead(weight=np.ones(4), bias=0.0)
        assert residual_score(np.zeros(4), head) == 0.5

    def test_large_bias_saturates(self):
        head = ResidualHead(weight=np.zeros(4), bias=20.0)
        assert residual_score(np.zeros(4), head) > 0.999

    def test_matches_scalar_oracle(self, rng):
        w = rng.standard_normal(8)
        b = rng.standard_normal()
        r = rng.standard_normal(8)
        expected = 1.0 / (1.0 + np.exp(-(np.dot(w, r) + b)))
        got = residual_score(r, ResidualHead(weight=w, bias=b))
        assert abs(got - expected) < 1e-12


class TestPatchResidualLayer:
    def test_self_bank_gives_zero_map(self, rng):
        rec = make_record(rng, label=0)
        m = patch_residual_map_layer(rec, PromptBank(prompts=[rec]), 0)
        np.testing.assert_allclose(m.values, 0.0, atol=1e-12)

    def test_orthogonal_patch_scores_one(self, rng):
        grid = np.zeros((2, 2, 4), dtype=np.float32)
        grid[..., 0] = 1.0
        prompt = make_record(rng, rec_id="p", label=0, d_patch=4, grid=2, layers=(0,))
        prompt.patch_grids[0] = grid
        query = make_record(rng, rec_id="q", d_patch=4, grid=2, layers=(0,))
        qgrid = np.zeros((2, 2, 4), dtype=np.float32)
        qgrid[..., 0] = 1.0
        qgrid[0, 0] = [0.0, 1.0, 0.0, 0.0]  # orthogonal to every prompt patch
        query.patch_grids[0] = qgrid
        m = patch_residual_map_layer(query, PromptBank(prompts=[prompt]), 0)
        assert m.values[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert m.values[1, 1] == pytest.approx(0.0, abs=1e-12)

    def test_matches_double_loop_oracle(self, rng):
        query = make_record(rng, d_patch=8, grid=4)
        bank = make_bank(rng, K=2, d_patch=8, grid=4)
        m = patch_residual_map_layer(query, bank, 1)
        expected = nn_residual_reference(
            query.patch_grids[1].astype(np.float64),
            [p.patch_grids[1].astype(np.float64) for p in bank.prompts],
        )
        np.testing.assert_allclose(m.values, expected, atol=1e-6)

    def test_zero_norm_patch_is_an_error_naming_the_position(self, rng):
        query = make_record(rng, rec_id="badq", grid=2)
        query.patch_grids[0][1, 1] = 0.0
        bank = make_bank(rng, K=1, grid=2)
        with pytest.raises(NormalizationError, match=r"badq.*layer 0.*\(1, 1\)"):
            patch_residual_map_layer(query, bank, 0)

    def test_missing_layer_is_an_error(self, rng):
        query = make_record(rng, layers=(0,))
        bank = make_bank(rng, K=1, layers=(0,))
        with pytest.raises(ConfigError):
            patch_residual_map_layer(query, bank, 5)


class TestPatchResidualMap:
    def test_single_layer_equals_that_layer(self, rng):
        query = make_record(rng)
        bank = make_bank(rng)
        single = patch_residual_map_layer(query, bank, 0)
        combined = patch_residual_map(query, bank, [0], rescale=False)
        np.testing.assert_allclose(combined.values, single.values)

    def test_mean_with_zero_layer_halves(self, rng):
        prompt = make_record(rng, rec_id="p", label=0)
        query = make_record(rng, rec_id="q")
        query.patch_grids[1] = prompt.patch_grids[1].copy()  # layer 1 self-matches
        bank = PromptBank(prompts=[prompt])
        a = patch_residual_map_layer(query, bank, 0).values
        assert a.max() > 0.01  # layer 0 genuinely differs
        mean = patch_residual_map(query, bank, [0, 1], rescale=False).values
        np.testing.assert_allclose(mean, a / 2, atol=1e-12)

    def test_three_layer_mean_matches_loop_oracle(self, rng):
        query = make_record(rng, layers=(0, 1, 2))
        bank = make_bank(rng, layers=(0, 1, 2))
        got = patch_residual_map(query, bank, [0, 1, 2], rescale=False)
        acc = np.zeros((4, 4))
        for l in (0, 1, 2):
            acc += patch_residual_map_layer(query, bank, l).values
        np.testing.assert_allclose(got.values, acc / 3, rtol=1e-12)

    def test_rescale_halves_and_flags(self, rng):
        query = make_record(rng)
        bank = make_bank(rng)
        raw = patch_residual_map(query, bank, [0, 1], rescale=False)
        scaled = patch_residual_map(query, bank, [0, 1], rescale=True)
        assert scaled.rescaled and not raw.rescaled
        np.testing.assert_allclose(scaled.values, raw.values / 2)
        assert scaled.max_score == scaled.values.max()

    def test_empty_layer_set_rejected(self, rng):
        with pytest.raises(ConfigError):
            patch_residual_map(make_record(rng), make_bank(rng), [])


class TestInvariants:
    def test_self_reference_nullity(self, rng):
        for i in range(10):
            rec = make_record(rng, rec_id=f"s{i}", label=0)
            bank = PromptBank(prompts=[rec])
            psi = ImageAdapter(
                weight=rng.standard_normal((8, 8)), bias=rng.standard_normal(8)
            )
            res = image_residual(rec, image_prototype(bank, psi), psi)
            assert np.abs(res).max() <= 1e-12
            m = patch_residual_map(rec, bank, [0, 1])
            assert np.abs(m.values).max() <= 1e-12

    def test_nn_dominance_bank_growth_never_increases_cells(self, rng):
        query = make_record(rng)
        small = make_bank(rng, K=2)
        big = PromptBank(prompts=small.prompts + make_bank(rng, K=2).prompts)
        m_small = patch_residual_map_layer(query, small, 0).values
        m_big = patch_residual_map_layer(query, big, 0).values
        assert (m_big <= m_small + 1e-15).all()

    def test_layer_permutation_invariance(self, rng):
        query = make_record(rng, layers=(0, 1, 2))
        bank = make_bank(rng, layers=(0, 1, 2))
        a = patch_residual_map(query, bank, [0, 1, 2])
        b = patch_residual_map(query, bank, [2, 0, 1])
        np.testing.assert_array_equal(a.values, b.values)

    def test_value_ranges(self, rng):
        for i in range(5):
            query = make_record(rng, rec_id=f"q{i}")
            bank = make_bank(rng)
            raw = patch_residual_map(query, bank, [0, 1], rescale=False).values
            assert raw.min() >= 0.0 and raw.max() <= 2.0
            scaled = patch_residual_map(query, bank, [0, 1]).values
            assert scaled.min() >= 0.0 and scaled.max() <= 1.0

    def test_residual_map_range_enforced(self):
        with pytest.raises(ShapeError):
            ResidualMap(values=np.array([[1.5]]), rescaled=True)
        ResidualMap(values=np.array([[1.5]]), rescaled=False)  # fine raw
