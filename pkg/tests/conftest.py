import numpy as np
import pytest

from gads.features import FeatureRecord, FeatureSet, PromptBank, TextPrototypes


def make_record(
    rng,
    rec_id="r0",
    class_name="c0",
    label=0,
    d_cls=8,
    d_patch=8,
    grid=4,
    layers=(0, 1),
    image=8,
    with_mask=False,
):
    mask = None
    if with_mask:
        if label == 1:
            mask = (rng.random((image, image)) < 0.3).astype(np.uint8)
        else:
            mask = np.zeros((image, image), dtype=np.uint8)
    return FeatureRecord(
        id=rec_id,
        class_name=class_name,
        label=label,
        class_embed=rng.standard_normal(d_cls),
        patch_grids={l: rng.standard_normal((grid, grid, d_patch)) for l in layers},
        image_dims=(image, image),
        mask=mask,
    )


def make_set(rng, n_normal=4, n_abnormal=2, **kwargs):
    records = []
    for i in range(n_normal):
        records.append(make_record(rng, rec_id=f"n{i}", label=0, **kwargs))
    for i in range(n_abnormal):
        records.append(make_record(rng, rec_id=f"a{i}", label=1, **kwargs))
    return FeatureSet.from_records(records)


def make_bank(rng, K=2, **kwargs):
    return PromptBank(
        prompts=[make_record(rng, rec_id=f"p{k}", label=0, **kwargs) for k in range(K)]
    )


def make_protos(rng, d_text=6):
    return TextPrototypes(
        f_normal=rng.standard_normal(d_text), f_abnormal=rng.standard_normal(d_text)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
