import numpy as np
import pytest

from diplab import data
from diplab.errors import RangeError


def test_counts_and_balance():
    ds = data.generate(8, 20, 0.3, seed=0)
    assert len(ds) == 160
    assert np.bincount(ds.labels).tolist() == [20] * 8
    assert ds.patches.shape == (160, 9, 64)


def test_zero_noise_images_identical_within_class():
    ds = data.generate(4, 5, 0.0, seed=1)
    for c in range(4):
        imgs = ds.patches[ds.labels == c]
        assert np.all(imgs == imgs[0])


def test_same_seed_same_hash():
    a = data.generate(5, 3, 0.3, seed=9, test_per_class=2)
    b = data.generate(5, 3, 0.3, seed=9, test_per_class=2)
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != data.generate(5, 3, 0.3, seed=10, test_per_class=2).content_hash()


def test_prototypes_unit_norm():
    ds = data.generate(6, 1, seed=3)
    assert np.allclose(np.linalg.norm(ds.prototypes, axis=1), 1.0)


@pytest.mark.parametrize("kwargs", [dict(c_total=1, per_class=3), dict(c_total=3, per_class=0),
                                    dict(c_total=3, per_class=2, noise_sigma=-1)])
def test_generate_range_errors(kwargs):
    with pytest.raises(RangeError):
        data.generate(**kwargs)


@pytest.mark.parametrize("c_total, sizes", [(8, (4, 4)), (7, (4, 3))])
def test_split_sizes(c_total, sizes):
    split = data.split_base_new(data.generate(c_total, 1), seed=0)
    assert (len(split.base_classes), len(split.new_classes)) == sizes
    assert set(split.base_classes) | set(split.new_classes) == set(range(c_total))
    assert not set(split.base_classes) & set(split.new_classes)
    assert list(split.base_classes) == sorted(split.base_classes)


def test_split_deterministic():
    assert data.split_base_new(10, 4) == data.split_base_new(10, 4)


def test_sample_shots():
    ds = data.generate(4, 16, seed=0)
    one = data.sample_shots(ds, [0, 1, 2, 3], 1, seed=0)
    assert len(one) == 4 and sorted(ds.labels[one].tolist()) == [0, 1, 2, 3]
    full = data.sample_shots(ds, [0, 1, 2, 3], 16, seed=0)
    assert np.array_equal(full, np.arange(64))
    assert np.array_equal(data.sample_shots(ds, [1, 3], 5, seed=2), data.sample_shots(ds, [1, 3], 5, seed=2))
    with pytest.raises(RangeError):
        data.sample_shots(ds, [0], 17, seed=0)


def test_csv_round_trip(tmp_path):
    ds = data.generate(3, 2, 0.3, seed=5, d_vis=6, n_patches=2, test_per_class=1)
    data.save_csv(ds, tmp_path / "ds.csv")
    loaded = data.load_csv(tmp_path / "ds.csv")
    assert np.array_equal(loaded["train"][0], ds.patches)
    assert np.array_equal(loaded["train"][1], ds.labels)
    assert np.array_equal(loaded["test"][0], ds.test_patches)
