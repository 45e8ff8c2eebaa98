import numpy as np
import pandas as pd
import pytest

from app import dataset as ds_mod
from app.errors import ArtifactError, DatasetError
from app.model import evaluate, init_weights, train
from app.models import RunConfig, TrainHyper
from app.orchestrator import make_splits


@pytest.fixture(scope="module")
def blobs():
    return ds_mod.generate_blobs(10, 16, 500, 3.0, 1.0, seed=0)


def test_generate_blobs_balanced(blobs):
    assert len(blobs) == 5000
    assert blobs.dim == 16
    np.testing.assert_array_equal(blobs.class_counts(), np.full(10, 500))
    assert blobs.noise_flags is None


def test_generate_blobs_deterministic(blobs):
    again = ds_mod.generate_blobs(10, 16, 500, 3.0, 1.0, seed=0)
    assert blobs.equals(again)
    other = ds_mod.generate_blobs(10, 16, 500, 3.0, 1.0, seed=1)
    assert not blobs.equals(other)


def test_generate_blobs_rejects_bad_arguments():
    with pytest.raises(DatasetError):
        ds_mod.generate_blobs(1, 2, 10, 3.0, 1.0, seed=0)
    with pytest.raises(DatasetError):
        ds_mod.generate_blobs(2, 2, 10, 3.0, 0.0, seed=0)


def test_separable_blobs_are_learnable():
    ds = ds_mod.generate_blobs(2, 2, 100, 10.0, 0.5, seed=0)
    w = train(init_weights("softmax_regression", 2, 2, seed=0), ds, None, TrainHyper(epochs=30))
    assert evaluate(w, ds) >= 0.99


def test_dataset_arrays_are_read_only(blobs):
    with pytest.raises(ValueError):
        blobs.features[0, 0] = 1.0


def test_noise_zero_rate_is_identity(blobs):
    out = ds_mod.inject_label_noise(blobs, 0.0, seed=0)
    np.testing.assert_array_equal(out.labels, blobs.labels)
    assert not out.noise_flags.any()


def test_noise_flips_exactly_floor_rate_per_class(blobs):
    out = ds_mod.inject_label_noise(blobs, 0.4, seed=0)
    np.testing.assert_array_equal(out.features, blobs.features)
    for c in range(10):
        members = blobs.labels == c
        assert out.noise_flags[members].sum() == 200
    flipped = out.noise_flags
    assert np.all(out.labels[flipped] != blobs.labels[flipped])
    np.testing.assert_array_equal(out.labels[~flipped], blobs.labels[~flipped])


@pytest.mark.parametrize("rate", [0.0, 0.1, 0.2, 0.3, 0.4])
def test_noise_grid(rate):
    ds = ds_mod.generate_blobs(4, 3, 50, 3.0, 1.0, seed=2)
    out = ds_mod.inject_label_noise(ds, rate, seed=2)
    assert int(out.noise_flags.sum()) == 4 * int(np.floor(rate * 50))


def test_noise_rejects_bad_rate(blobs):
    with pytest.raises(DatasetError):
        ds_mod.inject_label_noise(blobs, 1.5, seed=0)


def test_split_sizes_and_disjointness(blobs):
    train, val, test = ds_mod.split(blobs, (0.8, 0.1, 0.1), seed=0)
    assert (len(train), len(val), len(test)) == (4000, 500, 500)
    assert (train.split_tag, val.split_tag, test.split_tag) == ("train", "val", "test")
    rows = np.concatenate([train.features, val.features, test.features])
    assert np.unique(rows, axis=0).shape[0] == 5000


def test_split_is_deterministic(blobs):
    a = ds_mod.split(blobs, (0.8, 0.1, 0.1), seed=3)
    b = ds_mod.split(blobs, (0.8, 0.1, 0.1), seed=3)
    assert all(x.equals(y) for x, y in zip(a, b))


@pytest.mark.parametrize("fractions", [(1.0, 0.0, 0.0), (0.5, 0.5), (0.6, 0.3, 0.3)])
def test_split_rejects_bad_fractions(blobs, fractions):
    with pytest.raises(DatasetError):
        ds_mod.split(blobs, fractions, seed=0)


def test_save_load_round_trip(tmp_path, blobs):
    noisy = ds_mod.inject_label_noise(blobs, 0.4, seed=0)
    path = str(tmp_path / "all.csv")
    ds_mod.save(noisy, path)
    loaded = ds_mod.load(path)
    assert loaded.equals(noisy)
    assert len(loaded) == 5000 and loaded.dim == 16


def test_load_missing_label_column(tmp_path, blobs):
    path = str(tmp_path / "all.csv")
    ds_mod.save(blobs, path)
    frame = pd.read_csv(path).drop(columns=["label"])
    frame.to_csv(path, index=False)
    with pytest.raises(ArtifactError):
        ds_mod.load(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(ArtifactError):
        ds_mod.load(str(tmp_path / "nope.csv"))


def test_make_splits_corrupts_only_the_training_labels():
    cfg = RunConfig.model_validate({"data": {"per_class": 600, "fractions": [5 / 6, 1 / 12, 1 / 12], "seed": 3}})
    train, val, test = make_splits(cfg)
    assert (len(train), len(val), len(test)) == (5000, 500, 500)
    assert int(train.noise_flags.sum()) == 10 * 200
    # clean splits agree with the generating class of each instance
    full = ds_mod.generate_blobs(10, 16, 600, 3.0, 1.0, seed=3)
    rows = {tuple(x): y for x, y in zip(full.features, full.labels)}
    for part in (val, test):
        assert part.noise_flags is None
        assert all(rows[tuple(x)] == y for x, y in zip(part.features, part.labels))


def test_make_splits_noise_splits_are_configurable():
    cfg = RunConfig.model_validate({"data": {"per_class": 100, "noise_splits": ["train", "val"], "seed": 1}})
    train, val, test = make_splits(cfg)
    assert train.noise_flags.any() and val.noise_flags.any()
    assert test.noise_flags is None
    clean = make_splits(cfg.model_copy(update={"data": cfg.data.model_copy(update={"noise_splits": []})}))
    assert all(part.noise_flags is None for part in clean)
    np.testing.assert_array_equal(clean[0].features, train.features)
