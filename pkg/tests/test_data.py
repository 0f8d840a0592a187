import numpy as np
import pytest

from dynverify import data
from dynverify.data import BlobSpec, Dataset, DatasetError


def test_delimited_round_trip(tmp_path):
    ds = Dataset(np.arange(24, dtype=float).reshape(2, 1, 3, 4) / 7, [1, 0], 3)
    data.save_delimited(ds, tmp_path / "d.csv", delimiter=";")
    back = data.load_delimited(tmp_path / "d.csv")
    assert back.input_shape == (1, 3, 4) and back.num_classes == 3
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)


@pytest.mark.parametrize("text", [
    "",
    "0.1,0.2,1\n",
    "# classes=2\n0.1,1\n",
    "# shape=2 classes=2\n0.1,1\n",
    "# shape=1 classes=2\nabc,1\n",
    "# shape=1 classes=2\n0.5,2\n",
    "# shape=1 classes=2\n",
])
def test_schema_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DatasetError):
        data.load_delimited(p)


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        data.load_delimited(tmp_path / "nope.csv")


def test_split_is_a_seeded_partition():
    ds = Dataset(np.arange(10.0)[:, None], np.zeros(10, int), 1)
    a, b = data.split(ds, 0.3, seed=4)
    assert len(a) == 3 and sorted(np.concatenate([a.x, b.x]).ravel()) == list(range(10))
    a2, _ = data.split(ds, 0.3, seed=4)
    assert np.array_equal(a.x, a2.x)


def test_blobs_are_balanced_and_deterministic():
    spec = BlobSpec(n_train=500, n_test=300)
    tr, te = data.make_blobs(spec, seed=3)
    assert np.bincount(tr.y).tolist() == [50] * 10 and tr.input_shape == (8,)
    tr2, _ = data.make_blobs(spec, seed=3)
    assert np.array_equal(tr.x, tr2.x)


def test_confusable_pair_sits_at_the_centre():
    spec = BlobSpec()
    c = data.blob_centres(spec, 0)
    assert np.all(c[3] == 0)
    assert np.allclose(np.linalg.norm(c[5] - c[3], axis=1), spec.confusable_distance)


def test_label_checks():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 1)), [0], 2)
    with pytest.raises(DatasetError):
        Dataset(np.zeros((1, 1)), [2], 2)
