import numpy as np
import pytest

from dynverify import nn, qmodel
from dynverify.layers import Architecture, ShapeError, dense, mlp
from dynverify.quant import QuantParams
from dynverify.rng import stream
from golden_cases import golden, mlp_logits


def _identity_model(n=2):
    arch = Architecture((n,), (dense(n, bias=False),))
    qp = QuantParams(1 / 127)
    return qmodel.QuantModel(arch, [np.eye(n, dtype=np.int8) * 127], [qp], [None])


def test_identity_dense_returns_largest_input():
    logits, label = qmodel.infer(_identity_model(), np.array([3.0, 1.0]))
    assert label == 0
    assert np.allclose(logits, [3.0, 1.0])


def test_ties_go_to_lowest_index():
    arch = mlp(3, [], 4)
    model = qmodel.quantize_model(arch, nn.init_params(arch, stream(0)))  # zero head: all logits equal
    _, label = qmodel.infer(model, np.array([1.0, 2.0, 3.0]))
    assert label == 0
    _, labels = qmodel.infer(model, np.ones((5, 3)))
    assert labels.tolist() == [0] * 5


def test_golden_logits_are_byte_identical():
    want = golden("mlp_logits.json")
    got = mlp_logits()
    assert got == want
    assert mlp_logits()["logits_hex"] == got["logits_hex"]


def test_rejects_wrong_input():
    with pytest.raises(ShapeError):
        qmodel.infer(_identity_model(), np.zeros(3))


def test_storage_bytes():
    arch = Architecture((10,), (dense(10, bias=False),))
    model = qmodel.quantize_model(arch, nn.init_params(arch, stream(0), zero_head=False))
    assert qmodel.weight_bytes(model) == 100
    assert qmodel.storage_bytes(model) == 100 + qmodel.QPARAM_BYTES
    empty = qmodel.QuantModel(Architecture((4,), ()), [], [], [])
    assert qmodel.storage_bytes(empty) == qmodel.metadata_bytes(empty) == 0


def test_calibrated_activations_count_as_metadata(small_task):
    n_par = len(small_task.arch.parametric_indices())
    assert qmodel.metadata_bytes(small_task) == qmodel.QPARAM_BYTES * (len(small_task.codes) + n_par)


def test_file_round_trip_is_byte_identical(tmp_path, small_task):
    path = tmp_path / "m.dvq"
    qmodel.save(small_task, path)
    again = qmodel.load(path)
    assert qmodel.to_bytes(again) == path.read_bytes()
    x = np.linspace(-2, 2, 16).reshape(2, 8)
    assert np.array_equal(again.logits(x), small_task.logits(x))


@pytest.mark.parametrize("damage", [lambda b: b"X" + b[1:], lambda b: b[:-3], lambda b: b + b"\0", lambda b: b[:20]])
def test_corrupt_files_are_rejected(damage, small_task):
    with pytest.raises(qmodel.ModelFormatError):
        qmodel.from_bytes(damage(qmodel.to_bytes(small_task)))


def test_inference_is_deterministic(small_task, small_data):
    x = small_data[1].x[:50]
    a = small_task.copy().logits(x)
    assert np.array_equal(a, small_task.logits(x))
    assert a.tobytes() == small_task.logits(x).tobytes()


def test_codes_stay_int8(small_task):
    for c in small_task.codes:
        assert c.dtype == np.int8


def test_flip_inplace_keeps_float_cache_in_sync(small_task):
    m = small_task.copy()
    m.float_params()
    m.flip_inplace([(0, 3, 7), (1, 0, 6), (0, 3, 7), (0, 5, 2)])
    fresh = qmodel.from_bytes(qmodel.to_bytes(m))
    for (w1, b1), (w2, b2) in zip(m.float_params(), fresh.float_params()):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    # (0, 3, 7) was flipped twice and is back to its original value
    assert m.codes[0].reshape(-1)[3] == small_task.codes[0].reshape(-1)[3]
