import pytest
from hypothesis import given, strategies as st

from dynverify.layers import (Architecture, InvalidMultiplier, ShapeError, conv2d, dense, flatten, flops,
                              layer_flops, maxpool, mlp, n_params, relu, round_half_up, scale_architecture,
                              small_cnn, with_num_classes)


def test_dense_flops():
    assert flops(Architecture((100,), (dense(10),))) == 2000


def test_conv_flops():
    arch = Architecture((16, 8, 8), (conv2d(32, 3, padding=1),))
    assert arch.layers[0].h_out == arch.layers[0].w_out == 8
    assert flops(arch) == 2 * 9 * 16 * 8 * 8 * 32 == 589_824


def test_empty_model_and_free_layers():
    assert flops(Architecture((4,), ())) == 0
    arch = Architecture((2, 4, 4), (relu(), maxpool(2), flatten()))
    assert flops(arch) == 0
    assert arch.output_shape == (8,)


def test_scaling_keeps_input_and_head():
    arch = mlp(100, [100], 10)
    half = scale_architecture(arch, 0.5)
    assert [l.out_features for l in half.layers if l.kind == "dense"] == [50, 10]
    assert half.input_shape == (100,)


def test_alpha_one_is_identity():
    arch = small_cnn((1, 8, 8), (8, 16), 32, 10)
    assert scale_architecture(arch, 1.0).to_dict() == arch.to_dict()


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.01])
def test_invalid_multiplier(alpha):
    with pytest.raises(InvalidMultiplier):
        scale_architecture(mlp(4, [8], 2), alpha)


def test_round_half_up_with_floor_of_one():
    assert round_half_up(2.5) == 3
    assert round_half_up(0.7 * 10) == 7
    assert [l.out_features for l in scale_architecture(mlp(4, [3, 5], 2), 0.1).layers if l.kind == "dense"] == [1, 1, 2]


def test_dense_only_ratio_close_to_quarter():
    # the unscaled input and head only scale by alpha, so interior layers must dominate
    arch = mlp(10, [400, 400, 400], 10)
    r = flops(scale_architecture(arch, 0.5)) / flops(arch)
    assert abs(r - 0.25) < 0.01


@given(st.lists(st.integers(1, 12), min_size=2, max_size=5), st.sampled_from([0.1, 0.2, 0.5]))
def test_interior_layers_follow_alpha_squared_exactly(units, alpha):
    # widths divisible by 10 so every scaled width is an exact integer
    widths = [10 * u for u in units]
    arch, small = mlp(10, widths, 10), scale_architecture(mlp(10, widths, 10), alpha)
    interior = [i for i, l in enumerate(arch.layers) if l.kind == "dense"][1:-1]
    for i in interior:
        assert layer_flops(small.layers[i]) * 100 == round(alpha * alpha * 100) * layer_flops(arch.layers[i])


@given(st.lists(st.integers(2, 64), min_size=1, max_size=4), st.floats(0.05, 1.0))
def test_rounded_widths_stay_within_slack(widths, alpha):
    arch = mlp(16, widths, 10)
    small = scale_architecture(arch, alpha)
    for a, b in zip(arch.layers, small.layers):
        if a.kind == "dense" and a is not arch.layers[-1]:
            assert b.out_features >= 1
            assert abs(b.out_features - alpha * a.out_features) <= 0.5 + 1e-9 or b.out_features == 1


def test_shape_errors():
    with pytest.raises(ShapeError):
        Architecture((3, 4, 4), (dense(5),))
    with pytest.raises(ShapeError):
        Architecture((8,), (conv2d(4, 3),))
    with pytest.raises(ShapeError):
        Architecture((1, 2, 2), (conv2d(4, 3),))
    with pytest.raises(ShapeError):
        Architecture((8,), (dense(0),))


def test_architecture_round_trip_and_resize():
    arch = small_cnn((1, 8, 8), (4, 8), 16, 10)
    again = Architecture.from_dict(arch.to_dict())
    assert again.to_dict() == arch.to_dict() and flops(again) == flops(arch)
    assert with_num_classes(arch, 3).num_classes == 3
    assert n_params(mlp(10, [], 10, bias=False)) == 100
