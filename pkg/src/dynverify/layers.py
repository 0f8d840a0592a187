"""Layer specifications, shape propagation, FLOP counting and width scaling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

PARAMETRIC = ("dense", "conv2d")
KINDS = ("dense", "conv2d", "relu", "maxpool", "flatten", "argmax-head")


class ShapeError(ValueError):
    pass


class InvalidMultiplier(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_features: int | None = None
    out_channels: int | None = None
    kernel_size: int | None = None
    stride: int = 1
    padding: int = 0
    pool: int = 2
    bias: bool = True
    # derived by Architecture
    in_features: int | None = None
    in_channels: int | None = None
    h_out: int | None = None
    w_out: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")

    @property
    def parametric(self) -> bool:
        return self.kind in PARAMETRIC

    @property
    def width(self) -> int | None:
        return self.out_features if self.kind == "dense" else self.out_channels

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.out_features, self.in_features)
        if self.kind == "conv2d":
            return (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        return ()

    def bias_shape(self) -> tuple[int, ...]:
        return (self.width,) if self.parametric and self.bias else ()

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def dense(out_features: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("dense", out_features=out_features, bias=bias)


def conv2d(out_channels: int, kernel_size: int, stride: int = 1, padding: int = 0, bias: bool = True) -> LayerSpec:
    return LayerSpec("conv2d", out_channels=out_channels, kernel_size=kernel_size, stride=stride,
                     padding=padding, bias=bias)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(pool: int = 2) -> LayerSpec:
    return LayerSpec("maxpool", pool=pool)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def argmax_head() -> LayerSpec:
    return LayerSpec("argmax-head")


@dataclass(frozen=True)
class Architecture:
    """Input shape plus an ordered chain of layers with derived dimensions.

    ``input_shape`` is ``(features,)`` for vector inputs or ``(C, H, W)``.
    """

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        resolved, shapes = _propagate(self.input_shape, self.layers)
        object.__setattr__(self, "layers", tuple(resolved))
        object.__setattr__(self, "_shapes", tuple(shapes))

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        """Per-sample shape after each layer."""
        return self._shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[-1] if self._shapes else self.input_shape

    @property
    def num_classes(self) -> int:
        out = self.output_shape
        if len(out) != 1:
            raise ShapeError(f"network output {out} is not a class vector")
        return out[0]

    def parametric_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.parametric]

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [_spec_fields(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec(**l) for l in d["layers"]))


def _spec_fields(l: LayerSpec) -> dict:
    base = {"kind": l.kind}
    if l.kind == "dense":
        base.update(out_features=l.out_features, bias=l.bias)
    elif l.kind == "conv2d":
        base.update(out_channels=l.out_channels, kernel_size=l.kernel_size, stride=l.stride,
                    padding=l.padding, bias=l.bias)
    elif l.kind == "maxpool":
        base.update(pool=l.pool)
    return base


def _propagate(input_shape: tuple[int, ...], layers: Iterable[LayerSpec]):
    shape = input_shape
    resolved, shapes = [], []
    for i, l in enumerate(layers):
        if l.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i}: dense expects a vector input, got {shape}")
            if l.out_features is None or l.out_features < 1:
                raise ShapeError(f"layer {i}: dense needs a positive out_features")
            l = replace(l, in_features=shape[0])
            shape = (l.out_features,)
        elif l.kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: conv2d expects (C, H, W), got {shape}")
            c, h, w = shape
            k, s, p = l.kernel_size, l.stride, l.padding
            if not (l.out_channels and l.out_channels > 0 and k and k > 0 and s > 0 and p >= 0):
                raise ShapeError(f"layer {i}: invalid conv2d hyperparameters")
            ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ShapeError(f"layer {i}: conv2d output would be empty")
            l = replace(l, in_channels=c, h_out=ho, w_out=wo)
            shape = (l.out_channels, ho, wo)
        elif l.kind == "maxpool":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: maxpool expects (C, H, W), got {shape}")
            c, h, w = shape
            if h < l.pool or w < l.pool:
                raise ShapeError(f"layer {i}: pool {l.pool} larger than input {h}x{w}")
            shape = (c, h // l.pool, w // l.pool)
        elif l.kind == "flatten":
            shape = (math.prod(shape),)
        resolved.append(l)
        shapes.append(shape)
    return resolved, shapes


def layer_flops(l: LayerSpec) -> int:
    if l.kind == "dense":
        return 2 * l.in_features * l.out_features
    if l.kind == "conv2d":
        return 2 * l.kernel_size ** 2 * l.in_channels * l.h_out * l.w_out * l.out_channels
    return 0


def flops(arch) -> int:
    """Multiply-accumulate FLOPs (2 per MAC) of dense and conv layers."""
    arch = getattr(arch, "arch", arch)
    return sum(layer_flops(l) for l in arch.layers)


def n_params(arch) -> int:
    arch = getattr(arch, "arch", arch)
    return sum(math.prod(l.weight_shape()) + math.prod(l.bias_shape() or (0,)) for l in arch.layers if l.parametric)


def round_half_up(x: float) -> int:
    # guard against 0.7 * 10 = 7.000000000000001 style noise
    return int(math.floor(round(x, 9) + 0.5))


def scale_architecture(arch: Architecture, alpha: float) -> Architecture:
    """Shrink every hidden width by ``alpha``; the input and class head stay fixed."""
    if not (0 < alpha <= 1):
        raise InvalidMultiplier(f"width multiplier must be in (0, 1], got {alpha}")
    par = arch.parametric_indices()
    head = par[-1] if par else None
    layers = []
    for i, l in enumerate(arch.layers):
        if l.parametric and i != head:
            w = max(1, round_half_up(alpha * l.width))
            l = replace(l, out_features=w) if l.kind == "dense" else replace(l, out_channels=w)
        layers.append(_spec_from(l))
    return Architecture(arch.input_shape, tuple(layers))


def _spec_from(l: LayerSpec) -> LayerSpec:
    return LayerSpec(**_spec_fields(l))


def with_num_classes(arch: Architecture, k: int) -> Architecture:
    """Same architecture with the class head resized to ``k`` outputs."""
    par = arch.parametric_indices()
    layers = [_spec_from(l) for l in arch.layers]
    head = layers[par[-1]]
    if head.kind != "dense":
        raise ShapeError("class head must be a dense layer")
    layers[par[-1]] = replace(head, out_features=k)
    return Architecture(arch.input_shape, tuple(layers))


def mlp(in_features: int, hidden: Sequence[int], num_classes: int, bias: bool = True) -> Architecture:
    layers: list[LayerSpec] = []
    for h in hidden:
        layers += [dense(h, bias), relu()]
    layers.append(dense(num_classes, bias))
    return Architecture((in_features,), tuple(layers))


def small_cnn(input_shape: tuple[int, int, int], channels: Sequence[int], hidden: int, num_classes: int) -> Architecture:
    layers: list[LayerSpec] = []
    for c in channels:
        layers += [conv2d(c, 3, padding=1), relu(), maxpool(2)]
    layers += [flatten(), dense(hidden), relu(), dense(num_classes)]
    return Architecture(tuple(input_shape), tuple(layers))
