"""Uniform affine INT-8 quantization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QMIN = -128
QMAX = 127


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0
    bit_width: int = 8

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")
        if self.bit_width != 8:
            raise ValueError("only 8-bit quantization is supported")

    @property
    def lo(self) -> float:
        return (QMIN - self.zero_point) * self.scale

    @property
    def hi(self) -> float:
        return (QMAX - self.zero_point) * self.scale


def symmetric_params(x: np.ndarray) -> QuantParams:
    """Per-tensor symmetric parameters; 0.0 maps exactly to code 0."""
    m = float(np.max(np.abs(x))) if np.size(x) else 0.0
    if not np.isfinite(m):
        raise ValueError("cannot quantize a tensor with non-finite values")
    return QuantParams(scale=m / QMAX if m > 0 else 1.0 / QMAX)


def quantize(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    # np.rint rounds half to even; ties are measure-zero for trained weights
    q = np.rint(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale


def fake_quantize(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    return dequantize(quantize(x, qp), qp)


def flip_bit(code: int, bit: int) -> int:
    """Two's-complement INT-8 code with ``bit`` XOR-flipped."""
    if not 0 <= bit <= 7:
        raise ValueError(f"bit position {bit} outside [0, 7]")
    u = (int(code) & 0xFF) ^ (1 << bit)
    return u - 256 if u >= 128 else u


def flipped_codes(codes: np.ndarray) -> np.ndarray:
    """All single-bit neighbours: shape ``codes.shape + (8,)``, bit 0 first."""
    u = np.asarray(codes, dtype=np.int8).view(np.uint8)[..., None]
    masks = (1 << np.arange(8)).astype(np.uint8)
    return (u ^ masks).view(np.int8)
