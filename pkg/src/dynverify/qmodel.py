"""INT-8 quantized models: construction, inference, storage and file format."""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .layers import Architecture, flops as arch_flops
from .quant import QuantParams, dequantize, quantize, symmetric_params

MAGIC = b"DVQMODEL"
VERSION = 1
QPARAM_BYTES = 16  # float64 scale + int64 zero point


class ModelFormatError(ValueError):
    pass


@dataclass
class QuantModel:
    arch: Architecture
    codes: list  # list[np.ndarray[int8]]: weight then bias of each dense/conv layer
    qparams: list  # list[QuantParams], aligned with codes
    act_qparams: list  # list[QuantParams | None], one per dense/conv layer
    alpha: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codes = [np.ascontiguousarray(c, dtype=np.int8) for c in self.codes]
        layout = self.layout
        if len(layout) != len(self.codes) or len(self.qparams) != len(self.codes):
            raise ModelFormatError("tensor table does not match the architecture")
        for (p, role), c in zip(layout, self.codes):
            l = self.arch.layers[self.arch.parametric_indices()[p]]
            want = l.weight_shape() if role == "weight" else l.bias_shape()
            if c.shape != want:
                raise ModelFormatError(f"tensor for layer {p} {role} has shape {c.shape}, expected {want}")
        if len(self.act_qparams) != len(self.arch.parametric_indices()):
            raise ModelFormatError("need one activation quantizer slot per dense/conv layer")
        if not 0 < self.alpha <= 1:
            raise ModelFormatError(f"alpha {self.alpha} outside (0, 1]")
        self._float = None

    @property
    def layout(self) -> list[tuple[int, str]]:
        out = []
        for p, i in enumerate(self.arch.parametric_indices()):
            out.append((p, "weight"))
            if self.arch.layers[i].bias:
                out.append((p, "bias"))
        return out

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def n_weights(self) -> int:
        return sum(c.size for c in self.codes)

    def float_params(self) -> nn.Params:
        """Dequantized weights, cached until the codes change."""
        if self._float is None:
            deq = [dequantize(c, qp) for c, qp in zip(self.codes, self.qparams)]
            it = iter(deq)
            self._float = [(next(it), next(it) if self.arch.layers[i].bias else None)
                           for i in self.arch.parametric_indices()]
        return self._float

    def flip_inplace(self, targets) -> None:
        """XOR-flip ``(tensor, flat index, bit)`` targets in place."""
        rows = np.asarray([tuple(t) for t in targets] if not isinstance(targets, np.ndarray) else targets,
                          dtype=np.int64).reshape(-1, 3)
        fp = self._float
        layout = self.layout
        for t in np.unique(rows[:, 0]):
            sel = rows[rows[:, 0] == t]
            codes = self.codes[t].reshape(-1)
            # ufunc.at applies repeated (index, bit) pairs one after another
            np.bitwise_xor.at(codes.view(np.uint8), sel[:, 1], (1 << sel[:, 2]).astype(np.uint8))
            if fp is not None:
                p, role = layout[t]
                arr = fp[p][0] if role == "weight" else fp[p][1]
                qp = self.qparams[t]
                arr.reshape(-1)[sel[:, 1]] = (codes[sel[:, 1]].astype(np.float64) - qp.zero_point) * qp.scale

    def copy(self) -> "QuantModel":
        return QuantModel(self.arch, [c.copy() for c in self.codes], list(self.qparams),
                          list(self.act_qparams), self.alpha, json.loads(json.dumps(self.meta)))

    def forward(self, x, act_fault=None, record=None) -> np.ndarray:
        return nn.forward(self.arch, self.float_params(), x, self.act_qparams, act_fault, record)

    def logits(self, x: np.ndarray, batch: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.arch.input_shape:
            return self.forward(x)
        out = [self.forward(x[i : i + batch]) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.num_classes))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def digest(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()


def infer(model: QuantModel, x) -> tuple[np.ndarray, int | np.ndarray]:
    """Logits and argmax label(s); ties go to the lowest class index."""
    logits = model.logits(x)
    label = np.argmax(logits, axis=-1)
    return logits, (int(label) if np.ndim(label) == 0 else label)


def flops(model) -> int:
    return arch_flops(model)


def weight_bytes(model: QuantModel) -> int:
    return model.n_weights  # one byte per INT-8 code


def metadata_bytes(model: QuantModel) -> int:
    n_act = sum(qp is not None for qp in model.act_qparams)
    return QPARAM_BYTES * (len(model.qparams) + n_act)


def storage_bytes(model: QuantModel) -> int:
    return weight_bytes(model) + metadata_bytes(model)


def quantize_model(
    arch: Architecture,
    params: nn.Params,
    calib_x: np.ndarray | None = None,
    alpha: float = 1.0,
    meta: dict | None = None,
) -> QuantModel:
    """Post-training quantization of float parameters.

    Weights and biases get per-tensor symmetric scales. With calibration data,
    each dense/conv output also gets an INT-8 quantizer, fitted layer by layer
    on the already-quantized upstream network.
    """
    codes, qps = [], []
    for w, b in params:
        for t in (w, b):
            if t is None:
                continue
            qp = symmetric_params(t)
            codes.append(quantize(t, qp))
            qps.append(qp)
    n_par = len(params)
    model = QuantModel(arch, codes, qps, [None] * n_par, alpha, dict(meta or {}))
    if calib_x is not None and len(calib_x):
        for p in range(n_par):
            rec: list = []
            model.forward(calib_x, record=rec)
            model.act_qparams[p] = symmetric_params(rec[p])
    return model


# -- file format ------------------------------------------------------------------
#
#   magic "DVQMODEL" | u32 version | u32 header length | header (UTF-8 JSON)
#   per tensor:     f64 scale | i64 zero point | int8 codes (C order)
#   per activation: f64 scale | i64 zero point   (only layers flagged in header)
#
# all integers little-endian


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def to_bytes(model: QuantModel) -> bytes:
    header = {
        "arch": model.arch.to_dict(),
        "alpha": model.alpha,
        "meta": model.meta,
        "tensors": [{"layer": p, "role": r, "shape": list(c.shape)} for (p, r), c in zip(model.layout, model.codes)],
        "activations": [qp is not None for qp in model.act_qparams],
    }
    hb = _canonical_json(header)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(hb)))
    buf.write(hb)
    for c, qp in zip(model.codes, model.qparams):
        buf.write(struct.pack("<dq", qp.scale, qp.zero_point))
        buf.write(c.astype("<i1").tobytes(order="C"))
    for qp in model.act_qparams:
        if qp is not None:
            buf.write(struct.pack("<dq", qp.scale, qp.zero_point))
    return buf.getvalue()


def from_bytes(data: bytes) -> QuantModel:
    try:
        return _decode(data)
    except (struct.error, KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt model file: {e}") from e


def _decode(data: bytes) -> QuantModel:
    if data[:8] != MAGIC:
        raise ModelFormatError("not a quantized model file (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model file version {version}")
    off = 16
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    codes, qps = [], []
    for t in header["tensors"]:
        scale, zp = struct.unpack_from("<dq", data, off)
        off += QPARAM_BYTES
        n = math.prod(t["shape"])
        codes.append(np.frombuffer(data, dtype="<i1", count=n, offset=off).reshape(t["shape"]).astype(np.int8))
        qps.append(QuantParams(scale, zp))
        off += n
    acts = []
    for flag in header["activations"]:
        if flag:
            scale, zp = struct.unpack_from("<dq", data, off)
            off += QPARAM_BYTES
            acts.append(QuantParams(scale, zp))
        else:
            acts.append(None)
    if off != len(data):
        raise ModelFormatError(f"{len(data) - off} trailing bytes in model file")
    return QuantModel(Architecture.from_dict(header["arch"]), codes, qps, acts, header["alpha"], header["meta"])


def save(model: QuantModel, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path) -> QuantModel:
    return from_bytes(Path(path).read_bytes())
