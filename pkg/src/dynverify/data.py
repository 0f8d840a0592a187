"""Datasets: the builtin confusable-blob generator and delimited files."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise DatasetError("feature and label counts differ")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DatasetError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.num_classes)


@dataclass(frozen=True)
class BlobSpec:
    """Each class is a mixture of Gaussian components; ``confusable`` classes
    share component centres up to a small offset, so they overlap.

    With ``confusable_central`` the first confusable class collapses onto the
    origin and the second surrounds it, so the pair borders every other class.
    """

    num_classes: int = 10
    dim: int = 8
    components: int = 3
    box: float = 3.0
    sigma: float = 0.55
    confusable: tuple[int, int] | None = (3, 5)
    confusable_distance: float = 1.6
    confusable_central: bool = True
    n_train: int = 6000
    n_test: int = 10000


def blob_centres(spec: BlobSpec, seed: int) -> np.ndarray:
    rng = stream(seed, "data", "centres")
    centres = rng.uniform(-spec.box, spec.box, size=(spec.num_classes, spec.components, spec.dim))
    if spec.confusable is not None:
        a, b = spec.confusable
        direction = rng.standard_normal((spec.components, spec.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        if spec.confusable_central:
            centres[a] = 0.0
        centres[b] = centres[a] + spec.confusable_distance * direction
    return centres


def _sample(spec: BlobSpec, centres: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
    y = np.arange(n) % spec.num_classes
    rng.shuffle(y)
    comp = rng.integers(spec.components, size=n)
    x = centres[y, comp] + spec.sigma * rng.standard_normal((n, spec.dim))
    return Dataset(x, y, spec.num_classes)


def make_blobs(spec: BlobSpec = BlobSpec(), seed: int = 0) -> tuple[Dataset, Dataset]:
    """Train and held-out splits drawn from the same class mixtures."""
    centres = blob_centres(spec, seed)
    train = _sample(spec, centres, spec.n_train, stream(seed, "data", "train"))
    test = _sample(spec, centres, spec.n_test, stream(seed, "data", "test"))
    return train, test


def split(ds: Dataset, frac: float, seed: int) -> tuple[Dataset, Dataset]:
    idx = stream(seed, "data", "split").permutation(len(ds))
    cut = int(round(frac * len(ds)))
    return ds.subset(np.sort(idx[:cut])), ds.subset(np.sort(idx[cut:]))


# Delimited text files: one schema line, then one sample per row with the
# label in the last column, e.g.
#
#   # shape=1x8x8 classes=10 delimiter=,
#   0.1,0.0,...,3


def _parse_schema(line: str) -> dict:
    if not line.startswith("#"):
        raise DatasetError("delimited dataset must start with a '# key=value' schema line")
    fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
    if "shape" not in fields or "classes" not in fields:
        raise DatasetError("schema line needs shape= and classes=")
    return fields


def load_delimited(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}") from e
    if not lines:
        raise DatasetError(f"dataset {path} is empty")
    schema = _parse_schema(lines[0])
    shape = tuple(int(s) for s in schema["shape"].split("x"))
    delim = schema.get("delimiter", ",")
    rows = [l for l in lines[1:] if l.strip() and not l.startswith("#")]
    if not rows:
        raise DatasetError(f"dataset {path} has no samples")
    try:
        arr = np.array([[float(v) for v in r.split(delim)] for r in rows])
    except ValueError as e:
        raise DatasetError(f"non-numeric value in {path}: {e}") from e
    if arr.shape[1] != int(np.prod(shape)) + 1:
        raise DatasetError(f"rows have {arr.shape[1]} columns, schema implies {int(np.prod(shape)) + 1}")
    return Dataset(arr[:, :-1].reshape((-1,) + shape), arr[:, -1].astype(np.int64), int(schema["classes"]))


def save_delimited(ds: Dataset, path: str | Path, delimiter: str = ",") -> None:
    shape = "x".join(str(d) for d in ds.input_shape)
    flat = ds.x.reshape(len(ds), -1)
    with open(path, "w") as f:
        f.write(f"# shape={shape} classes={ds.num_classes} delimiter={delimiter}\n")
        for row, label in zip(flat, ds.y):
            f.write(delimiter.join(repr(float(v)) for v in row) + f"{delimiter}{int(label)}\n")
