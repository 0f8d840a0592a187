"""Impact / inconsistency / risk matrices and agglomerative class clustering."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class ImpactMatrix:
    I: np.ndarray
    mode: str = "custom"


def uniform_impact(n: int, value: float = 1.0) -> ImpactMatrix:
    m = np.full((n, n), float(value))
    np.fill_diagonal(m, 0.0)
    return ImpactMatrix(m, "uniform")


def n_low_precision(n: int, frac: float = 0.25) -> int:
    return max(1, int(np.floor(frac * n)))


def low_precision_classes(precision, frac: float = 0.25) -> np.ndarray:
    """Indices of the ``floor(frac * N)`` least precise classes (ties by index)."""
    precision = np.asarray(precision, dtype=np.float64)
    order = np.lexsort((np.arange(len(precision)), precision))
    return np.sort(order[: n_low_precision(len(precision), frac)])


def nonuniform_impact(precision, frac: float = 0.25, low: float = 1.0, high: float = 100.0) -> ImpactMatrix:
    """Rows of the least precise classes get ``low`` impact, all others ``high``.

    Impact is keyed by the true (source) class of a misclassification.
    """
    n = len(precision)
    m = np.full((n, n), float(high))
    m[low_precision_classes(precision, frac)] = float(low)
    np.fill_diagonal(m, 0.0)
    return ImpactMatrix(m, "non-uniform")


def mask_unprotected(impact: ImpactMatrix, protected) -> ImpactMatrix:
    """Zero the impact of failures whose source class is left unchecked."""
    m = impact.I.copy()
    m[~np.asarray(protected, bool)] = 0.0
    return ImpactMatrix(m, impact.mode)


def build_risk_matrix(R, impact) -> np.ndarray:
    r = np.asarray(getattr(R, "R", R), dtype=np.float64)
    i = np.asarray(getattr(impact, "I", impact), dtype=np.float64)
    if r.shape != i.shape:
        raise ValueError(f"risk {r.shape} and impact {i.shape} differ in shape")
    out = r * i
    np.fill_diagonal(out, 0.0)
    return out


def build_inconsistency_matrix(task_labels, checker_labels, n: int) -> np.ndarray:
    """Joint frequency of (task label i, checker label j), zero on the diagonal."""
    t = np.asarray(task_labels)
    c = np.asarray(checker_labels)
    if len(t) == 0:
        raise ValueError("inconsistency matrix needs at least one sample")
    m = np.zeros((n, n))
    np.add.at(m, (t, c), 1.0)
    m /= len(t)
    np.fill_diagonal(m, 0.0)
    return m


def inconsistency_matrix(pair, x) -> np.ndarray:
    if pair.checker.num_classes != pair.task.num_classes:
        raise ValueError("inconsistency matrix is defined for an un-simplified checker")
    return build_inconsistency_matrix(pair.task.predict(x), pair.checker.predict(x), pair.task.num_classes)


@dataclass(frozen=True)
class ClusterLabeling:
    labels: tuple[int, ...]  # cluster of each original class, 0..K-1
    merged: tuple[tuple[int, ...], tuple[int, ...]] | None = None  # member sets joined to reach this level
    cov_loss: float = 0.0
    o_save: float = 0.0

    @property
    def k(self) -> int:
        return max(self.labels) + 1

    @property
    def groups(self) -> list[list[int]]:
        out = [[] for _ in range(self.k)]
        for cls, g in enumerate(self.labels):
            out[g].append(cls)
        return out


def _merge(m: np.ndarray, i: int, j: int) -> np.ndarray:
    m = m.copy()
    m[i, :] += m[j, :]
    m[:, i] += m[:, j]
    m = np.delete(np.delete(m, j, axis=0), j, axis=1)
    np.fill_diagonal(m, 0.0)
    return m


def agglomerative_clustering(risk, inconsistency, n: int | None = None) -> list[ClusterLabeling]:
    """Merge classes bottom-up and return labelings for K = N-1 down to 2.

    Each step joins the pair of clusters with the least coverage loss
    ``R[i,j] + R[j,i]``; ties go to the largest overhead saving
    ``C[i,j] + C[j,i]`` and then to the lexicographically smallest ``(i, j)``.
    Merged rows and columns are summed into the lower index.
    """
    r = np.asarray(risk, dtype=np.float64).copy()
    c = np.asarray(inconsistency, dtype=np.float64).copy()
    n = r.shape[0] if n is None else n
    if r.shape != (n, n) or c.shape != (n, n):
        raise ClusteringError("matrices must be N x N")
    if n < 3:
        raise ClusteringError("need at least 3 classes to cluster")
    np.fill_diagonal(r, 0.0)
    np.fill_diagonal(c, 0.0)
    clusters = [[i] for i in range(n)]
    out: list[ClusterLabeling] = []
    while len(clusters) > 2:
        i, j = select_pair(r, c)
        cov, sav = r[i, j] + r[j, i], c[i, j] + c[j, i]
        merged = (tuple(clusters[i]), tuple(clusters[j]))
        clusters[i] = sorted(clusters[i] + clusters[j])
        del clusters[j]
        r, c = _merge(r, i, j), _merge(c, i, j)
        labels = [0] * n
        for g, members in enumerate(clusters):
            for cls in members:
                labels[cls] = g
        out.append(ClusterLabeling(tuple(labels), merged, float(cov), float(sav)))
    return out


def select_pair(r: np.ndarray, c: np.ndarray) -> tuple[int, int]:
    k = r.shape[0]
    iu, ju = np.triu_indices(k, 1)  # row-major, so position order is lexicographic
    cov = r[iu, ju] + r[ju, iu]
    sav = c[iu, ju] + c[ju, iu]
    cand = np.flatnonzero(cov == cov.min())
    cand = cand[sav[cand] == sav[cand].max()]
    return int(iu[cand[0]]), int(ju[cand[0]])


def dendrogram(labelings: list[ClusterLabeling], n: int) -> dict:
    """Nested tree of the merges plus the labeling at every level."""
    nodes = {(i,): {"class": i} for i in range(n)}
    for lab in labelings:
        a, b = lab.merged
        members = tuple(sorted(a + b))
        nodes[members] = {"members": list(members), "k": lab.k, "cov_loss": lab.cov_loss, "o_save": lab.o_save,
                          "children": [nodes.pop(a), nodes.pop(b)]}
    roots = [nodes[key] for key in sorted(nodes)]
    return {"num_classes": n, "roots": roots, "levels": {str(l.k): list(l.labels) for l in labelings}}


def labelings_from_dendrogram(tree: dict) -> dict[int, tuple[int, ...]]:
    return {int(k): tuple(v) for k, v in tree["levels"].items()}


def save_dendrogram(labelings: list[ClusterLabeling], n: int, path) -> None:
    with open(path, "w") as f:
        json.dump(dendrogram(labelings, n), f, indent=2, sort_keys=True)
