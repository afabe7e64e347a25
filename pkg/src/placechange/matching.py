"""Exact distance kernels and nearest-neighbour matching.

Everything here is exhaustive search.  Ties are always broken toward the
lowest index so results are reproducible bit for bit.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError, EmptyPoolError

# rows of the query block processed per cdist/GEMM call; bounds peak memory
_CHUNK = 512


class MatchPair(NamedTuple):
    query_index: int
    target_index: int
    distance: float


def as_descriptors(items, dim: int | None = None) -> np.ndarray:
    """Coerce an array, a list of vectors, or a list of ``Feature`` to ``(n, D)`` float64."""
    if isinstance(items, np.ndarray):
        arr = items
    else:
        items = list(items)
        if items and hasattr(items[0], "descriptor"):
            items = [f.descriptor for f in items]
        arr = np.asarray(items) if items else np.empty((0, dim or 0))
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D descriptor array, got shape {arr.shape}")
    return arr


def _vec(a) -> np.ndarray:
    if hasattr(a, "descriptor"):
        a = a.descriptor
    return np.asarray(a, dtype=np.float64).ravel()


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def l2_distance(a, b) -> float:
    a, b = _vec(a), _vec(b)
    _check_dims(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def l1_distance(a, b) -> float:
    a, b = _vec(a), _vec(b)
    _check_dims(a, b)
    return float(np.sum(np.abs(a - b)))


_CDIST_METRIC = {"l1": "cityblock", "l2": "euclidean"}


def _metric(metric: str) -> str:
    try:
        return _CDIST_METRIC[metric.lower()]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; use 'l1' or 'l2'") from None


def pairwise_distances(A, B, metric: str = "l2") -> np.ndarray:
    A, B = as_descriptors(A), as_descriptors(B)
    _check_dims(A, B)
    return cdist(A, B, _metric(metric))


def nearest_indices(Q, P, metric: str = "l2") -> tuple[np.ndarray, np.ndarray]:
    """For every row of ``Q`` the index of, and distance to, its nearest row of ``P``."""
    Q, P = as_descriptors(Q), as_descriptors(P)
    if len(P) == 0:
        raise EmptyPoolError("nearest-neighbour search over an empty pool")
    _check_dims(Q, P)
    name = _metric(metric)
    idx = np.empty(len(Q), dtype=np.int64)
    dist = np.empty(len(Q), dtype=np.float64)
    for lo in range(0, len(Q), _CHUNK):
        d = cdist(Q[lo : lo + _CHUNK], P, name)
        k = np.argmin(d, axis=1)  # first occurrence == lowest index on ties
        idx[lo : lo + len(k)] = k
        dist[lo : lo + len(k)] = d[np.arange(len(k)), k]
    return idx, dist


def nearest_neighbor(q, pool, metric: str = "l2") -> tuple[int, float]:
    q = _vec(q)
    pool = as_descriptors(pool, dim=q.size)
    if len(pool) == 0:
        raise EmptyPoolError("nearest-neighbour search over an empty pool")
    idx, dist = nearest_indices(q.reshape(1, -1), pool, metric)
    return int(idx[0]), float(dist[0])


def farthest_indices(Q, P) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 argmax of ``Q`` against ``P`` (lowest index on ties).

    Candidates are screened with the ``|s|^2 - 2 q.s`` expansion and the
    survivors re-scored with exact differences, so the answer matches a plain
    exhaustive scan.
    """
    Q, P = as_descriptors(Q), as_descriptors(P)
    if len(P) == 0:
        raise EmptyPoolError("farthest-point search over an empty pool")
    _check_dims(Q, P)
    p_sq = np.einsum("ij,ij->i", P, P)
    q_sq = np.einsum("ij,ij->i", Q, Q)
    idx = np.empty(len(Q), dtype=np.int64)
    dist = np.empty(len(Q), dtype=np.float64)
    # keep the GEMM block near 4M entries
    step = max(1, min(_CHUNK, 4_000_000 // len(P)))
    for lo in range(0, len(Q), step):
        block = Q[lo : lo + step]
        approx = block @ P.T
        approx *= -2.0
        approx += p_sq
        k = np.argmax(approx, axis=1)
        top = approx[np.arange(len(block)), k]
        tol = 1e-9 * (q_sq[lo : lo + len(block)] + p_sq.max() + 1.0)
        close = approx >= (top - tol)[:, None]
        single = close.sum(axis=1) == 1
        rows = np.flatnonzero(single)
        idx[lo + rows] = k[rows]
        dist[lo + rows] = np.sqrt(np.sum((P[k[rows]] - block[rows]) ** 2, axis=1))
        # near-ties are re-scored exactly
        for r in np.flatnonzero(~single):
            cand = np.flatnonzero(close[r])
            exact = np.sqrt(np.sum((P[cand] - block[r]) ** 2, axis=1))
            best = int(np.argmax(exact))  # cand is ascending, so ties resolve low
            idx[lo + r] = cand[best]
            dist[lo + r] = exact[best]
    return idx, dist


def mutual_matches(A, B) -> list[MatchPair]:
    """Cross-checked L2 nearest-neighbour matches from ``A`` into ``B``."""
    A, B = as_descriptors(A), as_descriptors(B)
    if len(A) == 0 or len(B) == 0:
        return []
    _check_dims(A, B)
    ab, d_ab = nearest_indices(A, B, "l2")
    ba, _ = nearest_indices(B, A, "l2")
    keep = np.flatnonzero(ba[ab] == np.arange(len(A)))
    return [MatchPair(int(i), int(ab[i]), float(d_ab[i])) for i in keep]


def nbnn_image_to_class(query, class_features) -> float:
    """Sum over query descriptors of the minimum L1 distance into the class set."""
    C = as_descriptors(class_features)
    if len(C) == 0:
        raise EmptyPoolError("image-to-class distance needs a non-empty class")
    Q = as_descriptors(query, dim=C.shape[1])
    if len(Q) == 0:
        return 0.0
    _, d = nearest_indices(Q, C, "l1")
    return float(d.sum())


def nbnn_many(queries: Sequence[np.ndarray], class_features) -> np.ndarray:
    return np.array([nbnn_image_to_class(q, class_features) for q in queries])
