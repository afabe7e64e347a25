"""Linear SVM trained with the Pegasos stochastic sub-gradient method.

The trainer minimises

    (lam / 2) * (|w|^2 + c^2) + mean_i max(0, 1 - y_i * (w . (x_i - mu) + c))

with ``lam = 1 / (C * n)`` and ``mu`` the mean of the training points.  The
offset ``c`` is learned as the weight of a constant feature on centred data,
and the stored bias is ``c - w . mu`` so that scoring is a plain ``w . x + b``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import DimensionError, OneSidedTrainingError, ParameterError
from .fileio import atomic_write_text, dumps
from .matching import as_descriptors


@dataclass(frozen=True)
class SvmHyper:
    C: float = 1.0
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ParameterError(f"C must be positive, got {self.C}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")

    def with_seed(self, seed: int) -> "SvmHyper":
        return SvmHyper(self.C, self.epochs, int(seed))


@dataclass(frozen=True, eq=False)
class SvmModel:
    weights: np.ndarray
    bias: float
    hyper: SvmHyper = field(default_factory=SvmHyper)
    training_seed: int = 0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if not np.all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise ValueError("SVM parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weights.size

    def identical(self, other: "SvmModel") -> bool:
        return (
            np.array_equal(self.weights, other.weights)
            and self.bias == other.bias
            and self.hyper == other.hyper
            and self.training_seed == other.training_seed
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "hyper": asdict(self.hyper),
            "seed": self.training_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        w = np.asarray(d["weights"], dtype=np.float64)
        if w.size != int(d["dim"]):
            raise DimensionError(f"model declares dim {d['dim']} but has {w.size} weights")
        return cls(w, float(d["bias"]), SvmHyper(**d["hyper"]), int(d["seed"]))


def save_model(model: SvmModel, path, header: dict | None = None) -> None:
    d = model.to_dict()
    if header is not None:
        d["header"] = header
    atomic_write_text(path, dumps(d) + "\n")


def load_model(path) -> SvmModel:
    return SvmModel.from_dict(json.loads(Path(path).read_text()))


@numba.njit(cache=True)
def _pegasos(X, y, lam, order, avg_from):
    # w = scale * v keeps the (1 - 1/t) shrink O(1) per step
    d = X.shape[1]
    v = np.zeros(d)
    acc = np.zeros(d)
    scale = 1.0
    for step in range(order.size):
        t = step + 1
        i = order[step]
        eta = 1.0 / (lam * t)
        margin = 0.0
        for k in range(d):
            margin += v[k] * X[i, k]
        margin *= scale * y[i]
        if t == 1:
            for k in range(d):
                v[k] = 0.0
            scale = 1.0
        else:
            scale *= 1.0 - 1.0 / t
        if margin < 1.0:
            g = eta * y[i] / scale
            for k in range(d):
                v[k] += g * X[i, k]
        # projection onto the ball of radius 1/sqrt(lam) that holds the optimum
        nrm = 0.0
        for k in range(d):
            nrm += v[k] * v[k]
        nrm = np.sqrt(nrm) * scale
        if nrm * np.sqrt(lam) > 1.0:
            scale /= nrm * np.sqrt(lam)
        if scale < 1e-9:
            for k in range(d):
                v[k] *= scale
            scale = 1.0
        if step >= avg_from:
            for k in range(d):
                acc[k] += scale * v[k]
    return acc / (order.size - avg_from)


def _design(positives, negatives):
    P = as_descriptors(positives)
    N = as_descriptors(negatives)
    if len(P) == 0 or len(N) == 0:
        raise OneSidedTrainingError(
            "SVM training needs both classes; mine pseudo-examples for the missing one first"
        )
    if P.shape[1] != N.shape[1]:
        raise DimensionError(f"class dimensions differ: {P.shape[1]} vs {N.shape[1]}")
    X = np.vstack([P, N])
    y = np.concatenate([np.ones(len(P)), -np.ones(len(N))])
    return X, y


def train(positives, negatives, hyper: SvmHyper = SvmHyper()) -> SvmModel:
    """Fit a linear separator scoring ``positives`` above ``negatives``."""
    X, y = _design(positives, negatives)
    n = len(X)
    mu = X.mean(axis=0)
    Xa = np.hstack([X - mu, np.ones((n, 1))])
    lam = 1.0 / (hyper.C * n)
    rng = np.random.default_rng(hyper.seed)
    order = np.concatenate([rng.permutation(n) for _ in range(hyper.epochs)]).astype(np.int64)
    wa = _pegasos(np.ascontiguousarray(Xa), y, lam, order, order.size // 2)
    w = wa[:-1]
    return SvmModel(w, float(wa[-1] - w @ mu), hyper, hyper.seed)


def objective(model: SvmModel, positives, negatives) -> float:
    """The regularised hinge objective the trainer minimises (see module docstring)."""
    X, y = _design(positives, negatives)
    lam = 1.0 / (model.hyper.C * len(X))
    mu = X.mean(axis=0)
    c = model.bias + model.weights @ mu
    hinge = np.maximum(0.0, 1.0 - y * (X @ model.weights + model.bias))
    return float(0.5 * lam * (model.weights @ model.weights + c * c) + hinge.mean())


def score(model: SvmModel, x) -> float:
    x = np.asarray(getattr(x, "descriptor", x), dtype=np.float64).ravel()
    if x.size != model.dim:
        raise DimensionError(f"model dim {model.dim} vs input dim {x.size}")
    return float(model.weights @ x + model.bias)


def score_many(model: SvmModel, X) -> np.ndarray:
    X = as_descriptors(X, dim=model.dim)
    if len(X) and X.shape[1] != model.dim:
        raise DimensionError(f"model dim {model.dim} vs input dim {X.shape[1]}")
    return X @ model.weights + model.bias


def rank_by_score(model: SvmModel, X) -> np.ndarray:
    """Indices ordered by descending score, ascending index on ties."""
    s = score_many(model, X)
    return np.lexsort((np.arange(len(s)), -s)).astype(np.int64)
