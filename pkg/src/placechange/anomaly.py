"""Place-specific anomaly (change) predictor."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linsvm
from .errors import EmptyPoolError
from .fileio import atomic_write_text, dumps
from .linsvm import SvmHyper, SvmModel
from .matching import as_descriptors, farthest_indices
from .upd import PlaceRegion


@dataclass(frozen=True, eq=False)
class AnomalyModel:
    svm: SvmModel
    place: PlaceRegion | None = None


@dataclass(frozen=True)
class RankedFeature:
    feature_index: int
    score: float
    rank: int  # 1-based


def mine_pseudo_anomalies(place_features, donor_pool) -> np.ndarray:
    """One mined anomaly per place feature: the donor farthest from it in L2.

    ``donor_pool`` is meant to hold descriptors from the other place regions of
    the same map.
    """
    pool = as_descriptors(donor_pool)
    if len(pool) == 0:
        raise EmptyPoolError("donor pool for pseudo-anomaly mining is empty")
    q = as_descriptors(place_features, dim=pool.shape[1])
    if len(q) == 0:
        return np.empty((0, pool.shape[1]))
    idx, _ = farthest_indices(q, pool)
    return pool[idx]


def train_anomaly(place_features, pseudo_anomalies, hyper: SvmHyper = SvmHyper(), place=None) -> AnomalyModel:
    """Change is the positive class, the place's own features the negative class."""
    return AnomalyModel(linsvm.train(pseudo_anomalies, place_features, hyper), place)


def rank_changes(model, query_features) -> list[RankedFeature]:
    svm = model.svm if isinstance(model, AnomalyModel) else model
    d = as_descriptors(query_features, dim=svm.dim)
    scores = linsvm.score_many(svm, d)
    order = linsvm.rank_by_score(svm, d)
    return [RankedFeature(int(i), float(scores[i]), r + 1) for r, i in enumerate(order)]


def save_anomaly(model: AnomalyModel, path, header: dict | None = None) -> None:
    path = Path(path)
    linsvm.save_model(model.svm, path, header)
    side = {}
    if model.place is not None:
        side = {"region": [model.place.start, model.place.end], "keyframe_id": model.place.keyframe_id}
    if header is not None:
        side["header"] = header
    atomic_write_text(path.with_suffix(".sidecar.json"), dumps(side) + "\n")


def load_anomaly(path) -> AnomalyModel:
    path = Path(path)
    side = json.loads(path.with_suffix(".sidecar.json").read_text())
    place = None
    if "region" in side:
        start, end = side["region"]
        place = PlaceRegion(start, end, side.get("keyframe_id", start))
    return AnomalyModel(linsvm.load_model(path), place)
