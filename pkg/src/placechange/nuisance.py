"""Place-specific nuisance predictor.

Features that survive cross-checked matching between successive map frames
are the non-nuisance (negative) class.  The positive class is mined from an
independent experience pool: for every negative, the pool descriptor farthest
from it in L2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linsvm
from .errors import EmptyPoolError, UntrainablePlaceError
from .fileio import atomic_write_text, dumps
from .linsvm import SvmHyper, SvmModel
from .mapmodel import ExperienceSet, ViewSequenceMap
from .matching import as_descriptors, farthest_indices, mutual_matches
from .upd import PlaceRegion


@dataclass(frozen=True, eq=False)
class NuisanceModel:
    svm: SvmModel
    place: PlaceRegion
    negatives_count: int
    mined_count: int


def harvest_non_nuisance(vmap: ViewSequenceMap, region: PlaceRegion) -> np.ndarray:
    """Query-side descriptors of every mutual match between consecutive frames in ``region``."""
    out = []
    for k in range(region.start, region.end - 1):
        a = vmap.frames[k].descriptors
        pairs = mutual_matches(a, vmap.frames[k + 1].descriptors)
        if pairs:
            out.append(a[[p.query_index for p in pairs]])
    if not out:
        return np.empty((0, vmap.descriptor_dim), dtype=np.float32)
    return np.concatenate(out, axis=0)


def mine_pseudo_positives(negatives, S) -> np.ndarray:
    """For each negative, the experience descriptor at maximum L2 distance (lowest index on ties)."""
    pool = S.descriptors if isinstance(S, ExperienceSet) else as_descriptors(S)
    if len(pool) == 0:
        raise EmptyPoolError("visual experience set is empty")
    neg = as_descriptors(negatives, dim=pool.shape[1])
    if len(neg) == 0:
        return np.empty((0, pool.shape[1]), dtype=pool.dtype)
    idx, _ = farthest_indices(neg, pool)
    return np.asarray(pool)[idx]


def train_nuisance(
    vmap: ViewSequenceMap, region: PlaceRegion, S: ExperienceSet, hyper: SvmHyper = SvmHyper()
) -> NuisanceModel:
    negatives = harvest_non_nuisance(vmap, region)
    if len(negatives) == 0:
        raise UntrainablePlaceError(
            f"region [{region.start}, {region.end}) yields no successive-frame matches"
        )
    positives = mine_pseudo_positives(negatives, S)
    svm = linsvm.train(positives, negatives, hyper)
    return NuisanceModel(svm, region, len(negatives), len(positives))


def removal_count(m: int, T_n: float) -> int:
    if not 0 <= T_n <= 100:
        raise ValueError(f"T_n must be a percentage in [0, 100], got {T_n}")
    # tiny epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return min(m, int(math.floor(T_n / 100.0 * m + 1e-9)))


def filter_mask(svm: SvmModel, descriptors, T_n: float) -> np.ndarray:
    """Boolean keep-mask removing the top ``floor(T_n% * M)`` features by nuisance score."""
    d = as_descriptors(descriptors, dim=svm.dim)
    keep = np.ones(len(d), dtype=bool)
    cut = removal_count(len(d), T_n)
    if cut:
        keep[linsvm.rank_by_score(svm, d)[:cut]] = False
    return keep


def filter_nuisance(model, features, T_n: float):
    """Split ``features`` into ``(kept, removed)``; each part keeps the input order."""
    svm = model.svm if isinstance(model, NuisanceModel) else model
    features = list(features) if not isinstance(features, np.ndarray) else features
    keep = filter_mask(svm, features, T_n)
    kept = [f for f, k in zip(features, keep) if k]
    removed = [f for f, k in zip(features, keep) if not k]
    return kept, removed


def save_nuisance(model: NuisanceModel, path, header: dict | None = None) -> None:
    path = Path(path)
    linsvm.save_model(model.svm, path, header)
    sidecar = {
        "region": [model.place.start, model.place.end],
        "keyframe_id": model.place.keyframe_id,
        "mined_count": model.mined_count,
        "negatives_count": model.negatives_count,
    }
    if header is not None:
        sidecar["header"] = header
    atomic_write_text(path.with_suffix(".sidecar.json"), dumps(sidecar) + "\n")


def load_nuisance(path) -> NuisanceModel:
    path = Path(path)
    side = json.loads(path.with_suffix(".sidecar.json").read_text())
    start, end = side["region"]
    region = PlaceRegion(start, end, side.get("keyframe_id", start))
    return NuisanceModel(linsvm.load_model(path), region, side["negatives_count"], side["mined_count"])
