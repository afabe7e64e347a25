"""Loop-closure evaluation: pair queries with map frames, run the change
classifier end to end, and score it by the rank of the best changed feature."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import anomaly, nuisance
from .errors import EmptyPoolError, NoRelevantPairError, UntrainablePlaceError
from .linsvm import SvmHyper
from .mapmodel import ExperienceSet, Frame, GroundTruthBox, ViewSequenceMap, cumulative_path
from .upd import PlacePartition, PlaceRegion, partition_appearance, partition_time

log = logging.getLogger(__name__)

DEFAULT_MIN_PATH = 400.0


@dataclass(frozen=True, eq=False)
class QuerySpec:
    query_frame: Frame
    relevant_map_frame_id: int
    gt_boxes: tuple


@dataclass
class EvalReport:
    per_query_ranks: list
    mean_rank: float
    place_count: int
    params: dict
    untrainable_places: int = 0
    query_ids: list = field(default_factory=list)
    selected_regions: list = field(default_factory=list)
    missed_queries: int = 0  # queries whose boxes hold no surviving feature (sentinel rank)
    excluded_queries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_query_ranks": list(self.per_query_ranks),
            "mean_rank": self.mean_rank,
            "place_count": self.place_count,
            "params": self.params,
            "untrainable_places": self.untrainable_places,
            "query_ids": list(self.query_ids),
            "selected_regions": list(self.selected_regions),
            "missed_queries": self.missed_queries,
            "excluded_queries": list(self.excluded_queries),
        }


# ---------------------------------------------------------------------------
# Pairing and place selection


def find_relevant_pair(vmap: ViewSequenceMap, query: Frame, min_path: float = DEFAULT_MIN_PATH) -> int:
    """Pose-nearest map frame among those more than ``min_path`` metres of travel
    away from the query's insertion point (its unconstrained pose-nearest frame).
    With ``min_path == 0`` this is the plain pose-nearest frame."""
    poses = vmap.poses
    d = np.hypot(poses[:, 0] - query.pose[0], poses[:, 1] - query.pose[1])
    insertion = int(np.argmin(d))
    if min_path <= 0:
        return insertion
    cum = cumulative_path(vmap)
    travelled = np.abs(cum - cum[insertion])
    cand = np.flatnonzero(travelled > min_path)
    if len(cand) == 0:
        raise NoRelevantPairError(
            f"query {query.id}: no map frame is more than {min_path} m of travel from frame {insertion}"
        )
    return int(cand[np.argmin(d[cand])])


def select_place(partition: PlacePartition, relevant_frame_id: int) -> PlaceRegion:
    return partition.regions[partition.region_index(relevant_frame_id)]


def random_region_index(n_regions: int, seed: int, query_index: int) -> int:
    return int(np.random.default_rng([seed, query_index]).integers(n_regions))


def select_place_random(partition: PlacePartition, seed: int, query_index: int = 0) -> PlaceRegion:
    """Uniform draw over regions, reproducible per ``(seed, query_index)``."""
    return partition.regions[random_region_index(len(partition), seed, query_index)]


def query_rank(ranking, features, boxes: Sequence[GroundTruthBox]) -> int:
    """Best rank of any ranked feature whose keypoint lies inside a box; ``M + 1`` if none."""
    kp = _keypoints(features)
    best = len(ranking) + 1
    for rf in ranking:
        x, y = kp[rf.feature_index]
        if rf.rank < best and any(b.contains(x, y) for b in boxes):
            best = rf.rank
    return best


def _keypoints(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return features.reshape(-1, 2)
    if isinstance(features, Frame):
        return features.keypoints
    return np.array([[f.keypoint.x, f.keypoint.y] for f in features], dtype=np.float64).reshape(-1, 2)


def build_queries(
    vmap: ViewSequenceMap,
    query_frames: Iterable[Frame],
    boxes: Sequence[GroundTruthBox],
    min_path: float = DEFAULT_MIN_PATH,
):
    """Pair every query frame with its relevant map frame.

    Returns ``(queries, excluded)`` where ``excluded`` lists ``(query_id, reason)``.
    """
    by_frame: dict[int, list] = {}
    for b in boxes:
        by_frame.setdefault(b.frame_id, []).append(b)
    frames = list(query_frames)
    known = {f.id for f in frames}
    for fid in sorted(set(by_frame) - known):
        log.warning("ground truth references unknown query frame %d", fid)
    queries, excluded = [], []
    for fr in frames:
        try:
            rel = find_relevant_pair(vmap, fr, min_path)
        except NoRelevantPairError as exc:
            log.info("excluding query %d: %s", fr.id, exc)
            excluded.append((fr.id, str(exc)))
            continue
        queries.append(QuerySpec(fr, rel, tuple(by_frame.get(fr.id, ()))))
    return queries, excluded


# ---------------------------------------------------------------------------
# Training


@dataclass
class PlaceModels:
    partition: PlacePartition
    anomaly: list  # AnomalyModel per region, after fallback
    nuisance: Optional[list]  # NuisanceModel per region after fallback, or None
    untrainable: list  # region indices that borrowed a neighbour's model


def _train_anomaly_region(args):
    vmap, partition, idx, experience, hyper = args
    r = partition.regions[idx]
    place = vmap.descriptors_between(r.start, r.end)
    if len(place) == 0:
        return None
    donors = np.concatenate(
        [vmap.descriptors_between(0, r.start), vmap.descriptors_between(r.end, len(vmap))], axis=0
    )
    if len(donors) == 0:
        # a single-place map has no other places to mine from
        donors = experience.descriptors if experience is not None else donors
    try:
        mined = anomaly.mine_pseudo_anomalies(place, donors)
    except EmptyPoolError:
        return None
    return anomaly.train_anomaly(place, mined, hyper.with_seed(hyper.seed + idx), place=r)


def _train_nuisance_region(args):
    vmap, partition, idx, experience, hyper = args
    try:
        return nuisance.train_nuisance(vmap, partition.regions[idx], experience, hyper.with_seed(hyper.seed + idx))
    except UntrainablePlaceError:
        return None


def _nearest_trainable(models: list, idx: int) -> int:
    for gap in range(1, len(models)):
        for j in (idx - gap, idx + gap):  # lower index wins ties
            if 0 <= j < len(models) and models[j] is not None:
                return j
    raise UntrainablePlaceError("no place region is trainable")


def _fill(models: list) -> tuple[list, list]:
    missing = [i for i, m in enumerate(models) if m is None]
    if len(missing) == len(models):
        raise UntrainablePlaceError("no place region is trainable")
    return [m if m is not None else models[_nearest_trainable(models, i)] for i, m in enumerate(models)], missing


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def train_place_models(
    vmap: ViewSequenceMap,
    partition: PlacePartition,
    experience: Optional[ExperienceSet],
    hyper: SvmHyper = SvmHyper(),
    with_nuisance: bool = True,
    jobs: int = 1,
) -> PlaceModels:
    """Train one anomaly (and optionally one nuisance) model per region.

    Region ``i`` trains with seed ``hyper.seed + i``.  Regions that cannot be
    trained borrow the model of the nearest trainable region by index.
    """
    tasks = [(vmap, partition, i, experience, hyper) for i in range(len(partition))]
    anom, missing = _fill(_map(_train_anomaly_region, tasks, jobs))
    nuis = None
    if with_nuisance:
        if experience is None or len(experience) == 0:
            raise EmptyPoolError("nuisance filtering needs a non-empty experience set")
        nuis, missing_n = _fill(_map(_train_nuisance_region, tasks, jobs))
        missing = sorted(set(missing) | set(missing_n))
    return PlaceModels(partition, anom, nuis, missing)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_models(
    models: PlaceModels,
    queries: Sequence[QuerySpec],
    T_n: float = 0.0,
    seed: int = 0,
    selection: str = "relevant",
    excluded=(),
    extra_params: Optional[dict] = None,
) -> EvalReport:
    if T_n > 0 and models.nuisance is None:
        raise ValueError("T_n > 0 requires nuisance models")
    part = models.partition
    ranks, regions, missed = [], [], 0
    for qi, q in enumerate(queries):
        if selection == "relevant":
            ridx = part.region_index(q.relevant_map_frame_id)
        elif selection == "random":
            ridx = random_region_index(len(part), seed, qi)
        else:
            raise ValueError(f"unknown selection {selection!r}")
        frame = q.query_frame
        desc, kp = frame.descriptors, frame.keypoints
        if T_n > 0:
            keep = nuisance.filter_mask(models.nuisance[ridx].svm, desc, T_n)
            desc, kp = desc[keep], kp[keep]
        ranking = anomaly.rank_changes(models.anomaly[ridx], desc)
        r = query_rank(ranking, kp, q.gt_boxes)
        missed += r == len(ranking) + 1
        ranks.append(int(r))
        regions.append(ridx)
    params = {
        "strategy": part.strategy,
        "param": part.param,
        "T_n": T_n,
        "seed": seed,
        "selection": selection,
    }
    if extra_params:
        params.update(extra_params)
    return EvalReport(
        per_query_ranks=ranks,
        mean_rank=float(np.mean(ranks)) if ranks else float("nan"),
        place_count=len(part),
        params=params,
        untrainable_places=len(models.untrainable),
        query_ids=[q.query_frame.id for q in queries],
        selected_regions=regions,
        missed_queries=int(missed),
        excluded_queries=[list(e) for e in excluded],
    )


def make_partition(vmap: ViewSequenceMap, strategy: str, param) -> PlacePartition:
    if strategy == "time":
        return partition_time(len(vmap), int(param))
    if strategy == "appearance":
        return partition_appearance(vmap, float(param))
    if strategy == "dense":
        return dense_partition(len(vmap), int(param))
    raise ValueError(f"unknown strategy {strategy!r}")


def dense_partition(n_frames: int, stride: int) -> PlacePartition:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    p = partition_time(n_frames, math.ceil(n_frames / stride))
    return PlacePartition(p.regions, "dense", int(stride))


def run_pipeline(
    vmap: ViewSequenceMap,
    experience: Optional[ExperienceSet],
    queries: Sequence[QuerySpec],
    partition: PlacePartition,
    T_n: float = 0.0,
    hyper: SvmHyper = SvmHyper(),
    seed: Optional[int] = None,
    selection: str = "relevant",
    jobs: int = 1,
) -> EvalReport:
    """Train per-place models on ``partition`` and score every query."""
    seed = hyper.seed if seed is None else seed
    models = train_place_models(vmap, partition, experience, hyper, with_nuisance=T_n > 0, jobs=jobs)
    return evaluate_models(models, queries, T_n, seed, selection)


def baseline_dense(
    vmap: ViewSequenceMap,
    experience: Optional[ExperienceSet],
    queries: Sequence[QuerySpec],
    stride: int = 10,
    hyper: SvmHyper = SvmHyper(),
    jobs: int = 1,
) -> EvalReport:
    """One anomaly predictor per ``stride`` frames, no nuisance filtering."""
    return run_pipeline(vmap, experience, queries, dense_partition(len(vmap), stride), 0.0, hyper, jobs=jobs)


def sweep(
    vmap: ViewSequenceMap,
    experience: Optional[ExperienceSet],
    queries: Sequence[QuerySpec],
    partitions: Sequence[PlacePartition],
    tn_values: Sequence[float],
    hyper: SvmHyper = SvmHyper(),
    selection: str = "relevant",
    jobs: int = 1,
    excluded=(),
) -> list[EvalReport]:
    """Every (partition, T_n) combination; models are trained once per partition."""
    reports = []
    need_nuis = any(t > 0 for t in tn_values)
    for part in partitions:
        models = train_place_models(vmap, part, experience, hyper, with_nuisance=need_nuis, jobs=jobs)
        for t in tn_values:
            reports.append(evaluate_models(models, queries, t, hyper.seed, selection, excluded))
    return reports
