"""Unsupervised place discovery: cut a view sequence into contiguous place regions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, StructureError
from .fileio import read_jsonl, write_jsonl
from .mapmodel import ViewSequenceMap
from .matching import nbnn_image_to_class

log = logging.getLogger(__name__)

TIME = "time"
APPEARANCE = "appearance"


@dataclass(frozen=True)
class PlaceRegion:
    start: int
    end: int  # exclusive
    keyframe_id: int

    def __post_init__(self):
        if not (self.start < self.end and self.start <= self.keyframe_id < self.end):
            raise StructureError(f"invalid region {self}")

    def __len__(self):
        return self.end - self.start

    def __contains__(self, frame_id):
        return self.start <= frame_id < self.end


@dataclass(frozen=True)
class PlacePartition:
    regions: tuple
    strategy: str
    param: float  # K for the time cue, T_s for the appearance cue

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        check_cover(self.regions)

    def __len__(self):
        return len(self.regions)

    @property
    def frame_count(self) -> int:
        return self.regions[-1].end

    @property
    def starts(self) -> np.ndarray:
        return np.array([r.start for r in self.regions], dtype=np.int64)

    def region_index(self, frame_id: int) -> int:
        if not 0 <= frame_id < self.frame_count:
            raise IndexError(f"frame {frame_id} outside partition [0, {self.frame_count})")
        return int(np.searchsorted(self.starts, frame_id, side="right") - 1)


def check_cover(regions) -> None:
    """Raise unless ``regions`` tile ``[0, N)`` contiguously."""
    if not regions:
        raise StructureError("partition has no regions")
    expected = 0
    for r in regions:
        if r.start != expected:
            raise StructureError(f"region {r} does not start at {expected}")
        expected = r.end


def partition_time(frame_count: int, K: int) -> PlacePartition:
    """K near-equal contiguous regions; the first ``N mod K`` get one extra frame."""
    if not 1 <= K <= frame_count:
        raise ParameterError(f"K must lie in [1, {frame_count}], got {K}")
    base, extra = divmod(frame_count, K)
    regions, start = [], 0
    for k in range(K):
        end = start + base + (1 if k < extra else 0)
        regions.append(PlaceRegion(start, end, start))
        start = end
    return PlacePartition(tuple(regions), TIME, int(K))


def partition_appearance(vmap: ViewSequenceMap, T_s: float) -> PlacePartition:
    """Sequential keyframe segmentation.

    Frame 0 opens the first region.  Every later frame is compared with the
    current keyframe by the L1 NBNN image-to-class distance; below ``T_s`` it
    joins the region, otherwise it opens a new region as its keyframe.  A frame
    without features always joins the current region and never becomes a
    keyframe, so the class side of the distance is never empty.
    """
    if not T_s > 0:
        raise ParameterError(f"T_s must be positive, got {T_s}")
    n = len(vmap)
    regions = []
    start = 0
    key = 0
    for f in range(1, n):
        frame = vmap.frames[f]
        key_desc = vmap.frames[key].descriptors
        if len(frame) == 0:
            continue
        if len(key_desc) == 0:
            # degenerate keyframe (frame 0 had no features): adopt the first real frame
            key = f
            continue
        if nbnn_image_to_class(frame.descriptors, key_desc) < T_s:
            continue
        regions.append(PlaceRegion(start, f, key))
        start = key = f
    regions.append(PlaceRegion(start, n, key))
    return PlacePartition(tuple(regions), APPEARANCE, float(T_s))


def keyframe_distances(vmap: ViewSequenceMap, part: PlacePartition) -> list[tuple[int, float]]:
    """``(frame_id, NBNN distance to its region's keyframe)`` for every non-keyframe with features."""
    out = []
    for r in part.regions:
        kd = vmap.frames[r.keyframe_id].descriptors
        if len(kd) == 0:
            continue
        for f in range(r.start, r.end):
            if f != r.keyframe_id:
                out.append((f, nbnn_image_to_class(vmap.frames[f].descriptors, kd)))
    return out


def partition_from_boundaries(boundaries, frame_count: int, strategy="planted", param=0.0) -> PlacePartition:
    cuts = list(boundaries) + [frame_count]
    regions = [PlaceRegion(a, b, a) for a, b in zip(cuts[:-1], cuts[1:])]
    return PlacePartition(tuple(regions), strategy, param)


def save_partition(part: PlacePartition, path, extra_header: Optional[dict] = None) -> None:
    header = {"strategy": part.strategy, "param": part.param}
    if extra_header:
        header.update(extra_header)
    write_jsonl(
        path,
        header,
        ({"start": r.start, "end": r.end, "keyframe_id": r.keyframe_id} for r in part.regions),
    )


def load_partition(path) -> PlacePartition:
    rows = read_jsonl(path)
    if not rows:
        raise StructureError(f"{path}: empty partition file")
    header = rows[0][1]
    regions = tuple(PlaceRegion(int(r["start"]), int(r["end"]), int(r["keyframe_id"])) for _, r in rows[1:])
    return PlacePartition(regions, header.get("strategy", "unknown"), header.get("param", 0.0))
