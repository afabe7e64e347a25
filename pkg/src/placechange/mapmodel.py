"""Domain types for view-sequence maps plus manifest/ground-truth ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ParseError, StructureError, ValidationError
from .fileio import atomic_write_text, dumps, read_jsonl, read_psdf, write_jsonl, write_psdf


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class Feature:
    keypoint: Keypoint
    descriptor: np.ndarray


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Frame:
    """One image of a map or query set.

    Features are stored column-wise: ``keypoints`` is ``(M, 2)`` pixels and
    ``descriptors`` is ``(M, D)`` float32, row ``k`` of each describing feature ``k``.
    """

    id: int
    timestamp: float
    pose: tuple
    keypoints: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        kp = _frozen(self.keypoints, np.float64).reshape(-1, 2)
        desc = np.asarray(self.descriptors)
        if desc.ndim != 2:
            raise DimensionError(f"frame {self.id}: descriptors must be 2-D")
        desc = _frozen(desc, np.float32)
        if len(kp) != len(desc):
            raise StructureError(
                f"frame {self.id}: {len(kp)} keypoints but {len(desc)} descriptors"
            )
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "pose", (float(self.pose[0]), float(self.pose[1])))

    def __len__(self):
        return len(self.descriptors)

    @property
    def features(self) -> list[Feature]:
        return [
            Feature(Keypoint(float(x), float(y)), d)
            for (x, y), d in zip(self.keypoints, self.descriptors)
        ]


@dataclass(frozen=True, eq=False)
class ViewSequenceMap:
    frames: tuple
    image_width: int
    image_height: int
    descriptor_dim: int

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        validate_frames(self.frames, self.descriptor_dim, self.image_width, self.image_height)

    def __len__(self):
        return len(self.frames)

    @property
    def poses(self) -> np.ndarray:
        return np.array([f.pose for f in self.frames], dtype=np.float64)

    def descriptors_between(self, start: int, end: int) -> np.ndarray:
        """Stack descriptors of frames ``[start, end)`` in frame order."""
        chunks = [self.frames[k].descriptors for k in range(start, end)]
        if not chunks:
            return np.empty((0, self.descriptor_dim), dtype=np.float32)
        return np.concatenate(chunks, axis=0)


@dataclass(frozen=True)
class GroundTruthBox:
    frame_id: int
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y):
        """Boundary-inclusive point test; vectorised over numpy inputs."""
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True, eq=False)
class ExperienceSet:
    """Auxiliary descriptor pool mined for pseudo-positive nuisance examples."""

    descriptors: np.ndarray = field(default_factory=lambda: np.empty((0, 1), np.float32))

    def __post_init__(self):
        desc = np.asarray(self.descriptors, dtype=np.float32)
        if desc.ndim != 2:
            raise DimensionError("experience descriptors must be 2-D")
        if not np.all(np.isfinite(desc)):
            raise ValidationError("experience set contains non-finite values")
        object.__setattr__(self, "descriptors", _frozen(desc, np.float32))

    def __len__(self):
        return len(self.descriptors)

    @property
    def dim(self):
        return self.descriptors.shape[1]


def validate_frames(frames: Sequence[Frame], dim: int, width: int, height: int) -> None:
    if not frames:
        raise StructureError("a view-sequence map needs at least one frame")
    if dim < 1:
        raise DimensionError("descriptor_dim must be >= 1")
    prev_t = -math.inf
    for k, fr in enumerate(frames):
        if fr.id != k:
            raise StructureError(f"frame ids must be consecutive from 0: got {fr.id} at position {k}")
        if fr.timestamp < prev_t:
            raise StructureError(f"frame {fr.id}: timestamp decreases")
        prev_t = fr.timestamp
        if fr.descriptors.shape[1] != dim and len(fr) > 0:
            raise DimensionError(
                f"frame {fr.id}: descriptor dim {fr.descriptors.shape[1]} != dataset dim {dim}"
            )
        if not np.all(np.isfinite(fr.descriptors)):
            raise ValidationError(f"frame {fr.id}: non-finite descriptor values")
        kp = fr.keypoints
        if len(kp) and (
            kp[:, 0].min() < 0 or kp[:, 0].max() >= width or kp[:, 1].min() < 0 or kp[:, 1].max() >= height
        ):
            raise ValidationError(f"frame {fr.id}: keypoint outside {width}x{height} image")


def path_distance(vmap: ViewSequenceMap, i: int, j: int) -> float:
    """Distance travelled along the trajectory from frame ``i`` to frame ``j`` (i <= j)."""
    n = len(vmap)
    if not (0 <= i <= j < n):
        raise IndexError(f"need 0 <= i <= j < {n}, got i={i}, j={j}")
    if i == j:
        return 0.0
    poses = vmap.poses[i : j + 1]
    return float(np.sum(np.hypot(*np.diff(poses, axis=0).T)))


def cumulative_path(vmap: ViewSequenceMap) -> np.ndarray:
    """Arc length at every frame; ``path_distance(i, j) == cum[j] - cum[i]`` up to rounding."""
    poses = vmap.poses
    steps = np.hypot(*np.diff(poses, axis=0).T) if len(poses) > 1 else np.empty(0)
    return np.concatenate([[0.0], np.cumsum(steps)])


# ---------------------------------------------------------------------------
# Files


def _descriptor_dir(manifest: Path) -> Path:
    return manifest.with_name(manifest.stem + ".desc")


def write_map(vmap: ViewSequenceMap, path, extra_header: Optional[dict] = None) -> None:
    """Write a frame manifest plus one PSDF blob per frame next to it."""
    path = Path(path)
    desc_dir = _descriptor_dir(path)
    desc_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "descriptor_dim": vmap.descriptor_dim,
        "image_width": vmap.image_width,
        "image_height": vmap.image_height,
    }
    if extra_header:
        header.update(extra_header)
    records = []
    for fr in vmap.frames:
        blob = desc_dir / f"frame_{fr.id:06d}.psdf"
        write_psdf(blob, fr.descriptors.reshape(len(fr), vmap.descriptor_dim))
        records.append(
            {
                "id": fr.id,
                "timestamp": fr.timestamp,
                "pose": list(fr.pose),
                "descriptor_file": f"{desc_dir.name}/{blob.name}",
                "keypoints": fr.keypoints.tolist(),
            }
        )
    write_jsonl(path, header, records)


def read_manifest_header(path) -> dict:
    rows = read_jsonl(path)
    if not rows:
        raise ParseError(path, 1, "empty manifest")
    return rows[0][1]


def load_map(path) -> ViewSequenceMap:
    path = Path(path)
    rows = read_jsonl(path)
    if not rows:
        raise ParseError(path, 1, "empty manifest")
    lineno, header = rows[0]
    try:
        dim = int(header["descriptor_dim"])
        width = int(header["image_width"])
        height = int(header["image_height"])
    except (KeyError, TypeError, ValueError):
        raise ParseError(path, lineno, "header must declare descriptor_dim, image_width, image_height") from None

    frames = []
    for lineno, rec in rows[1:]:
        try:
            fid = int(rec["id"])
            ts = float(rec["timestamp"])
            pose = rec["pose"]
            kps = rec["keypoints"]
            desc_file = rec["descriptor_file"]
            if len(pose) != 2:
                raise ValueError("pose must be [x, y]")
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, lineno, f"malformed frame record ({exc})") from None
        desc = read_psdf(path.parent / desc_file)
        if len(desc) and desc.shape[1] != dim:
            raise DimensionError(f"frame {fid}: descriptor dim {desc.shape[1]} != dataset dim {dim}")
        if len(desc) == 0:
            desc = np.empty((0, dim), dtype=np.float32)
        kp = np.asarray(kps, dtype=np.float64).reshape(-1, 2)
        if len(kp) != len(desc):
            raise StructureError(f"frame {fid}: {len(kp)} keypoints but {len(desc)} descriptors")
        frames.append(Frame(fid, ts, tuple(pose), kp, desc))
    if not frames:
        raise StructureError(f"{path}: manifest has no frames")
    return ViewSequenceMap(tuple(frames), width, height, dim)


def maps_equal(a: ViewSequenceMap, b: ViewSequenceMap) -> bool:
    if (a.image_width, a.image_height, a.descriptor_dim, len(a)) != (
        b.image_width,
        b.image_height,
        b.descriptor_dim,
        len(b),
    ):
        return False
    for fa, fb in zip(a.frames, b.frames):
        if fa.id != fb.id or fa.timestamp != fb.timestamp or fa.pose != fb.pose:
            return False
        if not (np.array_equal(fa.keypoints, fb.keypoints) and np.array_equal(fa.descriptors, fb.descriptors)):
            return False
    return True


def write_ground_truth(boxes: Sequence[GroundTruthBox], path, extra_header: Optional[dict] = None) -> None:
    header = {"kind": "ground_truth"}
    if extra_header:
        header.update(extra_header)
    write_jsonl(path, header, ({"frame_id": b.frame_id, "box": [b.x0, b.y0, b.x1, b.y1]} for b in boxes))


def load_ground_truth(path) -> list[GroundTruthBox]:
    """Read boxes; a leading line without ``frame_id`` is treated as a header."""
    boxes = []
    for lineno, rec in read_jsonl(path):
        if "frame_id" not in rec:
            if boxes or lineno != 1:
                raise ParseError(path, lineno, "record without frame_id")
            continue
        try:
            fid = int(rec["frame_id"])
            x0, y0, x1, y1 = (float(v) for v in rec["box"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, lineno, f"malformed box record ({exc})") from None
        if not (x0 < x1 and y0 < y1):
            raise ValidationError(f"{path}:{lineno}: inverted box {[x0, y0, x1, y1]}")
        boxes.append(GroundTruthBox(fid, x0, y0, x1, y1))
    return boxes


def write_experience(exp: ExperienceSet, path, extra_header: Optional[dict] = None) -> None:
    """PSDF blob plus, when ``extra_header`` is given, a ``<name>.json`` header next to it."""
    write_psdf(path, exp.descriptors)
    if extra_header is not None:
        path = Path(path)
        header = {"kind": "experience", "count": len(exp), "descriptor_dim": int(exp.descriptors.shape[1])}
        header.update(extra_header)
        atomic_write_text(path.with_name(path.name + ".json"), dumps(header) + "\n")


def load_experience(path) -> ExperienceSet:
    return ExperienceSet(read_psdf(path))
