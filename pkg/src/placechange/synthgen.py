"""Deterministic synthetic view-sequence maps with planted places and changes.

Descriptor layout (``D`` = descriptor_dim, ``pd = max(1, D // 2)``):

* dims ``[0, pd)`` carry place identity.  Place centres are separated by at
  least ``cluster_separation``; the change cluster sits at their centroid.
* dim ``pd`` (when ``D >= 3``) is a texture axis.  Query nuisance features and
  the experience pool sit far out on it; map and change features do not.
* the last dim (when ``D >= 3``) is a parity axis.  Ephemeral map features sit
  at about ``+5 sigma`` on even frames and ``-5 sigma`` on odd frames, so
  ephemerals of successive frames never cross-match.
* remaining dims are plain noise.

All noise around a place centre is truncated so every map descriptor lies
within ``6 * intra_cluster_noise`` of its centre in each coordinate.

With ``loop_geometry="loop"`` the robot drives the place sequence twice round
a circle whose circumference is at least 1000 m.  Queries revisit first-lap
frames from a lane between the two laps, so their pose-nearest map frame is on
lap two and the relevant frame (lap one) is a full lap away along the path.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .evalharness import QuerySpec, find_relevant_pair
from .fileio import atomic_write_text, dumps
from .mapmodel import (
    ExperienceSet,
    Frame,
    GroundTruthBox,
    ViewSequenceMap,
    write_experience,
    write_ground_truth,
    write_map,
)

STABLE, EPHEMERAL, CHANGE, NUISANCE = "stable", "ephemeral", "change", "nuisance"

LANE_OFFSET = 2.0  # metres between lap one and lap two
QUERY_OFFSET = 1.5  # query lane, measured from lap one


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_places: int = 3
    frames_per_place: int = 50
    features_per_frame: int = 100
    descriptor_dim: int = 16
    cluster_separation: float = 20.0
    intra_cluster_noise: float = 1.0
    stable_fraction: float = 0.5
    n_queries: int = 30
    change_features_per_query: int = 10
    image_width: int = 640
    image_height: int = 480
    loop_geometry: str = "loop"
    # knobs beyond the core set
    nuisance_features_per_query: int = 120
    place_length_jitter: float = 0.0
    observation_noise: float = 0.1
    experience_size: int = 10_000
    texture_offset: float = 10.0
    nuisance_spread: float = 2.0

    def __post_init__(self):
        counts = ("n_places", "frames_per_place", "features_per_frame", "descriptor_dim",
                  "n_queries", "change_features_per_query", "experience_size")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.cluster_separation > 0:
            raise ConfigError("cluster_separation must be > 0")
        if self.intra_cluster_noise < 0 or self.observation_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.observation_noise > 1.0 / 6.0:
            # landmark offsets use 5 sigma, re-observation the remaining 1 sigma of the 6 sigma bound
            raise ConfigError("observation_noise must be <= 1/6")
        if not 0.0 <= self.stable_fraction <= 1.0:
            raise ConfigError("stable_fraction must lie in [0, 1]")
        if not 0.0 <= self.place_length_jitter < 1.0:
            raise ConfigError("place_length_jitter must lie in [0, 1)")
        if self.nuisance_features_per_query < 0:
            raise ConfigError("nuisance_features_per_query must be >= 0")
        if self.loop_geometry not in ("loop", "line"):
            raise ConfigError("loop_geometry must be 'loop' or 'line'")
        if self.loop_geometry == "loop" and self.n_places * self.frames_per_place < 2:
            # one frame per lap never gets far enough from its own twin
            raise ConfigError("loop geometry needs at least two frames per lap; use 'line'")
        if self.image_width < 8 or self.image_height < 8:
            raise ConfigError("image must be at least 8x8 pixels")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SynthOutput:
    config: SynthConfig
    map: ViewSequenceMap
    experience: ExperienceSet
    queries: tuple
    query_width: int
    query_height: int
    truth: dict

    @property
    def query_frames(self):
        return [q.query_frame for q in self.queries]

    @property
    def gt_boxes(self):
        return [b for q in self.queries for b in q.gt_boxes]


def benchmark_config(seed: int, **overrides) -> SynthConfig:
    """The standard desk-scale benchmark: 3 places x 50 frames, D=16, 100 features, 30 queries."""
    base = dict(seed=seed, n_places=3, frames_per_place=50, features_per_frame=100,
                descriptor_dim=16, n_queries=30)
    base.update(overrides)
    return SynthConfig(**base)


def default_threshold(config: SynthConfig) -> float:
    """Appearance threshold ``M * separation`` for maps drawn from ``config``.

    Same-place NBNN distances come out near ``0.45 M * separation`` and
    different-place ones near ``1.8 M * separation`` at the benchmark
    settings, so this sits roughly at their geometric mean.
    """
    return float(config.features_per_frame * config.cluster_separation)


# ---------------------------------------------------------------------------


def _trunc_normal(rng, size, limit=6.0):
    z = rng.standard_normal(size)
    bad = np.abs(z) > limit
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > limit
    return z


class _Layout:
    def __init__(self, dim):
        self.dim = dim
        self.place = max(1, dim // 2)
        self.texture = self.place if dim >= 3 else None
        self.parity = dim - 1 if dim >= 3 and dim - 1 != self.place else None


def _place_centres(rng, cfg: SynthConfig, lay: _Layout) -> np.ndarray:
    P, sep = cfg.n_places, cfg.cluster_separation
    centres = np.zeros((P, cfg.descriptor_dim))
    if P <= lay.place:
        centres[np.arange(P), np.arange(P)] = sep / math.sqrt(2.0)
        if P > 1:
            centres[:, : lay.place] -= centres[:, : lay.place].mean(axis=0)
        return centres
    # more places than place dims: rejection-sample inside a growing box
    span = sep * P ** (1.0 / lay.place)
    pts = []
    while len(pts) < P:
        c = rng.uniform(-span, span, size=lay.place)
        if all(np.linalg.norm(c - p) >= sep for p in pts):
            pts.append(c)
        else:
            span *= 1.001
    pts = np.array(pts)
    centres[:, : lay.place] = pts - pts.mean(axis=0)
    return centres


def _change_centre(cfg, lay, centres):
    c = centres.mean(axis=0)
    if cfg.n_places == 1:
        c = c.copy()
        c[0] += cfg.cluster_separation
    return c


def _place_lengths(rng, cfg: SynthConfig) -> list[int]:
    if cfg.place_length_jitter == 0:
        return [cfg.frames_per_place] * cfg.n_places
    j = cfg.place_length_jitter
    u = rng.uniform(1 - j, 1 + j, size=cfg.n_places)
    return [max(2, int(round(cfg.frames_per_place * x))) for x in u]


def _outside_box(rng, n, box, w, h):
    out = np.empty((n, 2))
    k = 0
    while k < n:
        cand = np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])
        if box is not None:
            x0, y0, x1, y1 = box
            inside = (cand[:, 0] >= x0) & (cand[:, 0] <= x1) & (cand[:, 1] >= y0) & (cand[:, 1] <= y1)
            cand = cand[~inside]
        take = min(n - k, len(cand))
        out[k : k + take] = cand[:take]
        k += take
    return out


def _clip_kp(kp, w, h):
    kp = kp.copy()
    kp[:, 0] = np.clip(kp[:, 0], 0, np.nextafter(w, 0))
    kp[:, 1] = np.clip(kp[:, 1], 0, np.nextafter(h, 0))
    return kp


def generate(cfg: SynthConfig) -> SynthOutput:
    rng = np.random.default_rng(cfg.seed)
    lay = _Layout(cfg.descriptor_dim)
    D, sigma = cfg.descriptor_dim, cfg.intra_cluster_noise
    W, H = cfg.image_width, cfg.image_height
    M = cfg.features_per_frame
    n_stable = int(round(cfg.stable_fraction * M))
    n_eph = M - n_stable

    centres = _place_centres(rng, cfg, lay)
    change_c = _change_centre(cfg, lay, centres)
    lengths = _place_lengths(rng, cfg)

    # landmarks: fixed per place, re-observed in every frame of that place
    landmarks, landmark_kp = [], []
    for p in range(cfg.n_places):
        off = sigma * _trunc_normal(rng, (n_stable, D), 5.0)
        if lay.parity is not None:
            off[:, lay.parity] = 0.5 * sigma * _trunc_normal(rng, n_stable, 3.0)
        landmarks.append(centres[p] + off)
        landmark_kp.append(np.column_stack([rng.uniform(0, W, n_stable), rng.uniform(0, H, n_stable)]))

    def observe(p, parity_sign):
        obs = landmarks[p] + cfg.observation_noise * sigma * _trunc_normal(rng, (n_stable, D))
        eph = centres[p] + sigma * _trunc_normal(rng, (n_eph, D), 6.0)
        if lay.parity is not None and n_eph:
            eph[:, lay.parity] = centres[p][lay.parity] + parity_sign * sigma * rng.uniform(4.0, 6.0, n_eph)
        return obs, eph

    laps = 2 if cfg.loop_geometry == "loop" else 1
    n_lap = sum(lengths)
    circumference = max(1000.0, 4.0 * n_lap)
    place_arc = circumference / cfg.n_places
    radius = circumference / (2 * math.pi)

    frames, labels, place_of_frame, arc_of_frame = [], {}, [], []
    fid = 0
    for lap in range(laps):
        for p in range(cfg.n_places):
            for k in range(lengths[p]):
                arc = p * place_arc + (k + 0.5) * place_arc / lengths[p]
                if cfg.loop_geometry == "loop":
                    r = radius + lap * LANE_OFFSET
                    theta = arc / radius
                    pose = (r * math.cos(theta), r * math.sin(theta))
                else:
                    pose = (arc, 0.0)
                obs, eph = observe(p, 1.0 if fid % 2 == 0 else -1.0)
                jitter = rng.uniform(-2.0, 2.0, size=(n_stable, 2))
                kp = np.vstack([
                    _clip_kp(landmark_kp[p] + jitter, W, H),
                    np.column_stack([rng.uniform(0, W, n_eph), rng.uniform(0, H, n_eph)]),
                ])
                desc = np.vstack([obs, eph]).astype(np.float32)
                frames.append(Frame(fid, fid * 0.1, pose, kp, desc))
                labels[fid] = [STABLE] * n_stable + [EPHEMERAL] * n_eph
                place_of_frame.append(p)
                arc_of_frame.append(arc)
                fid += 1
    vmap = ViewSequenceMap(tuple(frames), W, H, D)

    boundaries = [0] + [f for f in range(1, len(frames)) if place_of_frame[f] != place_of_frame[f - 1]]

    experience = _experience(rng, cfg, lay, centres)
    queries, query_labels = _queries(rng, cfg, lay, vmap, centres, change_c, landmarks, landmark_kp,
                                     place_of_frame, n_lap, radius, observe)

    truth = {
        "boundaries": boundaries,
        "labels": {str(k): v for k, v in labels.items()},
        "place_of_frame": place_of_frame,
        "place_lengths": lengths,
        "query_labels": {str(k): v for k, v in query_labels.items()},
        "relevant": [q.relevant_map_frame_id for q in queries],
        "place_centres": centres.tolist(),
        "change_centre": change_c.tolist(),
    }
    return SynthOutput(cfg, vmap, experience, tuple(queries), W, H, truth)


def _experience(rng, cfg, lay, centres) -> ExperienceSet:
    D, sigma = cfg.descriptor_dim, cfg.intra_cluster_noise
    n = cfg.experience_size
    exp = centres.mean(axis=0) + sigma * rng.standard_normal((n, D))
    if lay.texture is not None:
        exp[:, lay.texture] = sigma * (cfg.texture_offset - 2.0 + 2.0 * np.abs(rng.standard_normal(n)))
    return ExperienceSet(exp.astype(np.float32))


def _queries(rng, cfg, lay, vmap, centres, change_c, landmarks, landmark_kp, place_of_frame, n_lap, radius,
             observe):
    D, sigma = cfg.descriptor_dim, cfg.intra_cluster_noise
    W, H = cfg.image_width, cfg.image_height
    n_stable = len(landmarks[0])
    mirror = rng.choice(n_lap, size=cfg.n_queries, replace=cfg.n_queries > n_lap)
    t0 = vmap.frames[-1].timestamp + 1.0
    queries, labels = [], {}
    for qid, j in enumerate(mirror):
        j = int(j)
        p = place_of_frame[j]
        src = vmap.frames[j]
        if cfg.loop_geometry == "loop":
            theta = math.atan2(src.pose[1], src.pose[0])
            r = radius + QUERY_OFFSET
            pose = (r * math.cos(theta), r * math.sin(theta))
        else:
            pose = (src.pose[0], QUERY_OFFSET)

        bw, bh = max(4.0, W / 5), max(4.0, H / 5)
        x0, y0 = rng.uniform(0, W - bw), rng.uniform(0, H - bh)
        box = (x0, y0, x0 + bw, y0 + bh)

        obs, eph = observe(p, 1.0 if rng.uniform() < 0.5 else -1.0)
        n_ch, n_nu = cfg.change_features_per_query, cfg.nuisance_features_per_query
        change = change_c + sigma * _trunc_normal(rng, (n_ch, D))
        nuis = change_c + sigma * rng.standard_normal((n_nu, D))
        if n_nu:
            nuis[:, : lay.place] = change_c[: lay.place] + cfg.nuisance_spread * sigma * rng.standard_normal(
                (n_nu, lay.place)
            )
            if lay.texture is not None:
                nuis[:, lay.texture] = sigma * (cfg.texture_offset + rng.standard_normal(n_nu))

        kp_stable = _clip_kp(landmark_kp[p] + rng.uniform(-2.0, 2.0, size=(n_stable, 2)), W, H)
        # background features never fall inside the change box
        inside = (kp_stable[:, 0] >= box[0]) & (kp_stable[:, 0] <= box[2]) & (kp_stable[:, 1] >= box[1]) & (
            kp_stable[:, 1] <= box[3]
        )
        kp_stable[inside] = _outside_box(rng, int(inside.sum()), box, W, H)
        kp_change = np.column_stack([rng.uniform(box[0], box[2], n_ch), rng.uniform(box[1], box[3], n_ch)])
        kp_other = _outside_box(rng, len(eph) + n_nu, box, W, H)

        desc = np.vstack([obs, eph, change, nuis]).astype(np.float32)
        kp = np.vstack([kp_stable, kp_other[: len(eph)], kp_change, kp_other[len(eph):]])
        order = rng.permutation(len(desc))
        lab = np.array([STABLE] * n_stable + [EPHEMERAL] * len(eph) + [CHANGE] * n_ch + [NUISANCE] * n_nu)
        frame = Frame(qid, t0 + qid * 0.1, pose, _clip_kp(kp[order], W, H), desc[order])
        labels[qid] = lab[order].tolist()
        min_path = 400.0 if cfg.loop_geometry == "loop" else 0.0
        rel = find_relevant_pair(vmap, frame, min_path)
        queries.append(QuerySpec(frame, rel, (GroundTruthBox(qid, *box),)))
    return queries, labels


# ---------------------------------------------------------------------------
# Files

MAP_FILE = "map.jsonl"
QUERY_FILE = "queries.jsonl"
GT_FILE = "ground_truth.jsonl"
EXPERIENCE_FILE = "experience.psdf"
TRUTH_FILE = "planted_truth.json"


def write_outputs(out: SynthOutput, directory, header: Optional[dict] = None) -> dict:
    """Write every synthetic artefact into ``directory``; returns name -> path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = dict(header or {"config": out.config.to_dict(), "seed": out.config.seed})
    qmap = ViewSequenceMap(tuple(out.query_frames), out.query_width, out.query_height, out.map.descriptor_dim)
    paths = {
        "map": d / MAP_FILE,
        "queries": d / QUERY_FILE,
        "ground_truth": d / GT_FILE,
        "experience": d / EXPERIENCE_FILE,
        "truth": d / TRUTH_FILE,
    }
    write_map(out.map, paths["map"], header)
    write_map(qmap, paths["queries"], header)
    write_ground_truth(out.gt_boxes, paths["ground_truth"], header)
    write_experience(out.experience, paths["experience"], header)
    atomic_write_text(paths["truth"], dumps({"header": header, **out.truth}) + "\n")
    return paths
