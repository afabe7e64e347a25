import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from placechange import synthgen
from placechange.errors import ParameterError, StructureError
from placechange.mapmodel import Frame, ViewSequenceMap
from placechange.upd import (
    PlacePartition,
    PlaceRegion,
    keyframe_distances,
    load_partition,
    partition_appearance,
    partition_time,
    save_partition,
)


def _map_from(descs, dim=None):
    dim = dim or (descs[0].shape[1] if len(descs[0]) else 1)
    frames = []
    for i, d in enumerate(descs):
        d = np.asarray(d, dtype=np.float32).reshape(-1, dim)
        frames.append(Frame(i, float(i), (float(i), 0.0), np.zeros((len(d), 2)), d))
    return ViewSequenceMap(tuple(frames), 10, 10, dim)


def _bounds(part):
    return [(r.start, r.end) for r in part.regions]


def test_time_examples():
    assert _bounds(partition_time(10, 1)) == [(0, 10)]
    assert _bounds(partition_time(10, 3)) == [(0, 4), (4, 7), (7, 10)]
    assert [r.keyframe_id for r in partition_time(10, 3).regions] == [0, 4, 7]


def test_time_every_ten_frames():
    # 17310 frames stored every 10 frames gives 1731 places
    part = partition_time(17310, 1731)
    assert len(part) == 1731
    assert all(len(r) == 10 for r in part.regions)


def test_time_bad_k():
    for k in (0, 11):
        with pytest.raises(ParameterError):
            partition_time(10, k)


def test_region_and_cover_validation():
    with pytest.raises(StructureError):
        PlaceRegion(3, 3, 3)
    with pytest.raises(StructureError):
        PlaceRegion(0, 3, 3)
    with pytest.raises(StructureError):
        PlacePartition((PlaceRegion(0, 2, 0), PlaceRegion(3, 5, 3)), "time", 2)


def test_appearance_identical_frames():
    d = np.random.default_rng(0).standard_normal((6, 4))
    assert len(partition_appearance(_map_from([d] * 9), 1e-3)) == 1


def test_appearance_tiny_threshold_splits_everywhere():
    r = np.random.default_rng(1)
    vm = _map_from([r.standard_normal((5, 3)) for _ in range(12)])
    dists = [oracles.nbnn(vm.frames[i].descriptors, vm.frames[j].descriptors) for i in range(12) for j in range(12)
             if i != j]
    part = partition_appearance(vm, 0.5 * min(dists))
    assert len(part) == 12


def test_appearance_huge_threshold_one_region(small_synth):
    assert len(partition_appearance(small_synth.map, 1e9)) == 1


def test_appearance_bad_threshold():
    with pytest.raises(ParameterError):
        partition_appearance(_map_from([np.ones((1, 2))]), 0.0)


def test_appearance_planted_clusters():
    cfg = synthgen.SynthConfig(seed=5, n_places=3, frames_per_place=20, features_per_frame=20, descriptor_dim=8,
                               cluster_separation=100.0, intra_cluster_noise=1.0, n_queries=1, experience_size=10,
                               loop_geometry="line")
    out = synthgen.generate(cfg)
    vm, b = out.map, out.truth["boundaries"]
    cuts = b + [len(vm)]
    # oracle: recompute the two NBNN scales from the planted truth
    intra = max(oracles.nbnn(vm.frames[f].descriptors, vm.frames[s].descriptors)
                for s, e in zip(cuts[:-1], cuts[1:]) for f in range(s + 1, e))
    inter = min(oracles.nbnn(vm.frames[f].descriptors, vm.frames[s].descriptors)
                for s, e in zip(cuts[:-1], cuts[1:]) for f in range(len(vm)) if not s <= f < e)
    assert intra < inter
    part = partition_appearance(vm, 0.5 * (intra + inter))
    assert [r.start for r in part.regions] == b == [0, 20, 40]


def test_zero_feature_frames():
    empty = np.empty((0, 2))
    a, b = np.zeros((3, 2)), np.full((3, 2), 50.0)
    part = partition_appearance(_map_from([empty, a, empty, b, empty], dim=2), 10.0)
    # frame 0 has nothing to compare against, so frame 1 becomes the keyframe of region 0
    assert [(r.start, r.end, r.keyframe_id) for r in part.regions] == [(0, 3, 1), (3, 5, 3)]
    assert [(r.start, r.end, r.keyframe_id) for r in part.regions] == oracles.appearance_regions(
        [vm.descriptors for vm in _map_from([empty, a, empty, b, empty], dim=2).frames], 10.0)


def test_partition_file_round_trip(tmp_path, small_synth):
    part = partition_appearance(small_synth.map, 100.0)
    save_partition(part, tmp_path / "p.jsonl", {"seed": 0})
    assert load_partition(tmp_path / "p.jsonl") == part


def test_region_count_not_monotone_in_general():
    # one 1-D feature per frame: 0, 0.95, 1.8, 0.5
    vm = _map_from([[[0.0]], [[0.95]], [[1.8]], [[0.5]]], dim=1)
    assert len(partition_appearance(vm, 1.0)) == 3
    assert len(partition_appearance(vm, 0.9)) == 2


@given(st.integers(1, 400), st.data())
def test_time_invariants(n, data):
    k = data.draw(st.integers(1, n))
    part = partition_time(n, k)
    lens = [len(r) for r in part.regions]
    assert len(lens) == k and sum(lens) == n and max(lens) - min(lens) <= 1
    assert part.regions[0].start == 0 and part.regions[-1].end == n
    assert all(a.end == b.start for a, b in zip(part.regions, part.regions[1:]))
    assert lens == sorted(lens, reverse=True)


@given(st.integers(0, 200), st.floats(0.01, 50.0))
def test_appearance_matches_oracle_and_keyframe_bound(seed, ts):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 12))
    descs = [r.standard_normal((int(r.integers(0, 4)), 2)) * 3 for _ in range(n)]
    vm = _map_from(descs, dim=2)
    part = partition_appearance(vm, ts)
    assert [(x.start, x.end, x.keyframe_id) for x in part.regions] == oracles.appearance_regions(
        [f.descriptors for f in vm.frames], ts)
    assert all(d < ts for _, d in keyframe_distances(vm, part))


@given(st.integers(0, 50))
def test_region_count_monotone_on_clustered_maps(seed):
    cfg = synthgen.SynthConfig(seed=seed, n_places=3, frames_per_place=6, features_per_frame=12, descriptor_dim=6,
                               n_queries=1, experience_size=10, place_length_jitter=0.5)
    vm = synthgen.generate(cfg).map
    counts = [len(partition_appearance(vm, ts)) for ts in (20, 50, 100, 200, 400, 800, 1600, 1e4)]
    assert counts == sorted(counts, reverse=True)
