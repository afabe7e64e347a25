import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from placechange import linsvm, nuisance, synthgen
from placechange.errors import EmptyPoolError, UntrainablePlaceError
from placechange.linsvm import SvmHyper, SvmModel
from placechange.mapmodel import ExperienceSet, Frame, ViewSequenceMap
from placechange.upd import PlaceRegion


def _two_frame_map(a, b):
    frames = (Frame(0, 0.0, (0, 0), np.zeros((len(a), 2)), a), Frame(1, 1.0, (1, 0), np.zeros((len(b), 2)), b))
    return ViewSequenceMap(frames, 10, 10, a.shape[1])


def test_harvest_single_frame_region(small_synth):
    assert len(nuisance.harvest_non_nuisance(small_synth.map, PlaceRegion(3, 4, 3))) == 0


def test_harvest_identical_frames(rng):
    a = rng.standard_normal((5, 4)).astype(np.float32)
    assert len(nuisance.harvest_non_nuisance(_two_frame_map(a, a), PlaceRegion(0, 2, 0))) == 5


def test_harvest_equals_planted_stable_set(small_synth):
    vm, truth = small_synth.map, small_synth.truth
    b = truth["boundaries"] + [len(vm)]
    for s, e in zip(b[:-1], b[1:]):
        got = nuisance.harvest_non_nuisance(vm, PlaceRegion(s, e, s))
        want = np.concatenate([
            vm.frames[f].descriptors[[i for i, lab in enumerate(truth["labels"][str(f)]) if lab == synthgen.STABLE]]
            for f in range(s, e - 1)
        ])
        assert {r.tobytes() for r in got} == {r.tobytes() for r in want}
        assert len(got) == len(want)


def test_mine_examples():
    assert np.array_equal(nuisance.mine_pseudo_positives(np.ones((3, 2)), [[0.0, 0.0]]), np.zeros((3, 2)))
    assert nuisance.mine_pseudo_positives([[0.0, 0.0]], [[1.0, 0.0], [0.0, 2.0]]).tolist() == [[0.0, 2.0]]
    with pytest.raises(EmptyPoolError):
        nuisance.mine_pseudo_positives([[0.0, 0.0]], np.empty((0, 2)))


def test_mine_oracle(rng):
    neg, pool = rng.standard_normal((100, 6)), rng.standard_normal((500, 6))
    got = nuisance.mine_pseudo_positives(neg, ExperienceSet(pool))
    pool32 = ExperienceSet(pool).descriptors
    for q, m in zip(neg, got):
        i, _ = oracles.farthest(q, pool32)
        assert np.array_equal(m, pool32[i])


def test_mine_oracle_large_pool(rng):
    neg, pool = rng.standard_normal((20, 4)), rng.standard_normal((10_000, 4))
    got = nuisance.mine_pseudo_positives(neg, pool)
    for q, m in zip(neg, got):
        i, d = oracles.farthest(q, pool)
        assert np.array_equal(m, pool[i])


def test_train_tight_cluster_far_from_experience(rng):
    vm = _two_frame_map(*(np.float32(rng.standard_normal((2, 20, 3)) * 0.1 + 10)))
    a = vm.frames[0].descriptors
    vm = _two_frame_map(a, a)
    S = ExperienceSet(rng.standard_normal((50, 3)) - 10)
    m = nuisance.train_nuisance(vm, PlaceRegion(0, 2, 0), S, SvmHyper())
    assert np.all(linsvm.score_many(m.svm, S.descriptors) > 0)
    assert np.all(linsvm.score_many(m.svm, a) < 0)
    assert m.mined_count == m.negatives_count == 20
    again = nuisance.train_nuisance(vm, PlaceRegion(0, 2, 0), S, SvmHyper())
    assert again.svm.identical(m.svm)


def test_train_empty_harvest(small_synth):
    with pytest.raises(UntrainablePlaceError):
        nuisance.train_nuisance(small_synth.map, PlaceRegion(0, 1, 0), small_synth.experience)


def test_train_accuracy_on_synthetic_place(small_synth):
    vm = small_synth.map
    b = small_synth.truth["boundaries"]
    region = PlaceRegion(b[0], b[1], b[0])
    m = nuisance.train_nuisance(vm, region, small_synth.experience)
    neg = nuisance.harvest_non_nuisance(vm, region)
    pos = nuisance.mine_pseudo_positives(neg, small_synth.experience)
    acc = np.mean(np.r_[linsvm.score_many(m.svm, pos) > 0, linsvm.score_many(m.svm, neg) < 0])
    assert acc >= 0.95


def test_filter_examples(rng):
    svm = SvmModel([1.0, 0.0], 0.0)
    X = rng.standard_normal((7, 2))
    kept, removed = nuisance.filter_nuisance(svm, X, 0)
    assert len(kept) == 7 and removed == []
    kept, removed = nuisance.filter_nuisance(svm, X, 100)
    assert kept == [] and len(removed) == 7


def test_filter_sort_and_slice_oracle(rng):
    svm = SvmModel(rng.standard_normal(3), 0.2)
    X = rng.standard_normal((10, 3))
    scores = list(linsvm.score_many(svm, X))
    top5 = set(oracles.rank_order(scores)[:5])
    keep = nuisance.filter_mask(svm, X, 50)
    assert set(np.flatnonzero(~keep)) == top5


def test_removal_count_floor():
    assert nuisance.removal_count(100, 29) == 29
    assert nuisance.removal_count(7, 50) == 3
    with pytest.raises(ValueError):
        nuisance.removal_count(7, 101)


def test_model_files(tmp_path, small_synth):
    b = small_synth.truth["boundaries"]
    m = nuisance.train_nuisance(small_synth.map, PlaceRegion(b[0], b[1], b[0]), small_synth.experience)
    nuisance.save_nuisance(m, tmp_path / "n.json")
    back = nuisance.load_nuisance(tmp_path / "n.json")
    assert back.svm.identical(m.svm) and back.place == m.place
    assert (back.negatives_count, back.mined_count) == (m.negatives_count, m.mined_count)


feat = arrays(np.float64, st.tuples(st.integers(0, 40), st.just(3)), elements=st.floats(-10, 10, allow_nan=False))


@given(feat, st.floats(0, 100))
def test_filter_accounting(X, tn):
    svm = SvmModel([0.3, -1.0, 2.0], 0.1)
    keep = nuisance.filter_mask(svm, X, tn)
    m = len(X)
    assert (~keep).sum() == int(np.floor(tn / 100 * m + 1e-9))
    s = linsvm.score_many(svm, X)
    if keep.any() and (~keep).any():
        assert s[~keep].min() >= s[keep].max()
    kept, removed = nuisance.filter_nuisance(svm, list(X), tn)
    assert len(kept) + len(removed) == m


@given(st.integers(0, 100))
def test_harvest_order_invariant(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((int(r.integers(1, 12)), 3)).astype(np.float32)
    b = r.standard_normal((int(r.integers(1, 12)), 3)).astype(np.float32)
    fwd = nuisance.harvest_non_nuisance(_two_frame_map(a, b), PlaceRegion(0, 2, 0))
    rev = nuisance.harvest_non_nuisance(_two_frame_map(a[::-1].copy(), b[::-1].copy()), PlaceRegion(0, 2, 0))
    assert sorted(map(bytes, fwd)) == sorted(map(bytes, rev))
