import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from placechange import linsvm
from placechange.errors import DimensionError, OneSidedTrainingError
from placechange.linsvm import SvmHyper, SvmModel
from svm_instances import separable, separating_cost


def test_symmetric_toy():
    m = linsvm.train([[1.0, 0.0]] * 5, [[-1.0, 0.0]] * 5)
    assert linsvm.score(m, [1, 0]) > 0 > linsvm.score(m, [-1, 0])


def test_deterministic(rng):
    P, N = rng.standard_normal((40, 3)) + 1, rng.standard_normal((30, 3)) - 1
    a = linsvm.train(P, N, SvmHyper(seed=7))
    b = linsvm.train(P, N, SvmHyper(seed=7))
    assert a.identical(b)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_separable_200_in_5d():
    P, N = separable(11, 200, 5)
    m = linsvm.train(P, N)
    assert np.all(linsvm.score_many(m, P) > 0) and np.all(linsvm.score_many(m, N) < 0)
    ref = oracles.batch_subgradient(P, N, m.hyper.C)
    assert linsvm.objective(m, P, N) <= 1.05 * ref


def test_errors():
    with pytest.raises(OneSidedTrainingError):
        linsvm.train(np.empty((0, 2)), [[1.0, 2.0]])
    with pytest.raises(DimensionError):
        linsvm.train([[1.0, 2.0]], [[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        SvmHyper(C=0)
    with pytest.raises(ValueError):
        SvmHyper(epochs=0)


def test_score_examples(rng):
    assert linsvm.score(SvmModel(np.zeros(3), 0.0), rng.standard_normal(3)) == 0.0
    assert linsvm.score(SvmModel([1, 2], -1.0), [3, 1]) == 4.0
    m = SvmModel(rng.standard_normal(16), 0.3)
    x = rng.standard_normal(16)
    assert linsvm.score(m, x) == pytest.approx(sum(a * b for a, b in zip(m.weights, x)) + 0.3, rel=1e-6)
    with pytest.raises(DimensionError):
        linsvm.score(m, x[:3])


def test_rank_examples(rng):
    m = SvmModel([1.0], 0.0)
    assert linsvm.rank_by_score(m, np.empty((0, 1))).tolist() == []
    assert linsvm.rank_by_score(m, [[0.5], [2.0], [2.0], [-1.0]]).tolist() == [1, 2, 0, 3]
    m = SvmModel(rng.standard_normal(4), 0.1)
    X = np.round(rng.standard_normal((500, 4)), 1)
    assert linsvm.rank_by_score(m, X).tolist() == oracles.rank_order(list(linsvm.score_many(m, X)))


def test_model_file_round_trip(tmp_path, rng):
    m = linsvm.train(rng.standard_normal((10, 3)) + 2, rng.standard_normal((10, 3)), SvmHyper(C=2.0, epochs=5, seed=3))
    linsvm.save_model(m, tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert set(d) == {"dim", "weights", "bias", "hyper", "seed"}
    assert linsvm.load_model(tmp_path / "m.json").identical(m)


score_arrays = arrays(np.float64, st.tuples(st.integers(0, 30), st.just(3)),
                      elements=st.floats(-5, 5, allow_nan=False))


@given(score_arrays, st.floats(-10, 10), st.floats(-10, 10))
def test_rank_is_permutation_and_bias_invariant(X, b, shift):
    w = np.array([1.0, -0.5, 0.25])
    r1 = linsvm.rank_by_score(SvmModel(w, b), X)
    r2 = linsvm.rank_by_score(SvmModel(w, b + shift), X)
    assert sorted(r1.tolist()) == list(range(len(X)))
    s = linsvm.score_many(SvmModel(w, b), X)[r1]
    assert np.all(np.diff(s) <= 0)
    # a shift can only merge or split float ties; compare on exactly representable data
    Xi = np.round(X * 4) / 4
    assert np.array_equal(linsvm.rank_by_score(SvmModel(w, 0.5), Xi), linsvm.rank_by_score(SvmModel(w, 2.5), Xi))
    assert len(r2) == len(X)


@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(2, 120))
def test_separable_property(seed, d, n):
    P, N = separable(seed, n, d)
    if len(P) == 0 or len(N) == 0:
        return
    m = linsvm.train(P, N, SvmHyper(C=separating_cost(P, N, seed, d), epochs=3000))
    assert np.all(linsvm.score_many(m, P) > 0) and np.all(linsvm.score_many(m, N) < 0)
