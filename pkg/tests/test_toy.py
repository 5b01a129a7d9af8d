import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tabaudit import toy
from tabaudit.toy import ToyTask, orbit_bound, toy_predict


def brute_orbit_bound(m, labels):
    # every orbit-constant classifier, one output bit per Hamming weight
    rows = list(itertools.product((0, 1), repeat=m))
    best = 0
    for choice in itertools.product((0, 1), repeat=m + 1):
        best = max(best, sum(int(choice[sum(x)] == y) for x, y in zip(rows, labels)))
    return Fraction(best, 2 ** m)


def test_rows_enumerate_in_binary_order():
    assert toy.enumerate_rows(2) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_orbits_are_weight_classes():
    orbits = toy.orbit_partition(3)
    assert [len(o) for o in orbits] == [1, 3, 3, 1]
    assert sorted(i for o in orbits for i in o) == list(range(8))


@pytest.mark.parametrize("kind,expected", [("A", Fraction(3, 4)), ("B", Fraction(3, 4)), ("C", Fraction(1))])
def test_orbit_bound_m3(kind, expected):
    assert orbit_bound(ToyTask(kind, 3)) == expected


@given(st.integers(1, 4).flatmap(lambda m: st.tuples(st.just(m), st.lists(st.integers(0, 1), min_size=2 ** m,
                                                                          max_size=2 ** m))))
def test_orbit_bound_matches_brute_force(case):
    m, labels = case
    assert orbit_bound(ToyTask("A", m), labels) == brute_orbit_bound(m, labels)


@given(st.integers(1, 4).flatmap(lambda m: st.tuples(st.just(m), st.lists(st.integers(0, 1), min_size=2 ** m,
                                                                          max_size=2 ** m))))
def test_m0_never_beats_the_orbit_bound(case):
    m, labels = case
    task = ToyTask("A", m)
    rows = task.rows()
    probs = toy._m0(rows, labels, m)
    acc = Fraction(sum(int(toy._argmax(p) == y) for p, y in zip(probs, labels)), 2 ** m)
    assert acc <= orbit_bound(task, labels)


def test_m0_reaches_the_bound_on_task_a():
    assert toy_predict("M0", ToyTask("A", 3)).accuracy == orbit_bound(ToyTask("A", 3))


def test_handcraft_grid_is_exact():
    grid = toy.verify_handcraft_table()
    assert grid == toy.REFERENCE_TABLE
    assert toy.handcraft_matches_reference(grid)
    for row in grid.values():
        assert all(isinstance(a, Fraction) for a in row)


def test_m1_row_100_probability():
    res = toy_predict("M1", ToyTask("A", 3))
    i = toy.enumerate_rows(3).index((1, 0, 0))
    assert res.probs[i] == (Fraction(1, 3), Fraction(2, 3))


@pytest.mark.parametrize("task", toy.TASKS)
def test_m1_equals_m2(task):
    a = toy_predict("M1", ToyTask(task, 3))
    b = toy_predict("M2", ToyTask(task, 3))
    assert a.probs == b.probs


def test_m0_is_column_permutation_invariant():
    rows = toy.enumerate_rows(3)
    y = ToyTask("B", 3).labels()
    base = toy._m0(rows, y, 3)
    for perm in itertools.permutations(range(3)):
        permuted = [tuple(x[j] for j in perm) for x in rows]
        got = toy._m0(permuted, y, 3)
        assert got == base


@pytest.mark.parametrize("mode,expected", sorted(toy.REFERENCE_ABLATION_TASK_A.items()))
def test_ablation_task_a(mode, expected):
    assert toy.ablation_modes(ToyTask("A", 3), mode) == expected


def test_accuracies_are_dyadic():
    for model in toy.MODELS:
        for m in (2, 3, 4):
            task = ToyTask("A", m)
            acc = toy_predict(model, task).accuracy
            assert (acc * 2 ** m).denominator == 1


def test_bad_inputs():
    with pytest.raises(toy.ToyError):
        ToyTask("D", 3)
    with pytest.raises(toy.ToyError):
        ToyTask("B", 1)
    with pytest.raises(toy.ToyError):
        toy_predict("M9", ToyTask("A", 3))
    with pytest.raises(toy.ToyError):
        toy.ablation_modes(ToyTask("A", 3), "nope")


def test_m0_table_classifier_is_column_invariant():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 2, size=(30, 4)).astype(float)
    y = rng.integers(0, 2, size=30)
    Q = rng.integers(0, 2, size=(10, 4)).astype(float)
    P = toy.m0_fit_predict(X, y, Q, 2)
    assert np.allclose(P.sum(axis=1), 1)
    perm = [2, 0, 3, 1]
    assert np.array_equal(P, toy.m0_fit_predict(X[:, perm], y, Q[:, perm], 2))
