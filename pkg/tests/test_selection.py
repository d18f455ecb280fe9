import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdpsense.errors import EmptyBackground, SchemaMismatch
from rdpsense.learners import ModelSpec, train
from rdpsense.schema import FeatureMatrix
from rdpsense.selection import (
    AttributionReport,
    coalition_values,
    exact_shapley,
    select_attributes,
    shapley_rank,
    subsample_background,
)


def permutation_shapley(f, background, x):
    """Reference: average marginal contribution over every permutation."""
    d = len(x)
    phi = np.zeros(d)
    perms = list(itertools.permutations(range(d)))
    for perm in perms:
        for b in background:
            row = b.copy()
            prev = f(row[None])[0]
            for j in perm:
                row[j] = x[j]
                cur = f(row[None])[0]
                phi[j] += cur - prev
                prev = cur
    return phi / (len(perms) * len(background))


def interacting(x):
    x = np.atleast_2d(x)
    return np.tanh(x[:, 0] * x[:, 1]) + 0.3 * x[:, 2] ** 2 - 0.2 * x[:, 3]


def test_exact_matches_permutation_reference():
    rng = np.random.default_rng(0)
    bg = rng.normal(size=(5, 5))
    x = rng.normal(size=5)
    np.testing.assert_allclose(exact_shapley(interacting, bg, x), permutation_shapley(interacting, bg, x), atol=1e-12)


def test_additive_example():
    bg = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
    x = np.array([4.0, 7.0])
    phi = shapley_rank(lambda z: z[:, 0] + z[:, 1], bg, x[None], exact=True).contributions[0]
    assert phi[0] == pytest.approx(x[0] - bg[:, 0].mean(), abs=1e-9)
    assert phi[1] == pytest.approx(x[1] - bg[:, 1].mean(), abs=1e-9)


def test_null_player_monte_carlo():
    rng = np.random.default_rng(1)
    report = shapley_rank(lambda z: z[:, 0] * z[:, 1], rng.normal(size=(30, 3)), rng.normal(size=(10, 3)), 64, seed=2)
    assert report.mean_abs[2] <= 1e-12


def test_efficiency_monte_carlo_per_sample():
    # each sampled permutation telescopes from the background row to x, so the average
    # sum equals f(x) minus the mean score of the drawn background rows
    rng = np.random.default_rng(3)
    bg = rng.normal(size=(1, 4))
    x = rng.normal(size=(1, 4))
    report = shapley_rank(interacting, bg, x, 16, seed=0)
    assert report.contributions.sum() == pytest.approx(interacting(x)[0] - interacting(bg)[0], abs=1e-12)


def test_monte_carlo_converges_to_exact():
    rng = np.random.default_rng(4)
    bg, x = rng.normal(size=(20, 4)), rng.normal(size=(1, 4))
    exact = exact_shapley(interacting, bg, x[0])
    mc = shapley_rank(interacting, bg, x, 4000, seed=5).contributions[0]
    np.testing.assert_allclose(mc, exact, atol=0.03)


def test_duplicated_attributes_symmetric():
    rng = np.random.default_rng(6)
    bg = rng.normal(size=(50, 3))
    bg[:, 1] = bg[:, 0]
    x = np.array([[1.5, 1.5, 0.2]])
    f = lambda z: np.tanh(z[:, 0] + z[:, 1]) + 0.1 * z[:, 2]  # noqa: E731
    samples = 2000
    # per-sample contributions give the Monte-Carlo standard error
    rng2 = np.random.default_rng(7)
    per_sample = np.array([
        shapley_rank(f, bg, x, 1, seed=int(s)).contributions[0] for s in rng2.integers(0, 2**31, 300)
    ])
    se = np.std(per_sample[:, 0] - per_sample[:, 1], ddof=1) / math.sqrt(samples)
    report = shapley_rank(f, bg, x, samples, seed=8)
    c = report.contributions[0]
    assert abs(c[0] - c[1]) <= 3 * se


def test_errors():
    m = train(ModelSpec("DecisionTree"), FeatureMatrix(np.arange(20.0).reshape(10, 2), ("a", "b")), np.arange(10) > 4)
    with pytest.raises(EmptyBackground):
        shapley_rank(m, FeatureMatrix(np.zeros((0, 2)), ("a", "b")), FeatureMatrix(np.zeros((1, 2)), ("a", "b")))
    with pytest.raises(SchemaMismatch):
        shapley_rank(m, FeatureMatrix(np.zeros((3, 2)), ("a", "c")), FeatureMatrix(np.zeros((1, 2)), ("a", "c")))
    with pytest.raises(SchemaMismatch):
        shapley_rank(lambda z: z[:, 0], np.zeros((3, 2)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        shapley_rank(m, np.zeros((3, 2)), np.zeros((1, 2)), samples_per_row=0)


def test_ranking_is_permutation_and_deterministic():
    rng = np.random.default_rng(9)
    names = tuple("abcdef")
    bg = FeatureMatrix(rng.normal(size=(40, 6)), names)
    y = bg.values[:, 2] + 0.5 * bg.values[:, 4] > 0
    model = train(ModelSpec.make("RandomForest", n_trees=10, seed=1), bg, y)
    r1 = shapley_rank(model, bg, bg.rows(np.arange(10)), 8, seed=3, class_name="Notepad")
    r2 = shapley_rank(model, bg, bg.rows(np.arange(10)), 8, seed=3, class_name="Notepad")
    assert sorted(r1.ranking) == sorted(names)
    assert np.array_equal(r1.contributions, r2.contributions)
    assert r1.ranking[0] == "c"
    assert np.all(r1.mean_abs >= 0)
    lines = r1.to_csv().splitlines()
    assert lines[0] == "attribute,mean_abs_contribution,rank"
    assert lines[1].startswith("c,") and lines[1].endswith(",1")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=12), st.floats(0.01, 100))
def test_ranking_invariant_under_rescaling(values, factor):
    names = tuple(f"x{i}" for i in range(len(values)))
    c = np.array([values])
    assert AttributionReport("", names, c).ranking == AttributionReport("", names, c * factor).ranking


def report_of(values):
    return AttributionReport("Download", tuple(f"x{i}" for i in range(len(values))), np.array([values], dtype=float))


def test_select_examples():
    assert select_attributes(report_of([0.5, 0.4, 0.1]), 0.9).names == ("x0", "x1")
    assert select_attributes(report_of([0.1, 0.4, 0.5]), 0.9).names == ("x2", "x1")
    assert select_attributes(report_of([0.3]), 0.9).names == ("x0",)
    empty = select_attributes(report_of([0.0, 0.0]))
    assert empty.names == () and empty.degenerate


def test_select_cap():
    sel = select_attributes(report_of(np.ones(30)), 0.9, cap=20)
    assert len(sel) == 20 and not sel.degenerate


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=40), st.floats(0.05, 1.0), st.integers(1, 25))
def test_select_shortest_prefix(values, mass, cap):
    r = report_of(values)
    sel = select_attributes(r, mass, cap)
    total = sum(values)
    if total == 0:
        assert sel.degenerate
        return
    ma = dict(zip(r.names, r.mean_abs))
    assert list(sel.names) == r.ranking[: len(sel)]
    share = sum(ma[n] for n in sel.names) / total
    assert len(sel) == cap or share >= mass - 1e-9
    if len(sel) > 1:
        shorter = sum(ma[n] for n in sel.names[:-1]) / total
        assert shorter < mass - 1e-12


def test_coalition_values_endpoints():
    rng = np.random.default_rng(10)
    bg, x = rng.normal(size=(6, 4)), rng.normal(size=4)
    v = coalition_values(interacting, bg, x)
    assert len(v) == 16
    assert v[0] == pytest.approx(interacting(bg).mean())
    assert v[-1] == pytest.approx(interacting(x[None])[0])


def test_subsample_background():
    m = FeatureMatrix(np.arange(600.0).reshape(300, 2), ("a", "b"))
    s = subsample_background(m, 256, seed=1)
    assert len(s) == 256 and len(np.unique(s.values[:, 0])) == 256
    assert subsample_background(m.rows(np.arange(10)), 256).values.shape == (10, 2)
