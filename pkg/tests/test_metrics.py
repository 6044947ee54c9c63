import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedkit.data import CostraTriplet
from embedkit.errors import DataError, ParameterError
from embedkit.metrics import (
    costra_accuracy,
    costra_score,
    f1_scores,
    fold_indices,
    kfold_eval,
    precision_at_k,
    rank_by_score,
    spearman,
)

import support as S


def test_spearman_examples():
    x = [0.1, 0.5, 0.7, 2.0]
    assert spearman(x, x) == pytest.approx(1.0)
    assert spearman(x, x[::-1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 2, 4], [10, 20, 30, 40]) == pytest.approx(
        S.brute_pearson([1, 2.5, 2.5, 4], [1, 2, 3, 4]), abs=1e-12)
    with pytest.raises(DataError):
        spearman([3, 3, 3], [1, 2, 3])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.floats(-5, 5)), min_size=3, max_size=20))
def test_spearman_matches_brute_force(pairs):
    x = [float(a) for a, _ in pairs]
    y = [b for _, b in pairs]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert spearman(x, y) == pytest.approx(S.brute_spearman(x, y), abs=1e-9)


def _trip(cat):
    return CostraTriplet("a", "c", "f", cat)


def test_costra_examples():
    anchor = np.array([[1.0, 0.0]] * 4)
    cats = ["time", "style", "generalization", "opposite"]
    per, macro = costra_accuracy(anchor, anchor, np.array([[0.0, 1.0]] * 4), cats)
    assert macro == 100 and set(per.values()) == {100.0}
    per, macro = costra_accuracy(anchor, anchor * 2, anchor * 3, cats)
    assert macro == 0.0
    with pytest.raises(DataError):
        costra_accuracy(anchor[:1], anchor[:1], anchor[:1], ["colour"])


def test_costra_macro_is_unweighted_and_skips_unscored():
    vecs = {"a": [1, 0], "c": [1, 0], "f": [0, 1]}
    good = [_trip("time")] * 9
    bad = [CostraTriplet("a", "f", "c", "style")]
    extra = [CostraTriplet("a", "f", "c", "modality")]
    per, macro = costra_score(good + bad + extra, lambda ts: np.array([vecs[t] for t in ts], float))
    assert per == {"time": 100.0, "style": 0.0} and macro == 50.0


def test_f1_examples():
    gold = [{0}, {1, 2}, {2}]
    assert f1_scores(gold, gold, "micro") == f1_scores(gold, gold, "macro") == 100
    # class 0 perfect, classes 1 and 2 never predicted and never present
    assert f1_scores([{0}, {0}], [{0}, {0}], "macro", labels=[0, 1, 2]) == pytest.approx(100 / 3)
    # TP=2, FP=1, FN=1
    assert f1_scores([{0, 1}, {2}], [{0}, {2, 1}], "micro") == pytest.approx(200 / 3)
    with pytest.raises(DataError):
        f1_scores([{5}], [{0}], labels=[0, 1])


def test_precision_examples():
    assert precision_at_k([[("d", True)] * 12]) == 100
    assert precision_at_k([[("d", False)] * 12]) == 0
    five = [("a", True), ("b", True), ("c", False), ("d", False), ("e", False)]
    assert precision_at_k([five]) == 40.0
    with pytest.raises(DataError):
        precision_at_k([[]])
    with pytest.raises(ParameterError):
        precision_at_k([five], k=0)


def test_rank_by_score_is_stable():
    assert rank_by_score(["a", "b", "c"], [1.0, 2.0, 1.0], [True, False, False]) == [
        ("b", False), ("a", True), ("c", False)]


def test_kfold_examples():
    folds = fold_indices(103, 5, seed=0)
    assert sorted(len(f) for f in folds) == [20, 20, 21, 21, 21]
    assert sorted(np.concatenate(folds).tolist()) == list(range(103))
    mean, std, _ = kfold_eval(list(range(30)), 5, lambda train: None, lambda model, test: 7.5, seed=1)
    assert (mean, std) == (7.5, 0.0)
    with pytest.raises(ParameterError):
        fold_indices(3, 5, 0)


def test_kfold_uses_population_std():
    scores = iter([1.0, 3.0])
    mean, std, per_fold = kfold_eval(list(range(10)), 2, lambda train: None, lambda m, test: next(scores), seed=0)
    assert (mean, std, per_fold) == (2.0, 1.0, [1.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=15, unique=True), st.integers(0, 2**31 - 1))
def test_spearman_monotone_invariance(x, seed):
    y = np.random.default_rng(seed).standard_normal(len(x))
    x = np.array(x) / 100.0
    assert spearman(np.exp(x / 5) * 3 + 1, y) == pytest.approx(spearman(x, y), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_costra_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    a, c, f = (rng.standard_normal((40, 5)) for _ in range(3))
    cats = ["time", "style", "generalization", "opposite"] * 10
    assert costra_accuracy(a, c, f, cats) == costra_accuracy(a * scale, c * scale, f * scale, cats)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_precision_ignores_order_below_k(seed, k):
    rng = np.random.default_rng(seed)
    cands = [(i, bool(rng.random() < 0.4)) for i in range(20)]
    tail = [cands[k + j] for j in rng.permutation(20 - k)]
    assert precision_at_k([cands], k) == precision_at_k([cands[:k] + tail], k)
    scores = rng.standard_normal(20)
    rel = [c[1] for c in cands]
    assert precision_at_k([rank_by_score(list(range(20)), scores, rel)], k) == \
        precision_at_k([rank_by_score(list(range(20)), 2 * scores + 7, rel)], k)
