"""Scoring functions for the evaluation suite.

Every public scorer returns a percentage-point value (0-100, or -100..100 for
correlations), matching how results tables are usually reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .rng import generator

COSTRA_SCORED = ("time", "style", "generalization", "opposite")
COSTRA_KNOWN = COSTRA_SCORED + ("basic", "modality")


@dataclass
class MetricReport:
    name: str
    value: float
    stddev: float = None
    n: int = 0
    seed: int = None
    dataset: str = None
    split: str = None
    fingerprint: str = None

    def as_dict(self):
        return {
            "name": self.name,
            "value": self.value,
            "stddev": self.stddev,
            "n": self.n,
            "seed": self.seed,
            "dataset": self.dataset,
            "split": self.split,
            "fingerprint": self.fingerprint,
        }


def average_ranks(x):
    """Fractional ranks starting at 1; tied values share the mean of their ranks."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    start = 0
    n = len(x)
    while start < n:
        end = start
        while end + 1 < n and sorted_x[end + 1] == sorted_x[start]:
            end += 1
        ranks[order[start:end + 1]] = (start + end) / 2.0 + 1.0
        start = end + 1
    return ranks


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        raise DataError("correlation undefined for a constant input")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


def spearman(x, y):
    """Spearman rank correlation in [-1, 1] (Pearson correlation of average ranks)."""
    if len(x) != len(y):
        raise ParameterError("spearman inputs differ in length")
    if len(x) < 2:
        raise ParameterError("spearman needs at least two points")
    return pearson(average_ranks(x), average_ranks(y))


def cosine_rows(a, b):
    """Row-wise cosine between matching rows of ``a`` and ``b`` (zero rows give 0)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = (a * b).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)


def costra_accuracy(anchor, closer, farther, categories):
    """Per-category accuracy and the macro average over the scored categories.

    A triplet counts as correct only when cos(anchor, closer) is strictly
    greater than cos(anchor, farther).  Categories outside
    :data:`COSTRA_SCORED` (but known) are parsed and ignored.
    """
    categories = list(categories)
    unknown = sorted(set(categories) - set(COSTRA_KNOWN))
    if unknown:
        raise DataError(f"unknown Costra categories: {unknown}")
    correct = cosine_rows(anchor, closer) > cosine_rows(anchor, farther)
    cats = np.array(categories, dtype=object)
    per_category = {}
    for cat in COSTRA_SCORED:
        sel = cats == cat
        if sel.any():
            per_category[cat] = 100.0 * float(correct[sel].mean())
    if not per_category:
        raise DataError("no triplets in the scored Costra categories")
    macro = float(np.mean(list(per_category.values())))
    return per_category, macro


def costra_score(triplets, embed):
    """Score :class:`~embedkit.data.CostraTriplet` records with an ``embed(texts)`` callable."""
    triplets = list(triplets)
    anchor = embed([t.anchor for t in triplets])
    closer = embed([t.closer for t in triplets])
    farther = embed([t.farther for t in triplets])
    return costra_accuracy(anchor, closer, farther, [t.category for t in triplets])


def f1_scores(pred, gold, mode="micro", labels=None):
    """Micro- or macro-averaged F1 over label sets, in percent.

    Macro averaging is over ``labels`` (default: every label seen in pred or
    gold); a class with no true positives, false positives or false negatives
    contributes F1 = 0.
    """
    pred = [set(p) for p in pred]
    gold = [set(g) for g in gold]
    if len(pred) != len(gold):
        raise ParameterError("pred and gold differ in length")
    if mode not in ("micro", "macro"):
        raise ParameterError(f"unknown F1 mode {mode!r}")
    if labels is None:
        labels = sorted(set().union(*pred, *gold)) if pred else []
    labels = list(labels)
    tp = dict.fromkeys(labels, 0)
    fp = dict.fromkeys(labels, 0)
    fn = dict.fromkeys(labels, 0)
    for p, g in zip(pred, gold):
        for lab in p | g:
            if lab not in tp:
                raise DataError(f"label {lab!r} outside the label universe")
        for lab in p & g:
            tp[lab] += 1
        for lab in p - g:
            fp[lab] += 1
        for lab in g - p:
            fn[lab] += 1

    def f1(t, f_p, f_n):
        denom = 2 * t + f_p + f_n
        return 2 * t / denom if denom else 0.0

    if mode == "micro":
        return 100.0 * f1(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    if not labels:
        return 0.0
    return 100.0 * float(np.mean([f1(tp[lab], fp[lab], fn[lab]) for lab in labels]))


def precision_at_k(ranked, k=10):
    """Mean over queries of |relevant in top k| / min(k, #candidates), in percent.

    ``ranked`` holds one list per query of ``(doc, relevant)`` pairs in ranked
    order (best first).
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    ranked = list(ranked)
    if not ranked:
        raise DataError("precision_at_k needs at least one query")
    scores = []
    for qi, cands in enumerate(ranked):
        cands = list(cands)
        if not cands:
            raise DataError(f"query {qi} has no candidate documents")
        top = cands[:k]
        scores.append(sum(1 for _, rel in top if rel) / min(k, len(cands)))
    return 100.0 * float(np.mean(scores))


def rank_by_score(docs, scores, relevant):
    """Sort candidates by descending score (stable for ties) into ``(doc, relevant)`` pairs."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    return [(docs[i], bool(relevant[i])) for i in order]


def fold_indices(n, k, seed):
    """Deterministic shuffled k-fold split; fold sizes differ by at most one."""
    if k < 2:
        raise ParameterError("k must be >= 2")
    if k > n:
        raise ParameterError(f"cannot split {n} records into {k} folds")
    perm = generator(seed, "kfold").permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def kfold_eval(records, k, trainer, scorer, seed=0):
    """Train on k-1 folds, score the held-out fold; return (mean, population std, scores).

    ``trainer(train_records)`` returns a model; ``scorer(model, test_records)``
    returns a float.
    """
    records = list(records)
    folds = fold_indices(len(records), k, seed)
    scores = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = trainer([records[j] for j in train_idx])
        scores.append(float(scorer(model, [records[j] for j in test_idx])))
    return float(np.mean(scores)), float(np.std(scores)), scores
