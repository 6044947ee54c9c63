"""Shared fixtures-by-function for the test suite: gradient cases and brute-force oracles."""

from __future__ import annotations

import math

import numpy as np

from embedkit import tensor as T
from embedkit.encoder import EncoderConfig, EncoderModel, Pooling, init_params, param_shapes, pool
from embedkit.objectives import (
    ProjectionHead,
    ShallowDecoder,
    distill_loss,
    listnet_loss,
    mlm_loss,
    retromae_loss,
    simcse_loss,
)
from embedkit.tokenizer import CLS_ID, PAD_ID, SEP_ID

# acceptance lines collected for the terminal summary (see conftest.py)
ACCEPTANCE = []


def record(number, ok, detail):
    line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


# ---------------------------------------------------------------- gradients

def leaf(rng, shape, scale=1.0, shift=0.0):
    data = (rng.standard_normal(shape) * scale + shift).astype(np.float32)
    return T.Tensor(data, requires_grad=True)


def spaced(rng, shape):
    """Values with pairwise gaps far above the finite-difference step (no argmax flips)."""
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.05 + rng.uniform(-0.01, 0.01, n)
    return T.Tensor((vals - vals.mean()).reshape(shape).astype(np.float32), requires_grad=True)


def projected(out, rng):
    """Scalar sum(out * w) with a fixed random w, so every output element matters."""
    w = rng.standard_normal(out.shape).astype(np.float32)
    return T.sum_(out * w)


def _unary(op, positive=False):
    def make(rng):
        x = leaf(rng, (3, 4)) if not positive else T.Tensor(
            (np.abs(rng.standard_normal((3, 4))) + 0.5).astype(np.float32), requires_grad=True)
        w = rng.standard_normal((3, 4)).astype(np.float32)
        return (lambda: T.sum_(op(x) * w)), [x]
    return make


def _binary(op, positive_b=False):
    def make(rng):
        a = leaf(rng, (3, 4))
        b = leaf(rng, (1, 4)) if not positive_b else T.Tensor(
            (np.abs(rng.standard_normal((1, 4))) + 0.5).astype(np.float32), requires_grad=True)
        w = rng.standard_normal((3, 4)).astype(np.float32)
        return (lambda: T.sum_(op(a, b) * w)), [a, b]
    return make


def _make_matmul(rng):
    a, b = leaf(rng, (3, 4)), leaf(rng, (4, 2))
    w = rng.standard_normal((3, 2)).astype(np.float32)
    return (lambda: T.sum_(T.matmul(a, b) * w)), [a, b]


def _make_batched_matmul(rng):
    a, b = leaf(rng, (2, 3, 4)), leaf(rng, (2, 4, 3))
    w = rng.standard_normal((2, 3, 3)).astype(np.float32)
    return (lambda: T.sum_(T.matmul(a, b) * w)), [a, b]


def _make_linear(rng):
    x, wt, bias = leaf(rng, (3, 4)), leaf(rng, (4, 5)), leaf(rng, (5,))
    w = rng.standard_normal((3, 5)).astype(np.float32)
    return (lambda: T.sum_(T.linear(x, wt, bias) * w)), [x, wt, bias]


def _make_layer_norm(rng):
    x, g, b = leaf(rng, (2, 4)), leaf(rng, (4,), 0.5, 1.0), leaf(rng, (4,))
    w = rng.standard_normal((2, 4)).astype(np.float32)
    return (lambda: T.sum_(T.layer_norm(x, g, b, eps=1e-5) * w)), [x, g, b]


def _make_softmax(rng):
    x = leaf(rng, (3, 5))
    w = rng.standard_normal((3, 5)).astype(np.float32)
    return (lambda: T.sum_(T.softmax(x, axis=-1) * w)), [x]


def _make_log_softmax(rng):
    x = leaf(rng, (3, 5))
    w = rng.standard_normal((3, 5)).astype(np.float32)
    return (lambda: T.sum_(T.log_softmax(x, axis=-1) * w)), [x]


def _make_cross_entropy(rng):
    x = leaf(rng, (4, 6))
    targets = rng.integers(0, 6, size=4)
    return (lambda: T.cross_entropy(x, targets)), [x]


def _make_l2_normalize(rng):
    x = leaf(rng, (3, 4), 1.0, 0.3)
    w = rng.standard_normal((3, 4)).astype(np.float32)
    return (lambda: T.sum_(T.l2_normalize(x) * w)), [x]


def _make_sum(rng):
    x = leaf(rng, (3, 4))
    w = rng.standard_normal((3,)).astype(np.float32)
    return (lambda: T.sum_(T.sum_(x, axis=1) * w)), [x]


def _make_mean(rng):
    x = leaf(rng, (3, 4))
    w = rng.standard_normal((4,)).astype(np.float32)
    return (lambda: T.sum_(T.mean(x, axis=0) * w)), [x]


def _make_max(rng):
    x = spaced(rng, (3, 4))
    w = rng.standard_normal((3,)).astype(np.float32)
    return (lambda: T.sum_(T.max_(x, axis=1) * w)), [x]


def _make_reshape(rng):
    x = leaf(rng, (3, 4))
    w = rng.standard_normal((2, 6)).astype(np.float32)
    return (lambda: T.sum_(T.reshape(x, (2, 6)) * w)), [x]


def _make_transpose(rng):
    x = leaf(rng, (2, 3, 4))
    w = rng.standard_normal((4, 2, 3)).astype(np.float32)
    return (lambda: T.sum_(T.transpose(x, (2, 0, 1)) * w)), [x]


def _make_index(rng):
    x = leaf(rng, (5, 3))
    rows = np.array([4, 0, 4, 2])
    w = rng.standard_normal((4, 3)).astype(np.float32)
    return (lambda: T.sum_(T.index(x, rows) * w)), [x]


def _make_take_rows(rng):
    table = leaf(rng, (6, 3))
    ids = rng.integers(0, 6, size=(2, 4))
    w = rng.standard_normal((2, 4, 3)).astype(np.float32)
    return (lambda: T.sum_(T.take_rows(table, ids) * w)), [table]


def _make_concat(rng):
    a, b = leaf(rng, (2, 3)), leaf(rng, (2, 2))
    w = rng.standard_normal((2, 5)).astype(np.float32)
    return (lambda: T.sum_(T.concat([a, b], axis=1) * w)), [a, b]


def _make_dropout(rng):
    x = leaf(rng, (4, 5))
    seed = int(rng.integers(1 << 30))
    w = rng.standard_normal((4, 5)).astype(np.float32)
    return (lambda: T.sum_(T.dropout(x, 0.3, seed, training=True) * w)), [x]


def _make_power(rng):
    x = T.Tensor((np.abs(rng.standard_normal((3, 4))) + 0.5).astype(np.float32), requires_grad=True)
    w = rng.standard_normal((3, 4)).astype(np.float32)
    return (lambda: T.sum_(T.power(x, 1.5) * w)), [x]


def _pooled(kind):
    def make(rng):
        states = spaced(rng, (2, 4, 3)) if kind is Pooling.MAX else leaf(rng, (2, 4, 3))
        mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]])
        w = rng.standard_normal((2, 3)).astype(np.float32)
        return (lambda: T.sum_(pool(states, mask, kind) * w)), [states]
    return make


OP_CASES = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_b=True),
    "neg": _unary(T.neg),
    "power": _make_power,
    "exp": _unary(T.exp),
    "log": _unary(T.log, positive=True),
    "sqrt": _unary(T.sqrt, positive=True),
    "tanh": _unary(T.tanh),
    "sigmoid": _unary(T.sigmoid),
    "softplus": _unary(T.softplus),
    "gelu": _unary(T.gelu),
    "sum": _make_sum,
    "mean": _make_mean,
    "max": _make_max,
    "reshape": _make_reshape,
    "transpose": _make_transpose,
    "index": _make_index,
    "take_rows": _make_take_rows,
    "concat": _make_concat,
    "matmul": _make_matmul,
    "batched_matmul": _make_batched_matmul,
    "linear": _make_linear,
    "layer_norm": _make_layer_norm,
    "softmax": _make_softmax,
    "log_softmax": _make_log_softmax,
    "cross_entropy": _make_cross_entropy,
    "l2_normalize": _make_l2_normalize,
    "dropout": _make_dropout,
    "pool_cls": _pooled(Pooling.CLS),
    "pool_mean": _pooled(Pooling.MEAN),
    "pool_max": _pooled(Pooling.MAX),
}

TINY = EncoderConfig(layers=1, hidden=8, heads=2, ffn_mult=2, max_len=8, vocab_size=20, dropout_p=0.1)


GRAD_STD = 0.3


def tiny_model(rng):
    """Tiny encoder with O(0.1) weights.

    At the 0.02 init scale layer norm amplifies its inputs ~50x, so a 1e-3
    step is no longer small against the curvature; a wider scale keeps the
    check about gradients rather than about truncation error.
    """
    return EncoderModel(TINY, init_params(param_shapes(TINY), int(rng.integers(1 << 30)), std=GRAD_STD))


def tiny_batch(rng, rows=3, width=7, vocab=TINY.vocab_size):
    """Random (ids, mask) with [CLS] ... [SEP] and right padding."""
    ids = np.full((rows, width), PAD_ID, dtype=np.int64)
    mask = np.zeros((rows, width), dtype=np.int64)
    for r in range(rows):
        n = int(rng.integers(2, width - 1))
        ids[r, 0] = CLS_ID
        ids[r, 1:n + 1] = rng.integers(5, vocab, size=n)
        ids[r, n + 1] = SEP_ID
        mask[r, :n + 2] = 1
    return ids, mask


def _make_encoder(rng):
    model = tiny_model(rng)
    ids, mask = tiny_batch(rng)
    seed = int(rng.integers(1 << 30))
    w = rng.standard_normal((3, TINY.hidden)).astype(np.float32)
    fn = lambda: T.sum_(pool(model.forward(ids, mask, training=True, seed=seed), mask, Pooling.MEAN) * w)
    return fn, model.parameters()


def _make_mlm(rng):
    model = tiny_model(rng)
    ids, mask = tiny_batch(rng)
    seed = int(rng.integers(1 << 30))
    return (lambda: mlm_loss(model, ids, mask, ratio=0.3, seed=seed)), model.parameters()


def _make_retromae(rng):
    model = tiny_model(rng)
    decoder = ShallowDecoder.init(TINY, int(rng.integers(1 << 30)))
    ids, mask = tiny_batch(rng)
    seed = int(rng.integers(1 << 30))
    fn = lambda: retromae_loss(model, decoder, ids, mask, seed=seed)
    return fn, model.parameters() + decoder.parameters()


def _make_simcse(rng):
    model = tiny_model(rng)
    ids, mask = tiny_batch(rng, rows=4)
    s = int(rng.integers(1 << 30))
    return (lambda: simcse_loss(model, ids, mask, temperature=0.1, seeds=(s, s + 1))), model.parameters()


def _make_distill(rng):
    model = tiny_model(rng)
    head = ProjectionHead.init(TINY.hidden, 6, int(rng.integers(1 << 30)))
    src, tgt = tiny_batch(rng), tiny_batch(rng)
    teacher = rng.standard_normal((3, 6))
    teacher /= np.linalg.norm(teacher, axis=1, keepdims=True)
    seed = int(rng.integers(1 << 30))
    fn = lambda: distill_loss(model, head, teacher, src, tgt, seed=seed)
    return fn, model.parameters() + head.parameters()


def _make_listnet(rng):
    s = leaf(rng, (5, 5), 0.5)
    t = rng.standard_normal((5, 5)).astype(np.float32) * 0.5
    return (lambda: listnet_loss(s, t, tau_s=0.5, tau_t=0.7)), [s]


OBJECTIVE_CASES = {
    "encoder": _make_encoder,
    "mlm": _make_mlm,
    "retromae": _make_retromae,
    "simcse": _make_simcse,
    "distill": _make_distill,
    "listnet": _make_listnet,
}


# ------------------------------------------------------------ metric oracles

def brute_ranks(x):
    n = len(x)
    return [1 + sum(1 for j in range(n) if x[j] < x[i]) + 0.5 * (sum(1 for j in range(n) if x[j] == x[i]) - 1)
            for i in range(n)]


def brute_pearson(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def brute_spearman(x, y):
    return brute_pearson(brute_ranks(x), brute_ranks(y))


def brute_cos(u, v):
    dot = math.fsum(a * b for a, b in zip(u, v))
    nu = math.sqrt(math.fsum(a * a for a in u))
    nv = math.sqrt(math.fsum(b * b for b in v))
    return dot / (nu * nv) if nu > 0 and nv > 0 else 0.0


def brute_costra(rows, scored=("time", "style", "generalization", "opposite")):
    """rows: (anchor_vec, closer_vec, farther_vec, category)."""
    hits, totals = {}, {}
    for a, c, f, cat in rows:
        if cat not in scored:
            continue
        totals[cat] = totals.get(cat, 0) + 1
        hits[cat] = hits.get(cat, 0) + (1 if brute_cos(a, c) > brute_cos(a, f) else 0)
    per = {cat: 100.0 * hits[cat] / totals[cat] for cat in totals}
    return per, math.fsum(per.values()) / len(per)


def brute_f1(pred, gold, labels, mode):
    def f1(tp, fp, fn):
        return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)

    counts = {}
    for lab in labels:
        tp = sum(1 for p, g in zip(pred, gold) if lab in p and lab in g)
        fp = sum(1 for p, g in zip(pred, gold) if lab in p and lab not in g)
        fn = sum(1 for p, g in zip(pred, gold) if lab not in p and lab in g)
        counts[lab] = (tp, fp, fn)
    if mode == "micro":
        tp = sum(c[0] for c in counts.values())
        fp = sum(c[1] for c in counts.values())
        fn = sum(c[2] for c in counts.values())
        return 100.0 * f1(tp, fp, fn)
    return 100.0 * math.fsum(f1(*counts[lab]) for lab in labels) / len(labels)


def brute_p_at_k(queries, k):
    """queries: list of (scores, relevant); rank = #strictly better + #equal with lower index."""
    per = []
    for scores, rel in queries:
        n = len(scores)
        hits = 0
        for i in range(n):
            rank = sum(1 for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j < i))
            if rank < k and rel[i]:
                hits += 1
        per.append(hits / min(k, n))
    return 100.0 * math.fsum(per) / len(per)
