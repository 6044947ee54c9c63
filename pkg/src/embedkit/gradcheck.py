"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

import numpy as np

from .rng import generator
from .tensor import Tape


def combined_error(analytic, numeric):
    """``|a - n| / max(1, |a|, |n|)``: absolute error near zero, relative error elsewhere."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _evaluate(fn):
    return float(np.asarray(fn().data, dtype=np.float64))


def check_gradients(fn, params, h=1e-3, seed=0, coords=8, directions=2):
    """Compare tape gradients of scalar ``fn()`` against central differences.

    ``coords`` coordinates in total (each from a uniformly chosen parameter)
    are perturbed one at a time, then ``directions`` random unit directions
    over all parameters jointly.  Returns the largest :func:`combined_error`.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    rng = generator(seed, "gradcheck")
    worst = 0.0
    for _ in range(coords):
        which = int(rng.integers(len(params)))
        p, g = params[which], analytic[which]
        flat = p.data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + np.float32(h)
        up = _evaluate(fn)
        flat[i] = orig - np.float32(h)
        down = _evaluate(fn)
        flat[i] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, float(combined_error(g.reshape(-1)[i], numeric)))

    for _ in range(directions):
        vs = [rng.standard_normal(p.shape).astype(np.float32) for p in params]
        norm = np.sqrt(sum(float((v * v).sum()) for v in vs))
        vs = [v / np.float32(norm) for v in vs]
        origs = [p.data.copy() for p in params]
        for p, v, o in zip(params, vs, origs):
            p.data[...] = o + np.float32(h) * v
        up = _evaluate(fn)
        for p, v, o in zip(params, vs, origs):
            p.data[...] = o - np.float32(h) * v
        down = _evaluate(fn)
        for p, o in zip(params, origs):
            p.data[...] = o
        numeric = (up - down) / (2 * h)
        predicted = sum(float((g.astype(np.float64) * v).sum()) for g, v in zip(analytic, vs))
        worst = max(worst, float(combined_error(predicted, numeric)))
    return worst
