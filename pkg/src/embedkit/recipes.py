"""Training loops for each recipe: MLM, RetroMAE, SimCSE, distillation and fine-tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import Pooling, pool
from .errors import ContractError, NumericError, ParameterError
from .objectives import (
    ProjectionHead,
    ShallowDecoder,
    distill_loss,
    info_nce,
    mlm_loss,
    retromae_loss,
    simcse_loss,
)
from .optim import AdamW, Schedule
from .rng import derive_seed, generator

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    max_steps: int = None
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0

    def validate(self):
        if self.lr <= 0:
            raise ParameterError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ParameterError("max_steps must be >= 1")
        return self


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    skipped: int = 0

    @property
    def steps(self):
        return len(self.losses)

    def last(self, n=10):
        tail = self.losses[-n:]
        return float(np.mean(tail)) if tail else float("nan")


def epoch_batches(n, batch_size, epochs, seed, min_size=1):
    """Shuffled index batches for each epoch; a short final batch is kept if >= ``min_size``."""
    out = []
    for e in range(epochs):
        perm = generator(seed, "batches", e).permutation(n)
        for start in range(0, n, batch_size):
            chunk = perm[start:start + batch_size]
            if len(chunk) >= min_size:
                out.append(chunk)
    return out


def grouped_batches(keys, batch_size, epochs, seed):
    """Batches that keep each key's rows contiguous.

    Per epoch the key order and the order within each key are shuffled, the
    rows are laid end to end and cut into ``batch_size`` chunks.  Ranking
    batches built this way hold a query's irrelevant candidates next to its
    relevant ones, so the in-batch negatives are hard negatives.
    """
    keys = np.asarray(keys)
    uniq, inverse = np.unique(keys, return_inverse=True)
    members = [np.flatnonzero(inverse == u) for u in range(len(uniq))]
    out = []
    for e in range(epochs):
        rng = generator(seed, "grouped", e)
        order = np.concatenate([rng.permutation(members[u]) for u in rng.permutation(len(uniq))])
        out.extend(order[start:start + batch_size] for start in range(0, len(order), batch_size))
    return out


def decay_exempt(params):
    """Biases and layer-norm parameters skip weight decay."""
    return [p for name, p in params.items() if name.endswith((".bias", ".gamma", ".beta"))]


def train_loop(params, batches, loss_fn, settings, no_decay=()):
    """Run AdamW over ``batches``; ``loss_fn(batch, step_seed)`` returns a scalar Tensor or None.

    ``None`` marks a skipped batch.  A non-finite loss raises NumericError.
    """
    settings.validate()
    if settings.max_steps is not None:
        batches = batches[: settings.max_steps]
    if not batches:
        raise ParameterError("no training batches")
    schedule = Schedule(settings.lr, len(batches), settings.warmup_frac)
    opt = AdamW(params, lr=settings.lr, weight_decay=settings.weight_decay,
                clip_norm=settings.clip_norm, no_decay=no_decay)
    record = TrainLog()
    for step, batch in enumerate(batches):
        opt.zero_grad()
        with T.Tape() as tape:
            loss = loss_fn(batch, derive_seed(settings.seed, "step", step))
        if loss is None:
            record.skipped += 1
            continue
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step}")
        tape.backward(loss)
        lr = schedule(step + 1)
        opt.step(lr)
        record.losses.append(value)
        record.lrs.append(lr)
    for p in params:
        if not np.isfinite(p.data).all():
            raise NumericError("parameters became non-finite during training")
    return record


def _model_params(model, *extra):
    named = dict(model.params)
    for module in extra:
        named.update(module.params if hasattr(module, "params") else {})
    return named


def pretrain_mlm(model, ids, mask, settings, ratio=0.15):
    batches = epoch_batches(len(ids), settings.batch_size, settings.epochs, settings.seed)
    named = model.params

    def loss_fn(batch, seed):
        return mlm_loss(model, ids[batch], mask[batch], ratio=ratio, seed=seed)

    return train_loop(list(named.values()), batches, loss_fn, settings, decay_exempt(named))


def pretrain_retromae(model, ids, mask, settings, decoder=None, enc_ratio=0.30, dec_ratio=0.50):
    """Returns ``(log, decoder)``; the decoder is discarded after pre-training."""
    decoder = decoder or ShallowDecoder.init(model.cfg, derive_seed(settings.seed, "decoder"))
    batches = epoch_batches(len(ids), settings.batch_size, settings.epochs, settings.seed)
    named = _model_params(model, decoder)

    def loss_fn(batch, seed):
        return retromae_loss(model, decoder, ids[batch], mask[batch], enc_ratio, dec_ratio, seed=seed)

    return train_loop(list(named.values()), batches, loss_fn, settings, decay_exempt(named)), decoder


def finetune_simcse(model, ids, mask, settings, temperature=0.05, pooling=Pooling.CLS):
    batches = epoch_batches(len(ids), settings.batch_size, settings.epochs, settings.seed, min_size=2)
    named = model.params

    def loss_fn(batch, seed):
        return simcse_loss(model, ids[batch], mask[batch], temperature,
                           seeds=(derive_seed(seed, "view", 0), derive_seed(seed, "view", 1)),
                           pooling=pooling)

    return train_loop(list(named.values()), batches, loss_fn, settings, decay_exempt(named))


def train_distill(student, teacher, src, tgt, settings, head=None, pooling=Pooling.MEAN):
    """Fit student + projection so both sides of each parallel pair map to the teacher vector.

    ``teacher`` holds L2-normalised teacher embeddings of the source sentences
    (it stays frozen); ``src``/``tgt`` are ``(ids, mask)`` pairs.  Returns ``(log, head)``.
    """
    teacher = np.asarray(teacher, dtype=np.float32)
    head = head or ProjectionHead.init(student.cfg.hidden, teacher.shape[1],
                                       derive_seed(settings.seed, "head"))
    batches = epoch_batches(len(teacher), settings.batch_size, settings.epochs, settings.seed)
    named = dict(student.params)
    named["head.weight"] = head.weight

    def loss_fn(batch, seed):
        return distill_loss(student, head, teacher[batch], (src[0][batch], src[1][batch]),
                            (tgt[0][batch], tgt[1][batch]), pooling=pooling, seed=seed)

    return train_loop(list(named.values()), batches, loss_fn, settings, decay_exempt(named)), head


def ranking_loss(model, q_ids, q_mask, d_ids, d_mask, positive, same_query, temperature=0.05,
                 pooling=Pooling.CLS, seed=0):
    """In-batch InfoNCE over a batch of (query, doc) pairs.

    Every pair with ``positive[i]`` contributes one row: its query against all
    docs in the batch, target = its own doc.  Other relevant docs of the same
    query are masked out rather than treated as negatives.  Returns None when
    the batch holds no positive pair.
    """
    rows = np.flatnonzero(positive)
    if len(rows) == 0:
        return None
    zq = pool(model.forward(q_ids[rows], q_mask[rows], training=True, seed=derive_seed(seed, "q")),
              q_mask[rows], pooling)
    zd = pool(model.forward(d_ids, d_mask, training=True, seed=derive_seed(seed, "d")), d_mask, pooling)
    sims = T.matmul(T.l2_normalize(zq), T.transpose(T.l2_normalize(zd))) * np.float32(1.0 / temperature)
    bias = np.zeros((len(rows), len(d_ids)), dtype=np.float32)
    for r, i in enumerate(rows):
        clash = same_query[i] & positive
        clash[i] = False
        bias[r, clash] = -1e9
    return T.cross_entropy(sims + bias, rows)


def cosine_mse_ranking_loss(model, q_ids, q_mask, d_ids, d_mask, labels, pooling=Pooling.CLS, seed=0):
    """Mean squared error between cos(query, doc) and the graded relevance label."""
    zq = pool(model.forward(q_ids, q_mask, training=True, seed=derive_seed(seed, "q")), q_mask, pooling)
    zd = pool(model.forward(d_ids, d_mask, training=True, seed=derive_seed(seed, "d")), d_mask, pooling)
    cos = (T.l2_normalize(zq) * T.l2_normalize(zd)).sum(axis=-1)
    diff = cos - np.asarray(labels, dtype=np.float32)
    return T.mean(diff * diff)


RANKING_LOSSES = ("infonce", "mse")


def finetune_ranking(model, q_ids, q_mask, d_ids, d_mask, labels, query_keys, settings,
                     temperature=0.05, pooling=Pooling.CLS, loss="infonce"):
    """Bi-encoder fine-tuning on labelled (query, doc) pairs; no head is attached.

    ``loss="infonce"`` treats labels above 0.5 as positives for in-batch
    InfoNCE; ``loss="mse"`` regresses cosine similarity onto the graded labels.
    """
    if loss not in RANKING_LOSSES:
        raise ParameterError(f"ranking loss must be one of {RANKING_LOSSES}, got {loss!r}")
    labels = np.asarray(labels, dtype=np.float32)
    relevant = labels > 0.5
    query_keys = np.asarray(query_keys)
    batches = grouped_batches(query_keys, settings.batch_size, settings.epochs, settings.seed)
    named = model.params

    def loss_fn(batch, seed):
        if loss == "mse":
            return cosine_mse_ranking_loss(model, q_ids[batch], q_mask[batch], d_ids[batch], d_mask[batch],
                                           labels[batch], pooling, seed)
        keys = query_keys[batch]
        same = keys[:, None] == keys[None, :]
        return ranking_loss(model, q_ids[batch], q_mask[batch], d_ids[batch], d_mask[batch],
                            relevant[batch], same, temperature, pooling, seed)

    return train_loop(list(named.values()), batches, loss_fn, settings, decay_exempt(named))


class LinearHead:
    """Dense layer over sentence vectors; sigmoid (multilabel) or softmax (multiclass) outputs."""

    def __init__(self, weight, bias, multilabel):
        self.weight = weight
        self.bias = bias
        self.multilabel = multilabel

    @classmethod
    def init(cls, dim, n_labels, multilabel, seed):
        rng = generator(seed, "linear-head")
        w = (rng.standard_normal((dim, n_labels)) * (1.0 / np.sqrt(dim))).astype(np.float32)
        return cls(T.Tensor(w, requires_grad=True, name="clf.weight"),
                   T.Tensor(np.zeros(n_labels, np.float32), requires_grad=True, name="clf.bias"),
                   multilabel)

    @property
    def params(self):
        return {"clf.weight": self.weight, "clf.bias": self.bias}

    def logits(self, z):
        return T.linear(z, self.weight, self.bias)

    def loss(self, z, targets):
        logits = self.logits(z)
        if self.multilabel:
            return binary_cross_entropy(logits, targets)
        return T.cross_entropy(logits, np.asarray(targets))

    def predict(self, z):
        logits = self.logits(T.as_tensor(np.asarray(z, dtype=np.float32))).data
        if self.multilabel:
            return logits > 0.0  # sigmoid(x) > 0.5
        return np.argmax(logits, axis=1)


def binary_cross_entropy(logits, targets):
    """Mean sigmoid cross-entropy, ``softplus(x) - y * x``."""
    targets = np.asarray(targets, dtype=np.float32)
    x = T.as_tensor(logits)
    return T.mean(T.softplus(x) - x * targets)


def train_head(head, features, targets, settings):
    """Fit only ``head`` on frozen feature vectors."""
    features = np.asarray(features, dtype=np.float32)
    targets = np.asarray(targets)
    batches = epoch_batches(len(features), settings.batch_size, settings.epochs, settings.seed)

    def loss_fn(batch, seed):
        return head.loss(T.Tensor(features[batch]), targets[batch])

    return train_loop(list(head.params.values()), batches, loss_fn, settings, [head.bias])


def finetune_classification(model, head, ids, mask, targets, settings, pooling=Pooling.CLS):
    """Train encoder and head jointly."""
    targets = np.asarray(targets)
    if len(targets) != len(ids):
        raise ContractError("targets and inputs differ in length")
    batches = epoch_batches(len(ids), settings.batch_size, settings.epochs, settings.seed)
    named = dict(model.params)
    named.update(head.params)

    def loss_fn(batch, seed):
        z = pool(model.forward(ids[batch], mask[batch], training=True, seed=seed), mask[batch], pooling)
        return head.loss(z, targets[batch])

    return train_loop(list(named.values()), batches, loss_fn, settings, decay_exempt(named))


def mean_pairwise_cosine(emb):
    """Average cosine over distinct pairs (i != j)."""
    emb = np.asarray(emb, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = emb / np.where(norms > 0, norms, 1.0)
    sims = unit @ unit.T
    n = len(emb)
    if n < 2:
        raise ParameterError("need at least two embeddings")
    return float((sims.sum() - np.trace(sims)) / (n * (n - 1)))


def info_nce_from_arrays(z, z_pos, temperature=0.05):
    """Convenience wrapper for evaluating the contrastive loss on plain arrays."""
    return float(info_nce(T.Tensor(np.asarray(z, np.float32)), T.Tensor(np.asarray(z_pos, np.float32)),
                          temperature).data)
