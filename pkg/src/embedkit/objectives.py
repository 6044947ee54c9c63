"""Training objectives for sentence encoders.

All losses are built from :mod:`embedkit.tensor` ops, so calling them inside
a :class:`~embedkit.tensor.Tape` makes them differentiable with respect to
every parameter they touch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import (
    Pooling,
    TransformerBlock,
    attention_bias,
    block_param_shapes,
    init_params,
    pool,
)
from .errors import ContractError, DataError, DimensionError, ParameterError
from .rng import derive_seed, generator
from .tokenizer import CLS_ID, MASK_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS

MASK_PROB, RANDOM_PROB = 0.8, 0.1  # remaining 10% keep the original token


@dataclass
class MaskingPlan:
    """Which positions to predict and what the model sees in their place.

    ``positions`` is a boolean (B, T) array; ``ids`` holds the corrupted input
    and ``targets`` the original ids.
    """

    positions: np.ndarray
    ids: np.ndarray
    targets: np.ndarray
    ratio: float

    @property
    def count(self):
        return int(self.positions.sum())

    @classmethod
    def empty(cls, ids):
        ids = np.asarray(ids)
        return cls(np.zeros(ids.shape, dtype=bool), ids.copy(), ids.copy(), 0.0)


def maskable(ids, mask):
    ids = np.asarray(ids)
    special = (ids == PAD_ID) | (ids == CLS_ID) | (ids == SEP_ID)
    return (np.asarray(mask) > 0) & ~special


def make_masking_plan(ids, mask, ratio, seed, vocab_size):
    """Mask ``round(ratio * n)`` (at least one) real tokens per sequence.

    Chosen positions become [MASK] 80% of the time, a random non-special token
    10% of the time, and stay unchanged otherwise.
    """
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"masking ratio must lie in (0, 1), got {ratio}")
    ids = np.asarray(ids)
    candidates = maskable(ids, mask)
    positions = np.zeros(ids.shape, dtype=bool)
    corrupted = ids.copy()
    n_special = len(SPECIAL_TOKENS)
    for row in range(ids.shape[0]):
        cand = np.flatnonzero(candidates[row])
        if cand.size == 0:
            continue
        rng = generator(seed, "mask", row)
        k = max(1, int(np.floor(ratio * cand.size + 0.5)))
        chosen = np.sort(rng.permutation(cand)[:k])
        positions[row, chosen] = True
        u = rng.random(k)
        random_ids = rng.integers(n_special, vocab_size, size=k)
        corrupted[row, chosen] = np.where(
            u < MASK_PROB, MASK_ID, np.where(u < MASK_PROB + RANDOM_PROB, random_ids, ids[row, chosen])
        )
    return MaskingPlan(positions, corrupted, ids.copy(), ratio)


def tied_lm_loss(states, plan, token_emb):
    """Mean cross-entropy at the plan's positions; logits = states @ token_emb.T."""
    if plan.count == 0:
        return T.Tensor(0.0)
    b, t, h = states.shape
    flat = np.flatnonzero(plan.positions.reshape(-1))
    picked = T.index(T.reshape(states, (b * t, h)), flat)
    logits = T.matmul(picked, T.transpose(token_emb))
    return T.cross_entropy(logits, plan.targets.reshape(-1)[flat])


def _check_batch(ids, mask):
    if not maskable(ids, mask).any():
        raise DataError("batch has no maskable tokens")


def mlm_loss(model, ids, mask, ratio=0.15, seed=0, plan=None, training=True):
    _check_batch(ids, mask)
    if plan is None:
        plan = make_masking_plan(ids, mask, ratio, derive_seed(seed, "plan"), model.cfg.vocab_size)
    states = model.forward(plan.ids, mask, training=training, seed=derive_seed(seed, "fwd"))
    return tied_lm_loss(states, plan, model.token_emb)


class ShallowDecoder:
    """One transformer block whose output logits are tied to the encoder's token table."""

    layers = 1

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params
        self.block = TransformerBlock(params, "decoder.", cfg)

    @classmethod
    def init(cls, cfg, seed):
        return cls(cfg, init_params(block_param_shapes(cfg, "decoder."), derive_seed(seed, "decoder")))

    def parameters(self):
        return list(self.params.values())

    def __call__(self, x, mask, training=False, seed=0):
        x = T.dropout(x, self.cfg.dropout_p, derive_seed(seed, "emb"), training)
        return self.block(x, attention_bias(mask), training, derive_seed(seed, "block"))


def retromae_loss(model, decoder, ids, mask, enc_ratio=0.30, dec_ratio=0.50, seed=0,
                  training=True, enc_plan=None, dec_plan=None, inject_cls=True):
    """Encoder MLM loss plus shallow-decoder reconstruction through the CLS vector.

    The encoder reads a lightly masked copy of the batch.  The decoder reads a
    heavily masked copy whose position-0 input is replaced by the encoder's
    final CLS state (plus the position-0 embedding), and predicts the tokens
    masked in its own copy.
    """
    if not enc_ratio < dec_ratio:
        raise ParameterError(f"encoder ratio {enc_ratio} must be below decoder ratio {dec_ratio}")
    _check_batch(ids, mask)
    ids = np.asarray(ids)
    vocab_size = model.cfg.vocab_size
    if enc_plan is None:
        enc_plan = make_masking_plan(ids, mask, enc_ratio, derive_seed(seed, "enc-plan"), vocab_size)
    if dec_plan is None:
        dec_plan = make_masking_plan(ids, mask, dec_ratio, derive_seed(seed, "dec-plan"), vocab_size)

    states = model.forward(enc_plan.ids, mask, training=training, seed=derive_seed(seed, "enc"))
    enc_term = tied_lm_loss(states, enc_plan, model.token_emb)
    if dec_plan.count == 0:
        return enc_term

    b, t, h = states.shape
    cls = states[:, 0:1, :]
    if not inject_cls:
        cls = T.Tensor(np.zeros((b, 1, h), dtype=np.float32))
    first = cls + T.take_rows(model.pos_emb, np.zeros(1, dtype=np.int64))
    rest = model.embed_tokens(dec_plan.ids[:, 1:], offset=1)
    dec_in = T.concat([first, rest], axis=1)
    dec_states = decoder(dec_in, mask, training=training, seed=derive_seed(seed, "dec"))
    dec_term = tied_lm_loss(dec_states, dec_plan, model.token_emb)
    return enc_term + dec_term


def info_nce(z, z_pos, temperature=0.05):
    """In-batch contrastive loss: row i of ``z`` should match row i of ``z_pos``."""
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    n = z.shape[0]
    if n < 2:
        raise ParameterError("contrastive loss needs at least two rows (one negative)")
    sims = T.matmul(T.l2_normalize(z), T.transpose(T.l2_normalize(z_pos)))
    return T.cross_entropy(sims * np.float32(1.0 / temperature), np.arange(n))


def simcse_loss(model, ids, mask, temperature=0.05, seeds=(0, 1), pooling=Pooling.CLS):
    """Unsupervised SimCSE: two dropout-noised encodings of each sentence form a positive pair."""
    if len(ids) < 2:
        raise ParameterError("SimCSE needs a batch of at least two sentences")
    z1 = pool(model.forward(ids, mask, training=True, seed=seeds[0]), mask, pooling)
    z2 = pool(model.forward(ids, mask, training=True, seed=seeds[1]), mask, pooling)
    return info_nce(z1, z2, temperature)


class ProjectionHead:
    """Linear map from student width to teacher width, used only while distilling."""

    def __init__(self, weight):
        self.weight = weight if isinstance(weight, T.Tensor) else T.Tensor(weight, requires_grad=True)
        self.present = True

    @classmethod
    def init(cls, student_dim, teacher_dim, seed):
        rng = generator(seed, "projection")
        scale = 1.0 / np.sqrt(student_dim)
        w = (rng.standard_normal((student_dim, teacher_dim)) * scale).astype(np.float32)
        return cls(T.Tensor(w, requires_grad=True, name="head.weight"))

    def parameters(self):
        return [self.weight]

    def __call__(self, z):
        if z.shape[-1] != self.weight.shape[0]:
            raise ContractError(f"head expects width {self.weight.shape[0]}, got {z.shape[-1]}")
        return T.matmul(z, self.weight)


def _normalized_teacher(teacher):
    teacher = np.asarray(teacher, dtype=np.float32)
    norms = np.linalg.norm(teacher, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-3):
        raise ContractError("teacher embeddings must be L2-normalised row-wise")
    return teacher


def regression_to_teacher(z, head, teacher):
    """Mean over rows of ||normalize(head(z)) - teacher||^2 (= 2 - 2 cos)."""
    projected = T.l2_normalize(head(z))
    if projected.shape != teacher.shape:
        raise ContractError(f"projected shape {projected.shape} != teacher shape {teacher.shape}")
    diff = projected - teacher
    return T.mean(T.sum_(diff * diff, axis=1))


def distill_loss(student, head, teacher_embs, src, tgt, pooling=Pooling.MEAN, training=True, seed=0):
    """Both language sides regress onto the same normalised teacher vectors.

    ``src`` and ``tgt`` are ``(ids, mask)`` pairs with one row per teacher row.
    """
    teacher = _normalized_teacher(teacher_embs)
    if not len(src[0]) == len(tgt[0]) == teacher.shape[0]:
        raise ContractError("src, tgt and teacher must have the same number of rows")
    if head.weight.shape[1] != teacher.shape[1]:
        raise ContractError(
            f"projection width {head.weight.shape[1]} does not match teacher dim {teacher.shape[1]}"
        )
    total = None
    for side, (ids, mask) in (("src", src), ("tgt", tgt)):
        states = student.forward(ids, mask, training=training, seed=derive_seed(seed, side))
        term = regression_to_teacher(pool(states, mask, pooling), head, teacher)
        total = term if total is None else total + term
    return total


def _off_diagonal(x):
    n = x.shape[0]
    flat = np.array([i * n + j for i in range(n) for j in range(n) if i != j], dtype=np.int64)
    return T.reshape(T.index(T.reshape(x, (n * n,)), flat), (n, n - 1))


def listnet_loss(student_sims, teacher_sims, tau_s=0.05, tau_t=0.05):
    """Row-wise cross-entropy between teacher and student similarity distributions.

    Diagonal entries are excluded, so each row is a distribution over the
    other N-1 items.
    """
    s, t = T.as_tensor(student_sims), T.as_tensor(teacher_sims)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape != t.shape:
        raise DimensionError(f"listnet needs equal square matrices, got {s.shape} and {t.shape}")
    if s.shape[0] < 2:
        raise ParameterError("listnet needs at least two items")
    if tau_s <= 0 or tau_t <= 0:
        raise ParameterError("temperatures must be positive")
    p_teacher = T.softmax(_off_diagonal(t) * np.float32(1.0 / tau_t), axis=1)
    log_student = T.log_softmax(_off_diagonal(s) * np.float32(1.0 / tau_s), axis=1)
    return -T.mean(T.sum_(p_teacher * log_student, axis=1))


def rankcse_loss(model, ids, mask, teacher_sims, temperature=0.05, seeds=(0, 1),
                 tau_s=0.05, tau_t=0.05, listnet_weight=1.0, pooling=Pooling.CLS):
    """SimCSE loss plus ListNet ranking distillation from a teacher's similarity matrix."""
    if len(ids) < 2:
        raise ParameterError("RankCSE needs a batch of at least two sentences")
    z1 = pool(model.forward(ids, mask, training=True, seed=seeds[0]), mask, pooling)
    z2 = pool(model.forward(ids, mask, training=True, seed=seeds[1]), mask, pooling)
    contrastive = info_nce(z1, z2, temperature)
    sims = T.matmul(T.l2_normalize(z1), T.transpose(T.l2_normalize(z2)))
    return contrastive + listnet_loss(sims, teacher_sims, tau_s, tau_t) * np.float32(listnet_weight)
