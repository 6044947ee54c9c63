"""BERT-style transformer encoder built on :mod:`embedkit.tensor`."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, ParameterError
from .rng import derive_seed, generator
from .tokenizer import encode_batch


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    ffn_mult: int = 4
    max_len: int = 64
    vocab_size: int = 2000
    dropout_p: float = 0.1
    pre_norm: bool = False
    ln_eps: float = 1e-12

    def validate(self):
        if self.layers < 1:
            raise ParameterError("layers must be >= 1")
        if self.hidden < 1 or self.heads < 1 or self.hidden % self.heads:
            raise ParameterError(f"hidden ({self.hidden}) must be a positive multiple of heads ({self.heads})")
        if self.max_len < 3:
            raise ParameterError("max_len must be >= 3")
        if self.vocab_size < 6:
            raise ParameterError("vocab_size must exceed the 5 special tokens")
        if self.ffn_mult < 1:
            raise ParameterError("ffn_mult must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError("dropout_p must lie in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


# full-scale architecture; 12 x 256 with a 57k vocabulary
PAPER_SMALL = EncoderConfig(layers=12, hidden=256, heads=4, max_len=512, vocab_size=57226)
DESK_DEFAULT = EncoderConfig()


class Pooling(str, enum.Enum):
    CLS = "cls"
    MEAN = "mean"
    MAX = "max"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown pooling {value!r}; expected cls, mean or max") from None


def block_param_shapes(cfg, prefix):
    h, f = cfg.hidden, cfg.hidden * cfg.ffn_mult
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes[f"{prefix}attn.{proj}.weight"] = (h, h)
        shapes[f"{prefix}attn.{proj}.bias"] = (h,)
    shapes[f"{prefix}ln1.gamma"] = (h,)
    shapes[f"{prefix}ln1.beta"] = (h,)
    shapes[f"{prefix}ffn.in.weight"] = (h, f)
    shapes[f"{prefix}ffn.in.bias"] = (f,)
    shapes[f"{prefix}ffn.out.weight"] = (f, h)
    shapes[f"{prefix}ffn.out.bias"] = (h,)
    shapes[f"{prefix}ln2.gamma"] = (h,)
    shapes[f"{prefix}ln2.beta"] = (h,)
    return shapes


def param_shapes(cfg):
    shapes = {
        "token_emb": (cfg.vocab_size, cfg.hidden),
        "pos_emb": (cfg.max_len, cfg.hidden),
    }
    for i in range(cfg.layers):
        shapes.update(block_param_shapes(cfg, f"blocks.{i}."))
    return shapes


def param_count(cfg):
    """Closed-form parameter count for ``cfg``."""
    h, f = cfg.hidden, cfg.hidden * cfg.ffn_mult
    per_block = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h
    return cfg.vocab_size * h + cfg.max_len * h + cfg.layers * per_block


def truncated_normal(rng, shape, std=0.02, bound=2.0):
    """Normal(0, std) samples redrawn until they fall inside ``bound`` sigmas."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(np.float32)


def init_params(shapes, seed, std=0.02):
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias") or name.endswith(".beta"):
            arr = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".gamma"):
            arr = np.ones(shape, dtype=np.float32)
        else:
            arr = truncated_normal(generator(seed, "init", name), shape, std)
        params[name] = T.Tensor(arr, requires_grad=True, name=name)
    return params


class TransformerBlock:
    """Self-attention + feed-forward block over parameters stored elsewhere."""

    def __init__(self, params, prefix, cfg):
        self.p = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
        self.cfg = cfg

    def __call__(self, x, key_bias, training, seed):
        cfg, p = self.cfg, self.p
        b, t, h = x.shape
        a = cfg.heads
        d = h // a

        def heads(z):
            return T.transpose(T.reshape(z, (b, t, a, d)), (0, 2, 1, 3))

        y = T.layer_norm(x, p["ln1.gamma"], p["ln1.beta"], cfg.ln_eps) if cfg.pre_norm else x
        q = heads(T.linear(y, p["attn.q.weight"], p["attn.q.bias"]))
        k = heads(T.linear(y, p["attn.k.weight"], p["attn.k.bias"]))
        v = heads(T.linear(y, p["attn.v.weight"], p["attn.v.bias"]))
        scores = T.matmul(q, T.transpose(k)) * np.float32(1.0 / math.sqrt(d))
        scores = scores + key_bias
        probs = T.softmax(scores, axis=-1)
        probs = T.dropout(probs, cfg.dropout_p, derive_seed(seed, 0), training)
        ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, t, h))
        attn = T.linear(ctx, p["attn.o.weight"], p["attn.o.bias"])
        attn = T.dropout(attn, cfg.dropout_p, derive_seed(seed, 1), training)
        if cfg.pre_norm:
            x = x + attn
            y = T.layer_norm(x, p["ln2.gamma"], p["ln2.beta"], cfg.ln_eps)
        else:
            x = T.layer_norm(x + attn, p["ln1.gamma"], p["ln1.beta"], cfg.ln_eps)
            y = x
        ff = T.gelu(T.linear(y, p["ffn.in.weight"], p["ffn.in.bias"]))
        ff = T.linear(ff, p["ffn.out.weight"], p["ffn.out.bias"])
        ff = T.dropout(ff, cfg.dropout_p, derive_seed(seed, 2), training)
        if cfg.pre_norm:
            return x + ff
        return T.layer_norm(x + ff, p["ln2.gamma"], p["ln2.beta"], cfg.ln_eps)


def attention_bias(mask):
    """Additive key mask of shape (B, 1, 1, T): 0 for real tokens, -1e9 for padding."""
    mask = np.asarray(mask)
    return ((1.0 - mask.astype(np.float32)) * np.float32(-1e9))[:, None, None, :]


class EncoderModel:
    def __init__(self, cfg, params):
        self.cfg = cfg.validate()
        expected = param_shapes(cfg)
        missing = set(expected) - set(params)
        if missing:
            raise DataError(f"missing parameters: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != tuple(shape):
                raise DataError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = {name: params[name] for name in expected}
        self.blocks = [TransformerBlock(self.params, f"blocks.{i}.", cfg) for i in range(cfg.layers)]

    @property
    def token_emb(self):
        return self.params["token_emb"]

    @property
    def pos_emb(self):
        return self.params["pos_emb"]

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def copy(self):
        return EncoderModel(
            self.cfg,
            {k: T.Tensor(v.data, requires_grad=True, name=k) for k, v in self.params.items()},
        )

    def embed_tokens(self, ids, offset=0):
        """Token plus position embeddings; positions start at ``offset``."""
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise DataError(f"token id outside [0, {self.cfg.vocab_size})")
        t = ids.shape[1]
        if offset + t > self.cfg.max_len:
            raise DataError(f"sequence length {offset + t} exceeds max_len {self.cfg.max_len}")
        return T.take_rows(self.token_emb, ids) + T.take_rows(self.pos_emb, np.arange(offset, offset + t))

    def forward(self, ids, mask, training=False, seed=0, inputs_embeds=None):
        """Token states of shape (B, T, H)."""
        ids = np.asarray(ids)
        mask = np.asarray(mask)
        if ids.ndim != 2 or ids.shape != mask.shape:
            raise DataError(f"ids/mask must be matching (B, T) arrays, got {ids.shape}, {mask.shape}")
        x = self.embed_tokens(ids) if inputs_embeds is None else inputs_embeds
        x = T.dropout(x, self.cfg.dropout_p, derive_seed(seed, "emb"), training)
        bias = attention_bias(mask)
        for i, block in enumerate(self.blocks):
            x = block(x, bias, training, derive_seed(seed, "block", i))
        return x

    __call__ = forward


def init_encoder(cfg, seed):
    cfg.validate()
    return EncoderModel(cfg, init_params(param_shapes(cfg), seed))


def forward(model, ids, mask, training=False, seed=0):
    return model.forward(ids, mask, training=training, seed=seed)


def pool(states, mask, pooling):
    """Reduce (B, T, H) token states to (B, H) sentence vectors."""
    pooling = Pooling.parse(pooling)
    mask = np.asarray(mask).astype(np.float32)
    if (mask.sum(axis=1) == 0).any():
        raise DataError("every row of the attention mask needs at least one real token")
    if pooling is Pooling.CLS:
        return states[:, 0, :]
    if pooling is Pooling.MEAN:
        weights = mask / mask.sum(axis=1, keepdims=True)
        return T.sum_(states * weights[:, :, None], axis=1)
    bias = ((1.0 - mask) * np.float32(-1e9))[:, :, None]
    return T.max_(states + bias, axis=1)


def embed_ids(model, ids, mask, pooling, normalize=False, batch_size=64):
    """Eval-mode embeddings as a float32 numpy array, computed in batches."""
    rows = []
    for start in range(0, len(ids), batch_size):
        states = model.forward(ids[start:start + batch_size], mask[start:start + batch_size])
        z = pool(states, mask[start:start + batch_size], pooling)
        if normalize:
            z = T.l2_normalize(z)
        rows.append(z.data)
    if not rows:
        return np.zeros((0, model.cfg.hidden), dtype=np.float32)
    return np.concatenate(rows, axis=0)


def embed_sentences(model, vocab, texts, pooling=Pooling.CLS, normalize=False, batch_size=64):
    ids, mask = encode_batch(vocab, list(texts), model.cfg.max_len)
    return embed_ids(model, ids, mask, pooling, normalize=normalize, batch_size=batch_size)


def parameter_fingerprint(model):
    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
