"""Container files for model checkpoints and embedding matrices.

Layout::

    b"EMBKIT\\x00\\x01"            8-byte magic
    <u8 little-endian>           length of the JSON header in bytes
    <header>                     UTF-8 JSON
    <blob>                       little-endian float32 arrays, back to back

The header always carries ``format_version`` and a ``manifest`` mapping each
array name to ``{"shape": [...], "offset": <byte offset into blob>}``.
Checkpoints add ``config`` (an :class:`EncoderConfig` dict) and ``vocab``;
embedding files add ``rows``, ``dim`` and ``normalized``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, EncoderModel, param_shapes
from .errors import ContractError, DataError
from .tokenizer import Vocab

MAGIC = b"EMBKIT\x00\x01"
FORMAT_VERSION = 1
HEAD_WEIGHT = "head.weight"


def write_container(path, header, arrays):
    manifest = {}
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = dict(header, format_version=FORMAT_VERSION, manifest=manifest)
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path):
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not an embedkit container (bad magic)")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {header.get('format_version')}")
    blob = memoryview(buf)[16 + hlen:]
    arrays = {}
    for name, entry in header["manifest"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + 4 * count > len(blob):
            raise DataError(f"{path}: array {name} runs past the end of the blob")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape).astype(np.float32)
    return header, arrays


@dataclass
class Checkpoint:
    config: EncoderConfig
    params: dict
    vocab: Vocab
    head: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def has_head(self):
        return self.head is not None

    @property
    def embedding_dim(self):
        return self.head.shape[1] if self.has_head else self.config.hidden

    def build_model(self):
        return EncoderModel(
            self.config,
            {k: T.Tensor(v, requires_grad=True, name=k) for k, v in self.params.items()},
        )

    def save(self, path):
        arrays = dict(self.params)
        if self.has_head:
            arrays[HEAD_WEIGHT] = self.head
        header = {
            "kind": "checkpoint",
            "config": self.config.to_dict(),
            "vocab": list(self.vocab.tokens),
            "lowercase": self.vocab.lowercase,
            "meta": self.meta,
        }
        write_container(path, header, arrays)

    @classmethod
    def from_model(cls, model, vocab, head=None, meta=None):
        return cls(
            config=model.cfg,
            params=model.state_dict(),
            vocab=vocab,
            head=None if head is None else np.array(head, dtype=np.float32),
            meta=dict(meta or {}),
        )

    @classmethod
    def load(cls, path):
        header, arrays = read_container(path)
        if header.get("kind") != "checkpoint":
            raise DataError(f"{path}: expected a checkpoint, found kind={header.get('kind')!r}")
        cfg = EncoderConfig.from_dict(header["config"]).validate()
        expected = param_shapes(cfg)
        head = arrays.pop(HEAD_WEIGHT, None)
        for name, shape in expected.items():
            if name not in arrays:
                raise DataError(f"{path}: manifest lacks parameter {name}")
            if arrays[name].shape != tuple(shape):
                raise DataError(f"{path}: {name} has shape {arrays[name].shape}, config implies {shape}")
        extra = set(arrays) - set(expected)
        if extra:
            raise DataError(f"{path}: unexpected arrays in manifest: {sorted(extra)}")
        if head is not None and head.shape[0] != cfg.hidden:
            raise DataError(f"{path}: head rows {head.shape[0]} != hidden {cfg.hidden}")
        vocab = Vocab(tuple(header["vocab"]), lowercase=header.get("lowercase", False))
        if len(vocab) != cfg.vocab_size:
            raise DataError(f"{path}: vocab has {len(vocab)} tokens, config says {cfg.vocab_size}")
        return cls(cfg, {k: arrays[k] for k in expected}, vocab, head, header.get("meta", {}))


def strip_projection(ckpt):
    """Drop the distillation projection head, keeping the encoder untouched."""
    if not ckpt.has_head:
        raise ContractError("checkpoint has no projection head to strip")
    return replace(ckpt, head=None, meta=dict(ckpt.meta, stripped_head=list(ckpt.head.shape)))


def save_embeddings(path, embeddings, normalized=None, meta=None):
    emb = np.asarray(embeddings, dtype=np.float32)
    if emb.ndim != 2:
        raise DataError("embedding matrix must be 2-D")
    if normalized is None:
        norms = np.linalg.norm(emb, axis=1)
        normalized = bool(len(emb)) and bool(np.allclose(norms, 1.0, atol=1e-5))
    header = {
        "kind": "embeddings",
        "rows": int(emb.shape[0]),
        "dim": int(emb.shape[1]),
        "normalized": bool(normalized),
        "meta": dict(meta or {}),
    }
    write_container(path, header, {"embeddings": emb})


def load_embeddings(path):
    """Return ``(matrix, header)`` from an embedding container."""
    header, arrays = read_container(path)
    if header.get("kind") != "embeddings" or "embeddings" not in arrays:
        raise DataError(f"{path}: expected an embedding file")
    emb = arrays["embeddings"]
    if emb.shape != (header["rows"], header["dim"]):
        raise DataError(f"{path}: header says {header['rows']}x{header['dim']}, blob is {emb.shape}")
    return emb, header
