"""Config-driven training runs and dataset discovery used by the CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_embeddings, save_embeddings, strip_projection
from .data import detect_schema, fingerprint_records, load_jsonl, preprocess_corpus
from .encoder import Pooling, init_encoder
from .errors import ConfigError, DataError
from .harness import Embedder, _ModelView, new_report, require_paths, trim_padding
from .metrics import MetricReport
from .recipes import finetune_simcse, pretrain_mlm, pretrain_retromae, train_distill
from .rng import derive_seed
from .tokenizer import Vocab, encode_batch, merge_vocab, train_vocab


def read_corpus(cfg):
    require_paths(cfg, "corpus")
    lines = Path(cfg.corpus).read_text(encoding="utf-8").splitlines()
    sentences = preprocess_corpus(lines, cfg.min_words, cfg.max_words)
    if not sentences:
        raise DataError(f"{cfg.corpus}: no sentences survive preprocessing")
    return sentences


def _vocab_for(cfg, texts):
    if cfg.vocab is not None:
        require_paths(cfg, "vocab")
        return Vocab.load(cfg.vocab, lowercase=cfg.lowercase)
    return train_vocab(texts, cfg.vocab_size, cfg.min_freq, cfg.lowercase)


def _start_model(cfg, texts):
    """Continue from ``init_model`` when given, else a fresh encoder over a new or given vocab."""
    if cfg.init_model is not None:
        require_paths(cfg, "init_model")
        ckpt = Checkpoint.load(cfg.init_model)
        if ckpt.has_head:
            ckpt = strip_projection(ckpt)
        return ckpt.build_model(), ckpt.vocab, ckpt.meta
    vocab = _vocab_for(cfg, texts)
    return init_encoder(cfg.encoder_config(len(vocab)), derive_seed(cfg.seed, "init")), vocab, {}


def _encode(vocab, texts, max_len):
    return trim_padding(*encode_batch(vocab, texts, max_len))


def _training_report(cfg, title, label, log, corpus_fp, n):
    report = new_report(title, cfg, steps=log.steps, skipped_batches=log.skipped)
    report.add(label, MetricReport("final loss", log.last(), n=n, seed=cfg.seed, dataset="corpus",
                                   split="train", fingerprint=corpus_fp))
    return report


def _corpus_fingerprint(sentences):
    import hashlib

    return hashlib.sha256("\n".join(sentences).encode("utf-8")).hexdigest()[:16]


def run_pretrain(cfg, objective):
    """MLM or RetroMAE pre-training from a corpus file; writes a checkpoint to ``cfg.output``."""
    if objective not in ("mlm", "retromae"):
        raise ConfigError(f"unknown pre-training objective {objective!r}")
    if cfg.output is None:
        raise ConfigError("config key 'output' (checkpoint path) is required")
    sentences = read_corpus(cfg)
    model, vocab, meta = _start_model(cfg, sentences)
    ids, mask = _encode(vocab, sentences, model.cfg.max_len)
    settings = cfg.train_settings()
    if objective == "mlm":
        log = pretrain_mlm(model, ids, mask, settings, ratio=cfg.mlm_ratio)
    else:
        log, _decoder = pretrain_retromae(model, ids, mask, settings, enc_ratio=cfg.enc_ratio,
                                          dec_ratio=cfg.dec_ratio)
    Checkpoint.from_model(model, vocab, meta=dict(meta, recipe=f"pretrain-{objective}")).save(cfg.output)
    label = cfg.label or f"pretrain-{objective}"
    return model, vocab, _training_report(cfg, f"Pre-training ({objective})", label, log,
                                          _corpus_fingerprint(sentences), len(sentences))


def run_simcse(cfg):
    if cfg.output is None:
        raise ConfigError("config key 'output' (checkpoint path) is required")
    sentences = read_corpus(cfg)
    model, vocab, meta = _start_model(cfg, sentences)
    ids, mask = _encode(vocab, sentences, model.cfg.max_len)
    log = finetune_simcse(model, ids, mask, cfg.train_settings(), temperature=cfg.temperature,
                          pooling=Pooling.parse(cfg.pooling))
    Checkpoint.from_model(model, vocab, meta=dict(meta, recipe="finetune-simcse")).save(cfg.output)
    return model, vocab, _training_report(cfg, "SimCSE fine-tuning", cfg.label or "simcse", log,
                                          _corpus_fingerprint(sentences), len(sentences))


def held_out_split(n, seed, frac=0.1):
    perm = np.random.default_rng(derive_seed(seed, "heldout")).permutation(n)
    cut = max(1, int(round(frac * n)))
    return np.sort(perm[cut:]), np.sort(perm[:cut])


def projected_cosine(model, vocab, head, texts, teacher, pooling=Pooling.MEAN):
    """Mean cosine between projected student embeddings and teacher rows."""
    emb = Embedder(_ModelView(model, vocab), pooling)(texts, normalize=False)
    proj = emb @ head.weight.data
    proj = proj / np.linalg.norm(proj, axis=1, keepdims=True)
    return float((proj * teacher).sum(axis=1).mean())


def run_distill(cfg, strip_head=True):
    """Multilingual distillation onto precomputed teacher embeddings of the source side.

    Without ``init_model`` the student gets a merged vocabulary trained
    separately on source and target sentences.
    """
    require_paths(cfg, "teacher_emb", "parallel")
    if cfg.output is None:
        raise ConfigError("config key 'output' (checkpoint path) is required")
    pairs = load_jsonl(cfg.parallel, "parallel")
    teacher, _header = load_embeddings(cfg.teacher_emb)
    if len(teacher) != len(pairs):
        raise DataError(f"teacher has {len(teacher)} rows but {len(pairs)} parallel pairs were given")
    norms = np.linalg.norm(teacher, axis=1, keepdims=True)
    if (norms == 0).any():
        raise DataError("teacher embeddings contain zero rows")
    teacher = (teacher / norms).astype(np.float32)
    src_texts = [p.src for p in pairs]
    tgt_texts = [p.tgt for p in pairs]
    if cfg.init_model is None and cfg.vocab is None:
        vocab = merge_vocab(train_vocab(src_texts, cfg.vocab_size, cfg.min_freq, cfg.lowercase),
                            train_vocab(tgt_texts, cfg.vocab_size, cfg.min_freq, cfg.lowercase))
        model = init_encoder(cfg.encoder_config(len(vocab)), derive_seed(cfg.seed, "init"))
        meta = {}
    else:
        model, vocab, meta = _start_model(cfg, src_texts + tgt_texts)
    train_idx, test_idx = held_out_split(len(pairs), cfg.seed)
    max_len = model.cfg.max_len
    src = _encode(vocab, [src_texts[i] for i in train_idx], max_len)
    tgt = _encode(vocab, [tgt_texts[i] for i in train_idx], max_len)
    log, head = train_distill(model, teacher[train_idx], src, tgt, cfg.train_settings(),
                              pooling=Pooling.parse(cfg.pooling))
    fp = fingerprint_records(pairs)
    label = cfg.label or "distill"
    report = new_report("Distillation", cfg, steps=log.steps, teacher_dim=int(teacher.shape[1]))
    for side, texts in (("src", src_texts), ("tgt", tgt_texts)):
        cos = projected_cosine(model, vocab, head, [texts[i] for i in test_idx], teacher[test_idx],
                               Pooling.parse(cfg.pooling))
        report.add(label, MetricReport(f"held-out cos ({side})", cos, n=len(test_idx), seed=cfg.seed,
                                       dataset="parallel", split="heldout", fingerprint=fp))
    ckpt = Checkpoint.from_model(model, vocab, head=head.weight.data,
                                 meta=dict(meta, recipe="distill", pooling=cfg.pooling))
    (strip_projection(ckpt) if strip_head else ckpt).save(cfg.output)
    return model, vocab, head, report


EVAL_FILES = {
    "sts": ("sts.jsonl",),
    "costra": ("costra.jsonl",),
    "ranking": ("ranking_test.jsonl", "ranking.jsonl"),
    "ranking_train": ("ranking_train.jsonl",),
    "docs": ("docs.jsonl",),
    "sentiment": ("sentiment.jsonl",),
}


def discover(path, kinds):
    """Load the requested dataset kinds from a directory, or a single JSONL file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data path {path} does not exist")
    found = {}
    if path.is_dir():
        for kind in kinds:
            for name in EVAL_FILES[kind]:
                if (path / name).exists():
                    schema = "docs" if kind == "sentiment" else kind.replace("_train", "")
                    found[kind] = load_jsonl(path / name, schema)
                    break
    else:
        records = load_jsonl(path)
        if records:
            kind = detect_schema_of(records[0])
            found[kind] = records
    if not found:
        raise DataError(f"{path}: none of the dataset kinds {list(kinds)} found")
    return found


def detect_schema_of(record):
    from .data import RECORD_SCHEMA

    return RECORD_SCHEMA[type(record)]


def embed_file(ckpt_path, texts_path, out_path, pooling="cls", normalize=True):
    ckpt = Checkpoint.load(ckpt_path)
    texts = [t for t in Path(texts_path).read_text(encoding="utf-8").splitlines() if t.strip()]
    if not texts:
        raise DataError(f"{texts_path}: no texts")
    emb = Embedder(ckpt, pooling)(texts, normalize=normalize)
    save_embeddings(out_path, emb, normalized=normalize, meta={"pooling": pooling})
    return emb


__all__ = [
    "run_pretrain", "run_simcse", "run_distill", "discover", "embed_file", "held_out_split",
    "projected_cosine", "read_corpus", "detect_schema",
]
