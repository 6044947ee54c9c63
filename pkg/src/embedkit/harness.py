"""Run configuration, evaluation regimes and report emission."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import QueryDocPair, StsPair, fingerprint_records, subset
from .encoder import EncoderConfig, Pooling, embed_ids, parameter_fingerprint
from .errors import ConfigError, ContractError, DataError, NumericError, OverflowRangeError, ParameterError
from .metrics import (
    MetricReport,
    costra_accuracy,
    f1_scores,
    fold_indices,
    precision_at_k,
    rank_by_score,
    spearman,
)
from .recipes import LinearHead, TrainSettings, finetune_classification, finetune_ranking, train_head
from .rng import derive_seed
from .tokenizer import encode_batch

TASKS = (
    "pretrain-mlm", "pretrain-retromae", "distill", "finetune-simcse", "zero-shot-eval",
    "probe", "finetune-eval", "ablate-datasize", "quantize-check",
)

F16_MAX = float(np.finfo(np.float16).max)


# configuration

@dataclass
class RunConfig:
    """Every knob a CLI run reads.  JSON keys match the field names."""

    seed: int = None
    task: str = None
    # paths
    model: str = None
    init_model: str = None
    data: str = None
    corpus: str = None
    vocab: str = None
    parallel: str = None
    teacher_emb: str = None
    output: str = None
    report: str = None
    report_format: str = "markdown"
    label: str = None
    # encoder shape (used when a model is initialised from scratch)
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    ffn_mult: int = 4
    max_len: int = 64
    dropout_p: float = 0.1
    pre_norm: bool = False
    # tokenizer
    vocab_size: int = 2000
    min_freq: int = 2
    lowercase: bool = False
    min_words: int = 3
    max_words: int = 64
    # optimisation
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    max_steps: int = None
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    # objectives
    mlm_ratio: float = 0.15
    enc_ratio: float = 0.30
    dec_ratio: float = 0.50
    temperature: float = 0.05
    pooling: str = "cls"
    eval_pooling: str = "auto"
    # evaluation
    k_folds: int = 5
    head: str = "auto"
    probe_lr: float = 1e-2
    probe_epochs: int = 30
    finetune_task: str = "classification"
    ranking_loss: str = "infonce"
    sizes: list = field(default_factory=lambda: [100, 500, 1000, 5000])
    repeats: int = 4

    def encoder_config(self, vocab_size):
        return EncoderConfig(
            layers=self.layers, hidden=self.hidden, heads=self.heads, ffn_mult=self.ffn_mult,
            max_len=self.max_len, vocab_size=vocab_size, dropout_p=self.dropout_p,
            pre_norm=self.pre_norm,
        ).validate()

    def train_settings(self, **over):
        values = dict(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                      max_steps=self.max_steps, warmup_frac=self.warmup_frac,
                      weight_decay=self.weight_decay, clip_norm=self.clip_norm, seed=self.seed)
        values.update(over)
        return TrainSettings(**values).validate()

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


PAPER_SCALE = {
    "layers": 12,
    "hidden": 256,
    "heads": 4,
    "batch_size": 512,
    "max_steps": 250_000,
    "lr": 5e-4,
    "warmup_frac": 0.1,
    "vocab_size": 57_226,
    "max_len": 512,
    "enc_ratio": 0.30,
    "dec_ratio": 0.50,
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
ENV_PREFIX = "EMBEDKIT_"


def _coerce(name, value):
    default = _FIELDS[name].default
    kind = type(default) if default is not None and default is not dataclasses.MISSING else None
    if name == "sizes":
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"sizes must be a list of integers, got {value!r}") from None
    if value is None:
        return None
    if name in ("seed", "max_steps"):
        kind = int
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot interpret {value!r}") from None
    return value


def _env_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path=None, overrides=None, env=None, paper_scale=False):
    """Build a RunConfig from defaults < paper-scale profile < JSON file < env < overrides."""
    values = {}
    if paper_scale:
        values.update(PAPER_SCALE)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        unknown = sorted(set(loaded) - set(_FIELDS))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
        values.update(loaded)
    env = os.environ if env is None else env
    for name in _FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = _env_value(env[key])
    for name, value in (overrides or {}).items():
        if value is not None:
            if name not in _FIELDS:
                raise ConfigError(f"unknown config key {name!r}")
            values[name] = value
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    if cfg.seed is None:
        raise ConfigError("a seed is mandatory (config key 'seed' or EMBEDKIT_SEED)")
    if cfg.task is not None and cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.report_format not in ("markdown", "csv"):
        raise ConfigError("report_format must be 'markdown' or 'csv'")
    return cfg


def require_paths(cfg, *names):
    """Every named path key must be set and exist before the run starts."""
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"config key {name!r} is required for this command")
        if not Path(value).exists():
            raise ConfigError(f"{name}: path {value} does not exist")


# reports

def package_revision():
    """Content hash of the package sources, standing in for a VCS revision."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


def report_timestamp():
    """Taken from SOURCE_DATE_EPOCH when set; otherwise omitted so reruns stay identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    import datetime as _dt

    return _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class EvalReport:
    title: str
    rows: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, label, metric):
        if metric.seed is None or metric.fingerprint is None:
            raise ContractError(f"metric {metric.name!r} lacks a seed or dataset fingerprint")
        self.rows.setdefault(label, []).append(metric)
        return self

    def merge(self, other):
        for label, metrics in other.rows.items():
            for m in metrics:
                self.add(label, m)
        for key, value in other.metadata.items():
            self.metadata.setdefault(key, value)
        return self

    def value(self, label, name):
        for m in self.rows.get(label, []):
            if m.name == name:
                return m.value
        raise KeyError((label, name))

    def columns(self):
        cols = []
        for metrics in self.rows.values():
            for m in metrics:
                if m.name not in cols:
                    cols.append(m.name)
        return cols


def new_report(title, cfg=None, **metadata):
    meta = {"revision": package_revision()}
    if cfg is not None:
        meta["config_hash"] = cfg.hash()
    ts = report_timestamp()
    if ts is not None:
        meta["timestamp"] = ts
    meta.update(metadata)
    return EvalReport(title, {}, meta)


def _cell(m):
    if m.value is None:
        return "n/a"
    text = f"{m.value:.2f}"
    if m.stddev is not None:
        text += f" ± {m.stddev:.2f}"
    return text


def render_markdown(report):
    cols = report.columns()
    lines = [f"# {report.title}", ""]
    lines.append("| model | " + " | ".join(cols) + " |")
    lines.append("|---|" + "---|" * len(cols))
    for label, metrics in report.rows.items():
        by_name = {m.name: m for m in metrics}
        cells = [_cell(by_name[c]) if c in by_name else "" for c in cols]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    lines += ["", "## Details", ""]
    for label, metrics in report.rows.items():
        for m in metrics:
            lines.append(
                f"- {label} / {m.name}: n={m.n}, seed={m.seed}, dataset={m.dataset}, "
                f"split={m.split}, fingerprint={m.fingerprint}"
            )
    lines += ["", "## Metadata", ""]
    for key in sorted(report.metadata):
        lines.append(f"- {key}: {_meta_text(report.metadata[key])}")
    return "\n".join(lines) + "\n"


def _meta_text(value):
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return str(value)


CSV_FIELDS = ("model", "metric", "value", "stddev", "n", "seed", "dataset", "split", "fingerprint")


def render_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for label, metrics in report.rows.items():
        for m in metrics:
            writer.writerow([
                label, m.name,
                "" if m.value is None else repr(float(m.value)),
                "" if m.stddev is None else repr(float(m.stddev)),
                m.n, m.seed, m.dataset or "", m.split or "", m.fingerprint,
            ])
    return buf.getvalue()


def parse_csv_report(text):
    """Inverse of :func:`render_csv` (metadata is not part of the CSV)."""
    rows = {}
    for rec in csv.DictReader(io.StringIO(text)):
        rows.setdefault(rec["model"], []).append(MetricReport(
            name=rec["metric"],
            value=float(rec["value"]) if rec["value"] else None,
            stddev=float(rec["stddev"]) if rec["stddev"] else None,
            n=int(rec["n"]),
            seed=int(rec["seed"]),
            dataset=rec["dataset"] or None,
            split=rec["split"] or None,
            fingerprint=rec["fingerprint"],
        ))
    return rows


def emit_report(report, path, fmt="markdown"):
    if fmt == "markdown":
        text = render_markdown(report)
    elif fmt == "csv":
        text = render_csv(report)
    else:
        raise ParameterError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))
    return path


# embedding helpers

class Embedder:
    """Eval-mode sentence embeddings from a checkpoint, with optional projection head."""

    def __init__(self, ckpt, pooling=Pooling.CLS, batch_size=64):
        self.ckpt = ckpt
        self.model = ckpt.build_model()
        self.vocab = ckpt.vocab
        self.pooling = Pooling.parse(pooling)
        self.batch_size = batch_size

    def with_pooling(self, pooling):
        clone = Embedder.__new__(Embedder)
        clone.__dict__.update(self.__dict__)
        clone.pooling = Pooling.parse(pooling)
        return clone

    def __call__(self, texts, normalize=True):
        ids, mask = encode_batch(self.vocab, list(texts), self.model.cfg.max_len)
        ids, mask = trim_padding(ids, mask)
        emb = embed_ids(self.model, ids, mask, self.pooling, normalize=False, batch_size=self.batch_size)
        if not np.isfinite(emb).all():
            raise NumericError("encoder produced non-finite embeddings")
        if normalize:
            norms = np.linalg.norm(emb, axis=1, keepdims=True)
            emb = emb / np.where(norms > 0, norms, 1.0)
        return emb


def trim_padding(ids, mask):
    """Drop trailing columns that are padding in every row."""
    width = int(np.asarray(mask).sum(axis=1).max()) if len(mask) else 1
    return ids[:, :width], mask[:, :width]


def _sts_spearman(embed, pairs):
    a = embed([p.a for p in pairs])
    b = embed([p.b for p in pairs])
    return 100.0 * spearman((a * b).sum(axis=1), [p.score for p in pairs])


def group_queries(pairs):
    groups = {}
    for p in pairs:
        groups.setdefault(p.query_id, []).append(p)
    return groups


def ranking_p_at_10(embed, pairs, k=10):
    """Rank each query's candidates by cosine(query, doc) and average P@k."""
    groups = group_queries(pairs)
    qids = list(groups)
    q_emb = embed([groups[q][0].query for q in qids])
    docs = [p.doc for q in qids for p in groups[q]]
    d_emb = embed(docs)
    ranked = []
    start = 0
    for qi, q in enumerate(qids):
        cands = groups[q]
        block = d_emb[start:start + len(cands)]
        start += len(cands)
        scores = block @ q_emb[qi]
        ranked.append(rank_by_score([c.doc for c in cands], scores, [c.label > 0.5 for c in cands]))
    return precision_at_k(ranked, k)


# regimes

def select_pooling(embedder, validation):
    """Argmax validation Spearman over CLS, MEAN, MAX; ties (and undefined scores) favour CLS."""
    scores = {}
    for pooling in (Pooling.CLS, Pooling.MEAN, Pooling.MAX):
        try:
            scores[pooling] = _sts_spearman(embedder.with_pooling(pooling), validation)
        except DataError:
            scores[pooling] = float("-inf")  # constant similarities: correlation undefined
    best = Pooling.CLS
    for pooling in (Pooling.MEAN, Pooling.MAX):
        if scores[pooling] > scores[best]:
            best = pooling
    return best, scores


def run_zero_shot(ckpt, datasets, pooling_policy="auto", label="model", seed=0, cfg=None):
    """Cosine-similarity evaluation with no task training.

    ``datasets`` may hold ``sts`` (StsPair list), ``costra`` (triplets) and
    ``ranking`` (QueryDocPair list).  Returns an EvalReport with one row.
    """
    embedder = Embedder(ckpt)
    before = parameter_fingerprint(embedder.model)
    report = new_report("Zero-shot evaluation", cfg)
    sts = datasets.get("sts")
    if pooling_policy == "auto":
        validation = [p for p in (sts or []) if p.split == "train"]
        if len(validation) < 2:
            raise ConfigError("auto pooling needs an STS train split for validation")
        pooling, scores = select_pooling(embedder, validation)
        report.metadata["pooling_scores"] = {k.value: round(v, 6) for k, v in scores.items()}
    else:
        pooling = Pooling.parse(pooling_policy)
    report.metadata["pooling"] = pooling.value
    embed = embedder.with_pooling(pooling)

    if sts:
        test = [p for p in sts if p.split == "test"] or list(sts)
        split = "test" if any(p.split == "test" for p in sts) else "all"
        report.add(label, MetricReport("STS Spearman", _sts_spearman(embed, test), n=len(test), seed=seed,
                                       dataset="sts", split=split, fingerprint=fingerprint_records(sts)))
    costra = datasets.get("costra")
    if costra:
        anchor = embed([t.anchor for t in costra])
        closer = embed([t.closer for t in costra])
        farther = embed([t.farther for t in costra])
        per_cat, macro = costra_accuracy(anchor, closer, farther, [t.category for t in costra])
        report.add(label, MetricReport("Costra accuracy", macro, n=len(costra), seed=seed, dataset="costra",
                                       split="test", fingerprint=fingerprint_records(costra)))
        report.metadata["costra_per_category"] = {k: round(v, 6) for k, v in per_cat.items()}
    ranking = datasets.get("ranking")
    if ranking:
        split = datasets.get("ranking_split", "test")
        report.add(label, MetricReport("Ranking P@10", ranking_p_at_10(embed, ranking),
                                       n=len(group_queries(ranking)), seed=seed, dataset="ranking",
                                       split=split, fingerprint=fingerprint_records(ranking)))
    if parameter_fingerprint(embedder.model) != before:
        raise ContractError("zero-shot evaluation modified model parameters")
    return report


def label_universe(docs):
    universe = set()
    for d in docs:
        universe.update(d.labels)
    try:
        return sorted(universe)
    except TypeError:
        return sorted(universe, key=str)


def resolve_head_kind(head, docs):
    if head == "auto":
        return "multiclass-softmax" if all(len(d.labels) == 1 for d in docs) else "multilabel-sigmoid"
    aliases = {"multilabel": "multilabel-sigmoid", "multiclass": "multiclass-softmax"}
    head = aliases.get(head, head)
    if head not in ("multilabel-sigmoid", "multiclass-softmax"):
        raise ConfigError(f"unknown head kind {head!r}")
    return head


def encode_targets(docs, labels, multilabel):
    index = {lab: i for i, lab in enumerate(labels)}
    for d in docs:
        for lab in d.labels:
            if lab not in index:
                raise DataError(f"label {lab!r} outside the label universe")
    if multilabel:
        y = np.zeros((len(docs), len(labels)), dtype=np.float32)
        for i, d in enumerate(docs):
            for lab in d.labels:
                y[i, index[lab]] = 1.0
        return y
    for d in docs:
        if len(d.labels) != 1:
            raise DataError("multiclass head needs exactly one label per document")
    return np.array([index[d.labels[0]] for d in docs], dtype=np.int64)


def _decode_predictions(pred, labels, multilabel):
    if multilabel:
        return [{labels[j] for j in np.flatnonzero(row)} for row in pred]
    return [{labels[int(j)]} for j in pred]


def run_probe(ckpt, docs, head_kind="auto", k_folds=5, seed=0, settings=None, labels=None,
              label="model", cfg=None, pooling=Pooling.CLS):
    """Linear probe on frozen sentence embeddings with k-fold cross-validation."""
    docs = list(docs)
    head_kind = resolve_head_kind(head_kind, docs)
    multilabel = head_kind == "multilabel-sigmoid"
    labels = list(labels) if labels is not None else label_universe(docs)
    targets = encode_targets(docs, labels, multilabel)
    settings = settings or TrainSettings(lr=1e-2, batch_size=32, epochs=30, seed=seed)
    embedder = Embedder(ckpt, pooling)
    before = parameter_fingerprint(embedder.model)
    features = embedder([d.text for d in docs], normalize=False)

    scores = []
    for fold, test_idx in enumerate(fold_indices(len(docs), k_folds, seed)):
        train_idx = np.setdiff1d(np.arange(len(docs)), test_idx)
        head = LinearHead.init(features.shape[1], len(labels), multilabel, derive_seed(seed, "probe", fold))
        train_head(head, features[train_idx], targets[train_idx],
                   dataclasses.replace(settings, seed=derive_seed(seed, "probe-train", fold)))
        pred = _decode_predictions(head.predict(features[test_idx]), labels, multilabel)
        gold = [set(docs[i].labels) for i in test_idx]
        scores.append(f1_scores(pred, gold, "micro" if multilabel else "macro", labels))

    if parameter_fingerprint(embedder.model) != before:
        raise ContractError("probing modified frozen encoder parameters")
    report = new_report("Linear probing", cfg, head=head_kind, folds=k_folds)
    name = "micro-F1" if multilabel else "macro-F1"
    report.add(label, MetricReport(name, float(np.mean(scores)), float(np.std(scores)), n=len(docs),
                                   seed=seed, dataset="docs", split=f"{k_folds}-fold",
                                   fingerprint=fingerprint_records(docs)))
    report.metadata["fold_scores"] = [round(s, 6) for s in scores]
    return report


def _split_by_query(pairs, seed, test_frac=0.2):
    qids = sorted(group_queries(pairs))
    n_test = max(1, int(round(test_frac * len(qids))))
    perm = np.random.default_rng(derive_seed(seed, "query-split")).permutation(len(qids))
    test_ids = {qids[i] for i in perm[:n_test]}
    return [p for p in pairs if p.query_id not in test_ids], [p for p in pairs if p.query_id in test_ids]


def fine_tune_ranker(ckpt, train, settings, temperature=0.05, pooling=Pooling.CLS, loss="infonce"):
    """Bi-encoder ranking fine-tune; returns ``(model, log)``.  No head is ever attached."""
    if isinstance(ckpt, Checkpoint) and ckpt.has_head:
        raise ContractError("ranking fine-tuning forbids a head; strip the projection first")
    model = ckpt.build_model() if isinstance(ckpt, Checkpoint) else ckpt.copy()
    vocab = ckpt.vocab
    max_len = model.cfg.max_len
    q_ids, q_mask = encode_batch(vocab, [p.query for p in train], max_len)
    d_ids, d_mask = encode_batch(vocab, [p.doc for p in train], max_len)
    q_ids, q_mask = trim_padding(q_ids, q_mask)
    d_ids, d_mask = trim_padding(d_ids, d_mask)
    log = finetune_ranking(model, q_ids, q_mask, d_ids, d_mask, [p.label for p in train],
                           [p.query_id for p in train], settings, temperature, pooling, loss)
    return model, log


class _ModelView:
    """Pairs a trained model with the vocabulary it was trained under."""

    def __init__(self, model, vocab):
        self.model = model
        self.vocab = vocab

    def build_model(self):
        return self.model


def run_finetune(ckpt, task, dataset, settings, seed=0, label="model", cfg=None, k_folds=None,
                 head_kind="auto", temperature=0.05, pooling=Pooling.CLS, ranking_loss="infonce"):
    """Fine-tune the whole encoder for classification or bi-encoder ranking.

    Ranking: ``dataset`` is ``(train_pairs, test_pairs)`` (or one list, split by
    query).  Classification: a list of LabeledDoc scored on k folds, or on a
    fixed 80/20 split when ``k_folds`` is None.
    """
    report = new_report(f"Fine-tuning ({task})", cfg)
    if task == "ranking":
        train, test = dataset if isinstance(dataset, tuple) else _split_by_query(list(dataset), seed)
        before = ranking_p_at_10(Embedder(ckpt, pooling), test)
        model, log = fine_tune_ranker(ckpt, train, settings, temperature, pooling, ranking_loss)
        after = ranking_p_at_10(Embedder(_ModelView(model, ckpt.vocab), pooling), test)
        fp = fingerprint_records(list(train) + list(test))
        report.add(label, MetricReport("Ranking P@10", after, n=len(group_queries(test)), seed=seed,
                                       dataset="ranking", split="test", fingerprint=fp))
        report.metadata.update(zero_shot_p_at_10=round(before, 6), skipped_batches=log.skipped,
                               steps=log.steps, final_loss=round(log.last(), 6))
        return report
    if task != "classification":
        raise ConfigError(f"unknown fine-tuning task {task!r}")

    docs = list(dataset)
    multilabel = resolve_head_kind(head_kind, docs) == "multilabel-sigmoid"
    labels = label_universe(docs)
    targets = encode_targets(docs, labels, multilabel)
    if k_folds is None:
        perm = np.random.default_rng(derive_seed(seed, "holdout")).permutation(len(docs))
        cut = int(round(0.8 * len(docs)))
        folds = [np.sort(perm[cut:])]
    else:
        folds = fold_indices(len(docs), k_folds, seed)
    scores = []
    losses_finite = True
    for fold, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(docs)), test_idx)
        model = ckpt.build_model()
        head = LinearHead.init(model.cfg.hidden, len(labels), multilabel, derive_seed(seed, "ft-head", fold))
        ids, mask = encode_batch(ckpt.vocab, [docs[i].text for i in train_idx], model.cfg.max_len)
        ids, mask = trim_padding(ids, mask)
        log = finetune_classification(model, head, ids, mask, targets[train_idx],
                                      dataclasses.replace(settings, seed=derive_seed(seed, "ft", fold)),
                                      pooling)
        losses_finite &= bool(np.isfinite(log.losses).all())
        feats = Embedder(_ModelView(model, ckpt.vocab), pooling)([docs[i].text for i in test_idx],
                                                                  normalize=False)
        pred = _decode_predictions(head.predict(feats), labels, multilabel)
        gold = [set(docs[i].labels) for i in test_idx]
        scores.append(f1_scores(pred, gold, "micro" if multilabel else "macro", labels))
    name = "micro-F1" if multilabel else "macro-F1"
    split = "holdout" if k_folds is None else f"{k_folds}-fold"
    report.add(label, MetricReport(name, float(np.mean(scores)), float(np.std(scores)) if len(scores) > 1 else None,
                                   n=len(docs), seed=seed, dataset="docs", split=split,
                                   fingerprint=fingerprint_records(docs)))
    report.metadata["losses_finite"] = losses_finite
    return report


@dataclass
class CurvePoint:
    init: str
    size: int
    mean: float
    stddev: float
    scores: list


def run_datasize_ablation(inits, train, test, sizes, repeats, settings, temperature=0.05,
                          pooling=Pooling.CLS):
    """Fine-tune every init on nested random subsets and score P@10 on a fixed test split.

    ``inits`` maps a label to a checkpoint.  Subsets are drawn per repeat with
    one seed across sizes, so smaller subsets nest inside larger ones.
    """
    sizes = list(sizes)
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ParameterError("sizes must be strictly ascending")
    if sizes and sizes[-1] > len(train):
        raise ParameterError(f"size {sizes[-1]} exceeds the {len(train)} training pairs")
    curve = []
    for label, ckpt in inits.items():
        for size in sizes:
            scores = []
            for r in range(repeats):
                part = subset(train, size, derive_seed(settings.seed, "ablation", r))
                run = dataclasses.replace(settings, seed=derive_seed(settings.seed, "ablation-train", r))
                model, _ = fine_tune_ranker(ckpt, part, run, temperature, pooling)
                scores.append(ranking_p_at_10(Embedder(_ModelView(model, ckpt.vocab), pooling), test))
            curve.append(CurvePoint(label, size, float(np.mean(scores)), float(np.std(scores)), scores))
    return curve


def curve_csv(curve):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("init", "size", "mean", "stddev"))
    for pt in curve:
        writer.writerow((pt.init, pt.size, f"{pt.mean:.2f}", f"{pt.stddev:.2f}"))
    return buf.getvalue()


@dataclass
class QuantReport:
    rows: int
    dim: int
    max_abs_error: float
    max_cos_deviation: float

    def as_dict(self):
        return dataclasses.asdict(self)


def quantize_roundtrip(embeddings):
    """f32 -> f16 -> f32; report the worst elementwise and cosine deviation."""
    emb = np.asarray(embeddings, dtype=np.float32)
    if emb.ndim != 2:
        raise DataError("embeddings must be a 2-D matrix")
    if not np.isfinite(emb).all():
        raise NumericError("embeddings contain non-finite values")
    bad = np.flatnonzero((np.abs(emb) > F16_MAX).any(axis=1))
    if len(bad):
        raise OverflowRangeError(
            f"{len(bad)} row(s) exceed the float16 range (max {F16_MAX:g}): {bad[:20].tolist()}",
            rows=bad.tolist(),
        )
    rt = emb.astype(np.float16).astype(np.float32)
    max_abs = float(np.abs(rt - emb).max()) if emb.size else 0.0
    a = emb.astype(np.float64)
    b = rt.astype(np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    live = (na > 0) & (nb > 0)
    cos = np.ones(len(a))
    cos[live] = (a[live] * b[live]).sum(axis=1) / (na[live] * nb[live])
    dev = float(np.abs(cos - 1.0).max()) if len(a) else 0.0
    return QuantReport(int(emb.shape[0]), int(emb.shape[1]), max_abs, dev)
