"""Dataset records, JSONL IO, corpus preprocessing and synthetic suites."""

from __future__ import annotations

import hashlib
import json
import math
import re
import unicodedata
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .rng import generator


@dataclass(frozen=True)
class StsPair:
    a: str
    b: str
    score: float
    split: str = "test"


@dataclass(frozen=True)
class CostraTriplet:
    anchor: str
    closer: str
    farther: str
    category: str


@dataclass(frozen=True)
class LabeledDoc:
    text: str
    labels: tuple


@dataclass(frozen=True)
class QueryDocPair:
    query_id: str
    query: str
    doc: str
    label: float


@dataclass(frozen=True)
class ParallelPair:
    src: str
    tgt: str


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _text(v):
    return isinstance(v, str)


def _nonempty_text(v):
    return isinstance(v, str) and v.strip() != ""


def _label_list(v):
    return (
        isinstance(v, list)
        and len(v) > 0
        and all(isinstance(x, (int, str)) and not isinstance(x, bool) for x in v)
    )


def _query_id(v):
    return isinstance(v, (str, int)) and not isinstance(v, bool)


def _unit_interval(v):
    return _is_number(v) and 0.0 <= v <= 1.0


# schema name -> (record type, {field: (validator, description)})
SCHEMAS = {
    "sts": (StsPair, {
        "a": (_text, "string"),
        "b": (_text, "string"),
        "score": (_is_number, "finite number"),
        "split": (lambda v: v in ("train", "test"), '"train" or "test"'),
    }),
    "costra": (CostraTriplet, {
        "anchor": (_text, "string"),
        "closer": (_text, "string"),
        "farther": (_text, "string"),
        "category": (_text, "string"),
    }),
    "docs": (LabeledDoc, {
        "text": (_text, "string"),
        "labels": (_label_list, "non-empty list of label ids"),
    }),
    "ranking": (QueryDocPair, {
        "query_id": (_query_id, "string or integer"),
        "query": (_text, "string"),
        "doc": (_text, "string"),
        "label": (_unit_interval, "number in [0, 1]"),
    }),
    "parallel": (ParallelPair, {
        "src": (_nonempty_text, "non-empty string"),
        "tgt": (_nonempty_text, "non-empty string"),
    }),
}

RECORD_SCHEMA = {cls: name for name, (cls, _) in SCHEMAS.items()}


def detect_schema(record):
    """Guess the schema name from a decoded JSON object's keys."""
    keys = set(record)
    for name, (_, fields) in SCHEMAS.items():
        if set(fields) <= keys:
            return name
    # sts files may omit "split"
    if {"a", "b", "score"} <= keys:
        return "sts"
    raise DataError(f"cannot infer dataset kind from fields {sorted(keys)}")


def _build(schema, obj, where):
    cls, fields = SCHEMAS[schema]
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    values = {}
    for name, (check, desc) in fields.items():
        if name not in obj:
            if schema == "sts" and name == "split":
                values[name] = "test"
                continue
            raise DataError(f"{where}: missing required field {name!r}")
        if not check(obj[name]):
            raise DataError(f"{where}: field {name!r} must be {desc}, got {obj[name]!r}")
        values[name] = obj[name]
    extra = sorted(set(obj) - set(fields))
    if extra:
        warnings.warn(f"{where}: ignoring unknown field(s) {extra}", stacklevel=3)
    if schema == "docs":
        values["labels"] = tuple(values["labels"])
    if schema == "ranking":
        values["query_id"] = str(values["query_id"])
    if schema in ("sts", "ranking"):
        key = "score" if schema == "sts" else "label"
        values[key] = float(values[key])
    return cls(**values)


def load_jsonl(path, schema=None):
    """Load and strictly validate a JSONL file; ``schema=None`` infers it from line 1."""
    path = Path(path)
    if schema is not None and schema not in SCHEMAS:
        raise ParameterError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    records = []
    query_text = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: malformed JSON ({exc.msg})") from None
            if schema is None:
                if not isinstance(obj, dict):
                    raise DataError(f"{where}: expected a JSON object")
                schema = detect_schema(obj)
            rec = _build(schema, obj, where)
            if schema == "ranking":
                seen = query_text.setdefault(rec.query_id, rec.query)
                if seen != rec.query:
                    raise DataError(f"{where}: query_id {rec.query_id!r} reused with different query text")
            records.append(rec)
    return records


def record_to_dict(rec):
    d = asdict(rec)
    if isinstance(rec, LabeledDoc):
        d["labels"] = list(rec.labels)
    return d


def write_jsonl(path, records):
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False, sort_keys=True) + "\n")


def fingerprint_records(records):
    """SHA-256 over the canonical JSONL serialisation of ``records`` (first 16 hex chars)."""
    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps(record_to_dict(rec), ensure_ascii=False, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


def fingerprint_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# corpus preprocessing

_BOUNDARY = re.compile(r"([.!?…]+[\"'“”»)\]]*)(\s+)")


def clean_text(text):
    """NFC-normalise, drop control/format/symbol-other characters, squeeze whitespace."""
    text = unicodedata.normalize("NFC", text)
    kept = []
    for ch in text:
        cat = unicodedata.category(ch)
        if ch.isspace():
            kept.append(" ")
        elif cat[0] == "C" or cat in ("So", "Co", "Cn"):
            continue
        else:
            kept.append(ch)
    return " ".join("".join(kept).split())


def split_sentences(text):
    """Split after sentence-final punctuation when whitespace and an uppercase letter follow."""
    out = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        nxt = m.end()
        if nxt < len(text) and text[nxt].isupper():
            out.append(text[start:m.end(1)].strip())
            start = nxt
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return [s for s in out if s]


def preprocess_corpus(lines, min_words=3, max_words=64):
    """Paragraph lines -> cleaned, length-filtered, de-duplicated sentences."""
    if min_words < 1 or max_words < min_words:
        raise ParameterError("need 1 <= min_words <= max_words")
    seen = set()
    out = []
    for line in lines:
        for sent in split_sentences(clean_text(line)):
            n = len(sent.split())
            if n < min_words or n > max_words or sent in seen:
                continue
            seen.add(sent)
            out.append(sent)
    return out


def subset(records, n, seed):
    """First ``n`` items of a seeded permutation, so smaller subsets nest in larger ones."""
    records = list(records)
    if n < 0 or n > len(records):
        raise ParameterError(f"cannot draw {n} records from {len(records)}")
    perm = generator(seed, "subset").permutation(len(records))
    return [records[i] for i in perm[:n]]


# synthetic desk-scale suites

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiouy"
_FOREIGN_CONSONANTS = "bdfgklmnprstwx"
_FOREIGN_VOWELS = "aeiou"

DEFAULT_SIZES = {
    "corpus": 2000,
    "sts": 600,
    "costra": 400,
    "docs": 600,
    "sentiment": 600,
    "ranking_queries": 60,
    "parallel": 600,
}

COSTRA_CATEGORIES = ("time", "style", "generalization", "opposite")
SENTIMENT_LABELS = (0, 1, 2)  # negative, neutral, positive


def _make_words(rng, count, consonants, vowels, syllables=(2, 3), taken=()):
    words = []
    seen = set(taken)
    while len(words) < count:
        n = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))]
                    for _ in range(n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


@dataclass
class SyntheticLanguage:
    """A toy lexicon of topical concepts, function words and sentiment words.

    Every content concept has ``forms_per_concept`` interchangeable surface
    forms (synonyms).  Sentences choose a form at random for each concept, so
    two sentences can mean the same thing while sharing few surface tokens.
    A concept is named by its first form.  Sentences are walks over a sparse
    successor graph inside a topic, which gives each concept its own typical
    neighbours (and hence its own distributional signature).
    """

    topics: list
    forms: dict
    function_words: list
    positive: list
    negative: list
    successors: dict = field(default_factory=dict)
    translation: dict = field(default_factory=dict)
    alt_form_prob: float = 0.5

    @classmethod
    def create(cls, rng, n_topics=8, concepts_per_topic=12, forms_per_concept=2,
               n_function=10, n_sentiment=6, n_successors=3, alt_form_prob=0.5):
        n_concepts = n_topics * concepts_per_topic
        words = _make_words(rng, n_concepts * forms_per_concept + 2 * n_sentiment, _CONSONANTS, _VOWELS)
        func = _make_words(rng, n_function, _CONSONANTS, _VOWELS, syllables=(1, 1), taken=words)
        groups = [words[i * forms_per_concept:(i + 1) * forms_per_concept] for i in range(n_concepts)]
        forms = {g[0]: list(g) for g in groups}
        names = [g[0] for g in groups]
        topics = [names[i * concepts_per_topic:(i + 1) * concepts_per_topic] for i in range(n_topics)]
        rest = words[n_concepts * forms_per_concept:]
        lang = cls(topics, forms, func, rest[:n_sentiment], rest[n_sentiment:], alt_form_prob=alt_form_prob)
        for topic in topics:
            for c in topic:
                others = [o for o in topic if o != c]
                picks = rng.permutation(len(others))[:n_successors]
                lang.successors[c] = [others[i] for i in picks]
        surface = lang.surface_words()
        foreign = _make_words(rng, len(surface), _FOREIGN_CONSONANTS, _FOREIGN_VOWELS, taken=surface)
        lang.translation = dict(zip(surface, foreign))
        return lang

    def surface_words(self):
        return [f for fs in self.forms.values() for f in fs] + self.function_words + self.positive + self.negative

    def concept_of(self):
        return {f: c for c, fs in self.forms.items() for f in fs}

    def topic_of(self):
        return {c: i for i, t in enumerate(self.topics) for c in t}

    def canonical(self, text):
        """Map every surface form to its concept name."""
        table = self.concept_of()
        return " ".join(table.get(w, w) for w in text.split())

    def concepts_in(self, text):
        table = self.concept_of()
        return {table[w] for w in text.split() if w in table}

    def content_words(self, rng, topic, k, off_topic=0.15):
        """A walk of ``k`` distinct concepts; each step follows a successor edge when possible."""
        out = [_pick(rng, self.topics[topic])]
        while len(out) < k:
            if rng.random() < off_topic:
                options = self.topics[int(rng.integers(len(self.topics)))]
            else:
                options = [c for c in self.successors[out[-1]] if c not in out] or self.topics[topic]
            c = _pick(rng, options)
            if c not in out:
                out.append(c)
        return out

    def realise(self, rng, concepts, filler=0.5):
        """Surface sentence: a random form per concept, optional function words, final period."""
        words = []
        for c in concepts:
            if rng.random() < filler:
                words.append(_pick(rng, self.function_words))
            words.append(self.surface(rng, c))
        return " ".join(words) + " ."

    def surface(self, rng, concept):
        """The concept's first form, or with probability ``alt_form_prob`` one of its others."""
        forms = self.forms.get(concept)
        if forms is None:
            return concept
        if len(forms) > 1 and rng.random() < self.alt_form_prob:
            return _pick(rng, forms[1:])
        return forms[0]

    def sentence(self, rng, topic=None, k=None):
        topic = int(rng.integers(len(self.topics))) if topic is None else topic
        k = int(rng.integers(3, 7)) if k is None else k
        return self.realise(rng, self.content_words(rng, topic, k))

    def translate(self, rng, sentence, swap=0.1):
        words = [self.translation.get(w, w) for w in sentence.split()]
        for i in range(len(words) - 2):
            if rng.random() < swap:
                words[i], words[i + 1] = words[i + 1], words[i]
        return " ".join(words)


def token_overlap(a, b):
    """Jaccard overlap of whitespace tokens."""
    sa, sb = set(a.split()), set(b.split())
    return len(sa & sb) / max(1, len(sa | sb))


def _perturb(lang, rng, concepts, n_replace, same_topic):
    concepts = list(concepts)
    topic_of = lang.topic_of()
    for p in rng.permutation(len(concepts))[:n_replace]:
        t = topic_of[concepts[p]] if rng.random() < same_topic else int(rng.integers(len(lang.topics)))
        options = [c for c in lang.topics[t] if c not in concepts]
        if not options:
            options = [c for topic in lang.topics for c in topic if c not in concepts]
        concepts[p] = _pick(rng, options)
    return concepts


def _sts_pairs(lang, rng, n, train_frac=0.3):
    pairs = []
    for i in range(n):
        k = int(rng.integers(4, 8))
        base = lang.content_words(rng, int(rng.integers(len(lang.topics))), k)
        other = _perturb(lang, rng, base, int(rng.integers(0, k + 1)), same_topic=0.5)
        if rng.random() < 0.5:
            other = [other[j] for j in rng.permutation(len(other))]
        ca, cb = set(base), set(other)
        score = round(5.0 * len(ca & cb) / len(ca | cb), 3)
        split = "train" if i < int(train_frac * n) else "test"
        pairs.append(StsPair(lang.realise(rng, base), lang.realise(rng, other), score, split))
    return pairs


def _costra(lang, rng, n):
    out = []
    for i in range(n):
        k = int(rng.integers(4, 7))
        base = lang.content_words(rng, int(rng.integers(len(lang.topics))), k)
        closer = _perturb(lang, rng, base, 1, same_topic=1.0)
        farther = _perturb(lang, rng, base, k - 1, same_topic=0.5)
        out.append(CostraTriplet(
            lang.realise(rng, base), lang.realise(rng, closer), lang.realise(rng, farther),
            COSTRA_CATEGORIES[i % len(COSTRA_CATEGORIES)],
        ))
    return out


def _docs(lang, rng, n):
    topic_of = lang.topic_of()
    out = []
    while len(out) < n:
        chosen = rng.permutation(len(lang.topics))[: int(rng.integers(1, 4))]
        sents = [lang.sentence(rng, int(t)) for t in chosen for _ in range(2)]
        text = " ".join(sents[j] for j in rng.permutation(len(sents)))
        counts = np.zeros(len(lang.topics), dtype=int)
        for c in lang.canonical(text).split():
            if c in topic_of:
                counts[topic_of[c]] += 1
        labels = tuple(int(t) for t in np.flatnonzero(counts >= 3))
        if labels:
            out.append(LabeledDoc(text, labels))
    return out


def _sentiment(lang, rng, n):
    out = []
    for i in range(n):
        label = i % 3
        words = lang.content_words(rng, int(rng.integers(len(lang.topics))), int(rng.integers(3, 6)))
        if label != 1:
            pool = lang.positive if label == 2 else lang.negative
            for _ in range(int(rng.integers(1, 3))):
                words.insert(int(rng.integers(len(words) + 1)), _pick(rng, pool))
        out.append(LabeledDoc(lang.realise(rng, words), (label,)))
    return [out[i] for i in rng.permutation(len(out))]


def _ranking(lang, rng, n_queries, per_query=24, same_topic_frac=0.5):
    """Half of each query's candidates contain every query concept (in any surface form).

    Irrelevant candidates come from the query's topic with probability
    ``same_topic_frac`` and from another topic otherwise.
    """
    out = []
    half = per_query // 2
    for q in range(n_queries):
        topic = int(rng.integers(len(lang.topics)))
        qconcepts = lang.content_words(rng, topic, int(rng.integers(1, 3)), off_topic=0.0)
        query = lang.realise(rng, qconcepts)
        docs = []
        for j in range(per_query):
            relevant = j < half
            k = int(rng.integers(4, 8))
            doc_topic = topic
            if not relevant and rng.random() >= same_topic_frac:
                doc_topic = int((topic + 1 + rng.integers(len(lang.topics) - 1)) % len(lang.topics))
            while True:
                concepts = lang.content_words(rng, doc_topic, k)
                if relevant:
                    missing = [c for c in qconcepts if c not in concepts]
                    free = [i for i, c in enumerate(concepts) if c not in qconcepts]
                    for slot, c in zip(rng.permutation(free), missing):
                        concepts[slot] = c
                hits = len(set(qconcepts) & set(concepts))
                if (hits == len(qconcepts)) == relevant:
                    break
            docs.append((lang.realise(rng, concepts), hits / len(qconcepts)))
        for j in rng.permutation(per_query):
            text, label = docs[j]
            out.append(QueryDocPair(f"q{q:05d}", query, text, float(label)))
    return out


@dataclass
class SyntheticSuite:
    language: SyntheticLanguage
    corpus: list
    sts: list
    costra: list
    docs: list
    sentiment: list
    ranking_train: list
    ranking_test: list
    parallel: list

    def files(self):
        return {
            "sts.jsonl": self.sts,
            "costra.jsonl": self.costra,
            "docs.jsonl": self.docs,
            "sentiment.jsonl": self.sentiment,
            "ranking_train.jsonl": self.ranking_train,
            "ranking_test.jsonl": self.ranking_test,
            "parallel.jsonl": self.parallel,
        }

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "corpus.txt").write_text("\n".join(self.corpus) + "\n", encoding="utf-8")
        for name, records in self.files().items():
            write_jsonl(directory / name, records)
        return directory


def make_synthetic_suite(seed, sizes=None, language=None):
    """Generate every dataset kind over one shared toy language.

    Ground truth is planted at the concept level: STS scores are concept
    Jaccard overlaps, Costra 'closer' sentences differ from the anchor in one
    concept, document labels are the topics with at least three concept hits,
    sentiment follows polar keywords, and a ranking candidate is relevant iff
    it contains every query concept.  ``language`` passes keyword options to
    :meth:`SyntheticLanguage.create`.
    """
    sizes = dict(DEFAULT_SIZES, **(sizes or {}))
    for key, value in sizes.items():
        if value <= 0:
            raise ParameterError(f"size for {key!r} must be positive")
    lang = SyntheticLanguage.create(generator(seed, "language"), **(language or {}))
    corpus_rng = generator(seed, "corpus")
    corpus = list(dict.fromkeys(lang.sentence(corpus_rng) for _ in range(sizes["corpus"])))
    n_q = sizes["ranking_queries"]
    n_test = max(1, n_q // 4)
    ranking = _ranking(lang, generator(seed, "ranking"), n_q)
    test_ids = {f"q{q:05d}" for q in range(n_q - n_test, n_q)}
    par_rng = generator(seed, "parallel")
    parallel = []
    for _ in range(sizes["parallel"]):
        src = lang.sentence(par_rng)
        parallel.append(ParallelPair(src, lang.translate(par_rng, src)))
    return SyntheticSuite(
        language=lang,
        corpus=corpus,
        sts=_sts_pairs(lang, generator(seed, "sts"), sizes["sts"]),
        costra=_costra(lang, generator(seed, "costra"), sizes["costra"]),
        docs=_docs(lang, generator(seed, "docs"), sizes["docs"]),
        sentiment=_sentiment(lang, generator(seed, "sentiment"), sizes["sentiment"]),
        ranking_train=[r for r in ranking if r.query_id not in test_ids],
        ranking_test=[r for r in ranking if r.query_id in test_ids],
        parallel=parallel,
    )
