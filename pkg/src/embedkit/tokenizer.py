"""Subword vocabularies: pair-merge training, greedy longest-match encoding.

Vocabularies are learned with BPE-style merges of the most frequent adjacent
symbol pair and applied WordPiece-style: each whitespace/punctuation word is
split greedily into the longest known prefix followed by the longest known
``##``-continuation pieces.  A word that cannot be covered becomes ``[UNK]``.
"""

from __future__ import annotations

import heapq
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)
CONT = "##"

DEFAULT_VOCAB_SIZE = 2000
PAPER_VOCAB_SIZE = 57226


def _is_punct(ch):
    return unicodedata.category(ch).startswith("P")


def pre_tokenize(text, lowercase=False):
    """NFC-normalise, split on whitespace, and split off punctuation marks."""
    text = unicodedata.normalize("NFC", text)
    if lowercase:
        text = text.lower()
    words = []
    for chunk in text.split():
        current = []
        for ch in chunk:
            if _is_punct(ch):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
            elif unicodedata.category(ch).startswith("C"):
                continue
            else:
                current.append(ch)
        if current:
            words.append("".join(current))
    return words


@dataclass(frozen=True)
class Vocab:
    tokens: tuple
    lowercase: bool = False
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise DataError(f"vocabulary must start with the special tokens {SPECIAL_TOKENS}")
        index = {}
        for i, tok in enumerate(tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise DataError(f"invalid token {tok!r} at id {i}")
            if tok in index:
                raise DataError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        object.__setattr__(self, "_index", index)

    @property
    def size(self):
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id_of(self, token):
        return self._index.get(token, UNK_ID)

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, lowercase=False):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines), lowercase=lowercase)

    def encode_word(self, word):
        """Greedy longest-match split of one word into token ids."""
        pieces = []
        start = 0
        n = len(word)
        while start < n:
            end = n
            found = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = CONT + piece
                tid = self._index.get(piece)
                if tid is not None and tid >= len(SPECIAL_TOKENS):
                    found = tid
                    break
                end -= 1
            if found is None:
                return [UNK_ID]
            pieces.append(found)
            start = end
        return pieces


@dataclass
class TokenSeq:
    ids: np.ndarray
    attention_mask: np.ndarray

    @property
    def max_len(self):
        return len(self.ids)


def encode(vocab, text, max_len):
    """Encode ``text`` as ``[CLS] pieces... [SEP]`` padded to ``max_len``."""
    if max_len < 3:
        raise ParameterError("max_len must be at least 3")
    ids = [CLS_ID]
    for word in pre_tokenize(text, vocab.lowercase):
        ids.extend(vocab.encode_word(word))
        if len(ids) >= max_len - 1:
            break
    ids = ids[: max_len - 1] + [SEP_ID]
    n_real = len(ids)
    ids = ids + [PAD_ID] * (max_len - n_real)
    mask = [1] * n_real + [0] * (max_len - n_real)
    return TokenSeq(np.array(ids, dtype=np.int64), np.array(mask, dtype=np.int64))


def encode_batch(vocab, texts, max_len):
    """Return ``(ids, mask)`` integer arrays of shape ``(len(texts), max_len)``."""
    seqs = [encode(vocab, t, max_len) for t in texts]
    if not seqs:
        empty = np.zeros((0, max_len), dtype=np.int64)
        return empty, empty.copy()
    return np.stack([s.ids for s in seqs]), np.stack([s.attention_mask for s in seqs])


def decode(vocab, ids):
    words = []
    for tid in np.asarray(ids).tolist():
        if tid < len(SPECIAL_TOKENS):
            if tid == UNK_ID:
                words.append(UNK)
            continue
        tok = vocab.tokens[tid]
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok)
    return " ".join(words)


def _word_symbols(word):
    return tuple([word[0]] + [CONT + ch for ch in word[1:]])


def _join(left, right):
    return left + right[len(CONT):]


def train_vocab(corpus, target_size=DEFAULT_VOCAB_SIZE, min_freq=2, lowercase=False):
    """Learn a vocabulary of at most ``target_size`` tokens from an iterable of lines.

    The base alphabet holds every character seen, both word-initially and as a
    ``##`` continuation, so any word made of known characters can be encoded.
    Merges then repeatedly join the most frequent adjacent pair; ties go to the
    pair that appeared first in corpus order.  Training stops early once no
    pair reaches ``min_freq``.
    """
    word_counts = Counter()
    for line in corpus:
        word_counts.update(pre_tokenize(line, lowercase))
    if not word_counts:
        raise DataError("cannot train a vocabulary on an empty corpus")

    words = list(word_counts)  # insertion order == first occurrence order
    chars = []
    seen = set()
    for w in words:
        for ch in w:
            if ch not in seen:
                seen.add(ch)
                chars.append(ch)
    base = list(SPECIAL_TOKENS)
    base += chars
    base += [CONT + ch for ch in chars]
    if target_size < len(base):
        raise ParameterError(
            f"target_size {target_size} is below the base alphabet size {len(base)} "
            f"({len(SPECIAL_TOKENS)} specials + {len(chars)} characters in two positions)"
        )

    tokens = list(base)
    token_set = set(tokens)
    symbols = [list(_word_symbols(w)) for w in words]
    counts = [word_counts[w] for w in words]

    pair_count = Counter()
    pair_words = {}
    pair_order = {}

    def note(pair, wi, c):
        pair_count[pair] += c
        pair_words.setdefault(pair, set()).add(wi)
        if pair not in pair_order:
            pair_order[pair] = len(pair_order)

    for wi, sym in enumerate(symbols):
        for a, b in zip(sym, sym[1:]):
            note((a, b), wi, counts[wi])

    heap = [(-c, pair_order[p], p) for p, c in pair_count.items()]
    heapq.heapify(heap)

    while len(tokens) < target_size and heap:
        negc, order, pair = heapq.heappop(heap)
        if pair_count.get(pair, 0) != -negc:
            continue  # stale entry
        if -negc < max(min_freq, 1):
            break
        merged = _join(*pair)
        if merged not in token_set:
            tokens.append(merged)
            token_set.add(merged)
        touched = set()
        for wi in sorted(pair_words.pop(pair, ())):
            sym = symbols[wi]
            c = counts[wi]
            for a, b in zip(sym, sym[1:]):
                pair_count[(a, b)] -= c
                touched.add((a, b))
            out = []
            i = 0
            while i < len(sym):
                if i + 1 < len(sym) and (sym[i], sym[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            symbols[wi] = out
            for a, b in zip(out, out[1:]):
                note((a, b), wi, c)
                touched.add((a, b))
        pair_count.pop(pair, None)
        for p in touched:
            c = pair_count.get(p, 0)
            if c <= 0:
                pair_count.pop(p, None)
                pair_words.pop(p, None)
            else:
                heapq.heappush(heap, (-c, pair_order[p], p))

    return Vocab(tuple(tokens), lowercase=lowercase)


def merge_vocab(a, b):
    """Union of two vocabularies: specials, then ``a``'s tokens, then ``b``'s new ones."""
    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)
    for tok in list(a.tokens) + list(b.tokens):
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)
    return Vocab(tuple(tokens), lowercase=a.lowercase)
