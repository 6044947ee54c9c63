"""scikit-learn style wrappers over the functional training and evaluation API."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import MultiLabelBinarizer
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .checkpoint import Checkpoint
from .encoder import EncoderConfig, Pooling, init_encoder
from .errors import DataError, ParameterError
from .harness import Embedder, _ModelView, trim_padding
from .recipes import LinearHead, TrainSettings, finetune_simcse, pretrain_mlm, pretrain_retromae, train_head
from .rng import derive_seed
from .tokenizer import encode_batch, train_vocab

OBJECTIVES = ("none", "mlm", "retromae", "simcse")


def check_texts(X):
    """Validate a 1-D collection of strings and return it as a list."""
    if isinstance(X, str):
        raise DataError("expected a collection of strings, got a single string")
    texts = list(X)
    if not texts:
        raise DataError("need at least one text")
    bad = [i for i, t in enumerate(texts) if not isinstance(t, str)]
    if bad:
        raise DataError(f"non-string entries at positions {bad[:5]}")
    return texts


class SentenceEncoder(BaseEstimator, TransformerMixin):
    """Train (``fit``) and apply (``transform``) a sentence encoder.

    ``fit`` builds a vocabulary when none is set, initialises the encoder and
    runs the chosen objective over the texts; ``transform`` returns pooled,
    optionally L2-normalised embeddings.
    """

    def __init__(self, objective="retromae", layers=2, hidden=32, heads=2, max_len=32, vocab_size=700,
                 min_freq=2, pooling="cls", normalize=True, lr=5e-3, batch_size=64, epochs=5,
                 temperature=0.05, dropout_p=0.1, seed=0):
        self.objective = objective
        self.layers = layers
        self.hidden = hidden
        self.heads = heads
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.min_freq = min_freq
        self.pooling = pooling
        self.normalize = normalize
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.temperature = temperature
        self.dropout_p = dropout_p
        self.seed = seed

    @classmethod
    def from_checkpoint(cls, path_or_ckpt, **params):
        ckpt = path_or_ckpt if isinstance(path_or_ckpt, Checkpoint) else Checkpoint.load(path_or_ckpt)
        c = ckpt.config
        est = cls(objective="none", layers=c.layers, hidden=c.hidden, heads=c.heads, max_len=c.max_len,
                  vocab_size=c.vocab_size, dropout_p=c.dropout_p, **params)
        est.vocab_ = ckpt.vocab
        est.model_ = ckpt.build_model()
        est.train_log_ = None
        return est

    def _settings(self):
        return TrainSettings(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed)

    def fit(self, X, y=None):
        texts = check_texts(X)
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"objective must be one of {OBJECTIVES}")
        if not hasattr(self, "vocab_"):
            self.vocab_ = train_vocab(texts, self.vocab_size, self.min_freq)
        if not hasattr(self, "model_"):
            cfg = EncoderConfig(layers=self.layers, hidden=self.hidden, heads=self.heads, max_len=self.max_len,
                                vocab_size=len(self.vocab_), dropout_p=self.dropout_p)
            self.model_ = init_encoder(cfg, derive_seed(self.seed, "init"))
        ids, mask = trim_padding(*encode_batch(self.vocab_, texts, self.max_len))
        if self.objective == "mlm":
            self.train_log_ = pretrain_mlm(self.model_, ids, mask, self._settings())
        elif self.objective == "retromae":
            self.train_log_, _ = pretrain_retromae(self.model_, ids, mask, self._settings())
        elif self.objective == "simcse":
            self.train_log_ = finetune_simcse(self.model_, ids, mask, self._settings(), self.temperature,
                                              Pooling.parse(self.pooling))
        else:
            self.train_log_ = None
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        embed = Embedder(_ModelView(self.model_, self.vocab_), self.pooling)
        return embed(check_texts(X), normalize=self.normalize)

    def to_checkpoint(self):
        check_is_fitted(self, "model_")
        return Checkpoint.from_model(self.model_, self.vocab_)


class LinearProbe(BaseEstimator, ClassifierMixin):
    """Linear head over fixed feature vectors, trained with AdamW.

    ``multilabel=True`` expects ``y`` as a sequence of label collections and
    predicts with a 0.5 sigmoid threshold; otherwise ``y`` is one label per
    row and prediction is the softmax argmax.
    """

    def __init__(self, multilabel=False, lr=1e-2, epochs=30, batch_size=32, weight_decay=0.01, seed=0):
        self.multilabel = multilabel
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        if self.multilabel:
            X = check_array(X, dtype=np.float32)
            self.binarizer_ = MultiLabelBinarizer()
            targets = self.binarizer_.fit_transform(y).astype(np.float32)
            if len(targets) != len(X):
                raise DataError("X and y differ in length")
            self.classes_ = self.binarizer_.classes_
        else:
            X, y = check_X_y(X, y, dtype=np.float32)
            self.classes_, targets = np.unique(y, return_inverse=True)
        self.head_ = LinearHead.init(X.shape[1], len(self.classes_), self.multilabel,
                                     derive_seed(self.seed, "probe"))
        settings = TrainSettings(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                                 weight_decay=self.weight_decay, seed=self.seed)
        self.train_log_ = train_head(self.head_, X, targets, settings)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "head_")
        X = check_array(X, dtype=np.float32)
        return X @ self.head_.weight.data + self.head_.bias.data

    def predict_proba(self, X):
        z = self.decision_function(X).astype(np.float64)
        if self.multilabel:
            return 1.0 / (1.0 + np.exp(-z))
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self.decision_function(X)
        if self.multilabel:
            return self.binarizer_.inverse_transform((z > 0).astype(int))
        return self.classes_[np.argmax(z, axis=1)]
