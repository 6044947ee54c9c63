"""Sentence-embedding training recipes and evaluation harness on a small numpy autodiff core."""

from .checkpoint import Checkpoint, load_embeddings, save_embeddings, strip_projection
from .encoder import EncoderConfig, EncoderModel, Pooling, embed_sentences, init_encoder
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EmbedkitError,
    NumericError,
    OverflowRangeError,
    ParameterError,
)
from .tokenizer import Vocab, encode, encode_batch, merge_vocab, train_vocab

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "EmbedkitError",
    "EncoderConfig",
    "EncoderModel",
    "NumericError",
    "OverflowRangeError",
    "ParameterError",
    "Pooling",
    "Vocab",
    "embed_sentences",
    "encode",
    "encode_batch",
    "init_encoder",
    "load_embeddings",
    "merge_vocab",
    "save_embeddings",
    "strip_projection",
    "train_vocab",
]
