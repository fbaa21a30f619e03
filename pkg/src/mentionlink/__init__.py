"""Entity linking by nearest-neighbor search over labeled mention embeddings.

Train a contextual mention encoder on same-entity mention pairs, index
every labeled mention (plus entity descriptions as pseudo-mentions), and
resolve new mentions by retrieving their nearest indexed neighbors,
either exactly or through a quantized approximate search.
"""

from ._kernels import backend as kernel_backend
from .encoder import (
    EncoderParams,
    encode,
    encode_records,
    init_params,
    load_params,
    save_params,
)
from .errors import ArtifactFormatError, CorpusError, TrainingDivergedError
from .evaluation import EvalReport, bucket_of, recall_at, report
from .exact_index import (
    MentionIndex,
    build_index,
    load_index,
    save_index,
    search_exact,
)
from .featurize import FeaturizedMention, featurize, hash_token
from .inference import EntityPrediction, predict, predict_batch
from .mining import MinedExample, mine_hard_negatives
from .pairs import build_description_pairs, build_mention_pairs, split_pages
from .profiling import ProfileResult, profile
from .quantized import (
    QuantizedIndex,
    QuantizerConfig,
    SearchParams,
    load_quantized,
    save_quantized,
    search_ann,
    train_quantizer,
)
from .records import MentionPair, MentionRecord, ingest_corpus
from .synthetic import SyntheticConfig, make_synthetic_corpus
from .train import PairExample, TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "ArtifactFormatError",
    "CorpusError",
    "EncoderParams",
    "EntityPrediction",
    "EvalReport",
    "FeaturizedMention",
    "MentionIndex",
    "MentionPair",
    "MentionRecord",
    "MinedExample",
    "PairExample",
    "ProfileResult",
    "QuantizedIndex",
    "QuantizerConfig",
    "SearchParams",
    "SyntheticConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "bucket_of",
    "build_description_pairs",
    "build_index",
    "build_mention_pairs",
    "encode",
    "encode_records",
    "featurize",
    "hash_token",
    "ingest_corpus",
    "init_params",
    "kernel_backend",
    "load_index",
    "load_params",
    "load_quantized",
    "make_synthetic_corpus",
    "mine_hard_negatives",
    "predict",
    "predict_batch",
    "profile",
    "recall_at",
    "report",
    "save_index",
    "save_params",
    "save_quantized",
    "search_ann",
    "search_exact",
    "split_pages",
    "train",
    "train_quantizer",
]
