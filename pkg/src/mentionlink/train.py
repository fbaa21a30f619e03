"""Encoder training: Adam with decoupled weight decay and linear warmup."""

from __future__ import annotations

import dataclasses
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .encoder import (
    TENSOR_FIELDS,
    EncoderParams,
    TrainBatch,
    combined_loss,
)
from .errors import CorpusError, TrainingDivergedError
from .featurize import DEFAULT_MAX_CONTEXT, FeaturizedMention, featurize
from .records import MentionPair, MentionRecord, records_by_id

logger = logging.getLogger(__name__)

# Weight decay applies to weight matrices only, not biases or temperature.
DECAYED_FIELDS = ("token_embeddings", "type_embeddings", "hidden_w", "output_w")
TEMPERATURE_MIN, TEMPERATURE_MAX = 0.01, 1.0


@dataclasses.dataclass(frozen=True)
class PairExample:
    """One training example: query, positive, optional mined negatives."""

    query: FeaturizedMention
    positive: FeaturizedMention
    hard_negatives: Tuple[FeaturizedMention, ...] = ()


@dataclasses.dataclass
class TrainConfig:
    batch_size: int = 256
    steps: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    hard_negative_weight: float = 1.0
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 200


@dataclasses.dataclass
class TrainResult:
    params: EncoderParams
    loss_curve: List[float]
    inbatch_curve: List[float]
    hard_negative_curve: List[float]


class _Adam:
    def __init__(self, params: EncoderParams, config: TrainConfig):
        self.config = config
        self.m = {f: np.zeros_like(getattr(params, f)) for f in TENSOR_FIELDS}
        self.v = {f: np.zeros_like(getattr(params, f)) for f in TENSOR_FIELDS}
        self.m_temp = 0.0
        self.v_temp = 0.0
        self.t = 0

    def step(self, params: EncoderParams, grads, lr: float) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for f in TENSOR_FIELDS:
            g = getattr(grads, f)
            m = self.m[f]
            v = self.v[f]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            arr = getattr(params, f)
            arr -= lr * update
            if f in DECAYED_FIELDS and cfg.weight_decay:
                arr -= lr * cfg.weight_decay * arr
        self.m_temp = cfg.beta1 * self.m_temp + (1.0 - cfg.beta1) * grads.temperature
        self.v_temp = cfg.beta2 * self.v_temp + (1.0 - cfg.beta2) * grads.temperature ** 2
        update = (self.m_temp / bc1) / (np.sqrt(self.v_temp / bc2) + cfg.eps)
        params.temperature = float(
            np.clip(params.temperature - lr * update, TEMPERATURE_MIN, TEMPERATURE_MAX))


class FeatureCache:
    """Featurize each distinct mention once when building example lists."""

    def __init__(self, records: Sequence[MentionRecord], vocab_size: int,
                 max_context: int = DEFAULT_MAX_CONTEXT):
        self._by_id = records_by_id(records)
        self._vocab_size = vocab_size
        self._max_context = max_context
        self._cache: dict = {}

    def get(self, mention_id: str) -> FeaturizedMention:
        feat = self._cache.get(mention_id)
        if feat is None:
            record = self._by_id.get(mention_id)
            if record is None:
                raise CorpusError(f"unknown mention id {mention_id!r}")
            feat = featurize(record, vocab_size=self._vocab_size,
                             max_context=self._max_context)
            self._cache[mention_id] = feat
        return feat


def examples_from_pairs(
    pairs: Sequence[MentionPair],
    records: Sequence[MentionRecord],
    vocab_size: int,
    max_context: int = DEFAULT_MAX_CONTEXT,
) -> List[PairExample]:
    """Featurized training examples from plain same-entity pairs."""
    cache = FeatureCache(records, vocab_size, max_context)
    return [PairExample(query=cache.get(p.query_id),
                        positive=cache.get(p.positive_id))
            for p in pairs]


def _learning_rate(config: TrainConfig, step: int) -> float:
    warmup = max(1, int(round(config.warmup_fraction * config.steps)))
    if step < warmup:
        return config.learning_rate * (step + 1) / warmup
    return config.learning_rate


def train(
    params: EncoderParams,
    examples: Sequence[PairExample],
    config: Optional[TrainConfig] = None,
) -> TrainResult:
    """Train in place (on a copy) over a pair stream; deterministic per seed.

    Each step samples ``batch_size`` examples with replacement. Aborts with
    TrainingDivergedError if the loss or any parameter goes non-finite.
    """
    if not examples:
        raise ValueError("empty pair stream")
    config = config or TrainConfig()
    if config.batch_size < 2:
        raise ValueError("batch_size must be >= 2 for the in-batch loss")
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    adam = _Adam(params, config)
    curve: List[float] = []
    curve_in: List[float] = []
    curve_hn: List[float] = []
    for step in range(config.steps):
        idx = rng.integers(0, len(examples), size=config.batch_size)
        batch = TrainBatch(
            queries=[examples[i].query for i in idx],
            positives=[examples[i].positive for i in idx],
            hard_negatives=[list(examples[i].hard_negatives) for i in idx],
        )
        total, loss_in, loss_hn, grads = combined_loss(
            params, batch, config.hard_negative_weight)
        if not np.isfinite(total):
            raise TrainingDivergedError(step, f"loss={total!r}")
        adam.step(params, grads, _learning_rate(config, step))
        curve.append(float(total))
        curve_in.append(float(loss_in))
        curve_hn.append(float(loss_hn))
        if (step + 1) % config.log_every == 0 or step + 1 == config.steps:
            if not params.all_finite():
                raise TrainingDivergedError(step, "non-finite parameter")
            logger.info("step %d/%d loss=%.4f (in-batch %.4f, hard %.4f) temp=%.4f",
                        step + 1, config.steps, total, loss_in, loss_hn,
                        params.temperature)
    return TrainResult(params, curve, curve_in, curve_hn)
