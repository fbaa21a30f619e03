"""Mention encoder: bag of token embeddings, a two-layer MLP head, and
L2-normalized outputs scored by inner product.

The pipeline is masked mean over (token embedding + type embedding) for
non-pad positions, then affine + tanh, then affine, then L2 normalization.
Both training losses (in-batch sampled softmax and the auxiliary
cross-entropy against hard negatives) divide scores by a learnable
temperature. Gradients are analytic; ``tests/test_encoder.py`` checks them
against central finite differences.
"""

from __future__ import annotations

import dataclasses
import logging
import struct
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArtifactFormatError
from .featurize import PAD_ID, FeaturizedMention, featurize
from .io_utils import atomic_open, read_f32, write_f32

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MLMN"
CHECKPOINT_VERSION = 1

DEFAULT_D_EMB = 256
DEFAULT_D_HIDDEN = 512
DEFAULT_D = 300
DEFAULT_TEMPERATURE = 0.05
TEMPERATURE_RANGE = (0.01, 1.0)

# Tensor attributes in checkpoint order.
TENSOR_FIELDS = (
    "token_embeddings",
    "type_embeddings",
    "hidden_w",
    "hidden_b",
    "output_w",
    "output_b",
)


@dataclasses.dataclass
class EncoderParams:
    token_embeddings: np.ndarray  # [vocab_size, d_emb]
    type_embeddings: np.ndarray   # [2, d_emb]
    hidden_w: np.ndarray          # [d_emb, d_hidden]
    hidden_b: np.ndarray          # [d_hidden]
    output_w: np.ndarray          # [d_hidden, d]
    output_b: np.ndarray          # [d]
    temperature: float = DEFAULT_TEMPERATURE

    @property
    def vocab_size(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def d_emb(self) -> int:
        return self.token_embeddings.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.hidden_w.shape[1]

    @property
    def d(self) -> int:
        return self.output_w.shape[1]

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.type_embeddings.shape != (2, self.d_emb):
            raise ValueError("type_embeddings shape mismatch")
        if self.hidden_w.shape[0] != self.d_emb or self.hidden_b.shape != (self.d_hidden,):
            raise ValueError("hidden layer shape mismatch")
        if self.output_w.shape[0] != self.d_hidden or self.output_b.shape != (self.d,):
            raise ValueError("output layer shape mismatch")

    def all_finite(self) -> bool:
        return all(np.isfinite(getattr(self, f)).all() for f in TENSOR_FIELDS) and \
            np.isfinite(self.temperature)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            *(getattr(self, f).copy() for f in TENSOR_FIELDS),
            temperature=self.temperature,
        )


@dataclasses.dataclass
class Grads:
    """Gradient accumulator shaped like EncoderParams."""

    token_embeddings: np.ndarray
    type_embeddings: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    output_w: np.ndarray
    output_b: np.ndarray
    temperature: float = 0.0

    @staticmethod
    def zeros_like(params: EncoderParams) -> "Grads":
        return Grads(*(np.zeros_like(getattr(params, f)) for f in TENSOR_FIELDS))

    def add_scaled(self, other: "Grads", scale: float) -> None:
        for f in TENSOR_FIELDS:
            arr = getattr(self, f)
            arr += getattr(other, f) * scale
        self.temperature += other.temperature * scale


def init_params(
    vocab_size: int,
    d_emb: int = DEFAULT_D_EMB,
    d_hidden: int = DEFAULT_D_HIDDEN,
    d: int = DEFAULT_D,
    seed: int = 0,
    temperature: float = DEFAULT_TEMPERATURE,
) -> EncoderParams:
    """Embeddings ~ N(0, 0.02^2), Xavier-uniform MLP weights, zero biases."""
    rng = np.random.default_rng(seed)

    def xavier(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params = EncoderParams(
        token_embeddings=rng.normal(0.0, 0.02, size=(vocab_size, d_emb)),
        type_embeddings=rng.normal(0.0, 0.02, size=(2, d_emb)),
        hidden_w=xavier(d_emb, d_hidden),
        hidden_b=np.zeros(d_hidden),
        output_w=xavier(d_hidden, d),
        output_b=np.zeros(d),
        temperature=temperature,
    )
    params.validate()
    return params


def pad_batch(fms: Sequence[FeaturizedMention]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack variable-length featurizations into padded id matrices."""
    if not fms:
        raise ValueError("empty batch")
    max_len = max(1, max(len(fm.token_ids) for fm in fms))
    tokens = np.full((len(fms), max_len), PAD_ID, dtype=np.int64)
    types = np.zeros((len(fms), max_len), dtype=np.int64)
    for i, fm in enumerate(fms):
        tokens[i, :len(fm.token_ids)] = fm.token_ids
        types[i, :len(fm.type_ids)] = fm.type_ids
    return tokens, types


@dataclasses.dataclass
class _ForwardCache:
    tokens: np.ndarray
    types: np.ndarray
    mask: np.ndarray
    counts: np.ndarray
    pooled: np.ndarray
    hidden: np.ndarray
    norms: np.ndarray
    out: np.ndarray


def _forward(params: EncoderParams, tokens: np.ndarray, types: np.ndarray):
    if tokens.max(initial=0) >= params.vocab_size:
        raise ValueError("token id out of range for this encoder's vocabulary")
    mask = tokens != PAD_ID
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("all-pad input: nothing to pool")
    emb = params.token_embeddings[tokens] + params.type_embeddings[types]
    pooled = (emb * mask[:, :, None]).sum(axis=1) / counts[:, None]
    hidden = np.tanh(pooled @ params.hidden_w + params.hidden_b)
    raw = hidden @ params.output_w + params.output_b
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if (norms == 0).any():
        raise FloatingPointError("zero-norm encoder output")
    out = raw / norms
    cache = _ForwardCache(tokens, types, mask, counts, pooled, hidden, norms, out)
    return out, cache


def _backward(params: EncoderParams, cache: _ForwardCache,
              d_out: np.ndarray, grads: Grads) -> None:
    # Through L2 normalization: d_raw = (g - (g . u) u) / ||raw||.
    inner = (d_out * cache.out).sum(axis=1, keepdims=True)
    d_raw = (d_out - inner * cache.out) / cache.norms
    grads.output_w += cache.hidden.T @ d_raw
    grads.output_b += d_raw.sum(axis=0)
    d_hidden = d_raw @ params.output_w.T
    d_pre = d_hidden * (1.0 - cache.hidden ** 2)
    grads.hidden_w += cache.pooled.T @ d_pre
    grads.hidden_b += d_pre.sum(axis=0)
    d_pooled = d_pre @ params.hidden_w.T
    d_emb = d_pooled[:, None, :] / cache.counts[:, None, None]
    flat_tokens = cache.tokens[cache.mask]
    flat_types = cache.types[cache.mask]
    flat_d = np.broadcast_to(d_emb, cache.tokens.shape + (d_pooled.shape[1],))[cache.mask]
    np.add.at(grads.token_embeddings, flat_tokens, flat_d)
    np.add.at(grads.type_embeddings, flat_types, flat_d)


def encode_batch(params: EncoderParams,
                 fms: Sequence[FeaturizedMention]) -> np.ndarray:
    """Unit-norm embeddings for a batch of featurized mentions."""
    tokens, types = pad_batch(fms)
    out, _ = _forward(params, tokens, types)
    return out


def encode(params: EncoderParams, fm: FeaturizedMention) -> np.ndarray:
    return encode_batch(params, [fm])[0]


def encode_records(params: EncoderParams, records, max_context: int = 64,
                   batch_size: int = 512) -> np.ndarray:
    """Featurize and encode mention records in fixed-size batches."""
    out = np.empty((len(records), params.d))
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        fms = [featurize(r, max_context=max_context, vocab_size=params.vocab_size)
               for r in chunk]
        out[start:start + len(chunk)] = encode_batch(params, fms)
    return out


def score(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of two unit-norm embeddings (their cosine)."""
    if a.shape != b.shape:
        raise ValueError(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    return float(a @ b)


@dataclasses.dataclass
class TrainBatch:
    queries: List[FeaturizedMention]
    positives: List[FeaturizedMention]
    hard_negatives: Optional[List[List[FeaturizedMention]]] = None

    def __post_init__(self):
        if len(self.queries) != len(self.positives):
            raise ValueError("queries and positives must align")
        if self.hard_negatives is not None and len(self.hard_negatives) != len(self.queries):
            raise ValueError("hard_negatives must align with queries")


def softmax_xent_rows(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over rows plus the logit-space gradient."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    losses = -shifted[np.arange(n), targets] + np.log(exp.sum(axis=1))
    d_logits = probs.copy()
    d_logits[np.arange(n), targets] -= 1.0
    return losses.mean(), d_logits / n


def inbatch_loss_from_embeddings(queries: np.ndarray, positives: np.ndarray,
                                 temperature: float):
    """In-batch sampled softmax on precomputed embeddings.

    Returns (loss, d_queries, d_positives, d_temperature); each query's own
    positive is the target and the other positives in the batch are its
    negatives.
    """
    scores = queries @ positives.T
    logits = scores / temperature
    loss, d_logits = softmax_xent_rows(logits, np.arange(len(queries)))
    d_q = (d_logits @ positives) / temperature
    d_p = (d_logits.T @ queries) / temperature
    d_t = -(d_logits * scores).sum() / temperature ** 2
    return loss, d_q, d_p, d_t


def inbatch_loss(params: EncoderParams, batch: TrainBatch) -> Tuple[float, Grads]:
    """In-batch sampled softmax loss and analytic parameter gradients."""
    if len(batch.queries) < 2:
        raise ValueError("in-batch loss needs batch size >= 2")
    q_emb, q_cache = _forward(params, *pad_batch(batch.queries))
    p_emb, p_cache = _forward(params, *pad_batch(batch.positives))
    loss, d_q, d_p, d_t = inbatch_loss_from_embeddings(q_emb, p_emb, params.temperature)
    grads = Grads.zeros_like(params)
    grads.temperature = d_t
    _backward(params, q_cache, d_q, grads)
    _backward(params, p_cache, d_p, grads)
    return loss, grads


def hard_negative_loss_from_embeddings(queries, positives, negatives, temperature):
    """Per-query cross-entropy over {positive} + {hard negatives}.

    ``negatives`` is one embedding matrix per query (possibly empty). Queries
    without negatives contribute zero loss but still count in the mean.
    Returns (loss, d_queries, d_positives, d_negatives_list, d_temperature).
    """
    n = len(queries)
    d_q = np.zeros_like(queries)
    d_p = np.zeros_like(positives)
    d_negs = [np.zeros_like(w) for w in negatives]
    d_t = 0.0
    total = 0.0
    skipped = 0
    for i in range(n):
        if negatives[i].shape[0] == 0:
            skipped += 1
            continue
        cands = np.concatenate([positives[i:i + 1], negatives[i]], axis=0)
        scores = cands @ queries[i]
        logits = scores / temperature
        loss_i, d_logits_i = softmax_xent_rows(logits[None, :], np.array([0]))
        g = d_logits_i[0]
        total += loss_i
        d_q[i] += (g @ cands) / temperature
        d_cands = np.outer(g, queries[i]) / temperature
        d_p[i] += d_cands[0]
        d_negs[i] += d_cands[1:]
        d_t += -(g * scores).sum() / temperature ** 2
    if skipped:
        logger.warning("hard-negative loss: %d of %d queries had no negatives",
                       skipped, n)
    scale = 1.0 / n
    return (total * scale, d_q * scale, d_p * scale,
            [dw * scale for dw in d_negs], d_t * scale)


def hard_negative_loss(params: EncoderParams, batch: TrainBatch) -> Tuple[float, Grads]:
    """Auxiliary cross-entropy against mined hard negatives."""
    if batch.hard_negatives is None:
        raise ValueError("batch has no hard negatives")
    q_emb, q_cache = _forward(params, *pad_batch(batch.queries))
    p_emb, p_cache = _forward(params, *pad_batch(batch.positives))
    neg_embs, neg_caches = [], []
    for negs in batch.hard_negatives:
        if negs:
            emb, cache = _forward(params, *pad_batch(negs))
        else:
            emb, cache = np.zeros((0, params.d)), None
        neg_embs.append(emb)
        neg_caches.append(cache)
    loss, d_q, d_p, d_negs, d_t = hard_negative_loss_from_embeddings(
        q_emb, p_emb, neg_embs, params.temperature)
    grads = Grads.zeros_like(params)
    grads.temperature = d_t
    _backward(params, q_cache, d_q, grads)
    _backward(params, p_cache, d_p, grads)
    for cache, d_w in zip(neg_caches, d_negs):
        if cache is not None:
            _backward(params, cache, d_w, grads)
    return loss, grads


def combined_loss(params: EncoderParams, batch: TrainBatch,
                  hard_negative_weight: float = 1.0):
    """in-batch loss + weight * hard-negative loss with shared encodings.

    Encodes queries/positives once for both loss terms. Returns
    (total, inbatch, hard, Grads); the hard term is 0.0 when the batch has
    no negatives at all.
    """
    q_emb, q_cache = _forward(params, *pad_batch(batch.queries))
    p_emb, p_cache = _forward(params, *pad_batch(batch.positives))
    loss_in, d_q, d_p, d_t = inbatch_loss_from_embeddings(
        q_emb, p_emb, params.temperature)

    loss_hn = 0.0
    neg_caches: List = []
    d_negs: List = []
    have_negs = batch.hard_negatives is not None and any(batch.hard_negatives)
    if have_negs:
        neg_embs = []
        for negs in batch.hard_negatives:
            if negs:
                emb, cache = _forward(params, *pad_batch(negs))
            else:
                emb, cache = np.zeros((0, params.d)), None
            neg_embs.append(emb)
            neg_caches.append(cache)
        loss_hn, d_q_hn, d_p_hn, d_negs, d_t_hn = hard_negative_loss_from_embeddings(
            q_emb, p_emb, neg_embs, params.temperature)
        d_q += hard_negative_weight * d_q_hn
        d_p += hard_negative_weight * d_p_hn
        d_t += hard_negative_weight * d_t_hn

    grads = Grads.zeros_like(params)
    grads.temperature = d_t
    _backward(params, q_cache, d_q, grads)
    _backward(params, p_cache, d_p, grads)
    for cache, d_w in zip(neg_caches, d_negs):
        if cache is not None:
            _backward(params, cache, hard_negative_weight * d_w, grads)
    total = loss_in + hard_negative_weight * loss_hn
    return total, loss_in, loss_hn, grads


def save_params(path: str, params: EncoderParams) -> None:
    """Binary checkpoint: MLMN header then float32 tensors in field order."""
    params.validate()
    with atomic_open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIII", CHECKPOINT_VERSION, params.vocab_size,
                             params.d_emb, params.d_hidden, params.d))
        for field in TENSOR_FIELDS:
            write_f32(fh, getattr(params, field))
        write_f32(fh, np.array([params.temperature]))


def load_params(path: str) -> EncoderParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ArtifactFormatError(f"{path}: not an encoder checkpoint")
        version, vocab, d_emb, d_hidden, d = struct.unpack("<IIIII", fh.read(20))
        if version != CHECKPOINT_VERSION:
            raise ArtifactFormatError(
                f"{path}: checkpoint version {version} unsupported")
        shapes = {
            "token_embeddings": (vocab, d_emb),
            "type_embeddings": (2, d_emb),
            "hidden_w": (d_emb, d_hidden),
            "hidden_b": (d_hidden,),
            "output_w": (d_hidden, d),
            "output_b": (d,),
        }
        tensors = {f: read_f32(fh, shapes[f]).astype(np.float64) for f in TENSOR_FIELDS}
        temperature = float(read_f32(fh, (1,))[0])
    params = EncoderParams(temperature=temperature, **tensors)
    params.validate()
    return params
