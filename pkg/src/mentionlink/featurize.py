"""Fixed-length token-id inputs for the mention encoder.

Tokens are lowercased and hashed into [N_RESERVED, vocab_size) with FNV-1a
(64-bit), so no pretrained vocabulary is needed and ids are stable across
runs and machines. Reserved ids: 0 padding, 1 title separator, 2/3 the
mention-span boundary markers.

Organic layout:      [title][SEP][left ctx][OPEN][span][CLOSE][right ctx]
Description layout:  [title][SEP][description tokens]

The window is truncated to ``max_context``: the title (plus separator) gets
at most TITLE_BUDGET positions, the span and its boundary markers are always
kept whole, and the remaining budget is split evenly between left and right
context, spilling unused budget to the other side.
"""

from __future__ import annotations

import dataclasses
from typing import List, Tuple

from .errors import CorpusError
from .records import DESCRIPTION, ORGANIC, MentionRecord

PAD_ID = 0
SEP_ID = 1
OPEN_ID = 2
CLOSE_ID = 3
N_RESERVED = 4

DEFAULT_MAX_CONTEXT = 64
DEFAULT_VOCAB_SIZE = 16384
TITLE_BUDGET = 16

TYPE_ORGANIC = 0
TYPE_DESCRIPTION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def hash_token(token: str, vocab_size: int) -> int:
    """FNV-1a 64-bit hash of the lowercased token, mapped above reserved ids."""
    h = _FNV_OFFSET
    for byte in token.lower().encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return N_RESERVED + h % (vocab_size - N_RESERVED)


@dataclasses.dataclass(frozen=True)
class FeaturizedMention:
    """Hashed token ids plus type ids (0 organic, 1 description)."""

    token_ids: Tuple[int, ...]
    type_ids: Tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        if len(self.token_ids) != len(self.type_ids):
            raise ValueError("token_ids and type_ids lengths differ")
        if self.vocab_size <= N_RESERVED:
            raise ValueError(f"vocab_size must exceed {N_RESERVED}")


def _title_part(title_tokens, vocab_size: int, budget: int) -> List[int]:
    """Title ids plus separator, within the given budget (0 if it won't fit)."""
    if not title_tokens or budget < 2:
        return []
    use = min(len(title_tokens), min(budget, TITLE_BUDGET) - 1)
    return [hash_token(t, vocab_size) for t in title_tokens[:use]] + [SEP_ID]


def featurize(
    record: MentionRecord,
    max_context: int = DEFAULT_MAX_CONTEXT,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
) -> FeaturizedMention:
    """Map a mention record to its fixed-window token-id input."""
    if record.source == DESCRIPTION:
        ids = _title_part(record.title_tokens, vocab_size, max_context)
        remaining = max_context - len(ids)
        ids += [hash_token(t, vocab_size) for t in record.context_tokens[:remaining]]
        if not ids:
            raise CorpusError(f"record {record.mention_id!r}: nothing to featurize")
        return FeaturizedMention(tuple(ids), (TYPE_DESCRIPTION,) * len(ids), vocab_size)

    span_len = record.span_end - record.span_start
    core = span_len + 2
    if max_context < span_len + 4:
        raise CorpusError(
            f"record {record.mention_id!r}: span of {span_len} tokens cannot fit "
            f"in a context window of {max_context}")

    title = _title_part(record.title_tokens, vocab_size, max_context - core)
    budget = max_context - len(title) - core
    left_avail = record.span_start
    right_avail = len(record.context_tokens) - record.span_end
    half = budget // 2
    left_take = min(left_avail, half + max(0, (budget - half) - right_avail))
    right_take = min(right_avail, (budget - half) + max(0, half - left_avail))

    context = record.context_tokens
    ids = list(title)
    ids += [hash_token(t, vocab_size)
            for t in context[record.span_start - left_take:record.span_start]]
    ids.append(OPEN_ID)
    ids += [hash_token(t, vocab_size)
            for t in context[record.span_start:record.span_end]]
    ids.append(CLOSE_ID)
    ids += [hash_token(t, vocab_size)
            for t in context[record.span_end:record.span_end + right_take]]
    assert len(ids) <= max_context, (len(ids), max_context)
    return FeaturizedMention(tuple(ids), (TYPE_ORGANIC,) * len(ids), vocab_size)
