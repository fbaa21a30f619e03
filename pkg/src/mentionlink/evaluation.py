"""Recall evaluation sliced by language and entity frequency."""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .inference import EntityPrediction
from .io_utils import atomic_open
from .records import MentionRecord

BUCKET_EDGES = (0, 1, 10, 100, 1000, 10000)
BUCKET_LABELS = ("[0,1)", "[1,10)", "[10,100)", "[100,1k)", "[1k,10k)", "[10k,+)")
DEFAULT_CUTS = (1, 10, 100)


def bucket_of(count: int) -> str:
    """Frequency bucket label for a training-mention count (left-inclusive)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    for edge, label in zip(reversed(BUCKET_EDGES), reversed(BUCKET_LABELS)):
        if count >= edge:
            return label
    raise AssertionError("unreachable")


@dataclasses.dataclass(frozen=True)
class EvalEntry:
    """One scored query: gold label, its slice keys, and the ranked entities."""

    query_id: str
    gold_entity: Optional[str]
    query_language: str
    predicted_entities: Tuple[str, ...]
    top_language: Optional[str]


def recall_at(predicted: Sequence[Sequence[str]],
              golds: Sequence[Optional[str]], cut: int) -> float:
    """Fraction of queries whose gold entity appears in the first ``cut``.

    Queries with no gold label are excluded from the denominator; an
    absent gold in the list counts as a miss at every cut.
    """
    if cut < 1:
        raise ValueError("cut must be >= 1")
    hits = 0
    total = 0
    for ranked, gold in zip(predicted, golds):
        if gold is None:
            continue
        total += 1
        if gold in list(ranked)[:cut]:
            hits += 1
    return hits / total if total else float("nan")


def entries_from_predictions(
        records: Sequence[MentionRecord],
        predictions: Sequence[Optional[EntityPrediction]]) -> List[EvalEntry]:
    out = []
    for record, pred in zip(records, predictions):
        if pred is None:
            continue
        out.append(EvalEntry(
            query_id=record.mention_id,
            gold_entity=record.entity_id or None,
            query_language=record.language,
            predicted_entities=tuple(pred.entity_ids()),
            top_language=pred.ranked[0].language if pred.ranked else None))
    return out


def entries_from_objects(objects: Sequence[dict],
                         queries: Sequence[MentionRecord]) -> List[EvalEntry]:
    """Join prediction JSON objects with query records for language slices."""
    lang = {r.mention_id: r.language for r in queries}
    gold = {r.mention_id: r.entity_id for r in queries}
    out = []
    for obj in objects:
        qid = obj["query_id"]
        ranked = obj.get("predictions", [])
        out.append(EvalEntry(
            query_id=qid,
            gold_entity=obj.get("gold_entity") or gold.get(qid) or None,
            query_language=lang.get(qid, ""),
            predicted_entities=tuple(p["entity_id"] for p in ranked),
            top_language=ranked[0]["language"] if ranked else None))
    return out


@dataclasses.dataclass
class EvalReport:
    cuts: Tuple[int, ...]
    micro: Dict[int, float]
    per_language: Dict[str, Dict[int, float]]
    per_bucket: Dict[str, Dict[int, float]]
    macro_language: Dict[int, float]
    macro_bucket: Dict[int, float]
    counts: Dict[str, int]
    cross_language_fraction: float
    n_scored: int
    n_excluded: int

    def rows(self) -> List[Tuple[str, str, str, str]]:
        """(slice, cut, value, n) rows in a stable order."""
        out = []
        for cut in self.cuts:
            out.append(("micro", str(cut), f"{self.micro[cut]:.4f}",
                        str(self.n_scored)))
        for lang in sorted(self.per_language):
            for cut in self.cuts:
                out.append((f"lang={lang}", str(cut),
                            f"{self.per_language[lang][cut]:.4f}",
                            str(self.counts[f'lang={lang}'])))
        for label in BUCKET_LABELS:
            if label not in self.per_bucket:
                continue
            for cut in self.cuts:
                out.append((f"bucket={label}", str(cut),
                            f"{self.per_bucket[label][cut]:.4f}",
                            str(self.counts[f'bucket={label}'])))
        for cut in self.cuts:
            out.append(("macro_language", str(cut),
                        f"{self.macro_language[cut]:.4f}",
                        str(len(self.per_language))))
        for cut in self.cuts:
            out.append(("macro_bucket", str(cut),
                        f"{self.macro_bucket[cut]:.4f}",
                        str(len(self.per_bucket))))
        out.append(("cross_language_top1", "-",
                    f"{self.cross_language_fraction:.4f}", str(self.n_scored)))
        out.append(("excluded_no_gold", "-", str(self.n_excluded), "-"))
        return out

    def to_tsv(self) -> str:
        lines = ["slice\tcut\tvalue\tn"]
        lines += ["\t".join(row) for row in self.rows()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["slice,cut,value,n"]
        lines += [",".join(row) for row in self.rows()]
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        rows = self.rows()
        width = max(len(r[0]) for r in rows)
        lines = [f"{'slice':<{width}}  cut  value   n"]
        for slc, cut, val, n in rows:
            lines.append(f"{slc:<{width}}  {cut:>3}  {val:>6}  {n}")
        return "\n".join(lines)


def _slice_recall(entries: Sequence[EvalEntry],
                  cuts: Sequence[int]) -> Dict[int, float]:
    predicted = [e.predicted_entities for e in entries]
    golds = [e.gold_entity for e in entries]
    return {cut: recall_at(predicted, golds, cut) for cut in cuts}


def _macro(per_slice: Mapping[str, Dict[int, float]],
           cuts: Sequence[int]) -> Dict[int, float]:
    if not per_slice:
        return {cut: float("nan") for cut in cuts}
    return {cut: sum(v[cut] for v in per_slice.values()) / len(per_slice)
            for cut in cuts}


def report(entries: Sequence[EvalEntry],
           positive_counts: Mapping[str, int],
           cuts: Sequence[int] = DEFAULT_CUTS) -> EvalReport:
    """Slice recalls by query language and gold-entity frequency bucket.

    Micro averages over queries; macro averages over non-empty slices.
    Gold entities missing from ``positive_counts`` land in bucket [0,1),
    which is exactly the zero-shot slice.
    """
    cuts = tuple(cuts)
    scored = [e for e in entries if e.gold_entity is not None]
    excluded = len(entries) - len(scored)

    by_lang: Dict[str, List[EvalEntry]] = {}
    by_bucket: Dict[str, List[EvalEntry]] = {}
    for e in scored:
        by_lang.setdefault(e.query_language, []).append(e)
        bucket = bucket_of(positive_counts.get(e.gold_entity, 0))
        by_bucket.setdefault(bucket, []).append(e)

    per_language = {k: _slice_recall(v, cuts) for k, v in by_lang.items()}
    per_bucket = {k: _slice_recall(v, cuts) for k, v in by_bucket.items()}
    counts = {f"lang={k}": len(v) for k, v in by_lang.items()}
    counts.update({f"bucket={k}": len(v) for k, v in by_bucket.items()})

    with_top = [e for e in scored if e.top_language is not None]
    cross = (sum(1 for e in with_top if e.top_language != e.query_language)
             / len(with_top)) if with_top else float("nan")

    return EvalReport(
        cuts=cuts,
        micro=_slice_recall(scored, cuts),
        per_language=per_language,
        per_bucket=per_bucket,
        macro_language=_macro(per_language, cuts),
        macro_bucket=_macro(per_bucket, cuts),
        counts=counts,
        cross_language_fraction=cross,
        n_scored=len(scored),
        n_excluded=excluded,
    )


def write_report(path: str, rep: EvalReport) -> None:
    with atomic_open(path, "w") as fh:
        fh.write(rep.to_tsv())
