"""Command-line pipeline: ingest, pairs, train, mine, index, link, evaluate.

Flag values override config-file values, which override built-in
defaults. Logs go to stderr; data goes to files or stdout. Outputs are
written atomically. Exit codes: 2 usage error, 3 missing input file,
4 unreadable or version-mismatched binary artifact, 1 other failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from typing import List, Optional, Sequence

import numpy as np

from .config import PipelineConfig, load_config
from .encoder import init_params, load_params, save_params
from .errors import ArtifactFormatError, CorpusError, TrainingDivergedError
from .evaluation import (
    entries_from_objects,
    entries_from_predictions,
    report,
    write_report,
)
from .exact_index import build_index, load_index, save_index
from .inference import (
    MODES,
    predict_batch,
    read_predictions,
    write_predictions,
)
from .io_utils import atomic_open
from .mining import mine_hard_negatives, read_mined, to_train_examples, write_mined
from .pairs import build_description_pairs, build_mention_pairs, split_pages
from .profiling import profile, profile_table
from .quantized import (
    QuantizerConfig,
    SearchParams,
    load_quantized,
    save_quantized,
    train_quantizer,
)
from .records import (
    DESCRIPTION,
    ORGANIC,
    ingest_corpus,
    read_pairs,
    write_corpus,
    write_pairs,
)
from .synthetic import SyntheticConfig, make_synthetic_corpus, random_unit_vectors
from .train import TrainConfig, examples_from_pairs, train

logger = logging.getLogger("mentionlink")

INDEX_MODES = ("both", "mentions", "descriptions-only")


def _pick(flag, fallback):
    return fallback if flag is None else flag


def _workpath(workdir: str, flag: Optional[str], default_name: str) -> str:
    return flag if flag is not None else os.path.join(workdir, default_name)


def _parse_leaves(text: str):
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return (parts[0], parts[1])
    raise argparse.ArgumentTypeError("expected K or K1,K2")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="TOML config file")
    sub.add_argument("--workdir", help="directory for default artifact paths")
    sub.add_argument("--seed", type=int, help="seed for all sampled choices")
    sub.add_argument("--threads", type=int, help="worker threads where supported")
    sub.add_argument("-v", "--verbose", action="store_true")


def _setup(args) -> tuple:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = load_config(args.config)
    workdir = _pick(args.workdir, cfg.workdir)
    seed = _pick(args.seed, cfg.seed)
    return cfg, workdir, seed


def _filter_mode(records, mode: str):
    if mode == "mentions":
        return [r for r in records if r.source == ORGANIC], False
    if mode == "descriptions-only":
        return [r for r in records if r.source == DESCRIPTION], True
    return list(records), True


def _organic_counts(records) -> Counter:
    return Counter(r.entity_id for r in records if r.source == ORGANIC)


def cmd_ingest(args) -> int:
    cfg, workdir, _ = _setup(args)
    records = []
    for path in args.input:
        records.extend(ingest_corpus(path))
    out = _workpath(workdir, args.output, "records.jsonl")
    write_corpus(out, records)
    n_desc = sum(1 for r in records if r.source == DESCRIPTION)
    logger.info("wrote %d records (%d descriptions) to %s",
                len(records), n_desc, out)
    return 0


def cmd_pairs(args) -> int:
    cfg, workdir, seed = _setup(args)
    records = ingest_corpus(_workpath(workdir, args.records, "records.jsonl"))
    test_fraction = _pick(args.test_fraction, cfg.pairs.test_fraction)
    if test_fraction > 0:
        records, held_out = split_pages(records, test_fraction, seed=seed)
        train_path = _workpath(workdir, None, "records.train.jsonl")
        test_path = _workpath(workdir, None, "records.test.jsonl")
        write_corpus(train_path, records)
        write_corpus(test_path, held_out)
        logger.info("page split: %d train / %d held-out records",
                    len(records), len(held_out))
    cap = _pick(args.pair_cap, cfg.pairs.pair_cap)
    pairs = build_mention_pairs(records, per_entity_pair_cap=cap, seed=seed)
    if _pick(args.description_pairs, cfg.pairs.include_descriptions):
        descriptions = [r for r in records if r.source == DESCRIPTION]
        pairs += build_description_pairs(descriptions, records, seed=seed)
    out = _workpath(workdir, args.output, "pairs.tsv")
    write_pairs(out, pairs)
    logger.info("wrote %d pairs to %s", len(pairs), out)
    return 0


def cmd_train(args) -> int:
    cfg, workdir, seed = _setup(args)
    enc = cfg.encoder
    vocab_size = _pick(args.vocab_size, enc.vocab_size)
    max_context = _pick(args.max_context, enc.max_context)
    records = ingest_corpus(_workpath(workdir, args.records, "records.jsonl"))
    if args.mined:
        mined = read_mined(args.mined)
        examples = to_train_examples(mined, records, vocab_size, max_context)
        logger.info("training on %d mined examples", len(examples))
    else:
        pairs = read_pairs(_workpath(workdir, args.pairs, "pairs.tsv"))
        examples = examples_from_pairs(pairs, records, vocab_size, max_context)
        logger.info("training on %d plain pairs", len(examples))
    params = init_params(
        vocab_size=vocab_size,
        d_emb=_pick(args.d_emb, enc.d_emb),
        d_hidden=_pick(args.d_hidden, enc.d_hidden),
        d=_pick(args.d, enc.d),
        seed=seed,
        temperature=_pick(args.temperature, enc.temperature),
    )
    tc = TrainConfig(
        batch_size=_pick(args.batch_size, cfg.train.batch_size),
        steps=_pick(args.steps, cfg.train.steps),
        learning_rate=_pick(args.learning_rate, cfg.train.learning_rate),
        seed=seed,
        hard_negative_weight=_pick(args.hard_negative_weight,
                                   cfg.train.hard_negative_weight),
        weight_decay=_pick(args.weight_decay, cfg.train.weight_decay),
        warmup_fraction=cfg.train.warmup_fraction,
        log_every=cfg.train.log_every,
    )
    result = train(params, examples, tc)
    out = _workpath(workdir, args.output, "encoder.mlmn")
    save_params(out, result.params)
    curve_path = _workpath(workdir, None, "loss_curve.tsv")
    with atomic_open(curve_path, "w") as fh:
        fh.write("step\ttotal\tin_batch\thard_negative\n")
        for i, (t, a, h) in enumerate(zip(result.loss_curve,
                                          result.inbatch_curve,
                                          result.hard_negative_curve)):
            fh.write(f"{i}\t{t:.6f}\t{a:.6f}\t{h:.6f}\n")
    logger.info("saved checkpoint to %s (final loss %.4f)",
                out, result.loss_curve[-1])
    return 0


def cmd_mine(args) -> int:
    cfg, workdir, seed = _setup(args)
    records = ingest_corpus(_workpath(workdir, args.records, "records.jsonl"))
    pairs = read_pairs(_workpath(workdir, args.pairs, "pairs.tsv"))
    params = load_params(_workpath(workdir, args.checkpoint, "encoder.mlmn"))
    index = load_index(_workpath(workdir, args.index, "index.midx"))
    mined, stats = mine_hard_negatives(
        params, index, pairs, records,
        negatives_per_query=_pick(args.negatives_per_query,
                                  cfg.mining.negatives_per_query),
        cap_ratio=_pick(args.cap_ratio, cfg.mining.cap_ratio),
        resample_positives=_pick(args.resample_positives,
                                 cfg.mining.resample_positives),
        max_context=cfg.encoder.max_context,
    )
    out = _workpath(workdir, args.output, "mined.jsonl")
    write_mined(out, mined)
    logger.info("wrote %d mined examples to %s", len(mined), out)
    return 0


def cmd_build_index(args) -> int:
    cfg, workdir, seed = _setup(args)
    records = ingest_corpus(_workpath(workdir, args.records, "records.jsonl"))
    params = load_params(_workpath(workdir, args.checkpoint, "encoder.mlmn"))
    mode = _pick(args.index_mode, cfg.index.mode)
    if mode not in INDEX_MODES:
        raise ValueError(f"--index-mode must be one of {INDEX_MODES}")
    kept, include_desc = _filter_mode(records, mode)
    index = build_index(params, kept, include_descriptions=include_desc,
                        max_context=cfg.encoder.max_context)
    out = _workpath(workdir, args.output, "index.midx")
    save_index(out, index)
    logger.info("indexed %d mentions (%s) to %s", len(index), mode, out)
    if args.quantize:
        qc = QuantizerConfig(
            num_leaves=_pick(args.num_leaves, cfg.ann.num_leaves),
            block_dim=_pick(args.block_dim, cfg.ann.block_dim),
            kmeans_iters=_pick(args.kmeans_iters, cfg.ann.kmeans_iters),
            seed=seed,
            anisotropic_eta=_pick(args.anisotropic_eta, cfg.ann.anisotropic_eta),
        )
        qidx = train_quantizer(index, qc)
        qout = _workpath(workdir, args.quantized_output, "index.mqdx")
        save_quantized(qout, qidx)
        logger.info("quantized index (%d leaves) to %s", qidx.num_leaves, qout)
    return 0


def _load_target(args, cfg, workdir):
    index = load_index(_workpath(workdir, args.index, "index.midx"))
    if getattr(args, "quantized_index", None):
        qidx = load_quantized(args.quantized_index, base=index)
        sp = SearchParams(
            leaves_to_probe=_pick(args.leaves_to_probe, cfg.ann.leaves_to_probe),
            rescore_count=_pick(args.rescore_count, cfg.ann.rescore_count),
            upper_probe=cfg.ann.upper_probe,
        )
        return qidx, sp
    return index, None


def cmd_link(args) -> int:
    cfg, workdir, seed = _setup(args)
    queries = ingest_corpus(_workpath(workdir, args.queries, "queries.jsonl"))
    params = load_params(_workpath(workdir, args.checkpoint, "encoder.mlmn"))
    target, sp = _load_target(args, cfg, workdir)
    mode = _pick(args.mode, cfg.inference.mode)
    if mode not in MODES:
        raise ValueError(f"--mode must be one of {MODES}")
    preds, errors = predict_batch(
        params, target, queries,
        mode=mode,
        k=_pick(args.k, cfg.inference.k),
        top_n=_pick(args.top_n, cfg.inference.top_n),
        weighted=_pick(args.weighted, cfg.inference.weighted),
        search_params=sp,
        max_context=cfg.encoder.max_context,
        threads=_pick(args.threads, 1),
    )
    out = _workpath(workdir, args.output, "predictions.jsonl")
    write_predictions(out, queries, preds)
    ok = sum(1 for p in preds if p is not None)
    logger.info("wrote %d predictions (%d failed) to %s", ok, len(errors), out)
    return 0


def cmd_evaluate(args) -> int:
    cfg, workdir, seed = _setup(args)
    queries = ingest_corpus(_workpath(workdir, args.queries, "queries.jsonl"))
    counts = {}
    if args.records:
        counts = _organic_counts(ingest_corpus(args.records))
    if args.predictions:
        entries = entries_from_objects(read_predictions(args.predictions), queries)
        if not counts and args.index:
            counts = load_index(args.index).entity_positive_counts
    else:
        records = ingest_corpus(_workpath(workdir, args.records, "records.jsonl"))
        if not counts:
            counts = _organic_counts(records)
        params = load_params(_workpath(workdir, args.checkpoint, "encoder.mlmn"))
        mode = _pick(args.index_mode, cfg.index.mode)
        if mode not in INDEX_MODES:
            raise ValueError(f"--index-mode must be one of {INDEX_MODES}")
        kept, include_desc = _filter_mode(records, mode)
        index = build_index(params, kept, include_descriptions=include_desc,
                            max_context=cfg.encoder.max_context)
        preds, _ = predict_batch(
            params, index, queries,
            mode=_pick(args.mode, cfg.inference.mode),
            k=_pick(args.k, cfg.inference.k),
            top_n=_pick(args.top_n, cfg.inference.top_n),
            weighted=cfg.inference.weighted,
            max_context=cfg.encoder.max_context,
            threads=_pick(args.threads, 1),
        )
        entries = entries_from_predictions(queries, preds)
    cuts = tuple(args.cuts) if args.cuts else cfg.eval.cuts
    rep = report(entries, counts, cuts)
    out = _workpath(workdir, args.output, "report.tsv")
    write_report(out, rep)
    print(rep.format_table())
    logger.info("wrote report to %s (%d scored, %d excluded)",
                out, rep.n_scored, rep.n_excluded)
    return 0


def cmd_profile(args) -> int:
    cfg, workdir, seed = _setup(args)
    index = load_index(_workpath(workdir, args.index, "index.midx"))
    if args.queries and args.checkpoint:
        params = load_params(args.checkpoint)
        from .encoder import encode_records

        records = ingest_corpus(args.queries)
        queries = encode_records(params, records,
                                 max_context=cfg.encoder.max_context)
        queries = queries.astype(np.float32)
    else:
        queries = random_unit_vectors(args.n_queries, index.d, seed=seed)
    cuts = tuple(args.cuts) if args.cuts else cfg.eval.cuts
    threads = _pick(args.threads, None)
    results = [profile(index, queries, args.repetitions, recall_cuts=cuts,
                       threads=threads, label="exact")]
    if args.quantized_index:
        qidx = load_quantized(args.quantized_index, base=index)
        sp = SearchParams(
            leaves_to_probe=_pick(args.leaves_to_probe, cfg.ann.leaves_to_probe),
            rescore_count=_pick(args.rescore_count, cfg.ann.rescore_count),
            upper_probe=cfg.ann.upper_probe,
        )
        results.append(profile(qidx, queries, args.repetitions,
                               search_params=sp, recall_cuts=cuts,
                               threads=threads, label="quantized"))
    table = profile_table(results, cuts)
    out = _workpath(workdir, args.output, "profile.tsv")
    with atomic_open(out, "w") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def cmd_synth(args) -> int:
    cfg, workdir, seed = _setup(args)
    sc = SyntheticConfig(
        entities=_pick(args.entities, cfg.synth.entities),
        clusters_per_entity=_pick(args.clusters, cfg.synth.clusters_per_entity),
        mentions_per_cluster=_pick(args.mentions_per_cluster,
                                   cfg.synth.mentions_per_cluster),
        queries_per_cluster=_pick(args.queries_per_cluster,
                                  cfg.synth.queries_per_cluster),
        zero_shot_entities=_pick(args.zero_shot_entities,
                                 cfg.synth.zero_shot_entities),
        vocab=_pick(args.vocab, cfg.synth.vocab),
        noise=_pick(args.noise, cfg.synth.noise),
        seed=seed,
    )
    corpus = make_synthetic_corpus(sc)
    records_out = _workpath(workdir, args.output, "records.jsonl")
    queries_out = _workpath(workdir, args.queries_output, "queries.jsonl")
    write_corpus(records_out, corpus.all_records())
    write_corpus(queries_out, corpus.query_records)
    logger.info("synthetic corpus: %d train + %d descriptions to %s, "
                "%d queries to %s", len(corpus.train_records),
                len(corpus.description_records), records_out,
                len(corpus.query_records), queries_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mentionlink",
        description="Entity linking by nearest labeled mentions.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="validate and merge mention files")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("pairs", help="build same-entity training pairs")
    _add_common(p)
    p.add_argument("--records")
    p.add_argument("--output")
    p.add_argument("--pair-cap", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--description-pairs", action=argparse.BooleanOptionalAction)
    p.set_defaults(func=cmd_pairs)

    p = subs.add_parser("train", help="train the mention encoder")
    _add_common(p)
    p.add_argument("--records")
    p.add_argument("--pairs")
    p.add_argument("--mined", help="mined examples JSONL (overrides --pairs)")
    p.add_argument("--output")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hard-negative-weight", type=float)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--d-emb", type=int)
    p.add_argument("--d-hidden", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--max-context", type=int)
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("mine", help="mine hard negatives from an index")
    _add_common(p)
    p.add_argument("--records")
    p.add_argument("--pairs")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--output")
    p.add_argument("--negatives-per-query", type=int)
    p.add_argument("--cap-ratio", type=int)
    p.add_argument("--resample-positives", action=argparse.BooleanOptionalAction)
    p.set_defaults(func=cmd_mine)

    p = subs.add_parser("build-index", help="encode records into an index")
    _add_common(p)
    p.add_argument("--records")
    p.add_argument("--checkpoint")
    p.add_argument("--output")
    p.add_argument("--index-mode", choices=INDEX_MODES)
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--quantized-output")
    p.add_argument("--num-leaves", type=_parse_leaves)
    p.add_argument("--block-dim", type=int)
    p.add_argument("--kmeans-iters", type=int)
    p.add_argument("--anisotropic-eta", type=float)
    p.set_defaults(func=cmd_build_index)

    p = subs.add_parser("link", help="predict entities for query mentions")
    _add_common(p)
    p.add_argument("--queries")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--quantized-index")
    p.add_argument("--output")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--k", type=int)
    p.add_argument("--top-n", type=int)
    p.add_argument("--weighted", action=argparse.BooleanOptionalAction)
    p.add_argument("--leaves-to-probe", type=int)
    p.add_argument("--rescore-count", type=int)
    p.set_defaults(func=cmd_link)

    p = subs.add_parser("evaluate", help="score predictions or run end to end")
    _add_common(p)
    p.add_argument("--queries")
    p.add_argument("--predictions", help="score an existing prediction file")
    p.add_argument("--records")
    p.add_argument("--checkpoint")
    p.add_argument("--index", help="index file for frequency buckets")
    p.add_argument("--index-mode", choices=INDEX_MODES)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--k", type=int)
    p.add_argument("--top-n", type=int)
    p.add_argument("--cuts", type=int, nargs="+")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("profile", help="measure search speed and recall")
    _add_common(p)
    p.add_argument("--index")
    p.add_argument("--quantized-index")
    p.add_argument("--queries", help="query mention file (needs --checkpoint)")
    p.add_argument("--checkpoint")
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--cuts", type=int, nargs="+")
    p.add_argument("--leaves-to-probe", type=int)
    p.add_argument("--rescore-count", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_profile)

    p = subs.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--output")
    p.add_argument("--queries-output")
    p.add_argument("--entities", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--mentions-per-cluster", type=int)
    p.add_argument("--queries-per-cluster", type=int)
    p.add_argument("--zero-shot-entities", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        logger.error("missing input file: %s", exc)
        return 3
    except (ArtifactFormatError, EOFError) as exc:
        logger.error("unreadable artifact: %s", exc)
        return 4
    except TrainingDivergedError as exc:
        logger.error("training diverged: %s", exc)
        return 1
    except (CorpusError, ValueError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
