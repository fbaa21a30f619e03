"""Throughput, latency, and recall-vs-exact measurement for search backends."""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .exact_index import MentionIndex, search_exact_rows, top_n_indices
from .quantized import QuantizedIndex, SearchParams, search_ann_rows

Target = Union[MentionIndex, QuantizedIndex]


@dataclasses.dataclass(frozen=True)
class ProfileResult:
    label: str
    n_queries: int
    repetitions: int
    threads: int
    qps: float
    mean_latency_ms: float
    recall_vs_exact: Dict[int, float]
    kernel_backend: str

    def tsv_row(self, cuts: Sequence[int]) -> str:
        cells = [self.label, f"{self.qps:.1f}", f"{self.mean_latency_ms:.3f}"]
        cells += [f"{self.recall_vs_exact.get(c, float('nan')):.4f}" for c in cuts]
        cells += [str(self.n_queries), str(self.threads), self.kernel_backend]
        return "\t".join(cells)


def _exact_topn_batch(index: MentionIndex, queries: np.ndarray, top_n: int,
                      chunk: int = 256) -> list:
    """Exact top rows per query via batched matmul (throughput-oriented path)."""
    out = []
    vecs = index.vectors
    for lo in range(0, queries.shape[0], chunk):
        scores = queries[lo:lo + chunk] @ vecs.T
        for row in scores:
            out.append(top_n_indices(row, top_n))
    return out


def _searcher(target: Target, top_n: int, params: Optional[SearchParams]):
    if isinstance(target, QuantizedIndex):
        params = params or SearchParams()
        if params.top_n != top_n:
            params = dataclasses.replace(params, top_n=top_n)
        return lambda q: search_ann_rows(target, q, params)[0]
    return lambda q: search_exact_rows(target, q, top_n)[0]


def profile(
    target: Target,
    queries: np.ndarray,
    repetitions: int = 3,
    *,
    search_params: Optional[SearchParams] = None,
    recall_cuts: Sequence[int] = (1, 10, 100),
    threads: Optional[int] = None,
    label: Optional[str] = None,
) -> ProfileResult:
    """Measure one search configuration against a query matrix.

    Latency is single-threaded per-query wall time; throughput runs the
    same queries across a thread pool. Recall compares returned rows to
    the exact top-k over the same vectors at each cut.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    n_queries = queries.shape[0]
    if n_queries == 0:
        raise ValueError("no queries to profile")
    threads = threads or os.cpu_count() or 1
    top_n = max(recall_cuts)
    search = _searcher(target, top_n, search_params)
    base = target.base if isinstance(target, QuantizedIndex) else target
    if base is None:
        raise ValueError("quantized index needs an attached base for profiling")

    # Warm-up pass doubles as the result set for recall checks.
    returned = [search(queries[i]) for i in range(n_queries)]

    start = time.perf_counter()
    for _ in range(repetitions):
        for i in range(n_queries):
            search(queries[i])
    mean_latency_ms = (time.perf_counter() - start) * 1000.0 / (repetitions * n_queries)

    def worker(span: Tuple[int, int]) -> None:
        for _ in range(repetitions):
            for i in range(*span):
                search(queries[i])

    bounds = np.linspace(0, n_queries, threads + 1).astype(int)
    spans = [(int(bounds[t]), int(bounds[t + 1])) for t in range(threads)]
    start = time.perf_counter()
    if threads == 1:
        worker(spans[0])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(worker, spans))
    qps = repetitions * n_queries / (time.perf_counter() - start)

    exact = _exact_topn_batch(base, queries, top_n)
    recall = {}
    for cut in recall_cuts:
        hits = 0
        total = 0
        for got, want in zip(returned, exact):
            want_cut = want[:cut]
            hits += np.isin(want_cut, got[:cut]).sum()
            total += want_cut.shape[0]
        recall[cut] = hits / total if total else float("nan")

    if label is None:
        label = "exact" if isinstance(target, MentionIndex) else "quantized"
    return ProfileResult(
        label=label,
        n_queries=n_queries,
        repetitions=repetitions,
        threads=threads,
        qps=qps,
        mean_latency_ms=mean_latency_ms,
        recall_vs_exact=recall,
        kernel_backend=_kernels.backend(),
    )


def profile_table(results: Sequence[ProfileResult],
                  cuts: Sequence[int] = (1, 10, 100)) -> str:
    """TSV with one row per profiled configuration."""
    header = ["config", "qps", "latency_ms"]
    header += [f"recall_vs_exact@{c}" for c in cuts]
    header += ["queries", "threads", "kernel"]
    lines = ["\t".join(header)]
    lines += [r.tsv_row(cuts) for r in results]
    return "\n".join(lines) + "\n"
