"""Approximate inner-product search over a partitioned, quantized index.

The index is split into leaves by k-means; each stored vector keeps its
leaf centroid plus 4-bit codebook codes for the residual. A query scores
candidates as (query . centroid) + sum of per-block lookup-table entries,
then rescores a shortlist against int8 rows before returning exact-order
results. Construction is deterministic for a fixed config and seed.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import struct
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .errors import ArtifactFormatError
from .exact_index import MentionIndex, top_n_indices
from .io_utils import atomic_open, read_array, write_array

logger = logging.getLogger(__name__)

QUANTIZED_MAGIC = b"MQDX"
QUANTIZED_VERSION = 1
CODEBOOK_SIZE = 16


@dataclasses.dataclass(frozen=True)
class QuantizerConfig:
    """Construction parameters.

    ``num_leaves`` may be an int (flat partition) or a (top, per_cell)
    pair for a two-level tree. ``anisotropic_eta`` > 1 weights residual
    error along each vector's own direction more heavily when training
    codebooks; 1.0 recovers plain squared error.
    """

    num_leaves: Union[int, Tuple[int, int]] = 64
    block_dim: int = 2
    kmeans_iters: int = 10
    seed: int = 0
    anisotropic_eta: float = 1.0

    def __post_init__(self):
        if self.block_dim < 1:
            raise ValueError("block_dim must be >= 1")
        if self.kmeans_iters < 1:
            raise ValueError("kmeans_iters must be >= 1")
        if self.anisotropic_eta < 1.0:
            raise ValueError("anisotropic_eta must be >= 1.0")


@dataclasses.dataclass(frozen=True)
class SearchParams:
    """Per-query knobs: probe width, rescore depth, results returned."""

    leaves_to_probe: int = 8
    rescore_count: int = 200
    top_n: int = 100
    upper_probe: Optional[int] = None

    def __post_init__(self):
        if min(self.leaves_to_probe, self.rescore_count, self.top_n) < 1:
            raise ValueError("search params must be >= 1")


@dataclasses.dataclass
class QuantizedIndex:
    """Grouped storage: rows sorted by leaf so each leaf is a contiguous slab.

    ``row_order[i]`` maps grouped position i back to the base index row;
    tie-breaking during search uses base row order so results are
    comparable with exact search. ``levels`` holds centroid matrices from
    root to leaves; flat indexes have a single entry.
    """

    levels: List[np.ndarray]
    leaf_parent: Optional[np.ndarray]
    codebooks: np.ndarray
    codes: np.ndarray
    int8_vectors: np.ndarray
    scales: np.ndarray
    row_order: np.ndarray
    leaf_start: np.ndarray
    anisotropic_eta: float
    base: Optional[MentionIndex] = None
    # Derived, not serialized: two 4-bit codes per byte so the scan kernel
    # does one 256-entry lookup per code pair instead of two 16-entry ones.
    packed_codes: np.ndarray = dataclasses.field(init=False, repr=False)

    def __post_init__(self):
        n = self.codes.shape[0]
        if not (self.int8_vectors.shape[0] == self.scales.shape[0]
                == self.row_order.shape[0] == n):
            raise ValueError("quantized blocks misaligned")
        if self.leaf_start.shape[0] != self.num_leaves + 1:
            raise ValueError("leaf offsets misaligned")
        if self.base is not None and len(self.base) != n:
            raise ValueError("base index size does not match quantized index")
        nblocks = self.codes.shape[1]
        padded = self.codes
        if nblocks % 2:
            padded = np.hstack([padded, np.zeros((n, 1), dtype=np.uint8)])
        self.packed_codes = np.ascontiguousarray(
            padded[:, 0::2] | (padded[:, 1::2] << 4))

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def d(self) -> int:
        return self.int8_vectors.shape[1]

    @property
    def block_dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def num_leaves(self) -> int:
        return self.levels[-1].shape[0]

    def leaf_assignments(self) -> np.ndarray:
        """Leaf id per base-index row (reconstructed from the grouping)."""
        counts = np.diff(self.leaf_start)
        grouped = np.repeat(np.arange(self.num_leaves), counts)
        assign = np.empty(len(self), dtype=np.int64)
        assign[self.row_order] = grouped
        return assign


def _assign_points(data: np.ndarray, centroids: np.ndarray,
                   dirs: Optional[np.ndarray], eta: float,
                   chunk: int = 8192) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row plus that distance, chunked to bound memory."""
    n = data.shape[0]
    assign = np.empty(n, dtype=np.int64)
    dmin = np.empty(n, dtype=np.float32)
    c_sq = (centroids ** 2).sum(axis=1)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        block = data[lo:hi]
        dist = ((block ** 2).sum(axis=1)[:, None]
                - 2.0 * (block @ centroids.T) + c_sq[None, :])
        if dirs is not None and eta != 1.0:
            a = (block * dirs[lo:hi]).sum(axis=1)
            proj = dirs[lo:hi] @ centroids.T
            dist += (eta - 1.0) * (a[:, None] - proj) ** 2
        assign[lo:hi] = np.argmin(dist, axis=1)
        dmin[lo:hi] = dist[np.arange(hi - lo), assign[lo:hi]]
    return assign, dmin


def _repair_empty(assign: np.ndarray, dmin: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the farthest point whose donor keeps a member."""
    counts = np.bincount(assign, minlength=k)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return assign
    order = np.lexsort((np.arange(assign.shape[0]), -dmin))
    assign = assign.copy()
    cursor = 0
    for j in empties:
        while cursor < order.shape[0] and counts[assign[order[cursor]]] <= 1:
            cursor += 1
        if cursor >= order.shape[0]:
            break
        p = order[cursor]
        counts[assign[p]] -= 1
        assign[p] = j
        counts[j] = 1
        cursor += 1
    return assign


def _cluster_means(data: np.ndarray, assign: np.ndarray, k: int,
                   dirs: Optional[np.ndarray], eta: float) -> np.ndarray:
    """Per-cluster optimum of the (possibly direction-weighted) objective.

    Plain case: the mean. Weighted case: solve the small d x d normal
    system sum(I + (eta-1) u u^T) c = sum(x + (eta-1)(x.u) u) per cluster.
    Accumulation runs in float64 column by column for determinism.
    """
    n, d = data.shape
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sums = np.empty((k, d), dtype=np.float64)
    for col in range(d):
        sums[:, col] = np.bincount(assign, weights=data[:, col], minlength=k)
    if dirs is None or eta == 1.0:
        return (sums / counts[:, None]).astype(np.float32)
    a = (data * dirs).sum(axis=1)
    rhs = sums.copy()
    for col in range(d):
        rhs[:, col] += (eta - 1.0) * np.bincount(
            assign, weights=a * dirs[:, col], minlength=k)
    gram = np.empty((k, d, d), dtype=np.float64)
    for p in range(d):
        for q in range(p, d):
            g = np.bincount(assign, weights=dirs[:, p] * dirs[:, q], minlength=k)
            gram[:, p, q] = g
            gram[:, q, p] = g
    systems = (counts[:, None, None] * np.eye(d)[None, :, :]
               + (eta - 1.0) * gram)
    return np.linalg.solve(systems, rhs[:, :, None])[:, :, 0].astype(np.float32)


def _kmeans_pp_init(data: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++: spread initial centroids by squared distance."""
    n = data.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((data - data[chosen[0]]) ** 2).sum(axis=1).astype(np.float64)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((data - data[nxt]) ** 2).sum(axis=1))
    return data[chosen].astype(np.float32).copy()


def kmeans(data: np.ndarray, k: int, iters: int, rng: np.random.Generator,
           dirs: Optional[np.ndarray] = None,
           eta: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with k-means++ init and empty-cluster repair.

    Returns (centroids, assignment). Each cluster is non-empty in the
    returned assignment whenever k <= len(data); centroids are the
    objective-optimal points for that assignment.
    """
    data = np.ascontiguousarray(data, dtype=np.float32)
    n = data.shape[0]
    if n == 0:
        raise ValueError("cannot cluster an empty set")
    k = min(k, n)
    centroids = _kmeans_pp_init(data, k, rng)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        assign, dmin = _assign_points(data, centroids, dirs, eta)
        assign = _repair_empty(assign, dmin, k)
        centroids = _cluster_means(data, assign, k, dirs, eta)
    return centroids, assign


def train_quantizer(index: Union[MentionIndex, np.ndarray],
                    config: QuantizerConfig) -> QuantizedIndex:
    """Partition, quantize residuals per block, and store int8 rows.

    Accepts either a mention index or a bare (n, d) vector matrix; with a
    bare matrix the result has no base attached and only row-level search
    (search_ann_rows) is available.
    """
    base = index if isinstance(index, MentionIndex) else None
    x = np.ascontiguousarray(
        index.vectors if base is not None else index, dtype=np.float32)
    n, d = x.shape
    if n == 0:
        raise ValueError("cannot quantize an empty index")
    if d % config.block_dim != 0:
        raise ValueError(f"dimension {d} not divisible by block_dim {config.block_dim}")
    rng = np.random.default_rng(config.seed)

    if isinstance(config.num_leaves, int):
        k = min(config.num_leaves, n)
        leaves, assign = kmeans(x, k, config.kmeans_iters, rng)
        levels = [leaves]
        leaf_parent = None
    else:
        k_top, k_sub = config.num_leaves
        top, top_assign = kmeans(x, min(k_top, n), config.kmeans_iters, rng)
        leaf_list, parent_list = [], []
        assign = np.empty(n, dtype=np.int64)
        for cell in range(top.shape[0]):
            members = np.flatnonzero(top_assign == cell)
            sub, sub_assign = kmeans(x[members], min(k_sub, members.size),
                                     config.kmeans_iters, rng)
            offset = sum(c.shape[0] for c in leaf_list)
            assign[members] = offset + sub_assign
            leaf_list.append(sub)
            parent_list.extend([cell] * sub.shape[0])
        levels = [top, np.concatenate(leaf_list, axis=0)]
        leaf_parent = np.asarray(parent_list, dtype=np.int64)

    leaves = levels[-1]
    num_leaves = leaves.shape[0]
    row_order = np.argsort(assign, kind="stable").astype(np.int64)
    counts = np.bincount(assign, minlength=num_leaves)
    leaf_start = np.zeros(num_leaves + 1, dtype=np.int64)
    np.cumsum(counts, out=leaf_start[1:])

    grouped = x[row_order]
    residuals = grouped - leaves[assign[row_order]]

    n_blocks = d // config.block_dim
    codebooks = np.empty((n_blocks, CODEBOOK_SIZE, config.block_dim),
                         dtype=np.float32)
    codes = np.empty((n, n_blocks), dtype=np.uint8)
    for b in range(n_blocks):
        sl = slice(b * config.block_dim, (b + 1) * config.block_dim)
        dirs = grouped[:, sl] if config.anisotropic_eta != 1.0 else None
        cb, cb_assign = kmeans(residuals[:, sl], CODEBOOK_SIZE,
                               config.kmeans_iters, rng,
                               dirs=dirs, eta=config.anisotropic_eta)
        if cb.shape[0] < CODEBOOK_SIZE:
            cb = np.concatenate(
                [cb, np.zeros((CODEBOOK_SIZE - cb.shape[0], config.block_dim),
                              dtype=np.float32)])
        codebooks[b] = cb
        codes[:, b] = cb_assign.astype(np.uint8)

    maxabs = np.abs(grouped).max(axis=1)
    scales = np.where(maxabs > 0, maxabs / 127.0, 1.0).astype(np.float32)
    int8_vectors = np.clip(np.rint(grouped / scales[:, None]),
                           -127, 127).astype(np.int8)

    return QuantizedIndex(
        levels=levels,
        leaf_parent=leaf_parent,
        codebooks=codebooks,
        codes=np.ascontiguousarray(codes),
        int8_vectors=np.ascontiguousarray(int8_vectors),
        scales=scales,
        row_order=row_order,
        leaf_start=leaf_start,
        anisotropic_eta=config.anisotropic_eta,
        base=base,
    )


def search_ann_rows(qidx: QuantizedIndex, query: np.ndarray,
                    params: SearchParams) -> Tuple[np.ndarray, np.ndarray]:
    """Approximate search returning (base row ids, int8-rescored scores).

    Probes the best-scoring leaves, ranks members by centroid + codebook
    lookup sums, rescores the shortlist against int8 rows. Ties at every
    stage break by ascending base row, matching exact search order.
    """
    query = np.ascontiguousarray(query, dtype=np.float32)
    leaves = qidx.levels[-1]

    if len(qidx.levels) == 1:
        cand = None
        leaf_scores = leaves @ query
    else:
        top = qidx.levels[0]
        upper = params.upper_probe
        if upper is None:
            # Cover the requested leaf count with 2x slack given even fan-out.
            upper = max(2, 2 * math.ceil(
                params.leaves_to_probe * top.shape[0] / max(qidx.num_leaves, 1)))
        cells = top_n_indices(top @ query, min(upper, top.shape[0]))
        cand = np.flatnonzero(np.isin(qidx.leaf_parent, cells))
        if cand.size == 0:
            raise ValueError("no candidate leaves")
        leaf_scores = leaves[cand] @ query

    n_probe = params.leaves_to_probe
    if n_probe > leaf_scores.shape[0]:
        logger.warning("leaves_to_probe=%d exceeds %d candidate leaves; clamping",
                       n_probe, leaf_scores.shape[0])
        n_probe = leaf_scores.shape[0]
    pos = top_n_indices(leaf_scores, n_probe,
                        tiebreak=cand if cand is not None else None)
    probe = pos if cand is None else cand[pos]
    leaf_base = leaf_scores[pos].astype(np.float32)

    # Per-block lookup tables: float32 dot products widened to float64 so
    # the scan kernel accumulates without per-lookup conversions.
    lut = (qidx.codebooks @ query.reshape(-1, qidx.block_dim)[:, :, None])[
        :, :, 0].astype(np.float64)
    rows, approx = _kernels.scan_scores(
        qidx.packed_codes, lut, qidx.leaf_start, probe.astype(np.int64),
        leaf_base)
    if rows.size == 0:
        raise ValueError("probed leaves are empty")

    # Same selection rule as top_n_indices, but the tiebreak rows are
    # gathered only for candidates at or above the cut.
    keep_n = min(params.rescore_count, approx.shape[0])
    kth = np.partition(approx, approx.shape[0] - keep_n)[approx.shape[0] - keep_n]
    cand = np.flatnonzero(approx >= kth)
    cand_orig = qidx.row_order[rows[cand]]
    sel = cand[np.lexsort((cand_orig, -approx[cand]))][:keep_n]
    shortlist = rows[sel]

    rescored = _kernels.int8_rescore(qidx.int8_vectors, qidx.scales,
                                     shortlist, query.astype(np.float64))
    final_orig = qidx.row_order[shortlist]
    keep = top_n_indices(rescored, params.top_n, tiebreak=final_orig)
    return final_orig[keep], rescored[keep]


def search_ann(qidx: QuantizedIndex, query: np.ndarray,
               params: SearchParams) -> List[Tuple[str, str, float]]:
    """Approximate top results as (mention_id, entity_id, score) triples."""
    if qidx.base is None:
        raise ValueError("quantized index has no base index attached")
    rows, scores = search_ann_rows(qidx, query, params)
    base = qidx.base
    return [(base.mention_ids[r], base.entity_ids[r], float(s))
            for r, s in zip(rows, scores)]


def save_quantized(path: str, qidx: QuantizedIndex) -> None:
    """MQDX file: centroid levels, codebooks, codes, int8 rows, layout."""
    n, n_blocks = qidx.codes.shape
    with atomic_open(path, "wb") as fh:
        fh.write(QUANTIZED_MAGIC)
        fh.write(struct.pack("<I", QUANTIZED_VERSION))
        fh.write(struct.pack("<I", len(qidx.levels)))
        for level in qidx.levels:
            fh.write(struct.pack("<II", level.shape[0], level.shape[1]))
            write_array(fh, level, "<f4")
        fh.write(struct.pack("<B", qidx.leaf_parent is not None))
        if qidx.leaf_parent is not None:
            write_array(fh, qidx.leaf_parent, "<i8")
        fh.write(struct.pack("<QIIIf", n, qidx.d, qidx.block_dim, n_blocks,
                             qidx.anisotropic_eta))
        write_array(fh, qidx.codebooks, "<f4")
        write_array(fh, qidx.codes, "u1")
        write_array(fh, qidx.int8_vectors, "i1")
        write_array(fh, qidx.scales, "<f4")
        write_array(fh, qidx.row_order, "<i8")
        write_array(fh, qidx.leaf_start, "<i8")


def load_quantized(path: str,
                   base: Optional[MentionIndex] = None) -> QuantizedIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != QUANTIZED_MAGIC:
            raise ArtifactFormatError(f"{path}: not a quantized index file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != QUANTIZED_VERSION:
            raise ArtifactFormatError(
                f"{path}: quantized index version {version} unsupported")
        (n_levels,) = struct.unpack("<I", fh.read(4))
        levels = []
        for _ in range(n_levels):
            k, d = struct.unpack("<II", fh.read(8))
            levels.append(read_array(fh, (k, d), "<f4"))
        (has_parent,) = struct.unpack("<B", fh.read(1))
        num_leaves = levels[-1].shape[0]
        leaf_parent = (read_array(fh, (num_leaves,), "<i8")
                       if has_parent else None)
        n, d, block_dim, n_blocks, eta = struct.unpack("<QIIIf", fh.read(24))
        codebooks = read_array(fh, (n_blocks, CODEBOOK_SIZE, block_dim), "<f4")
        codes = read_array(fh, (n, n_blocks), "u1")
        int8_vectors = read_array(fh, (n, d), "i1")
        scales = read_array(fh, (n,), "<f4")
        row_order = read_array(fh, (n,), "<i8")
        leaf_start = read_array(fh, (num_leaves + 1,), "<i8")
    return QuantizedIndex(
        levels=levels,
        leaf_parent=leaf_parent,
        codebooks=codebooks,
        codes=np.ascontiguousarray(codes),
        int8_vectors=np.ascontiguousarray(int8_vectors),
        scales=scales,
        row_order=row_order,
        leaf_start=leaf_start,
        anisotropic_eta=float(eta),
        base=base,
    )
