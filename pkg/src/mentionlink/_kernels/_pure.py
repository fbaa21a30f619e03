"""Pure-numpy fallbacks for the compiled scoring kernels.

Same signatures and results as ``_core`` (up to float accumulation order);
used when the extension is unavailable or MENTIONLINK_PURE_KERNELS is set.
"""

import numpy as np

_PAIR_LO = np.arange(256) & 15
_PAIR_HI = np.arange(256) >> 4


def scan_scores(packed, lut, leaf_start, probe, leaf_base):
    """Per-block lookup sums for every member of the probed leaves."""
    starts = leaf_start[probe]
    sizes = leaf_start[probe + 1] - starts
    total = int(sizes.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float32)
    if lut.shape[0] % 2:
        lut = np.vstack([lut, np.zeros((1, lut.shape[1]))])
    pair = lut[0::2][:, _PAIR_LO] + lut[1::2][:, _PAIR_HI]
    ends = np.cumsum(sizes)
    offsets = np.repeat(ends - sizes, sizes)
    rows = np.arange(total, dtype=np.int64) - offsets + np.repeat(starts, sizes)
    base = np.repeat(leaf_base.astype(np.float64), sizes)
    gathered = pair[np.arange(packed.shape[1]), packed[rows]]
    scores = (base + gathered.sum(axis=1, dtype=np.float64)).astype(np.float32)
    return rows, scores


def int8_rescore(vecs, scales, rows, query):
    """scales[rows[i]] * <vecs[rows[i]], query> with float64 accumulation."""
    dots = vecs[rows].astype(np.float64) @ np.asarray(query, dtype=np.float64)
    return (dots * scales[rows]).astype(np.float32)
