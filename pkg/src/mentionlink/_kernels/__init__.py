"""Scoring kernel backend selection.

The compiled extension is preferred; the numpy fallback is selected when the
extension failed to build or MENTIONLINK_PURE_KERNELS is set (any non-empty
value). ``backend()`` reports which one is active.
"""

import os

from . import _pure

if os.environ.get("MENTIONLINK_PURE_KERNELS"):
    _impl = _pure
    _BACKEND = "pure"
else:
    try:
        from . import _core as _impl

        _BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        _BACKEND = "pure"

scan_scores = _impl.scan_scores
int8_rescore = _impl.int8_rescore


def backend() -> str:
    return _BACKEND
