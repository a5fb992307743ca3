"""Kernel backend selection.

Prefers the compiled Cython kernel when it was built; falls back to the
pure-Python implementation otherwise. Set CAPSIFT_PURE_KERNELS=1 to force
the pure backend (useful for benchmarking and debugging).
"""

import os

from . import _pure

if os.environ.get("CAPSIFT_PURE_KERNELS") == "1":
    _impl = _pure
else:
    try:
        from . import _ngram_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND: str = _impl.BACKEND
clipped_ngram_stats = _impl.clipped_ngram_stats

__all__ = ["BACKEND", "clipped_ngram_stats"]
