"""Pure-Python n-gram overlap kernel. Fallback when the compiled one is absent.

Both kernels return exact integer (clipped, total) pairs so the backends are
bit-for-bit interchangeable; all floating-point work happens in the caller.
"""

from collections import Counter
from typing import Sequence

BACKEND = "pure"


def clipped_ngram_stats(
    cand: Sequence[int], refs: Sequence[Sequence[int]], max_order: int
) -> list[tuple[int, int]]:
    """For n = 1..max_order: (sum of reference-clipped candidate n-gram counts,
    total candidate n-gram count)."""
    out = []
    for n in range(1, max_order + 1):
        total = max(0, len(cand) - n + 1)
        if total == 0:
            out.append((0, 0))
            continue
        cand_counts = Counter(tuple(cand[i : i + n]) for i in range(total))
        clipped = 0
        for gram, count in cand_counts.items():
            best = 0
            for ref in refs:
                hits = sum(
                    1
                    for j in range(len(ref) - n + 1)
                    if tuple(ref[j : j + n]) == gram
                )
                if hits > best:
                    best = hits
            clipped += min(count, best)
        out.append((clipped, total))
    return out
