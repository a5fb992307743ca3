# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled n-gram overlap kernel.

Works on dense int32 token-id arrays. Texts here are short (captions and
search tasks), so direct sliding-window comparison beats hashing: no
allocation, no Python objects in the inner loops.
"""

from libc.stdlib cimport free, malloc

BACKEND = "compiled"


cdef inline bint _window_eq(const int* a, const int* b, int n) nogil:
    cdef int k
    for k in range(n):
        if a[k] != b[k]:
            return False
    return True


def clipped_ngram_stats(cand, refs, int max_order):
    """For n = 1..max_order: (sum of reference-clipped candidate n-gram counts,
    total candidate n-gram count). Exact integers, identical to the pure kernel.
    """
    cdef int clen = len(cand)
    cdef int nrefs = len(refs)
    cdef int* cbuf = <int*> malloc(clen * sizeof(int)) if clen else NULL
    cdef int** rbufs = <int**> malloc(nrefs * sizeof(int*)) if nrefs else NULL
    cdef int* rlens = <int*> malloc(nrefs * sizeof(int)) if nrefs else NULL
    cdef int i, j, k, n, r, total, cand_count, best, hits, clipped
    cdef bint first
    cdef list out = []

    try:
        for r in range(nrefs):
            rbufs[r] = NULL
            rlens[r] = 0
        for i in range(clen):
            cbuf[i] = cand[i]
        for r in range(nrefs):
            ref = refs[r]
            rlens[r] = len(ref)
            rbufs[r] = <int*> malloc(rlens[r] * sizeof(int)) if rlens[r] else NULL
            for j in range(rlens[r]):
                rbufs[r][j] = ref[j]

        for n in range(1, max_order + 1):
            total = clen - n + 1
            if total <= 0:
                out.append((0, 0))
                continue
            clipped = 0
            for i in range(total):
                # count each distinct n-gram once, at its first occurrence
                first = True
                for j in range(i):
                    if _window_eq(cbuf + i, cbuf + j, n):
                        first = False
                        break
                if not first:
                    continue
                cand_count = 0
                for j in range(total):
                    if _window_eq(cbuf + i, cbuf + j, n):
                        cand_count += 1
                best = 0
                for r in range(nrefs):
                    hits = 0
                    for j in range(rlens[r] - n + 1):
                        if _window_eq(cbuf + i, rbufs[r] + j, n):
                            hits += 1
                    if hits > best:
                        best = hits
                clipped += cand_count if cand_count < best else best
            out.append((clipped, total))
        return out
    finally:
        if cbuf != NULL:
            free(cbuf)
        if rbufs != NULL:
            for r in range(nrefs):
                if rbufs[r] != NULL:
                    free(rbufs[r])
            free(rbufs)
        if rlens != NULL:
            free(rlens)
