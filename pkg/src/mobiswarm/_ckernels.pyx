# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Results match ``_kernels_py`` bit for bit."""

from libc.math cimport nextafter
from libc.stdlib cimport free, malloc
from math import fsum


def water_fill(double total, weights, caps):
    cdef Py_ssize_t n = len(weights)
    cdef Py_ssize_t i, it
    cdef double level = 0.0
    cdef double cap_sum
    cdef long long free_weight
    cdef bint newly
    cdef double *w = <double *> malloc((n + 1) * sizeof(double))
    cdef double *c = <double *> malloc((n + 1) * sizeof(double))
    cdef char *capped = <char *> malloc(n + 1)
    if w == NULL or c == NULL or capped == NULL:
        free(w); free(c); free(capped)
        raise MemoryError()
    try:
        for i in range(n):
            w[i] = weights[i]
            c[i] = caps[i]
            capped[i] = 0
        for it in range(n + 1):
            cap_sum = fsum([c[i] for i in range(n) if capped[i]])
            free_weight = 0
            for i in range(n):
                if not capped[i]:
                    free_weight += <long long> w[i]
            if free_weight == 0:
                break
            level = (total - cap_sum) / <double> free_weight
            newly = False
            for i in range(n):
                if not capped[i] and w[i] * level > c[i]:
                    capped[i] = 1
                    newly = True
            if not newly:
                break
        if level < 0.0:
            level = 0.0
        rates = [c[i] if capped[i] else w[i] * level for i in range(n)]
        while fsum(rates) > total:
            level = nextafter(level, 0.0)
            rates = [c[i] if capped[i] else w[i] * level for i in range(n)]
        return rates, level
    finally:
        free(w); free(c); free(capped)


def pick_rarest(counts, keys, candidates):
    cdef Py_ssize_t best = -1
    cdef Py_ssize_t j
    cdef Py_ssize_t n = len(candidates)
    cdef long best_count = 0
    cdef long cnt
    cdef double best_key = 0.0
    cdef double k
    for j in range(n):
        cnt = counts[candidates[j]]
        k = keys[j]
        if best < 0 or cnt < best_count or (cnt == best_count and k < best_key):
            best = j
            best_count = cnt
            best_key = k
    return best


def window_sum(times, amounts, Py_ssize_t start, double cutoff):
    cdef Py_ssize_t n = len(times)
    cdef Py_ssize_t i = start
    cdef Py_ssize_t j
    cdef long long total = 0
    while i < n and <double> times[i] <= cutoff:
        i += 1
    for j in range(i, n):
        total += <long long> amounts[j]
    return total, i
