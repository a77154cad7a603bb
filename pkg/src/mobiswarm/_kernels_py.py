"""Pure-Python hot kernels. ``_ckernels.pyx`` mirrors these signatures."""

from __future__ import annotations

import math


def water_fill(total, weights, caps):
    """Share ``total`` over slots weighted by ``weights``, each capped by ``caps``.

    Returns ``(rates, level)`` where ``rates[i] = min(caps[i], weights[i] * level)``
    and the rates sum to at most ``total``. Every pass caps at least one
    slot or stops, so it runs at most ``len(weights)`` passes.
    """
    n = len(weights)
    capped = [False] * n
    level = 0.0
    for _ in range(n + 1):
        cap_sum = math.fsum(caps[i] for i in range(n) if capped[i])
        free_weight = 0
        for i in range(n):
            if not capped[i]:
                free_weight += weights[i]
        if free_weight == 0:
            break
        level = (total - cap_sum) / free_weight
        newly = False
        for i in range(n):
            if not capped[i] and weights[i] * level > caps[i]:
                capped[i] = True
                newly = True
        if not newly:
            break
    if level < 0.0:
        level = 0.0
    rates = [caps[i] if capped[i] else weights[i] * level for i in range(n)]
    while math.fsum(rates) > total:
        level = math.nextafter(level, 0.0)
        rates = [caps[i] if capped[i] else weights[i] * level for i in range(n)]
    return rates, level


def pick_rarest(counts, keys, candidates):
    """Index into ``candidates`` of the piece with the lowest ``(count, key)``.

    ``keys`` are the tie-break draws, aligned with ``candidates``.
    Returns -1 on an empty candidate list.
    """
    best = -1
    best_count = 0
    best_key = 0.0
    for j, p in enumerate(candidates):
        c = counts[p]
        if best < 0 or c < best_count or (c == best_count and keys[j] < best_key):
            best = j
            best_count = c
            best_key = keys[j]
    return best


def window_sum(times, amounts, start, cutoff):
    """Sum ``amounts[i]`` for ``times[i] > cutoff``, scanning from ``start``.

    ``times`` is non-decreasing. Returns ``(total, first_index_inside)`` so
    callers can discard the expired prefix.
    """
    n = len(times)
    i = start
    while i < n and times[i] <= cutoff:
        i += 1
    total = 0
    for j in range(i, n):
        total += amounts[j]
    return total, i
