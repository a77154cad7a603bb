"""Seeder-side upload scheduling for swarms with mobile peers.

In baseline mode a seeder splits its uplink equally over at most five
destinations. In hybrid mode it may open several parallel connections to
each mobile destination (bounded by the tracker budget), caps every
destination at the downlink it has left, and hands the surplus to the
destinations that can still absorb it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence

from mobiswarm import kernels
from mobiswarm.swarm import PeerClass, PeerId
from mobiswarm.tracker import DEFAULT_UPLOAD_SLOTS, ConnectionBudget, PeerRecord

KIB = 1024
DEFAULT_MIN_SEED_RATE = 50 * KIB
DEFAULT_R_MIN_MOBILE = 10 * KIB
DEFAULT_LATENCY_THRESHOLD = 2.0


class Mode(enum.Enum):
    BASELINE = "baseline"
    HYBRID = "hybrid"


@dataclass
class UploadPlan:
    mode: Mode
    # dest -> (connections, rate per connection in B/s)
    per_dest: dict = field(default_factory=dict)

    @property
    def allocations(self) -> dict:
        """Rate of every (dest, connection slot) pair."""
        return {(d, slot): rate for d, (n, rate) in self.per_dest.items() for slot in range(n)}

    def connections(self, dest: PeerId) -> int:
        return self.per_dest[dest][0] if dest in self.per_dest else 0

    def dest_rate(self, dest: PeerId) -> float:
        if dest not in self.per_dest:
            return 0.0
        n, rate = self.per_dest[dest]
        return n * rate

    @property
    def total_connections(self) -> int:
        return sum(n for n, _ in self.per_dest.values())

    @property
    def total_rate(self) -> float:
        return math.fsum(n * r for n, r in self.per_dest.values())


def _equal_split(up_rate: float, n: int) -> float:
    rate = up_rate / n
    while math.fsum([rate] * n) > up_rate:
        rate = math.nextafter(rate, 0.0)
    return rate


def eligible_for_mobile_seeding(seeder: PeerRecord, min_seed_rate: float = DEFAULT_MIN_SEED_RATE) -> bool:
    return seeder.bandwidth.up_rate >= min_seed_rate


def mobile_connection_counts(
    up_rate: float,
    budgets: Sequence[int],
    down_rates: Sequence[float],
    mobile: Sequence[bool],
) -> list[int]:
    """Fixpoint of ``k = min(budget, ceil(down / (up / sum(k))))`` for mobile slots.

    Static destinations always hold one connection. Counts only grow from
    one iteration to the next, so the loop ends within ``max(budgets)`` rounds.
    """
    counts = [1] * len(budgets)
    while True:
        per_conn = up_rate / sum(counts)
        changed = False
        for i, is_mobile in enumerate(mobile):
            if not is_mobile:
                continue
            k = max(1, min(budgets[i], math.ceil(down_rates[i] / per_conn)))
            if k != counts[i]:
                counts[i] = k
                changed = True
        if not changed:
            return counts


def plan_uploads(
    seeder: PeerRecord,
    unchoked_dests: Sequence[tuple[PeerRecord, ConnectionBudget]],
    mode: Mode,
    min_seed_rate: float = DEFAULT_MIN_SEED_RATE,
    remaining_down: Optional[Mapping[PeerId, float]] = None,
    max_connections: int = DEFAULT_UPLOAD_SLOTS,
) -> UploadPlan:
    """Split ``seeder``'s uplink over the destinations the choker unchoked.

    ``remaining_down`` is the downlink each destination has left after the
    other sources' allocations; it defaults to the full downlink. It only
    applies to hybrid plans that include a mobile destination.
    """
    plan = UploadPlan(mode)
    if not unchoked_dests:
        return plan
    up = seeder.bandwidth.up_rate
    mobile = [rec.peer_class is PeerClass.MOBILE for rec, _ in unchoked_dests]
    if mode is Mode.BASELINE:
        dests = unchoked_dests[:max_connections]
        rate = _equal_split(up, len(dests))
        plan.per_dest = {rec.peer: (1, rate) for rec, _ in dests}
        return plan
    if not any(mobile):
        # static destinations only: the usual slots, capped at each full downlink
        unchoked_dests = unchoked_dests[:max_connections]
        mobile = mobile[:max_connections]
        remaining_down = None

    downs = [rec.bandwidth.down_rate for rec, _ in unchoked_dests]
    if eligible_for_mobile_seeding(seeder, min_seed_rate):
        budgets = [b.max_connections for _, b in unchoked_dests]
        counts = mobile_connection_counts(up, budgets, downs, mobile)
    else:
        counts = [1] * len(unchoked_dests)
    caps = [
        downs[i] if remaining_down is None else min(downs[i], max(0.0, remaining_down.get(rec.peer, downs[i])))
        for i, (rec, _) in enumerate(unchoked_dests)
    ]
    rates, level = kernels.water_fill(up, counts, caps)
    for i, (rec, _) in enumerate(unchoked_dests):
        rate = rates[i]
        if rate <= 0.0:
            continue
        k = counts[i]
        if rate < k * level:
            # capped destination: fewer, faster connections carry the same rate
            k = max(1, min(k, math.ceil(rate / level)))
        per_conn = rate / k
        while per_conn * k > rate:
            per_conn = math.nextafter(per_conn, 0.0)
        plan.per_dest[rec.peer] = (k, per_conn)
    return plan


def drop_slow_connections(
    active: Sequence[tuple[Hashable, float]],
    latency_threshold: float = DEFAULT_LATENCY_THRESHOLD,
    source_counts: Optional[Mapping[Hashable, int]] = None,
) -> set:
    """Destinations whose mean block latency exceeds ``latency_threshold``.

    A destination is kept when we are its only remaining source;
    ``source_counts`` maps each destination to its current number of
    sources (assumed > 1 when absent).
    """
    remaining = dict(source_counts or {})
    dropped = set()
    for dest, latency in sorted(active, key=lambda item: -item[1]):
        if latency <= latency_threshold:
            break
        left = remaining.get(dest, 2)
        if left <= 1:
            continue
        remaining[dest] = left - 1
        dropped.add(dest)
    return dropped


def mobile_service_slots(seeders: Sequence[PeerRecord], r_min_mobile: float, min_seed_rate: float) -> int:
    return sum(
        int(s.bandwidth.up_rate // r_min_mobile)
        for s in seeders
        if eligible_for_mobile_seeding(s, min_seed_rate)
    )


def max_mobile_fraction(
    seeders: Sequence[PeerRecord],
    num_mobile: int,
    r_min_mobile: float = DEFAULT_R_MIN_MOBILE,
    min_seed_rate: float = DEFAULT_MIN_SEED_RATE,
) -> float:
    """Percentage of mobile peers the eligible seeders can serve at once."""
    if r_min_mobile <= 0:
        raise ValueError("r_min_mobile must be > 0")
    if num_mobile == 0:
        return 100.0
    slots = mobile_service_slots(seeders, r_min_mobile, min_seed_rate)
    return 100.0 * min(1.0, slots / num_mobile)
