"""Per-peer protocol state: interest, choking, piece selection and the trial period."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from mobiswarm import kernels
from mobiswarm.swarm import Bitfield, BlockId, Bandwidth, PeerClass, PeerId


class Link:
    """Our view of one neighbor connection.

    ``interested`` is our interest in the neighbor; ``peer_interested`` is
    the neighbor's interest in us. ``missing`` counts pieces the neighbor
    holds that we lack, so interest is simply ``missing > 0``.
    """

    __slots__ = (
        "choked_by_us", "choking_us", "interested", "peer_interested", "missing",
        "recv_t", "recv_b", "recv_start", "sent_t", "sent_b", "sent_start",
        "lat_t", "lat_v", "lat_start", "inflight_in", "bytes_in", "bytes_out",
    )

    def __init__(self) -> None:
        self.choked_by_us = True
        self.choking_us = True
        self.interested = False
        self.peer_interested = False
        self.missing = 0
        # delivery history (time, bytes) for the rate window, received and sent
        self.recv_t: list = []
        self.recv_b: list = []
        self.recv_start = 0
        self.sent_t: list = []
        self.sent_b: list = []
        self.sent_start = 0
        # latencies of blocks we delivered to this neighbor
        self.lat_t: list = []
        self.lat_v: list = []
        self.lat_start = 0
        self.inflight_in = 0
        self.bytes_in = 0
        self.bytes_out = 0

    def received_in_window(self, now: float, window: float) -> int:
        total, self.recv_start = kernels.window_sum(self.recv_t, self.recv_b, self.recv_start, now - window)
        return total

    def sent_in_window(self, now: float, window: float) -> int:
        total, self.sent_start = kernels.window_sum(self.sent_t, self.sent_b, self.sent_start, now - window)
        return total

    def mean_latency_in_window(self, now: float, window: float) -> Optional[float]:
        cutoff = now - window
        i = self.lat_start
        while i < len(self.lat_t) and self.lat_t[i] <= cutoff:
            i += 1
        self.lat_start = i
        vals = self.lat_v[i:]
        return sum(vals) / len(vals) if vals else None


class PeerState:
    __slots__ = (
        "id", "peer_class", "bandwidth", "bitfield", "links", "joined_at", "completed_at",
        "pending", "pending_per_piece", "availability", "regular", "optimistic", "extra",
        "redundant", "online", "is_origin_seeder",
    )

    def __init__(
        self,
        peer_id: PeerId,
        peer_class: PeerClass,
        bandwidth: Bandwidth,
        bitfield: Bitfield,
        joined_at: float = 0.0,
    ) -> None:
        self.id = peer_id
        self.peer_class = peer_class
        self.bandwidth = bandwidth
        self.bitfield = bitfield
        self.links: dict[PeerId, Link] = {}
        self.joined_at = joined_at
        self.completed_at: Optional[float] = joined_at if bitfield.complete else None
        self.is_origin_seeder = bitfield.complete
        # global block index -> neighbor the block was requested from
        self.pending: dict[int, PeerId] = {}
        self.pending_per_piece = [0] * bitfield.filemap.num_pieces
        # replica count of each piece among current neighbors
        self.availability = [0] * bitfield.filemap.num_pieces
        self.regular: list[PeerId] = []
        self.optimistic: Optional[PeerId] = None
        self.extra: list[PeerId] = []
        self.redundant = 0
        self.online = False

    @property
    def is_seeder(self) -> bool:
        return self.bitfield.complete

    def unchoked(self) -> list[PeerId]:
        out = list(self.regular)
        if self.optimistic is not None:
            out.append(self.optimistic)
        out.extend(self.extra)
        return out

    def add_neighbor(self, other: PeerId, other_bitfield: Bitfield) -> Link:
        link = Link()
        avail = self.availability
        mine = self.bitfield.pieces
        missing = 0
        for p, bit in enumerate(other_bitfield.pieces):
            if bit:
                avail[p] += 1
                if not mine[p]:
                    missing += 1
        link.missing = missing
        link.interested = missing > 0
        self.links[other] = link
        return link

    def remove_neighbor(self, other: PeerId, other_bitfield: Bitfield) -> Optional[Link]:
        link = self.links.pop(other, None)
        if link is None:
            return None
        avail = self.availability
        for p, bit in enumerate(other_bitfield.pieces):
            if bit:
                avail[p] -= 1
        return link


@dataclass
class ChokeDecision:
    unchoked: set = field(default_factory=set)
    optimistic: Optional[PeerId] = None


def rank_interested(
    state: PeerState,
    now: float,
    rng: random.Random,
    rate_window: float = 20.0,
    exclude: Iterable[PeerId] = (),
    key_override: Optional[dict] = None,
) -> list[PeerId]:
    """Interested neighbors, fastest first, ties in seeded random order.

    A leecher ranks by bytes received from each neighbor over the window; a
    seeder receives nothing and ranks by bytes sent instead.
    """
    skip = set(exclude)
    seeding = state.is_seeder
    keyed = []
    for pid in sorted(state.links):
        link = state.links[pid]
        if not link.peer_interested or pid in skip:
            continue
        if key_override is not None:
            rate = key_override.get(pid, 0.0)
        elif seeding:
            rate = link.sent_in_window(now, rate_window)
        else:
            rate = link.received_in_window(now, rate_window)
        keyed.append((-rate, rng.random(), pid))
    keyed.sort()
    return [pid for _, _, pid in keyed]


def recompute_chokes(
    state: PeerState,
    now: float,
    regular_slots: int,
    rng: random.Random,
    rate_window: float = 20.0,
    exclude: Iterable[PeerId] = (),
    key_override: Optional[dict] = None,
) -> ChokeDecision:
    skip = set(exclude)
    if state.optimistic is not None:
        skip.add(state.optimistic)
    ranked = rank_interested(state, now, rng, rate_window, skip, key_override)
    return ChokeDecision(set(ranked[:regular_slots]), state.optimistic)


def optimistic_unchoke(
    state: PeerState,
    candidates: Iterable[tuple[PeerId, PeerClass, bool]],
    hybrid_mode: bool,
    rng: random.Random,
    now: float = 0.0,
) -> Optional[PeerId]:
    """Seeded uniform pick among choked, interested candidates.

    In hybrid mode static seeders are never picked: the tracker already
    reports their rates, so no discovery slot is spent on them.
    """
    regular = set(state.regular)
    pool = []
    for pid, peer_class, is_seeder in candidates:
        if hybrid_mode and is_seeder and peer_class is PeerClass.STATIC:
            continue
        link = state.links.get(pid)
        if link is None or not link.peer_interested or pid in regular:
            continue
        pool.append(pid)
    if not pool:
        return None
    pool.sort()
    return pool[rng.randrange(len(pool))]


def select_next_block(
    state: PeerState,
    neighbor: PeerId,
    neighbor_bitfield: Bitfield,
    rng: random.Random,
) -> Optional[BlockId]:
    """Next block to request from ``neighbor``, or None.

    Random piece first while we hold no complete piece, rarest piece first
    afterwards; within a piece the lowest-index block not held or requested.
    Pieces we already hold or requested blocks of take priority, so partial
    pieces complete and become shareable quickly.
    """
    own = state.bitfield
    fm = own.filemap
    offsets = fm.piece_offsets
    mine = own.pieces
    theirs = neighbor_bitfield.pieces
    held = own.held_per_piece
    pend = state.pending_per_piece
    candidates = [
        p for p in range(fm.num_pieces)
        if theirs[p] and not mine[p] and held[p] + pend[p] < offsets[p + 1] - offsets[p]
    ]
    if not candidates:
        return None
    # finish pieces already started before opening new ones
    started = [p for p in candidates if held[p] or pend[p]]
    if started:
        candidates = started
    if own.num_pieces_held == 0:
        piece = candidates[rng.randrange(len(candidates))]
    else:
        keys = [rng.random() for _ in candidates]
        piece = candidates[kernels.pick_rarest(state.availability, keys, candidates)]
    blocks = own.blocks
    pending = state.pending
    base = offsets[piece]
    for g in range(base, offsets[piece + 1]):
        if not blocks[g] and g not in pending:
            return (piece, g - base)
    return None


def warmup_factor(
    state: Optional[PeerState],
    neighbor_joined_at: float,
    now: float,
    trial_len: float,
    warmup_min: float = 0.25,
) -> float:
    """Fraction of the normal per-connection rate granted to a new neighbor."""
    if trial_len < 0:
        raise ValueError("trial_len must be >= 0")
    if trial_len == 0:
        return 1.0
    progress = min(1.0, max(0.0, now - neighbor_joined_at) / trial_len)
    return warmup_min + (1.0 - warmup_min) * progress


@dataclass
class BlockOutcome:
    redundant: bool = False
    piece_completed: bool = False
    file_completed: bool = False
    haves: list = field(default_factory=list)  # neighbors to notify of the piece


def handle_block_received(
    state: PeerState,
    src: PeerId,
    block: BlockId,
    now: float,
    size: int = 0,
) -> BlockOutcome:
    piece, b = block
    g = state.bitfield.filemap.piece_offsets[piece] + b
    if state.pending.get(g) != src or state.bitfield.blocks[g]:
        state.redundant += 1
        return BlockOutcome(redundant=True)
    del state.pending[g]
    state.pending_per_piece[piece] -= 1
    link = state.links.get(src)
    if link is not None:
        link.recv_t.append(now)
        link.recv_b.append(size)
        link.bytes_in += size
    out = BlockOutcome()
    if state.bitfield.add_block(piece, b):
        out.piece_completed = True
        out.haves = sorted(state.links)
        if state.bitfield.complete:
            out.file_completed = True
            state.completed_at = now
    return out
