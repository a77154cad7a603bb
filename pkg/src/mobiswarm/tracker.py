"""Centralised tracker: peer-type tables and per-destination connection budgets."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from mobiswarm.errors import ProtocolError, UnknownPeerError
from mobiswarm.swarm import Bandwidth, PeerClass, PeerId

DEFAULT_UPLOAD_SLOTS = 5
DEFAULT_BUDGET_CAP = 32
DEFAULT_MAX_NEIGHBORS = 50


@dataclass
class PeerRecord:
    peer: PeerId
    peer_class: PeerClass
    bandwidth: Bandwidth
    index: int
    last_announce: float = 0.0
    congested: bool = False
    is_seeder: bool = False
    active: bool = True


@dataclass(frozen=True)
class AnnounceRequest:
    peer: PeerId
    peer_class: PeerClass
    bandwidth: Bandwidth
    congested: bool = False
    have_count: int = 0
    is_seeder: bool = False


@dataclass(frozen=True)
class ConnectionBudget:
    max_connections: int


@dataclass
class AnnounceResponse:
    neighbors: list  # [(PeerId, PeerClass)]
    budgets: dict = field(default_factory=dict)  # seeder PeerId -> ConnectionBudget


def connection_budget(
    seeder: PeerRecord,
    dest: PeerRecord,
    u_default: int = DEFAULT_UPLOAD_SLOTS,
    budget_cap: int = DEFAULT_BUDGET_CAP,
) -> ConnectionBudget:
    """Upload connections ``seeder`` may hold toward ``dest``.

    Static destinations get the protocol default. Mobile destinations get
    the ratio of seeder uplink to destination downlink, floored and clamped
    to ``[1, budget_cap]``. A congested destination has its budget halved.
    """
    if not seeder.is_seeder:
        raise ValueError(f"peer {seeder.peer} is not a seeder")
    if dest.peer_class is PeerClass.STATIC:
        n = u_default
    else:
        ratio = int(seeder.bandwidth.up_rate // dest.bandwidth.down_rate)
        n = min(max(ratio, 1), budget_cap)
    if dest.congested:
        n = max(n // 2, 1)
    return ConnectionBudget(n)


class Tracker:
    def __init__(
        self,
        max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
        u_default: int = DEFAULT_UPLOAD_SLOTS,
        budget_cap: int = DEFAULT_BUDGET_CAP,
    ) -> None:
        self.max_neighbors = max_neighbors
        self.u_default = u_default
        self.budget_cap = budget_cap
        self.records: dict[PeerId, PeerRecord] = {}
        # PeerIds in index order; the list position is the record index
        self._by_index: list[PeerId] = []

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, peer: PeerId) -> PeerRecord:
        try:
            return self.records[peer]
        except KeyError:
            raise UnknownPeerError(peer) from None

    def handle_announce(self, req: AnnounceRequest, now: float, rng: random.Random) -> AnnounceResponse:
        rec = self.records.get(req.peer)
        if rec is None:
            rec = PeerRecord(
                peer=req.peer,
                peer_class=req.peer_class,
                bandwidth=req.bandwidth,
                index=len(self._by_index),
                last_announce=now,
                congested=req.congested,
                is_seeder=req.is_seeder,
            )
            self.records[req.peer] = rec
            self._by_index.append(req.peer)
        else:
            if rec.peer_class is not req.peer_class:
                raise ProtocolError(
                    f"peer {req.peer} announced as {req.peer_class.value} after joining as {rec.peer_class.value}"
                )
            if now < rec.last_announce:
                raise ProtocolError(f"announce from peer {req.peer} goes back in time ({now} < {rec.last_announce})")
            rec.last_announce = now
            rec.congested = req.congested
            rec.is_seeder = rec.is_seeder or req.is_seeder
            rec.active = True

        others = [p for p in self._by_index if p != req.peer and self.records[p].active]
        if len(others) > self.max_neighbors:
            others = sorted(rng.sample(others, self.max_neighbors))
        neighbors = [(p, self.records[p].peer_class) for p in others]
        budgets = {
            p: connection_budget(self.records[p], rec, self.u_default, self.budget_cap)
            for p in others
            if self.records[p].is_seeder
        }
        return AnnounceResponse(neighbors, budgets)

    def budget(self, seeder: PeerId, dest: PeerId) -> ConnectionBudget:
        return connection_budget(self[seeder], self[dest], self.u_default, self.budget_cap)

    def signal_congestion(self, peer: PeerId, congested: bool) -> None:
        self[peer].congested = congested

    def mark_seeder(self, peer: PeerId) -> None:
        self[peer].is_seeder = True

    def stop(self, peer: PeerId) -> None:
        """A peer left the swarm; it stays in the table but is no longer handed out."""
        self[peer].active = False
