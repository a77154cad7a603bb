"""Deterministic discrete-event swarm simulator.

Simulation time is kept in integer milliseconds. Events are ordered by
``(time, seq)`` where ``seq`` is the insertion counter, so equal-time
events run in the order they were scheduled.

Link model: a block transfer is fixed at request time. Its rate is the
per-connection rate of the uploader's current plan (scaled by the trial
period factor when the uploader is still leeching), clipped to the spare
uplink of the source and the spare downlink of the destination. A block
delivered at time ``tx`` was therefore requested at
``tx - transfer_ms(size, rate, base_latency)`` exactly.
"""

from __future__ import annotations

import dataclasses
import gc
import heapq
import json
import logging
import math
import random
from typing import Optional

from mobiswarm import hybrid as hyb
from mobiswarm import kernels
from mobiswarm.config import ScenarioConfig
from mobiswarm.errors import SimulationError
from mobiswarm.hybrid import Mode, drop_slow_connections, plan_uploads
from mobiswarm.metrics import BlockTransferRecord, MetricsLog, Outcome, Sample, avg_throughput
from mobiswarm.protocol import (
    PeerState,
    handle_block_received,
    optimistic_unchoke,
    rank_interested,
    recompute_chokes,
    select_next_block,
    warmup_factor,
)
from mobiswarm.swarm import Bandwidth, Bitfield, PeerClass, classify_peer, partition_file
from mobiswarm.tracker import AnnounceRequest, Tracker

log = logging.getLogger("mobiswarm")

KIB = 1024

ANNOUNCE = "Announce"
CHOKE_TICK = "ChokeTick"
OPTIMISTIC_TICK = "OptimisticTick"
BLOCK_REQUEST = "BlockRequest"
BLOCK_DELIVERED = "BlockDelivered"
PEER_JOIN = "PeerJoin"
PEER_LEAVE = "PeerLeave"
PEER_RETURN = "PeerReturn"
CONGESTION_SIGNAL = "CongestionSignal"
METRICS_SAMPLE = "MetricsSample"


def transfer_time(nbytes: float, allocated_rate: float, base_latency: float) -> float:
    """Seconds to move ``nbytes`` over a link of ``allocated_rate`` B/s."""
    if allocated_rate <= 0:
        raise SimulationError(f"transfer scheduled at non-positive rate {allocated_rate}")
    return base_latency + nbytes / allocated_rate


def transfer_ms(nbytes: int, rate: float, base_ms: int) -> int:
    """``transfer_time`` on the millisecond grid, rounding the payload time up."""
    if rate <= 0:
        raise SimulationError(f"transfer scheduled at non-positive rate {rate}")
    return base_ms + math.ceil(nbytes * 1000 / rate - 1e-9)


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


def churn_step(
    peer: PeerState,
    rng: random.Random,
    mean_online: float,
    mean_offline: float,
    now: float,
) -> Optional[tuple[float, float]]:
    """Next (leave, return) times for a mobile peer, or None when it never churns."""
    if peer.peer_class is not PeerClass.MOBILE or not math.isfinite(mean_online):
        return None
    online = rng.expovariate(1.0 / mean_online)
    offline = rng.expovariate(1.0 / mean_offline)
    return now + online, now + online + offline


class EventQueue:
    def __init__(self) -> None:
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, t: int, kind: str, payload=None) -> None:
        if t < self.now:
            raise SimulationError(f"{kind} scheduled at {t} ms, before current time {self.now} ms")
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def pop(self):
        item = heapq.heappop(self._heap)
        self.now = item[0]
        return item

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None


class Simulation:
    """One run: owned world state plus its event loop."""

    def __init__(self, cfg: ScenarioConfig, audit: bool = True) -> None:
        cfg.validate()
        self.cfg = cfg
        self.audit = audit
        self.mode = cfg.mode
        self.hybrid = cfg.mode is Mode.HYBRID
        self.filemap = partition_file(cfg.file_size, cfg.piece_size, cfg.block_size)
        self.block_sizes = self.filemap.block_sizes()
        self.num_blocks = len(self.block_sizes)
        # streams slower than this are not worth opening
        self.min_rate = cfg.min_stream_kBps * 1024
        seed = cfg.rng_seed
        self.rng_build = random.Random(f"{seed}/build")
        self.rng_tracker = random.Random(f"{seed}/tracker")
        self.rng_proto = random.Random(f"{seed}/protocol")
        self.rng_churn = random.Random(f"{seed}/churn")
        self.rng_latency = random.Random(f"{seed}/latency")

        self.queue = EventQueue()
        self.events: list = []
        self.tracker = Tracker(cfg.max_neighbors, cfg.u_default, cfg.budget_cap)
        self.metrics = MetricsLog(mode=cfg.mode.value, seed=seed)

        self.min_seed_rate = cfg.min_seed_rate_kBps * KIB
        self.r_min_mobile = cfg.r_min_mobile_kBps * KIB
        self.threshold = cfg.mobile_down_threshold_kBps * KIB

        self.peers: list[PeerState] = []
        self.join_ms: list[int] = []
        self.serves_mobile: list[bool] = []
        self.plans: list[dict] = []
        self.sources: list[dict] = []
        # per destination: sources ordered fastest first plus total planned inbound
        self.src_view: list = []
        self.up_blocked: list[bool] = []
        self.out_rate: list[float] = []
        self.in_rate: list[float] = []
        self.out_count: list[int] = []
        # destination -> transfers in flight, per uploader
        self.sending: list[dict] = []
        self.in_count: list[int] = []
        self.congested: list[bool] = []
        self.drop_until: list[dict] = []
        self.last_served: list[dict] = []
        self.return_at: dict = {}
        self.latency_ms: dict = {}
        self.transfers: dict = {}
        self._next_tid = 0

        self.leechers: list[int] = []
        self.incomplete = 0
        self.num_mobile = 0
        self.finished = False
        self.cancelled = 0
        # audit trails, kept out of the event log
        self.violations: list = []
        self.pair_bytes: dict = {}
        self._built = False

    # ------------------------------------------------------------------ setup

    def build(self) -> "Simulation":
        cfg = self.cfg
        rng = self.rng_build
        n_mobile = int(round(cfg.num_peers * cfg.mobile_fraction))
        mobile_idx = set(rng.sample(range(cfg.num_peers), n_mobile)) if n_mobile else set()
        total = cfg.num_seeders + cfg.num_peers
        for pid in range(total):
            seeder = pid < cfg.num_seeders
            if seeder:
                bw = Bandwidth(cfg.seeder_up_kBps.draw(rng) * KIB, cfg.seeder_down_kBps.draw(rng) * KIB)
            elif (pid - cfg.num_seeders) in mobile_idx:
                bw = Bandwidth(cfg.mobile_up_kBps.draw(rng) * KIB, cfg.mobile_down_kBps.draw(rng) * KIB)
            else:
                bw = Bandwidth(cfg.static_up_kBps.draw(rng) * KIB, cfg.static_down_kBps.draw(rng) * KIB)
            peer_class = classify_peer(bw, self.threshold)
            join = 0 if seeder or cfg.join_spread == 0 else to_ms(rng.uniform(0.0, cfg.join_spread))
            state = PeerState(pid, peer_class, bw, Bitfield(self.filemap, full=seeder), join / 1000)
            self.peers.append(state)
            self.join_ms.append(join)
            # with two or more hybrid seeders, every second one serves static peers only
            self.serves_mobile.append(not (seeder and self.hybrid and cfg.num_seeders >= 2 and pid % 2 == 1))
            self.plans.append({})
            self.sources.append({})
            self.src_view.append(None)
            self.up_blocked.append(False)
            self.out_rate.append(0.0)
            self.in_rate.append(0.0)
            self.out_count.append(0)
            self.sending.append({})
            self.in_count.append(0)
            self.congested.append(False)
            self.drop_until.append({})
            self.last_served.append({})
            if not seeder:
                self.leechers.append(pid)
                if peer_class is PeerClass.MOBILE:
                    self.num_mobile += 1
        self.incomplete = len(self.leechers)
        self.metrics.dest_class = {p.id: p.peer_class for p in self.peers}
        self.queue.push(0, METRICS_SAMPLE, None)
        for pid in sorted(range(total), key=lambda i: (self.join_ms[i], i)):
            self.queue.push(self.join_ms[pid], PEER_JOIN, pid)
        self._built = True
        return self

    # --------------------------------------------------------------- helpers

    @property
    def now(self) -> float:
        return self.queue.now / 1000

    def _row(self, *fields) -> None:
        self.events.append((self.queue.now,) + fields)

    def _base_ms(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        v = self.latency_ms.get(key)
        if v is None:
            mobile = PeerClass.MOBILE in (self.peers[a].peer_class, self.peers[b].peer_class)
            dist = self.cfg.mobile_latency_ms if mobile else self.cfg.static_latency_ms
            v = int(round(dist.draw(self.rng_latency)))
            self.latency_ms[key] = v
        return v

    def _later(self, seconds: float) -> int:
        return self.queue.now + to_ms(seconds)

    def _eligible(self, pid: int) -> bool:
        return self.peers[pid].bandwidth.up_rate >= self.min_seed_rate

    def _may_serve_mobile(self, pid: int) -> bool:
        """Hybrid restriction on who may upload to mobile peers."""
        p = self.peers[pid]
        if not self.hybrid or not p.is_seeder:
            return True
        return self.serves_mobile[pid] and self._eligible(pid)

    # ------------------------------------------------------------ connections

    def _connect(self, a: int, b: int) -> None:
        A, B = self.peers[a], self.peers[b]
        la = A.add_neighbor(b, B.bitfield)
        lb = B.add_neighbor(a, A.bitfield)
        lb.peer_interested = la.interested
        la.peer_interested = lb.interested

    def _disconnect(self, a: int, b: int) -> None:
        for tid, tr in list(self.transfers.items()):
            if (tr[0] == a and tr[1] == b) or (tr[0] == b and tr[1] == a):
                self._cancel(tid)
        A, B = self.peers[a], self.peers[b]
        A.remove_neighbor(b, B.bitfield)
        B.remove_neighbor(a, A.bitfield)
        for x, y in ((a, b), (b, a)):
            X = self.peers[x]
            if y in X.regular or X.optimistic == y or y in X.extra:
                X.regular = [q for q in X.regular if q != y]
                X.extra = [q for q in X.extra if q != y]
                if X.optimistic == y:
                    X.optimistic = None
                self._replan(x)

    def _set_interest(self, a: int, b: int, value: bool) -> None:
        """Peer ``a`` becomes (not) interested in ``b``."""
        A, B = self.peers[a], self.peers[b]
        A.links[b].interested = value
        B.links[a].peer_interested = value
        if a in B.regular or B.optimistic == a or a in B.extra:
            self._replan(b)

    def _announce(self, pid: int) -> None:
        p = self.peers[pid]
        req = AnnounceRequest(
            pid, p.peer_class, p.bandwidth, self.congested[pid], p.bitfield.num_pieces_held, p.is_seeder
        )
        resp = self.tracker.handle_announce(req, self.now, self.rng_tracker)
        new = 0
        for nid, _ in resp.neighbors:
            if nid not in p.links and self.peers[nid].online:
                self._connect(pid, nid)
                new += 1
        self._row(ANNOUNCE, pid, new)

    # --------------------------------------------------------------- planning

    def _view(self, d: int) -> tuple:
        view = self.src_view[d]
        if view is None:
            srcs = sorted(self.sources[d].items(), key=lambda kv: (-kv[1][1], kv[0]))
            depth = self.cfg.pipeline_depth
            # (source, usable streams, rate per stream), fastest first
            order = [(u, min(k, depth), r) for u, (k, r) in srcs]
            # last slot caches the fair level once every stream is busy at full rate
            view = self.src_view[d] = [
                order,
                math.fsum(k * r for _, (k, r) in srcs),
                sum(n for _, n, _ in order),
                None,
            ]
        return view

    def _fair_level(self, order: list, down: float, work: int, warm: float) -> float:
        """Per-stream max-min fair rate on a downlink of ``down`` B/s.

        Only the fastest streams that still have one of the ``work``
        outstanding blocks to carry compete for the link.
        """
        peers = self.peers
        weights = []
        caps = []
        for u, n, r in order:
            if n > work:
                n = work
            if n <= 0:
                break
            weights.append(n)
            caps.append(n * (r if peers[u].bitfield.complete else r * warm))
            work -= n
        if math.fsum(caps) <= down:
            return math.inf
        return kernels.water_fill(down, weights, caps)[1]

    def _inbound(self, d: int) -> float:
        return self._view(d)[1]

    def _seeded_inbound(self, d: int) -> float:
        peers = self.peers
        return math.fsum(k * r for s, (k, r) in self.sources[d].items() if peers[s].bitfield.complete)

    def _replan(self, u: int) -> None:
        U = self.peers[u]
        active = []
        seen = set()
        for d in sorted(U.unchoked()):
            link = U.links.get(d)
            if d in seen or link is None or not link.peer_interested or not self.peers[d].online:
                continue
            seen.add(d)
            active.append(d)
        tr = self.tracker
        rec = tr[u]
        hybrid_path = self.hybrid and U.is_seeder
        budgets = None
        if hybrid_path:
            budgets = {d: tr.budget(u, d) for d in active}
            own = self.plans[u]
            remaining = {}
            for d in active:
                mine = own.get(d)
                others = self._seeded_inbound(d) - (mine[0] * mine[1] if mine else 0.0)
                left = self.peers[d].bandwidth.down_rate - others
                remaining[d] = left if left >= self.min_rate else 0.0
            plan = plan_uploads(rec, [(tr[d], budgets[d]) for d in active], Mode.HYBRID,
                                self.min_seed_rate, remaining, self.cfg.u_default)
        else:
            plan = plan_uploads(rec, [(tr[d], None) for d in active], Mode.BASELINE,
                                self.min_seed_rate, None, self.cfg.u_default)
        old = self.plans[u]
        new = plan.per_dest
        view = self.src_view
        for d in old:
            if d not in new:
                del self.sources[d][u]
                view[d] = None
        served = self.last_served[u]
        changed = []
        for d, alloc in new.items():
            if old.get(d) != alloc:
                self.sources[d][u] = alloc
                view[d] = None
                changed.append(d)
            served[d] = self.queue.now
        self.plans[u] = new
        if old != new:
            self._row("Plan", u, tuple((d, k, r) for d, (k, r) in sorted(new.items())))
        if self.audit:
            self._audit_plan(u, hybrid_path, new, budgets)
        # unchanged destinations already retry on their own deliveries
        for d in changed:
            self._try_requests(d)
        for d in old:
            if d not in new:
                # the others' share of d's downlink just grew
                self._try_requests(d)

    def _audit_plan(self, u: int, hybrid_path: bool, new: dict, budgets) -> None:
        up = self.peers[u].bandwidth.up_rate
        if math.fsum(r for k, r in new.values() for _ in range(k)) > up:
            self.violations.append(("uplink", self.queue.now, u))
        if hybrid_path:
            for d, (k, _) in new.items():
                if k > budgets[d].max_connections:
                    self.violations.append(("budget", self.queue.now, u, d))
                # seeders never plan more than a mobile destination can absorb
                if self.peers[d].peer_class is not PeerClass.MOBILE:
                    continue
                seeded = math.fsum(
                    kk * rr for s, (kk, rr) in self.sources[d].items() if self.peers[s].is_seeder
                )
                if seeded > self.peers[d].bandwidth.down_rate * (1 + 1e-9):
                    self.violations.append(("downlink", self.queue.now, u, d))
        elif not self.hybrid and sum(k for k, _ in new.values()) > self.cfg.u_default:
            self.violations.append(("u_default", self.queue.now, u))

    # --------------------------------------------------------------- requests

    def _try_requests(self, d: int) -> None:
        D = self.peers[d]
        if not D.online or D.bitfield.complete:
            return
        srcs = self.sources[d]
        requestable = self.num_blocks - D.bitfield.num_blocks_held - len(D.pending)
        if not srcs or requestable <= 0:
            return
        down = D.bandwidth.down_rate
        in_rate = self.in_rate
        min_rate = self.min_rate
        if down - in_rate[d] < min_rate:
            return
        view = self._view(d)
        order, planned, streams, cached = view
        cfg = self.cfg
        now_s = self.queue.now / 1000
        out_rate = self.out_rate
        peers = self.peers
        warm = warmup_factor(D, D.joined_at, now_s, cfg.trial_len, cfg.warmup_min)
        # an oversubscribed downlink is shared max-min fairly among its streams
        level = math.inf
        if planned > down:
            work = requestable + len(D.pending)
            if warm == 1.0 and work >= streams:
                if cached is None:
                    cached = view[3] = self._fair_level(order, down, work, warm)
                level = cached
            else:
                level = self._fair_level(order, down, work, warm)
        links = D.links
        issue_frac = cfg.min_issue_fraction
        u_default = cfg.u_default
        for u, cap, rate in order:
            link = links.get(u)
            if link is None:
                continue
            slots = cap - link.inflight_in
            if slots <= 0:
                continue
            sending = self.sending[u]
            if d not in sending and len(sending) >= max(u_default, len(self.plans[u])):
                # a dropped destination still holds one of u's connections
                self.up_blocked[u] = True
                continue
            U = peers[u]
            desired = rate if U.bitfield.complete else rate * warm
            if desired > level:
                desired = level
            floor = issue_frac * desired
            if floor < min_rate:
                floor = min_rate
            up = U.bandwidth.up_rate
            while slots > 0:
                actual = desired
                spare = up - out_rate[u]
                if spare < actual:
                    actual = spare
                spare = down - in_rate[d]
                if spare < actual:
                    actual = spare
                if actual < floor:
                    if up - out_rate[u] < floor:
                        # retried when u's next transfer ends
                        self.up_blocked[u] = True
                    break
                blk = select_next_block(D, u, U.bitfield, self.rng_proto)
                if blk is None:
                    break
                self._issue(u, d, blk, actual)
                slots -= 1
            if down - in_rate[d] < min_rate:
                return

    def _issue(self, u: int, d: int, blk: tuple, rate: float) -> None:
        D = self.peers[d]
        piece, b = blk
        g = self.filemap.piece_offsets[piece] + b
        if D.bitfield.blocks[g] or g in D.pending:
            raise SimulationError(f"peer {d} requested block {g} it already holds or awaits")
        size = self.block_sizes[g]
        now = self.queue.now
        dt = transfer_ms(size, rate, self._base_ms(u, d))
        tid = self._next_tid
        self._next_tid += 1
        self.transfers[tid] = (u, d, g, piece, b, size, now, rate)
        D.pending[g] = u
        D.pending_per_piece[piece] += 1
        D.links[u].inflight_in += 1
        self.out_rate[u] += rate
        self.in_rate[d] += rate
        self.out_count[u] += 1
        self.in_count[d] += 1
        sending = self.sending[u]
        sending[d] = sending.get(d, 0) + 1
        if self.audit and len(sending) > self.cfg.u_default and not (self.hybrid and self.peers[u].is_seeder):
            self.violations.append(("connections", now, u))
        self.metrics.add_request(now / 1000)
        self._row(BLOCK_REQUEST, u, d, g, rate)
        self.queue.push(now + dt, BLOCK_DELIVERED, tid)

    def _release(self, u: int, d: int, rate: float) -> None:
        self.out_count[u] -= 1
        self.in_count[d] -= 1
        sending = self.sending[u]
        if sending[d] == 1:
            del sending[d]
        else:
            sending[d] -= 1
        self.out_rate[u] = self.out_rate[u] - rate if self.out_count[u] else 0.0
        self.in_rate[d] = self.in_rate[d] - rate if self.in_count[d] else 0.0

    def _cancel(self, tid: int) -> None:
        u, d, g, piece, b, size, t0, rate = self.transfers.pop(tid)
        self._release(u, d, rate)
        D = self.peers[d]
        del D.pending[g]
        D.pending_per_piece[piece] -= 1
        link = D.links.get(u)
        if link is not None:
            link.inflight_in -= 1
        self.cancelled += 1
        self.metrics.add(BlockTransferRecord((piece, b), u, d, t0 / 1000, None, Outcome.CANCELLED, size))
        self._row("Cancel", u, d, g)

    # --------------------------------------------------------------- handlers

    def _on_delivered(self, tid: int) -> None:
        tr = self.transfers.pop(tid, None)
        if tr is None:
            return
        u, d, g, piece, b, size, t0, rate = tr
        now = self.queue.now
        if self.audit and now != t0 + transfer_ms(size, rate, self._base_ms(u, d)):
            self.violations.append(("link", now, u, d, g))
        self._release(u, d, rate)
        D, U = self.peers[d], self.peers[u]
        D.links[u].inflight_in -= 1
        both_leeching = not D.bitfield.complete and not U.bitfield.complete
        now_s = now / 1000
        out = handle_block_received(D, u, (piece, b), now_s, size)
        if out.redundant:
            self.metrics.add(BlockTransferRecord((piece, b), u, d, t0 / 1000, None, Outcome.REDUNDANT, size))
            return
        ul = U.links[d]
        ul.sent_t.append(now_s)
        ul.sent_b.append(size)
        ul.bytes_out += size
        ul.lat_t.append(now_s)
        ul.lat_v.append(now_s - t0 / 1000)
        if both_leeching:
            self.pair_bytes[(u, d)] = self.pair_bytes.get((u, d), 0) + size
        self.metrics.add(BlockTransferRecord((piece, b), u, d, t0 / 1000, now_s, Outcome.DELIVERED, size))
        self._row(BLOCK_DELIVERED, u, d, g)
        if out.file_completed:
            self.tracker.mark_seeder(d)
        if out.piece_completed:
            self._on_piece(d, piece)
        if out.file_completed:
            self._on_complete(d)
        self._try_requests(d)
        if self.up_blocked[u]:
            self.up_blocked[u] = False
            for dd in list(self.plans[u]):
                if dd != d:
                    self._try_requests(dd)

    def _on_piece(self, d: int, piece: int) -> None:
        D = self.peers[d]
        self._row("Have", d, piece, len(D.links))
        for n in list(D.links):
            N = self.peers[n]
            nl = N.links[d]
            N.availability[piece] += 1
            if N.bitfield.pieces[piece]:
                dl = D.links[n]
                dl.missing -= 1
                if dl.missing == 0:
                    self._set_interest(d, n, False)
            else:
                nl.missing += 1
                if nl.missing == 1:
                    self._set_interest(n, d, True)
        for n in list(self.plans[d]):
            self._try_requests(n)

    def _on_complete(self, d: int) -> None:
        self._row("Complete", d)
        self.incomplete -= 1
        if self.incomplete == 0:
            self.finished = True
            self.metrics.completion_time = self.now

    def _on_join(self, pid: int) -> None:
        p = self.peers[pid]
        p.online = True
        self._row(PEER_JOIN, pid)
        self._announce(pid)
        now = self.queue.now
        self.queue.push(self._later(self.cfg.announce_interval), ANNOUNCE, pid)
        # the first choke round also makes the first optimistic pick
        self.queue.push(now, CHOKE_TICK, pid)
        self.queue.push(self._later(self.cfg.optimistic_interval), OPTIMISTIC_TICK, pid)
        self._schedule_churn(pid)

    def _schedule_churn(self, pid: int) -> None:
        if self.finished:
            return
        nxt = churn_step(self.peers[pid], self.rng_churn, self.cfg.mean_online, self.cfg.mean_offline, self.now)
        if nxt is None:
            return
        leave, ret = nxt
        leave_ms = max(to_ms(leave), self.queue.now + 1)
        self.return_at[pid] = max(to_ms(ret), leave_ms + 1)
        self.queue.push(leave_ms, PEER_LEAVE, pid)

    def _on_announce(self, pid: int) -> None:
        if not self.finished:
            self.queue.push(self._later(self.cfg.announce_interval), ANNOUNCE, pid)
        p = self.peers[pid]
        if not p.online:
            return
        holds = self.drop_until[pid]
        for d in [d for d, until in holds.items() if until <= self.queue.now]:
            del holds[d]
        self._announce(pid)

    def _excluded(self, u: int) -> set:
        U = self.peers[u]
        out = {d for d, until in self.drop_until[u].items() if until > self.queue.now}
        if not self._may_serve_mobile(u):
            out.update(d for d in U.links if self.peers[d].peer_class is PeerClass.MOBILE)
        return out

    def _candidates(self, u: int):
        tr = self.tracker.records
        return [(n, self.peers[n].peer_class, tr[n].is_seeder) for n in sorted(self.peers[u].links)]

    def _pick_optimistic(self, u: int, exclude: set) -> None:
        U = self.peers[u]
        prev = U.optimistic
        cands = [c for c in self._candidates(u) if c[0] not in exclude and c[0] != prev]
        U.optimistic = None
        choice = optimistic_unchoke(U, cands, self.hybrid, self.rng_proto, self.now)
        if choice is None and prev is not None and prev not in exclude:
            # nobody else to try: keep the current pick while it still wants data
            link = U.links.get(prev)
            if link is not None and link.peer_interested and prev not in U.regular:
                choice = prev
        U.optimistic = choice
        if choice != prev:
            tr = self.tracker.records
            static_seeder = choice is not None and tr[choice].is_seeder and \
                self.peers[choice].peer_class is PeerClass.STATIC
            self._row("Optimistic", u, choice, static_seeder)

    def _optimistic_valid(self, u: int, exclude: set) -> bool:
        U = self.peers[u]
        o = U.optimistic
        if o is None or o in exclude:
            return False
        link = U.links.get(o)
        return link is not None and link.peer_interested

    def _on_optimistic(self, u: int) -> None:
        if not self.finished:
            self.queue.push(self._later(self.cfg.optimistic_interval), OPTIMISTIC_TICK, u)
        U = self.peers[u]
        if not U.online:
            return
        exclude = self._excluded(u)
        U.regular = [r for r in U.regular if r not in exclude]
        self._pick_optimistic(u, exclude)
        U.regular = [r for r in U.regular if r != U.optimistic]
        self._replan(u)

    def _on_choke(self, u: int) -> None:
        cfg = self.cfg
        if not self.finished:
            self.queue.push(self._later(cfg.choke_interval), CHOKE_TICK, u)
        U = self.peers[u]
        if not U.online:
            return
        now_s = self.now
        if self.hybrid:
            if U.peer_class is PeerClass.MOBILE and not U.is_seeder:
                congested = self._inbound(u) > U.bandwidth.down_rate
                if congested != self.congested[u]:
                    self.queue.push(self.queue.now, CONGESTION_SIGNAL, (u, congested))
            if not U.is_seeder:
                self._drop_slow(u)
        exclude = self._excluded(u)
        if not self._optimistic_valid(u, exclude):
            U.regular = []
            self._pick_optimistic(u, exclude)
        key = None
        if cfg.rank_by_our:
            key = {n: self.peers[n].bandwidth.up_rate for n in U.links}
        decision = recompute_chokes(U, now_s, cfg.regular_slots, self.rng_proto, cfg.rate_window, exclude, key)
        U.regular = sorted(decision.unchoked)
        U.extra = self._extra_mobile(u, exclude) if self.hybrid and U.is_seeder else []
        for n, link in U.links.items():
            link.choked_by_us = not (n in decision.unchoked or n == U.optimistic or n in U.extra)
        self._row(CHOKE_TICK, u, tuple(U.regular), U.optimistic, tuple(U.extra))
        self._replan(u)

    def _extra_mobile(self, u: int, exclude: set) -> list:
        """Mobile destinations a hybrid seeder serves beyond the usual slots."""
        U = self.peers[u]
        if not self._may_serve_mobile(u):
            return []
        taken = set(U.regular)
        if U.optimistic is not None:
            taken.add(U.optimistic)
        room = int(U.bandwidth.up_rate // self.r_min_mobile)
        room -= sum(1 for n in taken if self.peers[n].peer_class is PeerClass.MOBILE)
        cands = [
            n for n in sorted(U.links)
            if n not in taken and n not in exclude and U.links[n].peer_interested
            and self.peers[n].peer_class is PeerClass.MOBILE
        ]
        if room <= 0 or not cands:
            return []
        if self.cfg.mobile_rotation:
            served = self.last_served[u]
            cands.sort(key=lambda n: (served.get(n, -1), n))
            return sorted(cands[:room])
        skip = set(U.links) - set(cands)
        ranked = rank_interested(U, self.now, self.rng_proto, self.cfg.rate_window, skip)
        return sorted(ranked[:room])

    def _drop_slow(self, u: int) -> None:
        U = self.peers[u]
        now_s = self.now
        active = []
        for d in self.plans[u]:
            if self.peers[d].peer_class is not PeerClass.MOBILE:
                continue
            lat = U.links[d].mean_latency_in_window(now_s, self.cfg.rate_window)
            if lat is not None:
                active.append((d, lat))
        if not active:
            return
        counts = {d: len(self.sources[d]) for d, _ in active}
        for d in sorted(drop_slow_connections(active, self.cfg.latency_threshold, counts)):
            self.drop_until[u][d] = self.queue.now + to_ms(self.cfg.drop_hold)
            self._row("Drop", u, d, counts[d])

    def _on_congestion(self, payload) -> None:
        pid, flag = payload
        self.congested[pid] = flag
        self.tracker.signal_congestion(pid, flag)
        self._row(CONGESTION_SIGNAL, pid, flag)

    def _on_leave(self, pid: int) -> None:
        p = self.peers[pid]
        if not p.online:
            return
        self._row(PEER_LEAVE, pid, p.bitfield.num_blocks_held)
        for n in list(p.links):
            self._disconnect(pid, n)
        p.regular, p.optimistic, p.extra = [], None, []
        if self.plans[pid]:
            self._replan(pid)
        p.online = False
        self.tracker.stop(pid)
        self.queue.push(self.return_at.pop(pid), PEER_RETURN, pid)

    def _on_return(self, pid: int) -> None:
        p = self.peers[pid]
        p.online = True
        self._row(PEER_RETURN, pid, p.bitfield.num_blocks_held)
        self._announce(pid)
        self._schedule_churn(pid)

    def _on_sample(self, _payload) -> None:
        cfg = self.cfg
        t = self.now
        m = self.metrics
        step = to_ms(cfg.sample_interval)
        nxt = self.queue.now + step
        if not self.finished:
            self.queue.push(nxt, METRICS_SAMPLE, None)
        if t > 0:
            tput, empty = avg_throughput(m, t - cfg.sample_interval, t, with_flag=True)
        else:
            tput, empty = 0.0, True
        served = 0
        for d in self.leechers:
            D = self.peers[d]
            if D.peer_class is not PeerClass.MOBILE or not D.online or D.bitfield.complete:
                continue
            for s in self.sources[d]:
                if self.peers[s].is_seeder and self._eligible(s):
                    served += 1
                    break
        seeders = [r for r in self.tracker.records.values() if r.is_seeder and r.active]
        bound = hyb.max_mobile_fraction(seeders, self.num_mobile, self.r_min_mobile, self.min_seed_rate)
        frac = 100.0 * served / self.num_mobile if self.num_mobile else 0.0
        allocated = math.fsum(k * r for plan in self.plans for k, r in plan.values())
        delivered = len(m.delivered_tx)
        inflight = len(self.transfers)
        if self.audit and m.request_count != delivered + inflight + self.cancelled:
            self.violations.append(("conservation", self.queue.now))
        if self.audit and frac > bound + 1e-9:
            self.violations.append(("fig9", self.queue.now, frac, bound))
        cum_mobile = sum(
            self.peers[d].bitfield.num_blocks_held for d in self.leechers
            if self.peers[d].peer_class is PeerClass.MOBILE
        )
        cum_static = sum(
            self.peers[d].bitfield.num_blocks_held for d in self.leechers
            if self.peers[d].peer_class is PeerClass.STATIC
        )
        m.add_sample(Sample(
            t=t, cumulative=delivered, in_flight=inflight, throughput_window=tput, empty_window=empty,
            sdr=(delivered / m.request_count) if m.request_count else 1.0,
            mobile_served=served, mobile_served_fraction=frac, mobile_bound=bound,
            allocated_up_kBps=allocated / KIB, cumulative_mobile=cum_mobile, cumulative_static=cum_static,
        ))

    def _fill_samples(self, until_ms: int) -> None:
        """Extend the time series to ``until_ms`` once every peer is done.

        Nothing changes after completion except the sliding throughput
        window, so later samples copy the first one past completion.
        """
        m = self.metrics
        step = to_ms(self.cfg.sample_interval)
        t_ms = to_ms(m.samples[-1].t) + step if m.samples else 0
        if t_ms > until_ms:
            return
        self.queue.now = t_ms
        self._on_sample(None)
        last = m.samples[-1]
        window = self.cfg.sample_interval
        for t_ms in range(t_ms + step, until_ms + 1, step):
            t = t_ms / 1000
            tput, empty = avg_throughput(m, t - window, t, with_flag=True)
            m.samples.append(dataclasses.replace(last, t=t, throughput_window=tput, empty_window=empty))

    # ------------------------------------------------------------------- loop

    def run(self, until: Optional[float] = None) -> MetricsLog:
        if not self._built:
            self.build()
        until_ms = to_ms(self.cfg.sim_duration if until is None else until)
        handlers = {
            PEER_JOIN: self._on_join,
            ANNOUNCE: self._on_announce,
            OPTIMISTIC_TICK: self._on_optimistic,
            CHOKE_TICK: self._on_choke,
            BLOCK_DELIVERED: self._on_delivered,
            PEER_LEAVE: self._on_leave,
            PEER_RETURN: self._on_return,
            CONGESTION_SIGNAL: self._on_congestion,
            METRICS_SAMPLE: self._on_sample,
        }
        q = self.queue
        # the run allocates many long-lived objects and no cycles worth collecting
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            while q:
                if q.peek_time() > until_ms:
                    break
                _, _, kind, payload = q.pop()
                handlers[kind](payload)
                if self.finished:
                    break
        finally:
            if gc_was_enabled:
                gc.enable()
        if self.finished:
            self._fill_samples(until_ms)
        elif q.now < until_ms:
            q.now = until_ms if q else q.now
        self.metrics.end_time = self.metrics.completion_time if self.finished else q.now / 1000
        log.info("run seed=%s mode=%s end=%.3fs delivered=%d", self.cfg.rng_seed, self.mode.value,
                 self.metrics.end_time, len(self.metrics.delivered_tx))
        return self.metrics

    def dump_events(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.events:
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def build_scenario(cfg: ScenarioConfig, audit: bool = True) -> Simulation:
    return Simulation(cfg, audit=audit).build()


def run(world: Simulation, until: Optional[float] = None) -> tuple[Simulation, list]:
    world.run(until)
    return world, world.events
