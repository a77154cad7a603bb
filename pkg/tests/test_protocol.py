import itertools
import random

import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from mobiswarm.protocol import (
    PeerState, handle_block_received, optimistic_unchoke, recompute_chokes, select_next_block, warmup_factor,
)
from mobiswarm.swarm import Bandwidth, Bitfield, PeerClass, partition_file

FM = partition_file(4 * 32, 32, 16)  # 4 pieces of 2 blocks


def peer(pid=0, pieces=(), cls=PeerClass.STATIC, fm=FM):
    return PeerState(pid, cls, Bandwidth(1000, 1000), Bitfield.from_pieces(fm, pieces))


def with_neighbors(state, rates, now=10.0):
    """Attach interested neighbors; ``rates`` maps neighbor id to bytes received in the window."""
    for pid, rate in rates.items():
        link = state.add_neighbor(pid, Bitfield(state.bitfield.filemap))
        link.peer_interested = True
        if rate:
            link.recv_t.append(now - 1)
            link.recv_b.append(rate)
    return state


def test_chokes_pick_fastest():
    state = with_neighbors(peer(), {1: 50, 2: 30, 3: 10, 4: 0})
    dec = recompute_chokes(state, 10.0, 3, random.Random(0))
    assert dec.unchoked == {1, 2, 3}


def test_chokes_without_interest_are_empty():
    state = peer()
    state.add_neighbor(1, Bitfield(FM))
    dec = recompute_chokes(state, 10.0, 3, random.Random(0))
    assert dec.unchoked == set() and dec.optimistic is None


def test_chokes_equal_rates_uniform_subsets():
    seen = {frozenset(c): 0 for c in itertools.combinations(range(1, 5), 3)}
    for s in range(1000):
        state = with_neighbors(peer(), {1: 5, 2: 5, 3: 5, 4: 5})
        seen[frozenset(recompute_chokes(state, 10.0, 3, random.Random(s)).unchoked)] += 1
    assert chisquare(list(seen.values())).pvalue > 0.01


@given(
    st.dictionaries(st.integers(1, 40), st.integers(0, 100), max_size=20),
    st.integers(1, 8),
    st.one_of(st.none(), st.integers(1, 40)),
    st.integers(0, 2**32),
)
def test_choke_decision_size(rates, slots, optimistic, seed):
    state = with_neighbors(peer(), rates)
    state.optimistic = optimistic
    dec = recompute_chokes(state, 10.0, slots, random.Random(seed))
    total = dec.unchoked | ({dec.optimistic} if dec.optimistic is not None else set())
    assert len(total) <= slots + 1
    assert dec.optimistic not in dec.unchoked


def test_optimistic_skips_static_seeder_in_hybrid():
    state = with_neighbors(peer(), {1: 0})
    cands = [(1, PeerClass.STATIC, True)]
    assert optimistic_unchoke(state, cands, True, random.Random(0)) is None
    assert optimistic_unchoke(state, cands, False, random.Random(0)) == 1


def test_optimistic_hybrid_always_mobile_leecher():
    for s in range(100):
        state = with_neighbors(peer(), {1: 0, 2: 0})
        cands = [(1, PeerClass.STATIC, True), (2, PeerClass.MOBILE, False)]
        assert optimistic_unchoke(state, cands, True, random.Random(s)) == 2


def test_next_block_forced_move():
    state = peer(pieces=(0, 1, 2))
    state.bitfield.add_block(3, 0)
    assert select_next_block(state, 9, Bitfield(FM, full=True), random.Random(0)) == (3, 1)


def test_next_block_nothing_to_gain():
    state = peer(pieces=(0, 1))
    assert select_next_block(state, 9, Bitfield.from_pieces(FM, [0, 1]), random.Random(0)) is None


def test_next_block_random_first_is_uniform():
    counts = [0] * FM.num_pieces
    for s in range(1000):
        piece, block = select_next_block(peer(), 9, Bitfield(FM, full=True), random.Random(s))
        assert block == 0
        counts[piece] += 1
    assert chisquare(counts).pvalue > 0.01


def test_next_block_rarest_once_a_piece_is_held():
    state = peer(pieces=(0,))
    for pid, pieces in {1: [1, 2, 3], 2: [1, 3], 3: [1]}.items():
        state.add_neighbor(pid, Bitfield.from_pieces(FM, pieces))
    # availability p1:3, p2:1, p3:2
    assert select_next_block(state, 1, Bitfield.from_pieces(FM, [1, 2, 3]), random.Random(0)) == (2, 0)


@given(st.sets(st.integers(0, 7)), st.sets(st.integers(0, 3)), st.integers(0, 2**32))
def test_next_block_never_held_or_pending(held_blocks, their_pieces, seed):
    state = peer()
    for g in held_blocks:
        state.bitfield.add_block(g // 2, g % 2)
    theirs = Bitfield.from_pieces(FM, their_pieces)
    rng = random.Random(seed)
    while (blk := select_next_block(state, 9, theirs, rng)) is not None:
        piece, b = blk
        g = FM.block_index(piece, b)
        assert not state.bitfield.blocks[g] and g not in state.pending
        assert theirs.has_piece(piece)
        state.pending[g] = 9
        state.pending_per_piece[piece] += 1
    want = {FM.block_index(p, b) for p in their_pieces for b in range(2)} - {
        g for g in range(8) if state.bitfield.blocks[g]
    }
    assert set(state.pending) == want


def test_warmup_examples():
    assert warmup_factor(None, 5.0, 5.0, 120.0, 0.25) == 0.25
    assert warmup_factor(None, 5.0, 125.0, 120.0, 0.25) == 1.0
    assert warmup_factor(None, 5.0, 500.0, 120.0, 0.25) == 1.0
    assert warmup_factor(None, 0.0, 60.0, 120.0, 0.25) == pytest.approx(0.625, abs=1e-15)
    assert warmup_factor(None, 0.0, 0.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        warmup_factor(None, 0.0, 0.0, -1.0)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0.01, 1e3), st.floats(0.01, 1.0))
def test_warmup_bounded_and_linear(joined, dt, trial, wmin):
    f = warmup_factor(None, joined, joined + dt, trial, wmin)
    assert wmin - 1e-12 <= f <= 1.0 + 1e-12
    oracle = wmin + (1 - wmin) * min(1.0, dt / trial)
    assert f == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def _request(state, src, piece, block):
    g = FM.block_index(piece, block)
    state.pending[g] = src
    state.pending_per_piece[piece] += 1


def test_last_block_completes_file():
    state = peer(pieces=(0, 1, 2))
    state.bitfield.add_block(3, 0)
    state.add_neighbor(1, Bitfield(FM, full=True))
    _request(state, 1, 3, 1)
    out = handle_block_received(state, 1, (3, 1), 7.5, 16)
    assert out.file_completed and state.completed_at == 7.5 and state.is_seeder


def test_duplicate_block_is_redundant():
    state = peer(pieces=(0,))
    out = handle_block_received(state, 1, (0, 0), 1.0, 16)
    assert out.redundant and state.redundant == 1
    assert state.bitfield.num_blocks_held == 2


def test_piece_completion_notifies_every_neighbor():
    state = peer()
    for pid in (4, 2, 9):
        state.add_neighbor(pid, Bitfield(FM))
    _request(state, 2, 1, 0)
    _request(state, 2, 1, 1)
    assert handle_block_received(state, 2, (1, 0), 1.0, 16).haves == []
    out = handle_block_received(state, 2, (1, 1), 2.0, 16)
    assert out.piece_completed and out.haves == [2, 4, 9]
    assert len(out.haves) == len(state.links)
