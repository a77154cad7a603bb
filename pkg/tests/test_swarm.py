import random

import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from mobiswarm.errors import ConfigError
from mobiswarm.swarm import Bandwidth, Bitfield, PeerClass, classify_peer, partition_file, rarest_order

KIB = 1024


def test_partition_exact_division():
    fm = partition_file(1_048_576, 262_144, 16_384)
    assert fm.num_pieces == 4
    assert [fm.blocks_per_piece(p) for p in range(4)] == [16] * 4


def test_partition_identity_case():
    fm = partition_file(100, 100, 100)
    assert fm.num_pieces == 1
    assert fm.block_sizes() == [100]


def test_partition_short_tail():
    fm = partition_file(1_000_000, 262_144, 16_384)
    assert fm.num_pieces == 4
    assert fm.piece_length(3) == 213_568
    assert fm.blocks_per_piece(3) == 14
    assert [fm.size_of_block(3, b) for b in range(14)] == [16_384] * 13 + [576]
    assert sum(fm.block_sizes()) == 1_000_000


@pytest.mark.parametrize("args", [(0, 16, 16), (100, 0, 16), (100, 16, -1), (100, 24, 16)])
def test_partition_rejects_bad_sizes(args):
    with pytest.raises(ConfigError):
        partition_file(*args)


@given(
    file_size=st.integers(1, 200_000),
    blocks_per_piece=st.integers(1, 16),
    block_size=st.integers(1, 4096),
)
def test_partition_properties(file_size, blocks_per_piece, block_size):
    piece_size = blocks_per_piece * block_size
    fm = partition_file(file_size, piece_size, block_size)
    sizes = fm.block_sizes()
    assert sum(sizes) == file_size
    assert fm.num_pieces == -(-file_size // piece_size)
    assert all(s == block_size for s in sizes[:-1])
    assert 0 < sizes[-1] <= block_size
    assert all(fm.piece_length(p) == piece_size for p in range(fm.num_pieces - 1))
    assert sum(fm.piece_length(p) for p in range(fm.num_pieces)) == file_size


def test_classify_examples():
    assert classify_peer(Bandwidth(10 * KIB, 40 * KIB), 64 * KIB) is PeerClass.MOBILE
    assert classify_peer(Bandwidth(100 * KIB, 1000 * KIB), 64 * KIB) is PeerClass.STATIC
    # a phone on Wi-Fi is classified by bandwidth alone
    assert classify_peer(Bandwidth(200 * KIB, 2000 * KIB), 64 * KIB) is PeerClass.STATIC


@given(st.floats(1, 1e7), st.floats(1, 1e7), st.floats(1, 1e7))
def test_classify_monotone_in_down_rate(d1, d2, threshold):
    lo, hi = sorted((d1, d2))
    c_lo = classify_peer(Bandwidth(1.0, lo), threshold)
    c_hi = classify_peer(Bandwidth(1.0, hi), threshold)
    # once static, a faster downlink never turns a peer mobile
    assert not (c_lo is PeerClass.STATIC and c_hi is PeerClass.MOBILE)


def test_bandwidth_must_be_positive():
    with pytest.raises(ConfigError):
        Bandwidth(0, 10)


def test_bitfield_piece_bit_follows_blocks():
    fm = partition_file(4 * 32, 32, 16)
    bf = Bitfield(fm)
    assert not bf.add_block(1, 0)
    assert not bf.has_piece(1)
    assert bf.add_block(1, 1)
    assert bf.has_piece(1)
    assert not bf.add_block(1, 1)
    assert bf.num_blocks_held == 2 and not bf.complete
    for p in (0, 2, 3):
        for b in range(2):
            bf.add_block(p, b)
    assert bf.complete


def _bf(fm, pieces):
    return Bitfield.from_pieces(fm, pieces)


def test_rarest_nothing_missing():
    fm = partition_file(3 * 16, 16, 16)
    assert rarest_order([_bf(fm, [0])], Bitfield(fm, full=True), random.Random(0)) == []


def test_rarest_example():
    fm = partition_file(3 * 16, 16, 16)
    # replica counts p0:3, p1:1, p2:2
    neighbors = [_bf(fm, [0, 1, 2]), _bf(fm, [0, 2]), _bf(fm, [0])]
    assert rarest_order(neighbors, Bitfield(fm), random.Random(0)) == [1, 2, 0]


def test_rarest_tie_break_is_fair():
    fm = partition_file(2 * 16, 16, 16)
    neighbors = [_bf(fm, [0, 1])]
    first = [rarest_order(neighbors, Bitfield(fm), random.Random(s))[0] for s in range(1000)]
    counts = [first.count(0), first.count(1)]
    assert chisquare(counts).pvalue > 0.01


@st.composite
def rarity_case(draw):
    n = draw(st.integers(1, 12))
    fm = partition_file(n * 16, 16, 16)
    neighbors = [
        _bf(fm, [p for p in range(n) if draw(st.booleans())])
        for _ in range(draw(st.integers(0, 6)))
    ]
    own = _bf(fm, [p for p in range(n) if draw(st.booleans())])
    return fm, neighbors, own, draw(st.integers(0, 2**32))


@given(rarity_case())
def test_rarest_order_properties(case):
    fm, neighbors, own, seed = case
    order = rarest_order(neighbors, own, random.Random(seed))
    assert sorted(order) == own.missing_pieces()
    counts = [sum(bf.pieces[p] for bf in neighbors) for p in order]
    assert counts == sorted(counts)
