"""Core domain types: peer classes, bandwidth, file partitioning and bitfields."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from mobiswarm.errors import ConfigError

PeerId = int
BlockId = tuple  # (piece index, block index within piece)

KIB = 1024


class PeerClass(enum.Enum):
    MOBILE = "mobile"
    STATIC = "static"


@dataclass(frozen=True)
class Bandwidth:
    """Link capacity of a peer, in bytes per second."""

    up_rate: float
    down_rate: float

    def __post_init__(self) -> None:
        if not (self.up_rate > 0 and self.down_rate > 0):
            raise ConfigError([f"bandwidth rates must be > 0, got up={self.up_rate} down={self.down_rate}"])


@dataclass(frozen=True)
class FileMap:
    file_size: int
    piece_size: int
    block_size: int
    num_pieces: int
    # global index of the first block of each piece, plus a final sentinel
    piece_offsets: tuple

    @property
    def num_blocks(self) -> int:
        return self.piece_offsets[-1]

    def blocks_per_piece(self, piece: int) -> int:
        return self.piece_offsets[piece + 1] - self.piece_offsets[piece]

    def piece_length(self, piece: int) -> int:
        if piece == self.num_pieces - 1:
            return self.file_size - piece * self.piece_size
        return self.piece_size

    def size_of_block(self, piece: int, block: int) -> int:
        start = block * self.block_size
        return min(self.block_size, self.piece_length(piece) - start)

    def block_index(self, piece: int, block: int) -> int:
        return self.piece_offsets[piece] + block

    def block_sizes(self) -> list[int]:
        """Size of every block, indexed by global block index."""
        return [
            self.size_of_block(p, b)
            for p in range(self.num_pieces)
            for b in range(self.blocks_per_piece(p))
        ]


def partition_file(file_size: int, piece_size: int, block_size: int) -> FileMap:
    problems = []
    for name, value in (("file_size", file_size), ("piece_size", piece_size), ("block_size", block_size)):
        if value <= 0:
            problems.append(f"{name} must be > 0 (got {value})")
    if problems:
        raise ConfigError(problems)
    if piece_size % block_size:
        raise ConfigError([f"piece_size {piece_size} is not a multiple of block_size {block_size}"])
    # a file smaller than one piece is a single short piece
    num_pieces = -(-file_size // piece_size)
    offsets = [0]
    for p in range(num_pieces):
        length = file_size - p * piece_size if p == num_pieces - 1 else piece_size
        offsets.append(offsets[-1] + -(-length // block_size))
    return FileMap(file_size, piece_size, block_size, num_pieces, tuple(offsets))


class Bitfield:
    """Per-peer possession state at piece and block granularity.

    Bits only ever get set. ``pieces[p]`` becomes 1 exactly when the last
    missing block of piece ``p`` is added.
    """

    __slots__ = ("filemap", "pieces", "blocks", "held_per_piece", "num_pieces_held", "num_blocks_held", "complete")

    def __init__(self, filemap: FileMap, full: bool = False) -> None:
        self.filemap = filemap
        n = filemap.num_pieces
        self.pieces = bytearray(b"\x01" * n if full else n)
        self.blocks = bytearray(b"\x01" * filemap.num_blocks if full else filemap.num_blocks)
        if full:
            self.held_per_piece = [filemap.blocks_per_piece(p) for p in range(n)]
            self.num_pieces_held = n
            self.num_blocks_held = filemap.num_blocks
        else:
            self.held_per_piece = [0] * n
            self.num_pieces_held = 0
            self.num_blocks_held = 0
        # kept as a plain attribute: it is read on every scheduling step
        self.complete = self.num_pieces_held == n

    @classmethod
    def from_pieces(cls, filemap: FileMap, pieces: Iterable[int]) -> "Bitfield":
        bf = cls(filemap)
        for p in pieces:
            for b in range(filemap.blocks_per_piece(p)):
                bf.add_block(p, b)
        return bf

    def has_piece(self, piece: int) -> bool:
        return bool(self.pieces[piece])

    def has_block(self, piece: int, block: int) -> bool:
        return bool(self.blocks[self.filemap.piece_offsets[piece] + block])

    def add_block(self, piece: int, block: int) -> bool:
        """Set a block bit. Returns True if this completed the piece."""
        idx = self.filemap.piece_offsets[piece] + block
        if self.blocks[idx]:
            return False
        self.blocks[idx] = 1
        self.num_blocks_held += 1
        held = self.held_per_piece[piece] + 1
        self.held_per_piece[piece] = held
        if held == self.filemap.piece_offsets[piece + 1] - self.filemap.piece_offsets[piece]:
            self.pieces[piece] = 1
            self.num_pieces_held += 1
            self.complete = self.num_pieces_held == self.filemap.num_pieces
            return True
        return False

    @property
    def empty(self) -> bool:
        return self.num_pieces_held == 0

    def missing_pieces(self) -> list[int]:
        return [p for p, bit in enumerate(self.pieces) if not bit]


def classify_peer(bw: Bandwidth, mobile_down_threshold: float) -> PeerClass:
    if mobile_down_threshold <= 0:
        raise ConfigError([f"mobile_down_threshold must be > 0 (got {mobile_down_threshold})"])
    return PeerClass.MOBILE if bw.down_rate <= mobile_down_threshold else PeerClass.STATIC


def order_by_rarity(counts: Sequence[int], pieces: Iterable[int], rng: random.Random) -> list[int]:
    """Sort ``pieces`` by ascending replica count, shuffling within equal counts."""
    keyed = [(counts[p], rng.random(), p) for p in pieces]
    keyed.sort()
    return [p for _, _, p in keyed]


def rarest_order(
    neighbor_bitfields: Sequence[Bitfield],
    own: Bitfield,
    rng: random.Random,
) -> list[int]:
    n = own.filemap.num_pieces
    counts = [0] * n
    for bf in neighbor_bitfields:
        if bf.filemap.num_pieces != n:
            raise ValueError("bitfields must share one FileMap")
        for p, bit in enumerate(bf.pieces):
            counts[p] += bit
    return order_by_rarity(counts, own.missing_pieces(), rng)


def pick_random(rng: random.Random, items: Sequence) -> Optional[object]:
    return items[rng.randrange(len(items))] if items else None
