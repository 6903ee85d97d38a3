"""Seeded hash family shared by reporters, translator, and queriers.

Every index computation in the system (key-value slots, chunk locations,
checksums, value encodings, cache rows) must be reproducible on any host
from the configured seed alone, so that queries can be answered statelessly.
All functions here are keyed BLAKE2b truncated to 64 bits; independence
between the members of the family comes from structured seeds
(domain, index) mixed into the key.
"""

from __future__ import annotations

import struct
from enum import IntEnum
from hashlib import blake2b

ALGORITHM_ID = "blake2b-64"

_MASK64 = (1 << 64) - 1


class Domain(IntEnum):
    """Namespaces separating the independent members of the hash family."""

    KW_SLOT = 1
    KW_CSUM = 2
    KW_VALUE = 3
    PC_CHUNK = 4
    PC_HOP_CSUM = 5
    PC_VALUE = 6
    KI_SLOT = 7
    CACHE_SLOT = 8
    WORKLOAD = 9


class ValueOutsideUniverse(ValueError):
    """A value was not drawn from the declared value universe."""


class _BlankType:
    """Sentinel for a hop whose postcard was never collected."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "BLANK"


BLANK = _BlankType()


class HashFamily:
    """A family of independent 64-bit hash functions derived from one seed.

    ``raw64(domain, index, data)`` is a pure function of its arguments and
    ``seed_base``; two members with different (domain, index) behave as
    independent functions.
    """

    def __init__(self, seed_base: int = 0, description: str = ALGORITHM_ID):
        self.seed_base = seed_base & _MASK64
        self.description = description

    def __repr__(self) -> str:
        return f"HashFamily(seed_base={self.seed_base:#x}, {self.description!r})"

    def _key(self, domain: int, index: int) -> bytes:
        return struct.pack("<QQQ", self.seed_base, domain, index)

    def raw64(self, domain: int, index: int, data: bytes) -> int:
        return int.from_bytes(
            blake2b(data, digest_size=8, key=self._key(domain, index)).digest(),
            "big",
        )

    def slot_hash(self, n: int, key: bytes, buflen: int) -> int:
        """Slot index of redundancy copy ``n`` of ``key`` in a ``buflen`` store.

        Each copy index selects an independent member of the family, so the
        copies of one key land on independent slots.
        """
        if buflen < 1:
            raise ValueError(f"buflen must be >= 1, got {buflen}")
        if n < 0:
            raise ValueError(f"redundancy index must be >= 0, got {n}")
        return self.raw64(Domain.KW_SLOT, n, key) % buflen

    def key_checksum(self, key: bytes, bits: int) -> int:
        """``bits``-wide checksum of a telemetry key (verifies query hits)."""
        _check_bits(bits)
        return self.raw64(Domain.KW_CSUM, 0, key) >> (64 - bits)

    def chunk_hash(self, n: int, flow_key: bytes, chunks: int) -> int:
        """Chunk index of redundancy copy ``n`` of a flow's postcard block."""
        if chunks < 1:
            raise ValueError(f"chunks must be >= 1, got {chunks}")
        return self.raw64(Domain.PC_CHUNK, n, flow_key) % chunks

    def hop_checksum(self, flow_key: bytes, hop: int, bits: int) -> int:
        """Per-hop flow checksum XORed over stored postcard cells."""
        _check_bits(bits)
        return self.raw64(Domain.PC_HOP_CSUM, hop, flow_key) >> (64 - bits)

    def cache_slot(self, flow_key: bytes, slots: int) -> int:
        """Translator cache row for a flow's pending postcards."""
        return self.raw64(Domain.CACHE_SLOT, 0, flow_key) % slots


def _check_bits(bits: int) -> None:
    if not 1 <= bits <= 64:
        raise ValueError(f"bit width must be in [1, 64], got {bits}")


class ValueCodec:
    """Bidirectional encoding of a finite value universe into b-bit cells.

    The universe is the integer range [0, universe_size); BLANK is a reserved
    symbol outside it.  Decoding uses a pre-populated table of all
    (encoding, value) pairs.  Distinct values may collide in the encoding
    (birthday bound ~ |V|^2 / 2^(b+1)); collisions keep the first-registered
    value and are counted in ``collisions``.
    """

    def __init__(self, family: HashFamily, universe_size: int, bits: int):
        if universe_size < 1:
            raise ValueError(f"universe_size must be >= 1, got {universe_size}")
        _check_bits(bits)
        self.family = family
        self.universe_size = universe_size
        self.bits = bits
        self.collisions = 0
        self._table: dict[int, object] = {}
        # BLANK is registered first so no in-universe collision can displace it.
        self._blank_code = self._raw_encode(BLANK)
        self._table[self._blank_code] = BLANK
        for v in range(universe_size):
            code = self._raw_encode(v)
            if code in self._table:
                self.collisions += 1
            else:
                self._table[code] = v

    def _raw_encode(self, v) -> int:
        if v is BLANK:
            data = b"\x00"
        else:
            data = b"\x01" + struct.pack("<Q", v)
        return self.family.raw64(Domain.PC_VALUE, 0, data) >> (64 - self.bits)

    def encode(self, v) -> int:
        """b-bit encoding of ``v`` (a universe member or BLANK)."""
        if v is not BLANK and not (isinstance(v, int) and 0 <= v < self.universe_size):
            raise ValueOutsideUniverse(f"{v!r} not in [0, {self.universe_size}) or BLANK")
        return self._raw_encode(v)

    def decode(self, code: int):
        """Value whose encoding is ``code``, or None if no value maps there."""
        return self._table.get(code)

    def __contains__(self, v) -> bool:
        return v is BLANK or (isinstance(v, int) and 0 <= v < self.universe_size)
