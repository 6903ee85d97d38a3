"""Emulated collector memory and the one-sided verb subset used against it.

The collector's NIC and registered memory are modeled as a flat byte region
plus Write / Fetch-and-Add / Read verbs applied through a queue pair.  The
queue pair enforces strictly sequential 24-bit packet sequence numbers: any
gap desynchronizes it and every later verb is rejected until an explicit
reset, which is what makes loss on the translator-collector leg catastrophic
rather than transparent.

Single-writer contract: one logical writer (the translator) mutates a region;
readers snapshot between simulation steps.  Multi-octet values stored by
verbs are little-endian.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

PSN_MOD = 1 << 24
_U64_MOD = 1 << 64


class OutOfBoundsError(Exception):
    """A verb addressed memory outside the region (translator addressing bug)."""


class QpState(Enum):
    OPEN = "open"
    DESYNCED = "desynced"


@dataclass
class QueuePair:
    """RDMA connection state: next expected PSN and open/desynced flag."""

    expected_psn: int = 0
    state: QpState = QpState.OPEN

    def __post_init__(self):
        self.expected_psn %= PSN_MOD


@dataclass(frozen=True)
class Write:
    address: int
    payload: bytes


@dataclass(frozen=True)
class FetchAdd:
    address: int
    addend: int  # unsigned 64-bit


@dataclass(frozen=True)
class Read:
    address: int
    length: int


Verb = Union[Write, FetchAdd, Read]


@dataclass(frozen=True)
class VerbResult:
    """Outcome of presenting one verb packet to the queue pair.

    ``accepted`` is False when the verb was rejected by PSN state (the verb
    had no effect).  ``old_value`` carries the pre-add counter for FetchAdd;
    ``data`` carries Read results.
    """

    accepted: bool
    old_value: Optional[int] = None
    data: Optional[bytes] = None


class MemoryRegion:
    """Contiguous byte-addressable registered memory."""

    def __init__(self, size: int):
        if size < 0:
            raise ValueError(f"size must be >= 0, got {size}")
        self._buf = bytearray(size)

    @property
    def size(self) -> int:
        return len(self._buf)

    def read(self, address: int, length: int) -> bytes:
        """Read-only snapshot access; does not require a verb."""
        self._check_span(address, length)
        return bytes(self._buf[address:address + length])

    def snapshot(self) -> bytes:
        return bytes(self._buf)

    def dump(self, path) -> None:
        """Write the raw octets to a binary file for oracle comparison."""
        with open(path, "wb") as fh:
            fh.write(self._buf)

    def hexdump(self, start: int = 0, length: Optional[int] = None) -> str:
        """Debug text format: 16 bytes per line with offsets."""
        if length is None:
            length = self.size - start
        self._check_span(start, length)
        lines = []
        for off in range(start, start + length, 16):
            chunk = self._buf[off:min(off + 16, start + length)]
            hexpart = " ".join(f"{byte:02x}" for byte in chunk)
            lines.append(f"{off:08x}  {hexpart}")
        return "\n".join(lines)

    def _check_span(self, address: int, length: int) -> None:
        if address < 0 or length < 0 or address + length > self.size:
            raise OutOfBoundsError(
                f"access [{address}, {address + length}) escapes region of size {self.size}"
            )


def apply_verb(region: MemoryRegion, qp: QueuePair, psn: int, verb: Verb) -> VerbResult:
    """Apply one verb packet with sequence number ``psn`` through ``qp``.

    Bounds are validated before sequencing: an out-of-range address is a bug
    regardless of queue-pair state.  A PSN mismatch on an open queue pair
    desynchronizes it; a desynced queue pair rejects everything until
    ``reset_qp``.
    """
    _validate(region, verb)
    if qp.state is QpState.DESYNCED:
        return VerbResult(accepted=False)
    if psn % PSN_MOD != qp.expected_psn:
        qp.state = QpState.DESYNCED
        return VerbResult(accepted=False)
    qp.expected_psn = (qp.expected_psn + 1) % PSN_MOD

    buf = region._buf
    if isinstance(verb, Write):
        buf[verb.address:verb.address + len(verb.payload)] = verb.payload
        return VerbResult(accepted=True)
    if isinstance(verb, FetchAdd):
        old = int.from_bytes(buf[verb.address:verb.address + 8], "little")
        new = (old + verb.addend) % _U64_MOD
        buf[verb.address:verb.address + 8] = new.to_bytes(8, "little")
        return VerbResult(accepted=True, old_value=old)
    return VerbResult(accepted=True, data=bytes(buf[verb.address:verb.address + verb.length]))


def reset_qp(qp: QueuePair, new_psn: int) -> None:
    """Re-establish the connection: open the queue pair at ``new_psn``."""
    qp.state = QpState.OPEN
    qp.expected_psn = new_psn % PSN_MOD


def _validate(region: MemoryRegion, verb: Verb) -> None:
    if isinstance(verb, Write):
        if len(verb.payload) < 1:
            raise ValueError("Write payload must be at least one octet")
        region._check_span(verb.address, len(verb.payload))
    elif isinstance(verb, FetchAdd):
        if verb.address % 8 != 0:
            raise OutOfBoundsError(f"FetchAdd address {verb.address} is not 8-octet aligned")
        if not 0 <= verb.addend < _U64_MOD:
            raise ValueError(f"FetchAdd addend must be unsigned 64-bit, got {verb.addend}")
        region._check_span(verb.address, 8)
    elif isinstance(verb, Read):
        region._check_span(verb.address, verb.length)
    else:
        raise TypeError(f"unknown verb {verb!r}")
