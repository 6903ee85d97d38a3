"""Reporter and translator state machines for loss recovery and rate metering.

Reporters stamp every essential report with a cumulative counter and keep a
bounded backlog of unacknowledged essential reports.  The translator compares
incoming counters against the last applied one per reporter: a gap produces a
NACK carrying the expected sequence, and the reporter goes back and resends
everything from there.  Retransmission duplicates are suppressed by sequence
number, giving exactly-once application of essential reports whenever the
backlog still holds the NACKed entry; if it does not, the loss is counted as
unrecoverable and a sequence reset tells the translator to stop asking.

The translator also meters its verb generation with a token bucket.  When
the bucket runs dry, essential reports are diverted to a deferred queue
(re-injected once the rate drops), non-essential reports are discarded, and
a congestion signal asks the reporter to slow down; reporters respond by
halving their offered rate and recovering additively.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .wire import (
    AppendBody,
    CongestionSignal,
    DtaPacket,
    NackPacket,
    SeqResetPacket,
    encode,
    make_flags,
)

DEFAULT_BACKLOG_CAPACITY = 256

# Reserved list id marking a report as a liveness probe: it carries the
# reporter's current essential count for gap detection but writes nothing.
KEEPALIVE_BODY = AppendBody(list_id=0xFFFFFFFF, entry=b"")


@dataclass
class TokenBucket:
    """Step-clocked token bucket; tokens are verbs the translator may emit."""

    rate: float
    burst: float
    tokens: float = field(default=-1.0)

    def __post_init__(self):
        if self.rate < 0 or self.burst <= 0:
            raise ValueError(f"need rate >= 0 and burst > 0, got {self.rate}/{self.burst}")
        if self.tokens < 0:
            self.tokens = self.burst

    def step(self) -> None:
        self.tokens = min(self.burst, self.tokens + self.rate)

    def try_consume(self, n: float) -> bool:
        if n <= self.tokens:
            self.tokens -= n
            return True
        return False


@dataclass
class AimdConfig:
    """Rate response to congestion signals: halve, then recover additively."""

    increase_per_step: float = 1.0
    decrease_factor: float = 0.5
    min_rate: float = 1.0


class ReporterState:
    """Per-reporter sending state: sequence stamping, backlog, offered rate."""

    def __init__(self, reporter_id: int, backlog_capacity: int = DEFAULT_BACKLOG_CAPACITY,
                 initial_rate: float = float("inf"), aimd: Optional[AimdConfig] = None):
        if backlog_capacity < 1:
            raise ValueError(f"backlog_capacity must be >= 1, got {backlog_capacity}")
        self.reporter_id = reporter_id
        self.essential_seq = 0
        self.backlog: OrderedDict[int, DtaPacket] = OrderedDict()
        self.backlog_capacity = backlog_capacity
        self.max_rate = initial_rate
        self.rate = initial_rate
        self.aimd = aimd or AimdConfig()
        self.evicted_unprotected = 0
        self.unrecoverable_losses = 0
        self.retransmissions = 0
        self._reset_through = 0  # highest sequence already declared lost
        self._signalled_this_step = False

    def send(self, packet: DtaPacket) -> bytes:
        """Stamp and encode one report, retaining essentials in the backlog."""
        if packet.essential:
            self.essential_seq = (self.essential_seq + 1) & 0xFFFFFFFF
            stamped = DtaPacket(packet.body, self.reporter_id, self.essential_seq,
                                packet.flags, packet.version,
                                src_port=packet.src_port, dst_port=packet.dst_port)
            if len(self.backlog) >= self.backlog_capacity:
                self.backlog.popitem(last=False)
                self.evicted_unprotected += 1
            self.backlog[self.essential_seq] = stamped
        else:
            stamped = DtaPacket(packet.body, self.reporter_id, self.essential_seq,
                                packet.flags, packet.version,
                                src_port=packet.src_port, dst_port=packet.dst_port)
        return encode(stamped)

    def heartbeat(self) -> bytes:
        """Non-essential keepalive carrying the current count, for gap detection."""
        return self.send(DtaPacket(KEEPALIVE_BODY, self.reporter_id, 0, make_flags()))

    def handle_nack(self, nack: NackPacket) -> list[bytes]:
        """Go-back-N: resend every backlog entry from the NACKed sequence on.

        If the NACKed entry was evicted, the gap up to the oldest surviving
        entry is unrecoverable; a sequence reset precedes the survivors so
        the translator stops waiting for the lost reports.
        """
        expected = nack.expected_essential_seq
        out = []
        if expected not in self.backlog:
            oldest = min(self.backlog) if self.backlog else self.essential_seq + 1
            if oldest > expected:
                self.unrecoverable_losses += max(0, oldest - max(expected, self._reset_through))
                self._reset_through = max(self._reset_through, oldest)
                out.append(encode(SeqResetPacket(self.reporter_id, oldest)))
                expected = oldest
        for seq in sorted(s for s in self.backlog if s >= expected):
            out.append(encode(self.backlog[seq]))
            self.retransmissions += 1
        return out

    def handle_congestion(self, signal: CongestionSignal) -> None:
        """Multiplicative decrease, at most once per step."""
        if self._signalled_this_step or self.rate == float("inf"):
            return
        self.rate = max(self.aimd.min_rate, self.rate * self.aimd.decrease_factor)
        self._signalled_this_step = True

    def step(self) -> None:
        """Advance one step: additive rate recovery."""
        self._signalled_this_step = False
        if self.rate != float("inf"):
            self.rate = min(self.max_rate, self.rate + self.aimd.increase_per_step)


class Decision(Enum):
    PROCESS = "process"
    NACK = "nack"
    DUPLICATE = "duplicate"
    DIVERT = "divert"
    DROP_LOW_PRIORITY = "drop-low-priority"


@dataclass(frozen=True)
class ReceiveVerdict:
    decision: Decision
    nack: Optional[NackPacket] = None
    congestion: Optional[CongestionSignal] = None


class TranslatorFlowState:
    """Per-translator loss detection, metering, and deferral state."""

    def __init__(self, meter: Optional[TokenBucket] = None):
        self.meter = meter or TokenBucket(rate=float("inf"), burst=float("inf"))
        self.last_applied: dict[int, int] = {}
        self.deferred: deque = deque()  # (packet, verb_cost) awaiting meter headroom
        self.nacks_sent = 0
        self.duplicates_suppressed = 0
        self.dropped_low_priority = 0
        self.diverted = 0
        self.skipped_unrecoverable = 0
        self._nacked_this_step: set[tuple[int, int]] = set()

    def begin_step(self) -> None:
        """Re-arm NACK generation; one NACK per (reporter, gap) per step."""
        self._nacked_this_step.clear()

    def expected_seq(self, reporter_id: int) -> int:
        return self.last_applied.get(reporter_id, 0) + 1

    def _nack(self, reporter_id: int) -> ReceiveVerdict:
        """NACK verdict, dampened so one gap NACKs at most once per step.

        A suppressed repeat still aborts the packet's processing; ``nack`` is
        None then and nothing goes on the wire.
        """
        expected = self.expected_seq(reporter_id)
        key = (reporter_id, expected)
        if key in self._nacked_this_step:
            return ReceiveVerdict(Decision.NACK)
        self._nacked_this_step.add(key)
        self.nacks_sent += 1
        return ReceiveVerdict(Decision.NACK, nack=NackPacket(reporter_id, expected))

    def handle_seq_reset(self, reset: SeqResetPacket) -> None:
        last = self.last_applied.get(reset.reporter_id, 0)
        if reset.new_expected - 1 > last:
            self.skipped_unrecoverable += reset.new_expected - 1 - last
            self.last_applied[reset.reporter_id] = reset.new_expected - 1

    def receive(self, packet: DtaPacket, verb_cost: int) -> ReceiveVerdict:
        """Decide one report's fate; PROCESS and DIVERT advance the sequence.

        Diverted reports sit in translator memory and are applied later in
        order, so accepting them into the deferred queue is as good as
        applying them for loss-detection purposes.
        """
        if packet.essential:
            expected = self.expected_seq(packet.reporter_id)
            if packet.essential_seq < expected:
                self.duplicates_suppressed += 1
                return ReceiveVerdict(Decision.DUPLICATE)
            if packet.essential_seq > expected:
                return self._nack(packet.reporter_id)
        elif packet.essential_seq > self.last_applied.get(packet.reporter_id, 0):
            # non-essential report reveals a gap in the essential substream
            return self._nack(packet.reporter_id)

        # while anything is deferred, later reports must queue behind it so
        # essential application order is preserved
        if self.deferred or not self.meter.try_consume(verb_cost):
            signal = CongestionSignal(packet.reporter_id)
            if packet.essential:
                self.last_applied[packet.reporter_id] = packet.essential_seq
                self.deferred.append((packet, verb_cost))
                self.diverted += 1
                return ReceiveVerdict(Decision.DIVERT, congestion=signal)
            self.dropped_low_priority += 1
            return ReceiveVerdict(Decision.DROP_LOW_PRIORITY, congestion=signal)

        if packet.essential:
            self.last_applied[packet.reporter_id] = packet.essential_seq
        return ReceiveVerdict(Decision.PROCESS)

    def drain_deferred(self) -> list[DtaPacket]:
        """Re-inject deferred reports that now fit under the meter, in order."""
        out = []
        while self.deferred and self.meter.try_consume(self.deferred[0][1]):
            out.append(self.deferred.popleft()[0])
        return out
