"""Deterministic step-driven harness: reporters, lossy links, translator, collector.

Each step gives every reporter one emission opportunity (bounded by its
current offered rate), passes the surviving packets through an independent
Bernoulli loss draw per link direction, and lets the translator decode,
flow-control, and translate them into verbs against the collector's queue
pair.  Control packets (NACKs, congestion signals, sequence resets) ride the
reverse direction of the reporter link and take effect the following step.

The translator-collector leg is loss-free by default (it is the one hop the
architecture protects); a fault-injection knob drops verb packets there to
demonstrate queue-pair desynchronization.  After the offered load is
exhausted, reporters send keepalives until every essential report is either
applied or established as unrecoverable, so loss recovery always runs to
completion.  All randomness derives from the single run seed: identical
(topology, workload, seed) produce identical reports and identical collector
memory.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional

from . import append as append_mod
from . import counters, flowctl, keywrite, postcarding, wire
from .hashing import HashFamily, ValueCodec
from .memstore import MemoryRegion, QueuePair, QpState, apply_verb, reset_qp


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class LinkConfig:
    loss_to_translator: float = 0.0
    loss_to_reporter: float = 0.0

    def __post_init__(self):
        for name in ("loss_to_translator", "loss_to_reporter"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"link.{name}", f"loss probability must be in [0, 1), got {p}")


@dataclass
class TranslatorConfig:
    meter_rate: float = float("inf")
    meter_burst: float = float("inf")
    fault_drop_verbs: float = 0.0  # translator->collector fault injection
    nack_reverse_loss: bool = True  # NACKs ride the lossy reverse link

    def __post_init__(self):
        if not 0.0 <= self.fault_drop_verbs < 1.0:
            raise ConfigError("translator.fault_drop_verbs",
                              f"must be in [0, 1), got {self.fault_drop_verbs}")


@dataclass
class KwConfig:
    buflen: int = 65536
    checksum_bits: int = 32
    value_len: int = 4
    redundancy: int = 2


@dataclass
class PcConfig:
    chunks: int = 8192
    hops: int = 5
    cell_bits: int = 32
    value_bits: int = 10
    redundancy: int = 2
    cache_slots: int = 1024


@dataclass
class AppendConfig:
    lists: int = 4
    capacity: int = 4096
    entry_len: int = 4
    batch_size: int = 4


@dataclass
class KiConfig:
    buflen: int = 4096
    redundancy: int = 2


@dataclass
class SketchConfig:
    rows: int = 4
    cols: int = 16
    merge_op: str = "sum"
    w_batch: int = 4


@dataclass
class Topology:
    reporters: int = 1
    link: LinkConfig = field(default_factory=LinkConfig)
    translator: TranslatorConfig = field(default_factory=TranslatorConfig)
    kw: KwConfig = field(default_factory=KwConfig)
    pc: PcConfig = field(default_factory=PcConfig)
    append: AppendConfig = field(default_factory=AppendConfig)
    ki: KiConfig = field(default_factory=KiConfig)
    sketch: SketchConfig = field(default_factory=SketchConfig)
    backlog_capacity: int = flowctl.DEFAULT_BACKLOG_CAPACITY
    hash_seed: int = 0

    def __post_init__(self):
        if self.reporters < 1:
            raise ConfigError("reporters", f"must be >= 1, got {self.reporters}")


class WorkloadKind(Enum):
    KW_FLOWS = "kw-flows"
    POSTCARDS = "postcards"
    APPEND_EVENTS = "append-events"
    KI_COUNTERS = "ki-counters"
    SKETCH_COLUMNS = "sketch-columns"


@dataclass
class Workload:
    kind: WorkloadKind
    reports: int = 1000  # total across reporters (sketch: cols per reporter)
    essential: bool = True
    reports_per_step: float = float("inf")  # per-reporter offered rate
    key_space: int = 1 << 24
    max_delta: int = 16  # Key-Increment deltas drawn from [0, max_delta]
    path_len_fixed: Optional[int] = None  # postcards: fixed path length

    def __post_init__(self):
        if self.reports < 0:
            raise ConfigError("workload.reports", f"must be >= 0, got {self.reports}")
        if self.key_space < 1:
            raise ConfigError("workload.key_space", f"must be >= 1, got {self.key_space}")


@dataclass
class RunReport:
    """Counters accounting for every generated report's terminal state."""

    workload_kind: str = ""
    steps: int = 0
    reports_offered: int = 0
    packets_sent: int = 0  # includes retransmissions and keepalives
    packets_lost: int = 0
    reports_applied: int = 0
    retransmissions: int = 0
    keepalives: int = 0
    nacks_sent: int = 0
    nacks_lost: int = 0
    duplicates_suppressed: int = 0
    congestion_signals: int = 0
    diverted: int = 0
    dropped_low_priority: int = 0
    unrecoverable: int = 0
    verbs_applied: int = 0
    verbs_faulted: int = 0
    qp_desyncs: int = 0
    drained: bool = False
    exactly_once_ok: bool = False
    memory_sha256: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _region_layout(t: Topology) -> dict[str, int]:
    """Non-overlapping per-primitive sub-regions, in declaration order."""
    kw_slot = (t.kw.checksum_bits + 7) // 8 + t.kw.value_len
    pc_stride = postcarding._next_pow2((t.pc.cell_bits + 7) // 8 * t.pc.hops)
    sizes = {
        "kw": t.kw.buflen * kw_slot,
        "pc": t.pc.chunks * pc_stride,
        "append": t.append.lists * t.append.capacity * t.append.entry_len,
        "ki": t.ki.buflen * counters.COUNTER_LEN,
        "sketch": t.sketch.rows * t.sketch.cols * counters.COUNTER_LEN,
    }
    layout, base = {}, 0
    for name, size in sizes.items():
        base = (base + 7) // 8 * 8  # keep counters aligned
        layout[name] = base
        base += size
    layout["total"] = base
    return layout


class Translator:
    """Translator-side assembly: flow control, primitive state, verb emission."""

    def __init__(self, topology: Topology, report: RunReport, fault_rng: random.Random):
        t = topology
        self.topology = t
        self.report = report
        self.fault_rng = fault_rng
        self.family = HashFamily(t.hash_seed)
        layout = _region_layout(t)
        self.region = MemoryRegion(layout["total"])
        self.qp = QueuePair()
        self.next_psn = 0
        self.flow = flowctl.TranslatorFlowState(
            flowctl.TokenBucket(t.translator.meter_rate, t.translator.meter_burst)
        )
        self.kw_store = keywrite.KwStore(
            self.region, t.kw.buflen, t.kw.checksum_bits, t.kw.value_len,
            family=self.family, base=layout["kw"],
        )
        codec = ValueCodec(self.family, 2 ** t.pc.value_bits, t.pc.cell_bits)
        self.pc_store = postcarding.PostcardStore(
            self.region, t.pc.chunks, t.pc.hops, t.pc.cell_bits, codec,
            family=self.family, base=layout["pc"],
        )
        self.pc_cache = postcarding.PostcardCache(
            t.pc.cache_slots, t.pc.hops, self.family, universe_size=2 ** t.pc.value_bits
        )
        self.append_engine = append_mod.AppendEngine(t.append.batch_size)
        for i in range(t.append.lists):
            self.append_engine.add_list(append_mod.AppendList(
                i, layout["append"] + i * t.append.capacity * t.append.entry_len,
                t.append.capacity, t.append.entry_len,
            ))
        self.ki_store = counters.KiStore(
            self.region, t.ki.buflen, family=self.family, base=layout["ki"]
        )
        self.sketch_state = counters.SketchMergeState(
            counters.SketchSpec(t.sketch.rows, t.sketch.cols,
                                counters.MergeOp(t.sketch.merge_op)),
            reporters=t.reporters,
        )
        self.sketch_base = layout["sketch"]
        # essential reports applied, keyed by (reporter, seq), for the
        # exactly-once audit
        self.applied_essential: dict[tuple[int, int], int] = {}

    def verb_cost(self, packet: wire.DtaPacket) -> int:
        body = packet.body
        if body == flowctl.KEEPALIVE_BODY:
            return 0
        if isinstance(body, (wire.KeyWriteBody, wire.KeyIncrementBody)):
            return body.redundancy
        if isinstance(body, wire.PostcardBody):
            return self.topology.pc.redundancy
        return 1

    def translate(self, packet: wire.DtaPacket) -> list:
        """Primitive dispatch: one decoded report to its verb list."""
        body = packet.body
        if body == flowctl.KEEPALIVE_BODY:
            return []
        if isinstance(body, wire.KeyWriteBody):
            return keywrite.kw_write(self.kw_store, body.key, body.value, body.redundancy)
        if isinstance(body, wire.AppendBody):
            return self.append_engine.ingest(body.list_id, body.entry)
        if isinstance(body, wire.KeyIncrementBody):
            return counters.ki_increment(self.ki_store, body.key, body.delta, body.redundancy)
        if isinstance(body, wire.PostcardBody):
            verbs = []
            emitted = postcarding.pc_ingest(self.pc_cache, body.flow_id, body.hop,
                                            body.value, body.path_len)
            for chunk in emitted:
                verbs += postcarding.pc_write(self.pc_store, chunk,
                                              self.topology.pc.redundancy)
            return verbs
        if isinstance(body, wire.SketchMergeBody):
            outcome = counters.sm_ingest_column(
                self.sketch_state, packet.reporter_id, body.col_index, list(body.values)
            )
            if isinstance(outcome, counters.Nack):
                return []  # in-order delivery makes this unreachable except misuse
            return counters.sm_flush_completed(
                self.sketch_state, self.sketch_base, self.topology.sketch.w_batch
            )
        raise TypeError(f"unknown body {body!r}")

    def apply(self, packet: wire.DtaPacket) -> None:
        if packet.essential:
            key = (packet.reporter_id, packet.essential_seq)
            self.applied_essential[key] = self.applied_essential.get(key, 0) + 1
        for verb in self.translate(packet):
            self._apply_verb(verb)
        self.report.reports_applied += 1

    def _apply_verb(self, verb) -> None:
        fault_p = self.topology.translator.fault_drop_verbs
        psn = self.next_psn
        self.next_psn = (self.next_psn + 1) % (1 << 24)
        if fault_p and self.fault_rng.random() < fault_p:
            self.report.verbs_faulted += 1  # verb packet lost before the NIC
            return
        result = apply_verb(self.region, self.qp, psn, verb)
        if not result.accepted and self.qp.state is QpState.DESYNCED:
            # models the controller re-establishing the connection, then the
            # RDMA layer retrying the rejected packet
            self.report.qp_desyncs += 1
            reset_qp(self.qp, psn)
            apply_verb(self.region, self.qp, psn, verb)
        self.report.verbs_applied += 1


class _Reporter:
    """One reporter's send queue plus its flow-control state."""

    def __init__(self, reporter_id: int, topology: Topology, workload: Workload):
        self.state = flowctl.ReporterState(
            reporter_id, topology.backlog_capacity,
            initial_rate=workload.reports_per_step,
        )
        self.pending_bodies: list = []  # not yet stamped/sent
        self.outbox: list[bytes] = []  # stamped, ready for the link
        self.inbox: list = []  # controls from the translator

    def queue_empty(self) -> bool:
        return not self.pending_bodies and not self.outbox


def _generate_bodies(topology: Topology, workload: Workload, reporter_id: int,
                     count: int, rng: random.Random) -> list:
    t, w = topology, workload
    bodies: list = []
    if w.kind is WorkloadKind.KW_FLOWS:
        for _ in range(count):
            key = rng.randrange(w.key_space).to_bytes(8, "big")
            value = rng.randbytes(t.kw.value_len)
            bodies.append(wire.KeyWriteBody(t.kw.redundancy, key, value))
    elif w.kind is WorkloadKind.KI_COUNTERS:
        for _ in range(count):
            key = rng.randrange(w.key_space).to_bytes(8, "big")
            bodies.append(wire.KeyIncrementBody(t.ki.redundancy, key,
                                                rng.randint(0, w.max_delta)))
    elif w.kind is WorkloadKind.APPEND_EVENTS:
        for i in range(count):
            bodies.append(wire.AppendBody(i % t.append.lists,
                                          rng.randbytes(t.append.entry_len)))
    elif w.kind is WorkloadKind.POSTCARDS:
        universe = 2 ** t.pc.value_bits
        flow = 0
        while len(bodies) < count:
            flow_id = (reporter_id << 40) | flow
            flow += 1
            path_len = w.path_len_fixed or rng.randint(1, t.pc.hops)
            for hop in range(path_len):
                if len(bodies) == count:
                    break
                bodies.append(wire.PostcardBody(flow_id, hop, rng.randrange(universe),
                                                path_len))
    elif w.kind is WorkloadKind.SKETCH_COLUMNS:
        for col in range(count):
            values = tuple(rng.randrange(1 << 20) for _ in range(t.sketch.rows))
            bodies.append(wire.SketchMergeBody(col, values))
    else:
        raise ConfigError("workload.kind", f"unknown kind {w.kind!r}")
    return bodies


class Simulation:
    """One wired-up run; keeps translator state reachable for post-run queries."""

    MAX_DRAIN_STEPS = 10000

    def __init__(self, topology: Topology, workload: Workload, seed: int):
        self.topology = topology
        self.workload = workload
        self.seed = seed
        self.report = RunReport(workload_kind=workload.kind.value)
        self._fwd_rng = random.Random(f"{seed}:fwd")
        self._rev_rng = random.Random(f"{seed}:rev")
        self.translator = Translator(topology, self.report,
                                     random.Random(f"{seed}:fault"))
        self.reporters = [_Reporter(r, topology, workload)
                          for r in range(topology.reporters)]
        for rep in self.reporters:
            if workload.kind is WorkloadKind.SKETCH_COLUMNS:
                share = topology.sketch.cols  # every reporter ships its whole sketch
            else:
                share = workload.reports // topology.reporters + (
                    1 if rep.state.reporter_id < workload.reports % topology.reporters else 0
                )
            rep.pending_bodies = _generate_bodies(
                topology, workload, rep.state.reporter_id, share,
                random.Random(f"{seed}:wl:{rep.state.reporter_id}"),
            )
            self.report.reports_offered += len(rep.pending_bodies)

    def run(self, dump_path=None) -> RunReport:
        report = self.report
        flow = self.translator.flow
        steps = 0
        drain_steps = 0
        while True:
            steps += 1
            flow.meter.step()
            flow.begin_step()
            for packet in flow.drain_deferred():
                self.translator.apply(packet)

            arrivals: list[bytes] = []
            traffic_pending = False
            for rep in self.reporters:
                rep.state.step()
                for control in rep.inbox:
                    if isinstance(control, wire.NackPacket):
                        rep.outbox.extend(rep.state.handle_nack(control))
                    elif isinstance(control, wire.CongestionSignal):
                        rep.state.handle_congestion(control)
                rep.inbox.clear()

                budget = rep.state.rate
                sent = 0
                while rep.outbox and sent + 1 <= budget:
                    arrivals.append(rep.outbox.pop(0))
                    sent += 1
                while rep.pending_bodies and sent + 1 <= budget:
                    body = rep.pending_bodies.pop(0)
                    flags = wire.make_flags(essential=self.workload.essential)
                    arrivals.append(rep.state.send(
                        wire.DtaPacket(body, rep.state.reporter_id, 0, flags)
                    ))
                    sent += 1
                if not rep.queue_empty():
                    traffic_pending = True

            if not traffic_pending and self._drained():
                report.drained = True
                break
            if not traffic_pending:
                # keepalives expose tail loss: a trailing gap produces a NACK
                drain_steps += 1
                if drain_steps > self.MAX_DRAIN_STEPS:
                    break
                for rep in self.reporters:
                    if self._reporter_drained(rep):
                        continue
                    arrivals.append(rep.state.heartbeat())
                    report.keepalives += 1

            report.packets_sent += len(arrivals)
            self._deliver(arrivals)

        report.steps = steps
        report.unrecoverable = flow.skipped_unrecoverable
        report.retransmissions = sum(r.state.retransmissions for r in self.reporters)
        report.nacks_sent = flow.nacks_sent
        report.duplicates_suppressed = flow.duplicates_suppressed
        report.diverted = flow.diverted
        report.dropped_low_priority = flow.dropped_low_priority
        report.exactly_once_ok = self._exactly_once()
        report.memory_sha256 = hashlib.sha256(self.translator.region.snapshot()).hexdigest()
        if dump_path is not None:
            self.translator.region.dump(dump_path)
        return report

    def _deliver(self, arrivals: list[bytes]) -> None:
        report = self.report
        flow = self.translator.flow
        loss_fwd = self.topology.link.loss_to_translator
        loss_rev = self.topology.link.loss_to_reporter
        signalled: set[int] = set()
        for raw in arrivals:
            if loss_fwd and self._fwd_rng.random() < loss_fwd:
                report.packets_lost += 1
                continue
            packet = wire.decode(raw)
            if isinstance(packet, wire.SeqResetPacket):
                flow.handle_seq_reset(packet)
                continue
            verdict = flow.receive(packet, self.translator.verb_cost(packet))
            if verdict.decision is flowctl.Decision.PROCESS:
                if packet.body != flowctl.KEEPALIVE_BODY:
                    self.translator.apply(packet)
            elif verdict.decision is flowctl.Decision.NACK and verdict.nack is not None:
                lossy = self.topology.translator.nack_reverse_loss
                if lossy and loss_rev and self._rev_rng.random() < loss_rev:
                    report.nacks_lost += 1
                else:
                    self.reporters[packet.reporter_id].inbox.append(verdict.nack)
            if verdict.congestion is not None and packet.reporter_id not in signalled:
                signalled.add(packet.reporter_id)
                report.congestion_signals += 1
                if not (loss_rev and self._rev_rng.random() < loss_rev):
                    self.reporters[packet.reporter_id].inbox.append(verdict.congestion)

    def _reporter_drained(self, rep: _Reporter) -> bool:
        if rep.inbox or not rep.queue_empty():
            return False
        if not self.workload.essential:
            return True
        return (self.translator.flow.last_applied.get(rep.state.reporter_id, 0)
                >= rep.state.essential_seq)

    def _drained(self) -> bool:
        return (not self.translator.flow.deferred
                and all(self._reporter_drained(r) for r in self.reporters))

    def _exactly_once(self) -> bool:
        """Every offered essential report applied exactly once or counted lost."""
        if not self.workload.essential:
            return True
        applied = self.translator.applied_essential
        if any(count != 1 for count in applied.values()):
            return False
        expected = sum(r.state.essential_seq for r in self.reporters)
        return len(applied) + self.report.unrecoverable == expected


def run(topology: Topology, workload: Workload, seed: int, dump_path=None) -> RunReport:
    """Build and run one simulation; see Simulation for post-run inspection."""
    return Simulation(topology, workload, seed).run(dump_path)


_NESTED_TOPOLOGY = {
    "link": LinkConfig,
    "translator": TranslatorConfig,
    "kw": KwConfig,
    "pc": PcConfig,
    "append": AppendConfig,
    "ki": KiConfig,
    "sketch": SketchConfig,
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(data).__name__}")
    known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(where, "unknown field")
        nested = _NESTED_TOPOLOGY.get(key)
        if nested is not None and cls is Topology:
            kwargs[key] = _build(nested, value, where)
        elif key == "kind" and cls is Workload:
            try:
                kwargs[key] = WorkloadKind(value)
            except ValueError:
                choices = ", ".join(k.value for k in WorkloadKind)
                raise ConfigError(where, f"must be one of: {choices}") from None
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or cls.__name__.lower(), str(exc)) from None


def topology_from_dict(data: dict) -> Topology:
    """Build a Topology from parsed JSON, naming the offending field on error."""
    return _build(Topology, data, "topology")


def workload_from_dict(data: dict) -> Workload:
    """Build a Workload from parsed JSON, naming the offending field on error."""
    if "kind" not in data:
        raise ConfigError("workload.kind", "required field missing")
    return _build(Workload, data, "workload")
