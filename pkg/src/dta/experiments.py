"""Named experiment suites: Monte-Carlo accuracy runs, oracles, and sweeps.

Each suite produces CSV rows (plus a metadata header) for one figure-style
experiment: key-value redundancy/longevity sweeps, postcard cache pressure
and accuracy, append batching verification, keyed-counter accuracy, and
loss-recovery runs.  Rows carry the matching closed-form bound wherever one
is defined so a plot or test can compare measurement against model directly.

The Monte-Carlo engines use an interleaved design that gives every query an
exact write-distance: after a warm-up of K distinct keys, each step writes
one new key and queries the key written exactly K steps earlier.  Only
writes that happened after a key can disturb it, so each query is a clean
sample of the age-K outcome and one pass yields tens of thousands of them.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

from . import analysis, sim
from .append import AppendEngine, AppendList, PollCursor, append_poll
from .counters import KiStore, ki_increment, ki_query
from .hashing import ALGORITHM_ID, Domain, HashFamily, ValueCodec
from .keywrite import (
    KwStore,
    QueryOutcome,
    QueryPolicy,
    kw_query,
    kw_write,
    stream_key,
    stream_value,
)
from .memstore import MemoryRegion, QueuePair, apply_verb
from .postcarding import (
    EmissionReason,
    PathOutcome,
    PostcardCache,
    PostcardStore,
    pc_ingest,
    pc_query,
    pc_write,
)


class UnknownSuite(KeyError):
    pass


@dataclass(frozen=True)
class SuiteResult:
    name: str
    params: dict
    seed: int
    fieldnames: tuple
    rows: list

    @property
    def config_hash(self) -> str:
        blob = json.dumps({"suite": self.name, "params": self.params}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(fh: TextIO, result: SuiteResult) -> None:
    """RFC-4180-style CSV with reproducibility metadata as # comments."""
    fh.write(f"# suite={result.name}\n")
    fh.write(f"# config_hash={result.config_hash}\n")
    fh.write(f"# seed={result.seed}\n")
    fh.write(f"# algorithm={ALGORITHM_ID}\n")
    writer = csv.DictWriter(fh, fieldnames=result.fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in result.rows:
        writer.writerow(row)


def read_csv(fh: TextIO) -> tuple[dict, list[dict]]:
    """Parse a suite CSV back: (# metadata, data rows)."""
    meta = {}
    rows = []
    reader = None
    fieldnames = None
    for line in fh:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        if fieldnames is None:
            fieldnames = next(csv.reader([line]))
            reader = csv.DictReader([], fieldnames=fieldnames)
            continue
        parsed = next(csv.DictReader([line], fieldnames=fieldnames))
        if None in parsed or any(v is None for v in parsed.values()):
            raise ValueError(f"row does not match header {fieldnames}: {line!r}")
        rows.append(parsed)
    if fieldnames is None:
        raise ValueError("no header row found")
    return meta, rows


# ---------------------------------------------------------------------------
# Key-value store Monte-Carlo


@dataclass(frozen=True)
class KwMcStats:
    trials: int
    correct: int
    empty: int
    ambiguous: int
    wrong: int

    @property
    def success_rate(self) -> float:
        return self.correct / self.trials

    @property
    def empty_rate(self) -> float:
        return self.empty / self.trials

    @property
    def ambiguous_rate(self) -> float:
        return self.ambiguous / self.trials

    @property
    def no_output_rate(self) -> float:
        """The model's empty-return event: no usable answer produced."""
        return (self.empty + self.ambiguous) / self.trials

    @property
    def wrong_rate(self) -> float:
        return self.wrong / self.trials


def kw_monte_carlo(
    buflen: int,
    checksum_bits: int,
    value_len: int,
    redundancy: int,
    alpha: float,
    queries: int,
    seed: int,
    policy: QueryPolicy = QueryPolicy.SINGLE_VALUE,
    threshold: int = 1,
) -> KwMcStats:
    """Empirical query outcomes at exact write-distance alpha*buflen."""
    k_dist = round(alpha * buflen)
    family = HashFamily(seed)
    store = KwStore(
        MemoryRegion(buflen * ((checksum_bits + 7) // 8 + value_len)),
        buflen, checksum_bits, value_len, family=family,
    )
    qp = QueuePair()
    psn = 0

    def write(index: int) -> int:
        nonlocal psn
        key = stream_key(seed, index)
        for verb in kw_write(store, key, stream_value(key, value_len), redundancy):
            apply_verb(store.region, qp, psn, verb)
            psn = (psn + 1) % (1 << 24)
        return index

    for i in range(k_dist):
        write(i)
    correct = empty = ambiguous = wrong = 0
    for t in range(k_dist, k_dist + queries):
        write(t)
        key = stream_key(seed, t - k_dist)
        res = kw_query(store, key, redundancy, threshold, policy)
        if res.outcome is QueryOutcome.EMPTY:
            empty += 1
        elif res.outcome is QueryOutcome.AMBIGUOUS:
            ambiguous += 1
        elif res.value == stream_value(key, value_len):
            correct += 1
        else:
            wrong += 1
    return KwMcStats(queries, correct, empty, ambiguous, wrong)


def _kw_bounds(redundancy: int, checksum_bits: int, alpha: float) -> dict:
    model = analysis.KwModel(redundancy, checksum_bits, alpha)
    no_out = analysis.kw_no_output_bound(model)
    wrong = analysis.kw_wrong_output_bound(model)
    return {
        "bound_no_output_lo": no_out.lower,
        "bound_no_output_hi": no_out.upper,
        "bound_wrong_lo": wrong.lower,
        "bound_wrong_hi": wrong.upper,
    }


def _suite_kw_redundancy(params: dict, seed: int) -> list[dict]:
    policy = QueryPolicy(params["policy"])
    rows = []
    for alpha in params["alphas"]:
        for n in params["redundancies"]:
            for b in params["checksum_bits"]:
                stats = kw_monte_carlo(
                    params["buflen"], b, params["value_len"], n, alpha,
                    params["queries"], seed + n, policy=policy,
                )
                row = {
                    "load_factor": alpha, "N": n, "b": b, "policy": policy.value,
                    "success_rate": round(stats.success_rate, 6),
                    "empty_rate": round(stats.empty_rate, 6),
                    "wrong_rate": round(stats.wrong_rate, 6),
                    "ambiguous_rate": round(stats.ambiguous_rate, 6),
                    "trials": stats.trials,
                }
                row.update({k: f"{v:.6g}" for k, v in _kw_bounds(n, b, alpha).items()})
                rows.append(row)
    return rows


KW_REDUNDANCY_FIELDS = (
    "load_factor", "N", "b", "policy", "success_rate", "empty_rate", "wrong_rate",
    "ambiguous_rate", "trials", "bound_no_output_lo", "bound_no_output_hi",
    "bound_wrong_lo", "bound_wrong_hi",
)


def _suite_kw_longevity(params: dict, seed: int) -> list[dict]:
    buflen = params["buflen"]
    family = HashFamily(seed)
    store = KwStore(
        MemoryRegion(buflen * ((params["checksum_bits"] + 7) // 8 + params["value_len"])),
        buflen, params["checksum_bits"], params["value_len"], family=family,
    )
    from .keywrite import kw_age_sweep

    buckets = kw_age_sweep(
        store, params["redundancy"], params["n_keys"], params["ages"],
        window=params["window"], seed=seed,
    )
    rows = []
    for bucket in buckets:
        rows.append({
            "age": bucket.age, "window": bucket.window,
            "N": params["redundancy"], "b": params["checksum_bits"],
            "success_rate": round(bucket.success_rate, 6),
            "empty_rate": round(bucket.empty / bucket.trials, 6),
            "wrong_rate": round(bucket.wrong / bucket.trials, 6),
            "ambiguous_rate": round(bucket.ambiguous / bucket.trials, 6),
            "trials": bucket.trials,
        })
    return rows


KW_LONGEVITY_FIELDS = (
    "age", "window", "N", "b", "success_rate", "empty_rate", "wrong_rate",
    "ambiguous_rate", "trials",
)


# ---------------------------------------------------------------------------
# Postcarding


def pc_stream_values(seed: int, flow_id: int, hops: int, universe: int) -> list[int]:
    """Deterministic per-flow hop values, recomputable at query time."""
    fam = HashFamily(seed)
    return [fam.raw64(Domain.WORKLOAD, hop, flow_id.to_bytes(8, "big")) % universe
            for hop in range(hops)]


@dataclass(frozen=True)
class PcMcStats:
    trials: int
    correct: int
    empty: int
    ambiguous: int
    wrong: int

    @property
    def fail_rate(self) -> float:
        return (self.empty + self.ambiguous) / self.trials

    @property
    def wrong_rate(self) -> float:
        return self.wrong / self.trials


def pc_monte_carlo(
    chunks: int,
    hops: int,
    cell_bits: int,
    value_bits: int,
    redundancy: int,
    alpha: float,
    queries: int,
    seed: int,
) -> PcMcStats:
    """Empirical chunk-query outcomes at exact report-distance alpha*chunks.

    Values whose encodings collide in the decode table are indistinguishable
    once stored, so correctness is judged against the canonical decode of the
    written values; ``wrong`` counts only the modeled misdecode event.
    """
    k_dist = round(alpha * chunks)
    family = HashFamily(seed)
    universe = 2 ** value_bits
    codec = ValueCodec(family, universe, cell_bits)
    from .postcarding import _next_pow2

    stride = _next_pow2((cell_bits + 7) // 8 * hops)
    store = PostcardStore(MemoryRegion(chunks * stride), chunks, hops, cell_bits,
                          codec, family=family)
    qp = QueuePair()
    psn = 0
    from .postcarding import EmittedChunk

    def write(flow_id: int) -> None:
        nonlocal psn
        cells = tuple(pc_stream_values(seed, flow_id, hops, universe))
        chunk = EmittedChunk(flow_id, cells, EmissionReason.COMPLETE)
        for verb in pc_write(store, chunk, redundancy):
            apply_verb(store.region, qp, psn, verb)
            psn = (psn + 1) % (1 << 24)

    def canonical(flow: int) -> list:
        return [codec.decode(codec.encode(v))
                for v in pc_stream_values(seed, flow, hops, universe)]

    for i in range(k_dist):
        write(i)
    correct = empty = ambiguous = wrong = 0
    for t in range(k_dist, k_dist + queries):
        write(t)
        flow = t - k_dist
        res = pc_query(store, flow, redundancy)
        if res.outcome is PathOutcome.EMPTY:
            empty += 1
        elif res.outcome is PathOutcome.AMBIGUOUS:
            ambiguous += 1
        elif list(res.values) == canonical(flow):
            correct += 1
        else:
            wrong += 1
    return PcMcStats(queries, correct, empty, ambiguous, wrong)


def _suite_postcarding_accuracy(params: dict, seed: int) -> list[dict]:
    rows = []
    for alpha in params["alphas"]:
        stats = pc_monte_carlo(
            params["chunks"], params["hops"], params["cell_bits"],
            params["value_bits"], params["redundancy"], alpha,
            params["queries"], seed,
        )
        model = analysis.PcModel(params["redundancy"], params["cell_bits"], alpha,
                                 params["hops"], params["value_bits"])
        rows.append({
            "alpha": alpha, "N": params["redundancy"], "b": params["cell_bits"],
            "B": params["hops"], "V_bits": params["value_bits"],
            "fail_rate": round(stats.fail_rate, 6),
            "wrong_rate": round(stats.wrong_rate, 6),
            "bound_fail": f"{analysis.pc_fail_bound(model).total:.6g}",
            "bound_wrong": f"{analysis.pc_wrong_bound(model):.6g}",
            "trials": stats.trials,
        })
    return rows


PC_ACCURACY_FIELDS = (
    "alpha", "N", "b", "B", "V_bits", "fail_rate", "wrong_rate",
    "bound_fail", "bound_wrong", "trials",
)


def pc_cache_pressure(cache_slots: int, concurrent_flows: int, hops: int,
                      rounds: int, seed: int) -> tuple[float, float]:
    """Interleave ``concurrent_flows`` paths through the cache, round-robin.

    Returns (complete_emission_rate, early_emission_rate) over all emitted
    chunks, counting paths still stuck in the cache at the end as early.
    """
    family = HashFamily(seed)
    cache = PostcardCache(cache_slots, hops, family)
    for r in range(rounds):
        for hop in range(hops):
            for f in range(concurrent_flows):
                pc_ingest(cache, (r * concurrent_flows) + f, hop, 0, hops)
    cache.flush_all()
    total = cache.complete_emissions + cache.early_emissions
    if total == 0:
        return 0.0, 0.0
    return cache.complete_emissions / total, cache.early_emissions / total


def _suite_postcarding_cache(params: dict, seed: int) -> list[dict]:
    rows = []
    for slots in params["cache_slots"]:
        for flows in params["concurrent_flows"]:
            complete, early = pc_cache_pressure(slots, flows, params["hops"],
                                                params["rounds"], seed)
            rows.append({
                "cache_slots": slots, "concurrent_flows": flows,
                "complete_emission_rate": round(complete, 6),
                "early_emission_rate": round(early, 6),
            })
    return rows


PC_CACHE_FIELDS = (
    "cache_slots", "concurrent_flows", "complete_emission_rate", "early_emission_rate",
)


# ---------------------------------------------------------------------------
# Append


def append_reference_run(batch_size: int, entry_len: int, lists: int, capacity: int,
                         sequence: Iterable[tuple[int, bytes]]) -> tuple[bytes, dict]:
    """Run one ingest sequence at the given batch size and flush everything.

    Returns the final region bytes and, per list, everything a poll drains
    (entries plus the overrun skip count).
    """
    region = MemoryRegion(lists * capacity * entry_len)
    engine = AppendEngine(batch_size)
    qp = QueuePair()
    psn = 0
    for i in range(lists):
        engine.add_list(AppendList(i, i * capacity * entry_len, capacity, entry_len))

    def run_verbs(verbs):
        nonlocal psn
        for verb in verbs:
            apply_verb(region, qp, psn, verb)
            psn = (psn + 1) % (1 << 24)

    for list_id, entry in sequence:
        run_verbs(engine.ingest(list_id, entry))
    for i in range(lists):
        run_verbs(engine.flush(i))
    polled = {}
    for i in range(lists):
        cursor = PollCursor(i)
        entries, skipped = append_poll(region, engine.lists[i], cursor, 10 ** 9)
        polled[i] = (entries, skipped)
    return region.snapshot(), polled


def _suite_append_bench(params: dict, seed: int) -> list[dict]:
    import random

    rng = random.Random(f"{seed}:append-bench")
    rows = []
    for case in range(params["cases"]):
        batch_size = rng.choice(params["batch_sizes"])
        entry_len = rng.choice(params["entry_lens"])
        lists = rng.randint(1, params["max_lists"])
        capacity = batch_size * rng.randint(2, 8)
        count = rng.randint(1, 4 * lists * capacity)
        sequence = [(rng.randrange(lists), rng.randbytes(entry_len)) for _ in range(count)]
        memory, polled = append_reference_run(batch_size, entry_len, lists, capacity, sequence)
        oracle_memory, oracle_polled = append_reference_run(1, entry_len, lists, capacity,
                                                            sequence)
        ok = memory == oracle_memory and polled == oracle_polled
        rows.append({
            "case": case, "batch_size": batch_size, "entry_len": entry_len,
            "lists": lists, "capacity": capacity, "entries_ingested": count,
            "verify_ok": ok,
        })
    return rows


APPEND_BENCH_FIELDS = (
    "case", "batch_size", "entry_len", "lists", "capacity", "entries_ingested", "verify_ok",
)


# ---------------------------------------------------------------------------
# Key-Increment


def ki_accuracy_run(buflen: int, redundancy: int, stream_len: int, key_space: int,
                    max_delta: int, seed: int) -> dict:
    """Randomized increment stream checked against an exact per-key map."""
    import random

    rng = random.Random(f"{seed}:ki")
    family = HashFamily(seed)
    region = MemoryRegion(buflen * 8)
    store = KiStore(region, buflen, family=family)
    qp = QueuePair()
    psn = 0
    exact: dict[bytes, int] = {}
    total = 0
    for _ in range(stream_len):
        key = rng.randrange(key_space).to_bytes(8, "big")
        delta = rng.randint(0, max_delta)
        exact[key] = exact.get(key, 0) + delta
        total += delta
        for verb in ki_increment(store, key, delta, redundancy):
            apply_verb(region, qp, psn, verb)
            psn = (psn + 1) % (1 << 24)

    violations = 0
    overestimates = []
    e = 2.718281828459045
    threshold = e * redundancy * total / buflen
    over_threshold = 0
    for key, true_count in exact.items():
        estimate = ki_query(store, key, redundancy)
        if estimate < true_count:
            violations += 1
        overestimates.append(estimate - true_count)
        if estimate - true_count > threshold:
            over_threshold += 1
    return {
        "buflen": buflen, "N": redundancy, "stream_len": stream_len,
        "distinct_keys": len(exact),
        "mean_overestimate": sum(overestimates) / len(overestimates),
        "max_overestimate": max(overestimates),
        "violation_count": violations,
        "cm_threshold": threshold,
        "cm_exceed_fraction": over_threshold / len(exact),
        "cm_exceed_limit": e ** -redundancy,
    }


def _suite_ki_accuracy(params: dict, seed: int) -> list[dict]:
    rows = []
    for n in params["redundancies"]:
        stats = ki_accuracy_run(params["buflen"], n, params["stream_len"],
                                params["key_space"], params["max_delta"], seed)
        stats["mean_overestimate"] = round(stats["mean_overestimate"], 4)
        stats["cm_threshold"] = round(stats["cm_threshold"], 4)
        stats["cm_exceed_fraction"] = round(stats["cm_exceed_fraction"], 6)
        stats["cm_exceed_limit"] = round(stats["cm_exceed_limit"], 6)
        rows.append(stats)
    return rows


KI_ACCURACY_FIELDS = (
    "buflen", "N", "stream_len", "distinct_keys", "mean_overestimate",
    "max_overestimate", "violation_count", "cm_threshold", "cm_exceed_fraction",
    "cm_exceed_limit",
)


# ---------------------------------------------------------------------------
# Flow control


def _suite_flowctl_loss(params: dict, seed: int) -> list[dict]:
    rows = []
    for loss in params["loss_rates"]:
        topology = sim.Topology(
            reporters=params["reporters"],
            link=sim.LinkConfig(loss_to_translator=loss, loss_to_reporter=loss),
            backlog_capacity=params["backlog_capacity"],
        )
        workload = sim.Workload(
            kind=sim.WorkloadKind.APPEND_EVENTS,
            reports=params["reports"],
            essential=True,
            reports_per_step=params["reports_per_step"],
        )
        report = sim.run(topology, workload, seed)
        rows.append({
            "loss_rate": loss,
            "reports": report.reports_offered,
            "retransmissions": report.retransmissions,
            "unrecoverable": report.unrecoverable,
            "duplicates_suppressed": report.duplicates_suppressed,
            "nacks": report.nacks_sent,
            "qp_desyncs": report.qp_desyncs,
            "exactly_once_ok": report.exactly_once_ok,
        })
    return rows


FLOWCTL_LOSS_FIELDS = (
    "loss_rate", "reports", "retransmissions", "unrecoverable",
    "duplicates_suppressed", "nacks", "qp_desyncs", "exactly_once_ok",
)


# ---------------------------------------------------------------------------
# Bounds table


def _suite_bounds(params: dict, seed: int) -> list[dict]:
    rows = []
    for alpha in params["alphas"]:
        for n in params["redundancies"]:
            for b in params["checksum_bits"]:
                model = analysis.KwModel(n, b, alpha)
                no_out = analysis.kw_no_output_bound(model)
                rows.append({
                    "model": "kw", "N": n, "b": b, "alpha": alpha, "B": "", "V_bits": "",
                    "no_output": f"{no_out.total:.6g}",
                    "no_output_lo": f"{no_out.lower:.6g}",
                    "no_output_hi": f"{no_out.upper:.6g}",
                    "wrong_output": f"{analysis.kw_wrong_output_bound(model).bound:.6g}",
                })
        for n in params["redundancies"]:
            pc = analysis.PcModel(n, params["pc_cell_bits"], alpha,
                                  params["pc_hops"], params["pc_value_bits"])
            fail = analysis.pc_fail_bound(pc)
            rows.append({
                "model": "postcarding", "N": n, "b": params["pc_cell_bits"],
                "alpha": alpha, "B": params["pc_hops"], "V_bits": params["pc_value_bits"],
                "no_output": f"{fail.total:.6g}",
                "no_output_lo": f"{fail.lower:.6g}",
                "no_output_hi": f"{fail.upper:.6g}",
                "wrong_output": f"{analysis.pc_wrong_bound(pc):.6g}",
            })
    return rows


BOUNDS_FIELDS = (
    "model", "N", "b", "alpha", "B", "V_bits", "no_output", "no_output_lo",
    "no_output_hi", "wrong_output",
)


# ---------------------------------------------------------------------------
# Registry

_SUITES: dict[str, tuple[dict, tuple, Callable[[dict, int], list[dict]]]] = {
    "kw-redundancy": (
        {
            "buflen": 65536, "checksum_bits": [32], "value_len": 4,
            "redundancies": [1, 2, 3, 4], "alphas": [0.1, 0.3, 1.0, 3.0],
            "queries": 20000, "policy": "plurality",
        },
        KW_REDUNDANCY_FIELDS, _suite_kw_redundancy,
    ),
    "kw-longevity": (
        {
            # slot count scaled down from the reference geometry (24B slots,
            # 3 GiB, 10M-report age point) preserving the load factor
            "buflen": 1 << 20, "checksum_bits": 32, "value_len": 20,
            "redundancy": 2, "n_keys": 390625,
            "ages": [0, 4883, 19531, 78125, 195312, 390624],
            "window": 4883,
        },
        KW_LONGEVITY_FIELDS, _suite_kw_longevity,
    ),
    "postcarding-cache": (
        {
            "cache_slots": [64, 256, 1024], "concurrent_flows": [16, 64, 256, 1024],
            "hops": 5, "rounds": 8,
        },
        PC_CACHE_FIELDS, _suite_postcarding_cache,
    ),
    "postcarding-accuracy": (
        {
            "chunks": 16384, "hops": 5, "cell_bits": 32, "value_bits": 18,
            "redundancy": 2, "alphas": [0.1, 0.5, 1.0], "queries": 20000,
        },
        PC_ACCURACY_FIELDS, _suite_postcarding_accuracy,
    ),
    "append-bench": (
        {
            "cases": 200, "batch_sizes": [1, 2, 4, 16], "entry_lens": [4, 8, 13, 18],
            "max_lists": 3,
        },
        APPEND_BENCH_FIELDS, _suite_append_bench,
    ),
    "ki-accuracy": (
        {
            "buflen": 4096, "redundancies": [1, 2, 4], "stream_len": 100000,
            "key_space": 1 << 14, "max_delta": 16,
        },
        KI_ACCURACY_FIELDS, _suite_ki_accuracy,
    ),
    "flowctl-loss": (
        {
            "loss_rates": [0.001, 0.01, 0.05], "reporters": 4, "reports": 10000,
            "backlog_capacity": 256, "reports_per_step": 64,
        },
        FLOWCTL_LOSS_FIELDS, _suite_flowctl_loss,
    ),
    "bounds": (
        {
            "alphas": [0.05, 0.1, 0.5, 1.0], "redundancies": [1, 2, 4],
            "checksum_bits": [16, 32], "pc_cell_bits": 32, "pc_hops": 5,
            "pc_value_bits": 18,
        },
        BOUNDS_FIELDS, _suite_bounds,
    ),
}


def suite_names() -> list[str]:
    return sorted(_SUITES)


def default_params(name: str) -> dict:
    if name not in _SUITES:
        raise UnknownSuite(name)
    return json.loads(json.dumps(_SUITES[name][0]))  # deep copy


def experiment_suite(name: str, params: dict | None = None, seed: int = 0) -> SuiteResult:
    """Run one named suite over its parameter grid."""
    if name not in _SUITES:
        raise UnknownSuite(name)
    defaults, fieldnames, fn = _SUITES[name]
    merged = default_params(name)
    for key, value in (params or {}).items():
        if key not in defaults:
            raise KeyError(f"unknown parameter {key!r} for suite {name!r}")
        merged[key] = value
    return SuiteResult(name, merged, seed, fieldnames, fn(merged, seed))
