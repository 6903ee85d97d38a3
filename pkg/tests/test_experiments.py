import io
import math

import pytest

from dta import analysis
from dta.experiments import (
    SuiteResult,
    UnknownSuite,
    default_params,
    experiment_suite,
    kw_monte_carlo,
    pc_monte_carlo,
    read_csv,
    suite_names,
    write_csv,
)
from dta.keywrite import QueryPolicy

EXPECTED_SUITES = {
    "kw-redundancy", "kw-longevity", "postcarding-cache", "postcarding-accuracy",
    "append-bench", "ki-accuracy", "flowctl-loss", "bounds",
}


def test_registry_names():
    assert set(suite_names()) == EXPECTED_SUITES


def test_unknown_suite_rejected():
    with pytest.raises(UnknownSuite):
        experiment_suite("nope")
    with pytest.raises(KeyError):
        experiment_suite("bounds", {"not_a_param": 1})


def test_default_params_are_copies():
    params = default_params("bounds")
    params["alphas"].append(99)
    assert 99 not in default_params("bounds")["alphas"]


SMALL_PARAMS = {
    "kw-redundancy": {"buflen": 2048, "queries": 500, "alphas": [0.1],
                      "redundancies": [1, 2]},
    "kw-longevity": {"buflen": 2048, "n_keys": 1000, "ages": [0, 500],
                     "window": 100},
    "postcarding-cache": {"cache_slots": [32], "concurrent_flows": [8, 64],
                          "rounds": 2},
    "postcarding-accuracy": {"chunks": 1024, "queries": 500, "alphas": [0.1],
                             "value_bits": 10},
    "append-bench": {"cases": 10},
    "ki-accuracy": {"stream_len": 2000, "redundancies": [2]},
    "flowctl-loss": {"loss_rates": [0.01], "reports": 500},
    "bounds": {"alphas": [0.1]},
}


@pytest.mark.parametrize("name", sorted(EXPECTED_SUITES))
def test_every_suite_runs_and_roundtrips_csv(name):
    result = experiment_suite(name, SMALL_PARAMS[name], seed=5)
    assert result.rows
    for row in result.rows:
        assert set(row) == set(result.fieldnames)
    buf = io.StringIO()
    write_csv(buf, result)
    buf.seek(0)
    meta, rows = read_csv(buf)
    assert meta["suite"] == name
    assert meta["config_hash"] == result.config_hash
    assert len(rows) == len(result.rows)
    # nothing lost: every value survives the round trip as its string form
    for original, parsed in zip(result.rows, rows):
        assert {k: str(v) for k, v in original.items()} == parsed


def test_append_bench_all_cases_verify():
    result = experiment_suite("append-bench", {"cases": 30}, seed=1)
    assert all(row["verify_ok"] for row in result.rows)


def test_flowctl_suite_reports_exactly_once():
    result = experiment_suite("flowctl-loss",
                              {"loss_rates": [0.02], "reports": 1000}, seed=2)
    row = result.rows[0]
    assert row["exactly_once_ok"] is True
    assert row["unrecoverable"] == 0
    assert row["qp_desyncs"] == 0


def test_kw_monte_carlo_zero_load_is_perfect():
    stats = kw_monte_carlo(buflen=1024, checksum_bits=32, value_len=4,
                           redundancy=2, alpha=0.0, queries=500, seed=3)
    assert stats.success_rate == 1.0
    assert stats.wrong == 0


def test_wrong_output_rarity_over_one_million_trials():
    """At N=2, b=32, alpha=0.1 the wrong-output bound is 1.5e-11: a million
    queries must observe zero."""
    stats = kw_monte_carlo(buflen=1 << 16, checksum_bits=32, value_len=4,
                           redundancy=2, alpha=0.1, queries=1_000_000, seed=8,
                           policy=QueryPolicy.SINGLE_VALUE)
    assert stats.wrong == 0


def test_pc_monte_carlo_inside_bracket_at_full_universe():
    """Chunk-store failure rate sits in the closed-form bracket at |V|=2^18."""
    queries = 20_000
    stats = pc_monte_carlo(chunks=1 << 14, hops=5, cell_bits=32, value_bits=18,
                           redundancy=2, alpha=0.1, queries=queries, seed=9)
    model = analysis.PcModel(2, 32, 0.1, hops=5, value_bits=18)
    bound = analysis.pc_fail_bound(model)
    sigma = math.sqrt(bound.upper * (1 - bound.upper) / queries)
    assert bound.lower - 3 * sigma <= stats.fail_rate <= bound.upper + 3 * sigma
    assert stats.fail_rate <= 0.033 + 3 * sigma
    assert stats.wrong_rate == 0.0


def test_config_hash_tracks_params():
    a = experiment_suite("bounds", {"alphas": [0.1]}, seed=1)
    b = experiment_suite("bounds", {"alphas": [0.2]}, seed=1)
    assert a.config_hash != b.config_hash
    again = experiment_suite("bounds", {"alphas": [0.1]}, seed=2)
    assert a.config_hash == again.config_hash  # hash covers params, not seed
