"""Workloads, configs, equivalence, benchmarks and the CLI."""

import io
import json
import math
import random
from dataclasses import replace

import pytest

from aggflow.core import ConfigurationError, Tuple
from aggflow.harness.bench import (
    CSV_HEADER,
    BenchResult,
    MetricsRow,
    find_max_sustainable,
    percentile,
    read_csv,
    run_bench,
    write_csv,
)
from aggflow.harness.cli import main
from aggflow.harness.equivalence import fold_oracle, random_config, run_equivalence
from aggflow.harness.scenarios import run_loss_scenario
from aggflow.harness.sweep import SWEEP_CELLS
from aggflow.harness.workload import CONFIG_VERSION, WorkloadConfig, generate_records, generate_workload, load_config
from aggflow.registry import fold_config, functions_for

# -- workloads ---------------------------------------------------------------


def test_workload_is_deterministic():
    cfg = WorkloadConfig(operator="J", records=500, seed=11)
    assert generate_workload(cfg) == generate_workload(cfg)
    assert generate_workload(cfg) != generate_workload(replace(cfg, seed=12))


def test_workload_ids_are_unique():
    streams = generate_workload(WorkloadConfig(operator="J", records=2000, seed=3))
    ids = [t.attrs[0] for s in streams.values() for t in s]
    assert len(ids) == len(set(ids)) == 4000


def test_generated_disorder_is_bounded():
    records = generate_records(2000, key_cardinality=3, seed=1, density=2.0, disorder=3)
    high = 0
    for t in records:
        assert t.ts >= high - 3
        high = max(high, t.ts)


@pytest.mark.parametrize("selectivity", [0.2, 1.0, 1.5, 3.0])
def test_flatmap_selectivity_within_five_percent(selectivity):
    f_fm = functions_for("FM", selectivity=selectivity).f_fm
    records = generate_records(100_000, key_cardinality=4, seed=9)
    outputs = sum(len(f_fm(t)) for t in records)
    assert abs(outputs / len(records) - selectivity) <= 0.05 * selectivity


def test_filter_selectivity_within_five_percent():
    f_c = functions_for("F", selectivity=0.3).f_c
    records = generate_records(100_000, key_cardinality=4, seed=9)
    assert abs(sum(map(f_c, records)) / len(records) - 0.3) <= 0.015


def test_unknown_function_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        functions_for("FM", "nope")
    with pytest.raises(ConfigurationError):
        fold_config("median", 4)


# -- configs -----------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = WorkloadConfig(operator="J", mode="agg-plus", selectivity=0.01, wa=2, ws=6, seed=4)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert load_config(path, rate=50.0).rate == 50.0


@pytest.mark.parametrize("content", [
    {"operator": "FM"},
    {"version": 99, "operator": "FM"},
    {"version": CONFIG_VERSION, "colour": "red"},
    {"version": CONFIG_VERSION, "wa": 5, "ws": 2},
    {"version": CONFIG_VERSION, "operator": "F", "selectivity": 1.5},
    {"version": CONFIG_VERSION, "operator": "O", "mode": "agg-plus"},
])
def test_config_errors(tmp_path, content):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(content))
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_config_unreadable(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")


# -- equivalence ---------------------------------------------------------------


@pytest.mark.parametrize("op", ["F", "M", "FM", "J", "O"])
def test_random_configs_are_equivalent(op):
    rng = random.Random(op)
    for _ in range(5):
        report = run_equivalence(random_config(rng, op, max_records=300))
        assert report.passed, report.summary()


def test_fold_oracle_samples_every_period():
    cfg = fold_config("sum", 4)
    records = [Tuple(1, (0, 0, 0.0, 2)), Tuple(3, (1, 0, 0.0, 5)), Tuple(6, (2, 0, 0.0, 1))]
    out = fold_oracle(records, cfg, flush=13)
    assert sorted(out) == [Tuple(4, (7, 2)), Tuple(8, (8, 3)), Tuple(12, (8, 3))]


def test_loss_scenario_needs_guards():
    unguarded = run_loss_scenario(False)
    assert not unguarded.passed
    assert unguarded.counts["agg"] < unguarded.counts["dedicated"]
    assert run_loss_scenario(True).passed


# -- bench helpers -------------------------------------------------------------


def test_percentile_nearest_rank():
    assert percentile([], 99) != percentile([], 99)
    assert percentile([5.0], 99) == 5.0
    assert percentile(list(range(1, 101)), 99) == 99
    assert percentile(list(range(1, 101)), 100) == 100


def test_csv_round_trip(tmp_path):
    rows = [MetricsRow(5, 1000.0, 998.0, 12.5), MetricsRow(6, 1000.0, 1003.0, 9.25)]
    write_csv(rows, tmp_path / "m.csv")
    assert read_csv(tmp_path / "m.csv") == rows
    buf = io.StringIO()
    write_csv(rows, buf)
    assert buf.getvalue().splitlines()[0] == ",".join(CSV_HEADER)


def test_read_csv_checks_header(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "m.csv")


def capacity_runner(capacity):
    """Fake benchmark of an operator that sustains exactly ``capacity``."""

    def run(cfg):
        ok = cfg.rate <= capacity
        return BenchResult(cfg, [], min(cfg.rate, capacity), 1.0 if ok else 1e9, 0 if ok else 10, ok, 0, 0)

    return run


@pytest.mark.parametrize("capacity", [5, 150, 333, 999, 1000, 5000])
def test_find_max_sustainable_matches_oracle(capacity):
    grid = [100 * i for i in range(1, 11)]
    oracle = max((r for r in grid if r <= capacity), default=None)
    assert find_max_sustainable(WorkloadConfig(), grid, runner=capacity_runner(capacity)) == oracle


def test_find_max_sustainable_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        find_max_sustainable(WorkloadConfig(), [3, 1], runner=capacity_runner(2))


def test_sweep_grid_shape():
    assert len(SWEEP_CELLS) == 12
    assert len({c.name for c in SWEEP_CELLS}) == 12
    assert {c.operator for c in SWEEP_CELLS} == {"FM", "J"}


@pytest.mark.slow
def test_short_bench_excludes_warmup_and_cooldown():
    cfg = WorkloadConfig(operator="FM", mode="dedicated", rate=500, duration=3, warmup=1, cooldown=1,
                         watermark_period=10)
    result = run_bench(cfg)
    assert [r.second for r in result.rows] == [1]
    assert all(math.isfinite(r.p99_latency_ms) and r.p99_latency_ms >= 0 for r in result.rows)


# -- CLI -----------------------------------------------------------------------


def test_cli_equiv_pass(capsys):
    assert main(["equiv", "--op", "FM", "--configs", "3", "--max-records", "200"]) == 0
    assert "PASS 3/3" in capsys.readouterr().out


def test_cli_loss_scenario_exit_codes(capsys):
    assert main(["equiv", "--scenario", "loss", "--no-guards"]) == 1
    assert main(["equiv", "--scenario", "loss"]) == 0


def test_cli_configuration_error(capsys):
    assert main(["run", "--op", "J", "--wa", "5", "--ws", "2"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_bad_config_file(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"version": 7}))
    assert main(["run", "--config", str(path)]) == 2


def test_cli_run_writes_json_lines(tmp_path):
    out = tmp_path / "out.jsonl"
    assert main(["run", "--op", "FM", "--mode", "agg", "--records", "50", "--out", str(out)]) == 0
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert lines and all(set(line) == {"ts", "attrs"} for line in lines)


def test_cli_rejects_bad_rate_grid(capsys):
    assert main(["sustain", "--rates", "300,100"]) == 2
