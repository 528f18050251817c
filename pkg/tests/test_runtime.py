"""Ingress, graph validation, scheduling and parallel execution."""

from collections import Counter
from functools import partial

import pytest

from aggflow.core import ConfigurationError, Tuple, Watermark, WindowSpec, attr_key
from aggflow.dedicated import Aggregate, Filter
from aggflow.harness.equivalence import prepare_inputs
from aggflow.harness.workload import WorkloadConfig, generate_workload
from aggflow.pipelines import build_pipeline
from aggflow.runtime import build_graph
from aggflow.runtime.deterministic import LOOP_LAST, RANDOM, SchedulerStall, run_deterministic
from aggflow.runtime.graph import GraphValidationError, NodeSpec, OperatorGraph
from aggflow.runtime.ingress import IngressConfig, IngressStats, ingress_stream
from aggflow.runtime.pipelined import run_pipelined
from aggflow.runtime.plan import KEY, ROUND_ROBIN, parallelize, partition_index


def wm(stream):
    return [e.ts for e in stream if type(e) is Watermark]


# -- ingress -------------------------------------------------------------------


def test_ingress_periodic_watermarks():
    stream = ingress_stream([Tuple(i, ()) for i in range(10)], IngressConfig(3))
    assert wm(stream) == [3, 6, 9, 10]
    assert stream[:4] == [Tuple(0, ()), Tuple(1, ()), Tuple(2, ()), Watermark(3)]


def test_ingress_empty_source_flushes_only():
    assert ingress_stream([], IngressConfig(3), flush_at=1) == [Watermark(1)]


def test_ingress_single_record_first_watermark_within_period():
    stream = ingress_stream([Tuple(5, ())], IngressConfig(2))
    first = wm(stream)[0]
    assert first <= 5 + 2
    assert all(b - a <= 2 for a, b in zip(wm(stream), wm(stream)[1:]))


def test_ingress_steps_up_to_flush():
    assert wm(ingress_stream([Tuple(0, ())], IngressConfig(2), flush_at=7)) == [2, 4, 6, 7]


def test_ingress_disorder_delays_watermarks_and_drops_late():
    stats = IngressStats()
    records = [Tuple(0, ()), Tuple(4, ()), Tuple(3, ()), Tuple(6, ()), Tuple(1, ())]
    stream = ingress_stream(records, IngressConfig(2, disorder=2), stats=stats)
    assert Tuple(3, ()) in stream
    assert Tuple(1, ()) not in stream
    assert stats.dropped_late == 1 and stats.records == 4


@pytest.mark.parametrize("kwargs", [{"watermark_period": 0}, {"watermark_period": 2, "disorder": 3},
                                    {"watermark_period": 1, "horizon": 0}])
def test_ingress_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        IngressConfig(**kwargs)


# -- graph descriptions ------------------------------------------------------


def test_build_graph_pipeline_shapes():
    assert list(build_graph({"operator": "FM"}).nodes) == ["op"]
    agg = build_graph({"operator": "FM", "mode": "agg"})
    assert set(agg.nodes) == {"E", "X.A1", "X.A2", "X.C2", "X.C3"}
    assert any(e.kind == "loop" for e in agg.edges)


@pytest.mark.parametrize("desc", [
    {"operator": "FM", "mode": "agg", "guards": False},
    {"operator": "J", "mode": "agg", "wa": 5, "ws": 2},
    {"operator": "XX"},
    {"operator": "FM", "colour": "red"},
])
def test_build_graph_rejects_bad_pipelines(desc):
    with pytest.raises(GraphValidationError) as err:
        build_graph(desc)
    assert err.value.violations


def test_build_graph_explicit():
    g = build_graph({
        "mode": "agg",
        "nodes": [{"name": "a", "op": "filter", "out_type": "x", "selectivity": 0.5},
                  {"name": "b", "op": "aggregate", "wa": 2, "ws": 4, "key": [1]}],
        "edges": [{"src": "a", "dst": "b"}],
        "ingress": [{"name": "in", "node": "a", "type": "x"}],
        "egress": {"out": "b"},
    })
    assert g.nodes["b"].kind == "aggregate"


def test_build_graph_rejects_mixed_union():
    with pytest.raises(GraphValidationError) as err:
        build_graph({
            "nodes": [{"name": "a", "op": "map", "out_type": "x"}, {"name": "b", "op": "map", "out_type": "y"},
                      {"name": "c", "op": "flatmap"}],
            "edges": [{"src": "a", "dst": "c"}, {"src": "b", "dst": "c"}],
            "ingress": [{"name": "i1", "node": "a"}, {"name": "i2", "node": "b"}],
            "egress": {"out": "c"},
        })
    assert any("mixes stream types" in v for v in err.value.violations)


def test_build_graph_rejects_unguarded_loop_and_bad_window():
    with pytest.raises(GraphValidationError) as err:
        build_graph({
            "nodes": [{"name": "a", "op": "aggregate", "wa": 3, "ws": 2},
                      {"name": "b", "op": "aggregate"}],
            "edges": [{"src": "b", "dst": "b", "loop": True}],
            "egress": {"out": "b"},
        })
    text = " ".join(err.value.violations)
    assert "wa" in text or "window" in text


def test_loop_without_guard_is_a_violation():
    g = OperatorGraph(mode="agg")
    g.add_node(NodeSpec("a", partial(Filter, bool), "filter"))
    g.connect("a", "a", kind="loop")
    g.add_egress("out", "a")
    assert any("not guarded" in v for v in g.violations())


# -- deterministic runs ------------------------------------------------------


def fm_run(mode, **kwargs):
    cfg = WorkloadConfig(operator="FM", mode=mode, selectivity=1.5, records=300, watermark_period=3, seed=5)
    g = build_pipeline("FM", mode, cfg.functions(), cfg.options())
    inputs, _, _ = prepare_inputs(generate_workload(cfg), [g], cfg)
    return g, inputs, run_deterministic(g, inputs, **kwargs)


def test_empty_input_only_flush_watermark():
    g = build_pipeline("F", "dedicated", WorkloadConfig(operator="F").functions())
    result = run_deterministic(g, {"in": [Watermark(1)]})
    assert result.outputs["out"] == [Watermark(1)]


def test_dedicated_stateless_preserves_order():
    cfg = WorkloadConfig(operator="M", mode="dedicated", records=200)
    g = build_pipeline("M", "dedicated", cfg.functions())
    inputs, _, _ = prepare_inputs(generate_workload(cfg), [g], cfg)
    ids = [t.attrs[0] for t in run_deterministic(g, inputs).tuples()]
    assert ids == sorted(ids)


def test_deterministic_replay_is_identical():
    for policy in ("loop-first", LOOP_LAST, RANDOM):
        _, _, a = fm_run("agg", policy=policy, seed=3)
        _, _, b = fm_run("agg", policy=policy, seed=3)
        assert repr(a.outputs).encode() == repr(b.outputs).encode()


def test_step_budget_aborts():
    with pytest.raises(SchedulerStall):
        fm_run("agg", step_budget=50)


def test_missing_ingress_is_reported():
    g = build_pipeline("F", "dedicated", WorkloadConfig(operator="F").functions())
    with pytest.raises(ValueError):
        run_deterministic(g, {})


# -- parallel and pipelined execution ------------------------------------------


def test_partition_index_is_stable():
    assert partition_index("k", 4) == partition_index("k", 4)
    assert 0 <= partition_index(("a", 1), 3) < 3


def test_parallelize_routes_stateful_by_key():
    g = build_pipeline("FM", "agg", WorkloadConfig().functions(), WorkloadConfig().options())
    plan = parallelize(g, 2)
    assert plan.ingress_routes["in"].mode == KEY
    assert all(r.mode in (KEY, "local") for rs in plan.routes.values() for r in rs)
    flat = parallelize(build_pipeline("FM", "dedicated", WorkloadConfig().functions()), 2)
    assert flat.ingress_routes["in"].mode == ROUND_ROBIN


def test_parallel_aggregate_colocates_keys():
    g = OperatorGraph(mode="agg")
    spec = WindowSpec(1, 1, attr_key(0))
    g.add_node(NodeSpec("a", partial(Aggregate, spec, lambda w: (w.key, len(w.contents))), "aggregate",
                        partition={0: attr_key(0)}))
    g.add_ingress("in", "a")
    g.add_egress("out", "a")
    records = [Tuple(i // 6, (i % 3, i)) for i in range(60)]
    stream = ingress_stream(records, IngressConfig(2), flush_at=20)
    result = run_deterministic(g, {"in": stream}, parallelism=4)
    # One output per (window, key): every key's tuples met on one instance.
    assert Counter(result.tuples()) == Counter(Tuple(ts, (k, 2)) for ts in range(10) for k in range(3))
    route = parallelize(g, 4).ingress_routes["in"]
    for k in range(3):
        assert len({route.target(t, 0) for t in records if t.attrs[0] == k}) == 1


def test_parallelize_rejects_bad_counts():
    g = build_pipeline("FM", "agg", WorkloadConfig().functions(), WorkloadConfig().options())
    with pytest.raises(ConfigurationError):
        parallelize(g, {"nope": 2})
    with pytest.raises(ConfigurationError):
        parallelize(g, {"X.A1": 2})


@pytest.mark.parametrize("mode", ["dedicated", "agg", "agg-plus"])
@pytest.mark.parametrize("p", [1, 2, 4])
def test_pipelined_and_parallel_match_deterministic(mode, p):
    g, inputs, reference = fm_run(mode)
    expected = Counter(reference.tuples())
    assert Counter(run_deterministic(g, inputs, parallelism=p).tuples()) == expected
    assert Counter(run_pipelined(g, inputs, parallelism=p, capacity=8, timeout=60).tuples()) == expected
