"""Filter, Map, FlatMap, Aggregate, Aggregate+ and Join."""

import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggflow.core import ConfigurationError, Tuple, Watermark, WatermarkRegression, WindowSpec, assign_windows, attr_key
from aggflow.dedicated import (
    Aggregate,
    AggregatePlus,
    Filter,
    FlatMap,
    Join,
    Map,
    filter_step,
    flatmap_step,
    map_step,
)


def window_sum(win):
    total = sum(t.attrs[0] for t in win.contents)
    return (total,) if total else None


def test_filter_step():
    above4 = lambda t: t.attrs[0] > 4
    assert filter_step(Tuple(3, (5,)), above4) == [Tuple(3, (5,))]
    assert filter_step(Tuple(3, (2,)), above4) == []
    t = Tuple(3, (5,))
    assert filter_step(t, above4)[0] is t


def test_map_step():
    assert map_step(Tuple(7, ("ab",)), lambda t: (len(t.attrs[0]),)) == [Tuple(7, (2,))]
    t = Tuple(9, ("x", 1))
    assert map_step(t, lambda t: t.attrs) == [t]


def test_flatmap_step():
    words = lambda t: [(w,) for w in t.attrs[0].split()]
    assert flatmap_step(Tuple(4, ("a b",)), words) == [Tuple(4, ("a",)), Tuple(4, ("b",))]
    assert flatmap_step(Tuple(4, ("",)), words) == []


@given(ts=st.integers(0, 100), n=st.integers(0, 8))
def test_flatmap_output_count(ts, n):
    out = flatmap_step(Tuple(ts, (n,)), lambda t: [(i,) for i in range(t.attrs[0])])
    assert len(out) == n and all(o.ts == ts for o in out)


def test_stateless_operators_forward_watermarks():
    for op in (Filter(lambda t: True), Map(lambda t: t.attrs), FlatMap(lambda t: [t.attrs])):
        assert op.step(Watermark(3)) == [Watermark(3)]
        with pytest.raises(WatermarkRegression):
            op.step(Watermark(2))


def test_aggregate_sliding_sum():
    agg = Aggregate(WindowSpec(2, 4), window_sum)
    out = []
    for t in (Tuple(0, (1,)), Tuple(1, (2,)), Tuple(3, (4,))):
        out.extend(agg.step(t))
    assert out == []
    assert agg.step(Watermark(6)) == [Tuple(3, (7,)), Tuple(5, (4,)), Watermark(6)]


def test_aggregate_without_result_still_forwards_watermark():
    agg = Aggregate(WindowSpec(2, 2), lambda win: None)
    agg.step(Tuple(0, (1,)))
    assert agg.step(Watermark(5)) == [Watermark(5)]


def test_aggregate_waits_for_right_boundary():
    agg = Aggregate(WindowSpec(4, 4), window_sum)
    agg.step(Tuple(1, (3,)))
    assert agg.step(Watermark(3)) == [Watermark(3)]
    assert agg.step(Watermark(4)) == [Tuple(3, (3,)), Watermark(4)]


def test_aggregate_fires_keys_in_key_order():
    agg = Aggregate(WindowSpec(1, 1, attr_key(1)), lambda win: (win.key,))
    agg.step(Tuple(0, (1, "b")))
    agg.step(Tuple(0, (1, "a")))
    assert agg.step(Watermark(1)) == [Tuple(0, ("a",)), Tuple(0, ("b",)), Watermark(1)]


def test_aggregate_refires_late_tuple_in_discarding_mode():
    agg = Aggregate(WindowSpec(1, 1, lateness=3), window_sum)
    agg.step(Tuple(5, (2,)))
    assert agg.step(Watermark(6)) == [Tuple(5, (2,)), Watermark(6)]
    assert agg.step(Tuple(5, (4,))) == [Tuple(5, (4,))]
    assert agg.late_seen == 1 and agg.late_dropped == 0
    agg.step(Watermark(9))
    assert agg.step(Tuple(5, (1,))) == []
    assert agg.late_dropped == 1 and agg.window_rejections == 1
    assert agg.observation_violations == 0


def test_aggregate_purges_closed_windows():
    agg = Aggregate(WindowSpec(2, 4, lateness=1), window_sum)
    for ts in range(10):
        agg.step(Tuple(ts, (1,)))
    agg.step(Watermark(8))
    assert all(w.l + 4 + 1 > 8 for w in agg.live_windows())


def test_aggregate_rejects_watermark_regression():
    agg = Aggregate(WindowSpec(1, 1), window_sum)
    agg.step(Watermark(4))
    with pytest.raises(WatermarkRegression):
        agg.step(Watermark(3))


def test_aggregate_plus_emits_many():
    agg = AggregatePlus(WindowSpec(2, 2), lambda win: [(1,), (2,), (3,)])
    agg.step(Tuple(0, (0,)))
    assert agg.step(Watermark(2)) == [Tuple(1, (1,)), Tuple(1, (2,)), Tuple(1, (3,)), Watermark(2)]
    agg = AggregatePlus(WindowSpec(2, 2), lambda win: [])
    agg.step(Tuple(0, (0,)))
    assert agg.step(Watermark(2)) == [Watermark(2)]


@settings(max_examples=50, deadline=None)
@given(
    tss=st.lists(st.integers(0, 40), max_size=40),
    wa=st.integers(1, 5), extra=st.integers(0, 5), seed=st.integers(0, 1000),
)
def test_aggregate_plus_with_singleton_wrapper_matches_aggregate(tss, wa, extra, seed):
    rng = random.Random(seed)
    spec = WindowSpec(wa, wa + extra, attr_key(1))
    a = Aggregate(spec, window_sum)
    ap = AggregatePlus(spec, lambda win: [r] if (r := window_sum(win)) else [])
    outs = ([], [])
    for ts in sorted(tss):
        t = Tuple(ts, (rng.randrange(1, 5), rng.randrange(3)))
        outs[0].extend(a.step(t))
        outs[1].extend(ap.step(t))
    outs[0].extend(a.step(Watermark(100)))
    outs[1].extend(ap.step(Watermark(100)))
    assert outs[0] == outs[1]


# -- join --------------------------------------------------------------------

key0 = attr_key(0)
always = lambda t1, t2: True


def test_join_tumbling_match():
    j = Join(2, 2, key0, key0, always)
    t1, t2 = Tuple(0, (1,)), Tuple(1, (1,))
    assert j.step(t1, 1) == []
    assert j.step(t2, 2) == [Tuple(1, (0, 1, 1, 1))]


def test_join_keeps_side_one_first():
    j = Join(2, 2, key0, key0, always)
    j.step(Tuple(1, (1, "right")), 2)
    assert j.step(Tuple(0, (1, "left")), 1) == [Tuple(1, (0, 1, "left", 1, 1, "right"))]


def test_join_different_keys():
    j = Join(2, 2, key0, key0, always)
    j.step(Tuple(0, (1,)), 1)
    assert j.step(Tuple(1, (2,)), 2) == []


def test_join_sliding_one_output_per_shared_window():
    j = Join(1, 3, key0, key0, always)
    j.step(Tuple(2, (1,)), 1)
    out = j.step(Tuple(3, (1,)), 2)
    # Windows containing both ts 2 and 3: l in {1, 2}.
    assert sorted(t.ts for t in out) == [3, 4]


def test_join_rejects_unknown_port():
    with pytest.raises(ConfigurationError):
        Join(1, 1, key0, key0, always).on_tuple(Tuple(0, (1,)), 3)


def test_join_drops_late_tuples_and_purges():
    j = Join(2, 2, key0, key0, always)
    j.step(Tuple(0, (1,)), 1)
    assert j.step(Watermark(2)) == [Watermark(2)]
    assert j.step(Tuple(1, (1,)), 2) == []
    assert j.late_dropped == 1


def brute_force_join(left, right, wa, ws, pred):
    out = Counter()
    for t1 in left:
        for t2 in right:
            if t1.attrs[0] != t2.attrs[0] or not pred(t1, t2):
                continue
            shared = set(assign_windows(t1.ts, WindowSpec(wa, ws))) & set(assign_windows(t2.ts, WindowSpec(wa, ws)))
            for l in shared:
                out[Tuple(l + ws - 1, (t1.ts, *t1.attrs, t2.ts, *t2.attrs))] += 1
    return out


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), wa=st.integers(1, 6), extra=st.integers(0, 6), n=st.integers(0, 100))
def test_join_matches_brute_force(seed, wa, extra, n):
    rng = random.Random(seed)
    ws = wa + extra
    left = [Tuple(rng.randrange(60), (rng.randrange(4), i)) for i in range(n)]
    right = [Tuple(rng.randrange(60), (rng.randrange(4), n + i)) for i in range(n)]
    pred = lambda t1, t2: (t1.attrs[1] + t2.attrs[1]) % 3 == 0
    j = Join(wa, ws, key0, key0, pred)
    arrivals = sorted([(t, 1) for t in left] + [(t, 2) for t in right], key=lambda a: (a[0].ts, a[1], a[0].attrs))
    got = Counter()
    for t, side in arrivals:
        got.update(j.step(t, side))
    j.step(Watermark(200))
    assert got == brute_force_join(left, right, wa, ws, pred)


def test_join_is_deterministic():
    def run():
        rng = random.Random(7)
        j = Join(2, 4, key0, key0, always)
        out = []
        for i in range(200):
            out.extend(j.step(Tuple(i // 4, (rng.randrange(3), i)), 1 + i % 2))
        return out

    assert run() == run()
