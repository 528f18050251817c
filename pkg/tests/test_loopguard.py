"""Watermark guards of the Unfold and periodic-fold loops."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggflow.core import InvariantViolation, Tuple, Watermark, attr_key
from aggflow.loopguard import C2Guard, C3Guard, StateLoopGuard

EMBED = -1


def embedded(ts, payload, tag):
    return Tuple(ts, (tuple(payload), tag))


def watermarks(out):
    return [el.ts for el in out if isinstance(el, Watermark)]


# -- C2 ----------------------------------------------------------------------


def test_c2_holds_watermark_above_bound():
    g = C2Guard(lateness=2)
    t = embedded(5, "xy", EMBED)
    assert g.step(t) == [t]
    assert g.succ_counts == {5: 2} and g.bound == 7
    assert g.step(Watermark(8)) == []
    assert list(g.pending_w) == [8]


def test_c2_releases_watermark_when_loop_drains():
    g = C2Guard(lateness=2)
    g.step(embedded(5, "xy", EMBED))
    g.step(Watermark(8))
    t0, t1 = embedded(5, "xy", 0), embedded(5, "xy", 1)
    assert g.step(t0) == [t0]
    assert g.succ_counts == {5: 1}
    assert g.step(t1) == [t1, Watermark(8)]
    assert g.succ_counts == {} and g.bound == math.inf


def test_c2_forwards_immediately_when_nothing_pending():
    g = C2Guard(lateness=0)
    assert g.step(Watermark(3)) == [Watermark(3)]


def test_c2_forwards_only_latest_queued_watermark():
    g = C2Guard(lateness=2)
    g.step(embedded(5, "x", EMBED))
    assert g.step(Watermark(8)) == [] and g.step(Watermark(9)) == []
    t = embedded(5, "x", 0)
    assert g.step(t) == [t, Watermark(9)]
    assert not g.pending_w


def test_c2_watermark_within_bound_clears_queue():
    g = C2Guard(lateness=2)
    g.step(embedded(5, "x", EMBED))
    assert g.step(Watermark(7)) == [Watermark(7)]


def test_c2_counts_equal_embeds_once():
    g = C2Guard(lateness=1)
    t = embedded(5, "xy", EMBED)
    g.step(t)
    g.step(t)
    assert g.succ_counts == {5: 2}
    g.step(embedded(5, "xy", 0))
    g.step(embedded(5, "xy", 1))
    assert g.succ_counts == {} and g.bound == math.inf


def test_c2_underflow_is_an_invariant_violation():
    with pytest.raises(InvariantViolation):
        C2Guard(lateness=1).step(embedded(5, "xy", 0))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), lateness=st.integers(0, 5))
def test_c2_bookkeeping_balances(seed, lateness):
    # Random interleaving of Embed tuples, their loop successors and
    # watermarks that never exceed what the bound allows upstream.
    rng = random.Random(seed)
    g = C2Guard(lateness)
    in_flight = []
    forwarded = []
    ts = 0
    w = 0
    for k in range(60):
        r = rng.random()
        if r < 0.3:
            ts += rng.randrange(3)
            n = rng.randrange(1, 5)
            payload = tuple((k, j) for j in range(n))
            out = g.step(embedded(ts, payload, EMBED))
            in_flight.extend(embedded(ts, payload, i) for i in range(n))
        elif r < 0.7 and in_flight:
            out = g.step(in_flight.pop(0))
        else:
            w = max(w, ts - rng.randrange(3))
            out = g.step(Watermark(w))
        new = watermarks(out)
        assert all(f <= g.bound for f in new)
        forwarded += new
    for t in in_flight:
        forwarded += watermarks(g.step(t))
    assert g.succ_counts == {}
    assert forwarded == sorted(forwarded) and len(set(forwarded)) == len(forwarded)
    if w:
        assert g.last_forwarded == w


# -- C3 ----------------------------------------------------------------------


def test_c3_first_index_holds_successors():
    g = C3Guard()
    t = embedded(5, "xy", 0)
    assert g.step(t) == [t, Watermark(4)]
    assert g.succ_counts == {5: 1}


def test_c3_last_successor_forwards_its_timestamp():
    g = C3Guard()
    g.step(embedded(5, "xy", 0))
    t = embedded(5, "xy", 1)
    assert g.step(t) == [t, Watermark(5)]
    assert g.succ_counts == {}


def test_c3_singleton_payload_stores_nothing():
    g = C3Guard()
    t = embedded(5, "x", 0)
    assert g.step(t) == [t, Watermark(5)]
    assert g.succ_counts == {}


def test_c3_watermark_with_empty_counts():
    assert C3Guard().step(Watermark(9)) == [Watermark(9)]


def test_c3_watermark_while_successors_pending():
    g = C3Guard()
    g.step(embedded(5, "xy", 0))
    assert g.last_w == 4
    assert g.step(Watermark(7)) == []
    g.step(embedded(5, "xy", 1))
    assert g.last_w == 7


def test_c3_holds_to_first_key_minus_one():
    g = C3Guard()
    g.last_w = 3
    g.succ.add(5, 1)
    assert g.step(Watermark(8)) == [Watermark(4)]
    assert g.step(Watermark(9)) == []


def test_c3_underflow_is_an_invariant_violation():
    with pytest.raises(InvariantViolation):
        C3Guard().step(embedded(5, "xy", 1))


@settings(max_examples=100, deadline=None)
@given(sizes=st.lists(st.integers(1, 6), min_size=1, max_size=12), seed=st.integers(0, 1000))
def test_c3_balances_and_forwards_monotonically(sizes, seed):
    rng = random.Random(seed)
    g = C3Guard()
    seen = []
    ts = 0
    for n in sizes:
        ts += rng.randrange(3)
        for i in range(n):
            seen += watermarks(g.step(embedded(ts, tuple(range(n)), i)))
    assert g.succ_counts == {}
    assert seen == sorted(seen) and g.last_w == ts


# -- periodic fold guard -----------------------------------------------------


def fold_input(ts, key):
    return Tuple(ts, ((Tuple(ts, (key, 1)),), ()))


def fold_state(ts, key, state):
    return Tuple(ts, ((), ((key, state),)))


def test_state_guard_bounds_by_awaited_state():
    g = StateLoopGuard(4, attr_key(0))
    g.step(fold_input(1, "k"))
    assert g.awaited == {"k": 4} and g.bound == 8
    assert g.step(Watermark(10)) == [Watermark(8)]
    out = g.step(fold_state(4, "k", 7))
    assert g.awaited == {"k": 8}
    assert out[-1] == Watermark(10)


def test_state_guard_rejects_unexpected_state():
    g = StateLoopGuard(4, attr_key(0))
    g.step(fold_input(1, "k"))
    with pytest.raises(InvariantViolation):
        g.step(fold_state(8, "k", 7))


def test_state_guard_earlier_window_moves_awaited_back():
    g = StateLoopGuard(4, attr_key(0))
    g.step(fold_input(9, "k"))
    g.step(fold_input(6, "k"))
    assert g.awaited == {"k": 8}
