import io
import json
from fractions import Fraction

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xdcpipe.calibration import uniform_profile
from xdcpipe.errors import DeadlockError, ValidationError
from xdcpipe.model import ClusterSpec, HbmSpec, IterationConfig, LinkSpec
from xdcpipe.schedule import BACKWARD, FORWARD, ScheduleSpec, Task, build_1f1b, build_geopipe
from xdcpipe.simulator import (
    TRACE_SCHEMA, dump_trace, estimate_cross_dc_bubble, export_trace, metrics_csv, reduction,
    simulate, validate_trace,
)


def chain(lat):
    """Cluster whose links carry exactly the given one-way latencies (ns)."""
    placement = [0]
    for c in lat:
        placement.append(placement[-1] + 1)
    return ClusterSpec(placement, [LinkSpec(0, 1e30, c) for c in lat])


def run(lat, m, delta_n=None, t_f=1, t_b=None, hbm=None):
    cluster = chain(lat)
    p = cluster.num_stages
    spec = build_1f1b(p, m) if delta_n is None else build_geopipe(p, m, delta_n)
    cfg = IterationConfig(1, 1, m, bytes_per_element=1)
    return simulate(cluster, spec, uniform_profile(t_f, t_b), cfg, hbm)


def starts(report, stage):
    return [e.start for e in report.stage_timeline(stage)]


def fixpoint_oracle(spec, lat, t_f, t_b):
    """Start times by relaxing the max-plus recurrence until nothing moves."""
    p = spec.p
    start = {}
    end = {}
    changed = True
    while changed:
        changed = False
        for i, row in enumerate(spec.lists):
            prev_end = 0
            for t in row:
                j = t.micro_batch
                if t.kind == FORWARD:
                    dep = 0 if i == 0 else end.get((FORWARD, i - 1, j), None)
                    dep = dep if i == 0 or dep is None else dep + lat[i - 1][0]
                else:
                    if i == p - 1:
                        dep = end.get((FORWARD, i, j))
                    else:
                        dep = end.get((BACKWARD, i + 1, j))
                        dep = None if dep is None else dep + lat[i][1]
                if dep is None or prev_end is None:
                    prev_end = None
                    continue
                s = max(prev_end, dep)
                d = t_f if t.kind == FORWARD else t_b
                if start.get((t.kind, i, j)) != s:
                    start[(t.kind, i, j)] = s
                    end[(t.kind, i, j)] = s + d
                    changed = True
                prev_end = s + d
    return start


# hand-enumerated timelines, T_F = T_B = T_C = 1
HAND_1F1B = {0: [0, 1, 5, 6, 7, 8, 11, 13], 1: [2, 3, 4, 5, 8, 9, 10, 11]}
HAND_LEAD = {0: [0, 1, 2, 5, 6, 7, 9, 11], 1: [2, 3, 4, 5, 6, 7, 8, 9]}


def test_hand_oracle_1f1b():
    rep = run([1], 4)
    assert {s: starts(rep, s) for s in (0, 1)} == HAND_1F1B
    assert rep.makespan == 14
    assert rep.bubble_ratio == Fraction(12, 28)


def test_hand_oracle_extended_warmup():
    rep = run([1], 4, [1, 0])
    assert {s: starts(rep, s) for s in (0, 1)} == HAND_LEAD
    assert rep.makespan == 12
    assert rep.bubble_ratio == Fraction(8, 24)
    assert reduction(Fraction(12, 28), rep.bubble_ratio) == pytest.approx(2 / 9)


def test_zero_latency_p4_m8():
    rep = run([0, 0, 0], 8)
    assert rep.makespan == 22
    assert rep.bubble_ratio == Fraction(3, 11)
    assert rep.metrics.steady_bubble_ratio == 0


@st.composite
def instances(draw):
    p = draw(st.integers(1, 6))
    m = draw(st.integers(1, 12))
    lat = [(draw(st.integers(0, 30)), draw(st.integers(0, 30))) for _ in range(p - 1)]
    leads = [draw(st.integers(0, 4)) for _ in range(p - 1)]
    dn = [sum(leads[i:]) for i in range(p - 1)] + [0]
    t_f = draw(st.integers(1, 20))
    t_b = draw(st.integers(1, 20))
    return p, m, lat, dn, t_f, t_b


def sim(p, m, lat, dn, t_f, t_b):
    spec = build_geopipe(p, m, dn)
    cfg = IterationConfig(1, 1, m)
    return spec, simulate(chain([0] * (p - 1)), spec, uniform_profile(t_f, t_b), cfg, latencies=lat)


@given(instances())
def test_matches_fixpoint_oracle(inst):
    p, m, lat, dn, t_f, t_b = inst
    spec, rep = sim(*inst)
    want = fixpoint_oracle(spec, lat, t_f, t_b)
    got = {(e.task.kind, e.task.stage, e.task.micro_batch): e.start for e in rep.timeline}
    assert got == want


@given(instances())
def test_conservation_and_causality(inst):
    p, m, lat, dn, t_f, t_b = inst
    spec, rep = sim(*inst)
    assert len(rep.timeline) == 2 * p * m
    assert sum(rep.busy) == m * p * (t_f + t_b)
    assert all(b + i == rep.makespan for b, i in zip(rep.busy, rep.idle))
    assert rep.bubble_ratio == (1 - Fraction(sum(rep.busy), p * rep.makespan) if rep.makespan else 0)
    arrivals = {(msg.kind, msg.dst, msg.micro_batch): msg.arrival for msg in rep.messages}
    assert len(rep.messages) == 2 * m * (p - 1)
    for s in range(p):
        entries = rep.stage_timeline(s)
        assert [e.task for e in entries] == list(spec.lists[s])
        prev = 0
        for e in entries:
            assert e.end - e.start == (t_f if e.task.kind == FORWARD else t_b)
            assert e.start >= prev and e.gap == e.start - prev
            key = (e.task.kind, s, e.task.micro_batch)
            assert e.start >= arrivals.get(key, 0)
            prev = e.end


@given(instances(), st.integers(0, 5), st.integers(1, 40))
def test_makespan_monotone_in_latency(inst, link, extra):
    p, m, lat, dn, t_f, t_b = inst
    if p < 2:
        return
    link %= p - 1
    _, base = sim(*inst)
    slower = list(lat)
    slower[link] = (lat[link][0] + extra, lat[link][1] + extra)
    _, rep = sim(p, m, slower, dn, t_f, t_b)
    assert rep.makespan >= base.makespan


def test_makespan_monotone_in_bandwidth():
    cfg = IterationConfig(1, 4096, 8, hidden_dim=1024)
    prof = uniform_profile(500_000, 1_000_000)
    spans = []
    for bw in (10e9, 25e9, 50e9, 100e9, 400e9, 1600e9):
        c = ClusterSpec([0, 0, 1, 1], [LinkSpec(), LinkSpec(50, bw), LinkSpec()])
        spans.append(simulate(c, build_1f1b(4, 8), prof, cfg).makespan)
    assert spans == sorted(spans, reverse=True)
    assert spans[0] > spans[-1]


@pytest.mark.parametrize("p,m", [(p, m) for p in range(1, 9) for m in (p, p + 3, 32)])
def test_zero_latency_closed_form(p, m):
    rep = run([0] * (p - 1), m, t_f=7, t_b=7)
    assert rep.makespan == (m + p - 1) * 14
    assert rep.bubble_ratio == Fraction(p - 1, m + p - 1)


def test_deterministic():
    a = run([3, 1, 4], 9, [2, 1, 1, 0], t_f=2, t_b=3)
    b = run([3, 1, 4], 9, [2, 1, 1, 0], t_f=2, t_b=3)
    assert a == b


def test_deadlock_detected_without_check():
    up = build_1f1b(2, 4).lists[1]
    down = build_geopipe(2, 4, [1, 0]).lists[0]
    # stage 1 wants F2 before B1 but stage 0 won't send F2 until after its own B1
    spec = ScheduleSpec(2, 4, (0, 0), (
        tuple(Task(t.kind, 0, t.micro_batch) for t in up),
        tuple(Task(t.kind, 1, t.micro_batch) for t in down)))
    with pytest.raises(ValidationError):
        simulate(chain([1]), spec, uniform_profile(1), IterationConfig(1, 1, 4))
    with pytest.raises(DeadlockError) as err:
        simulate(chain([1]), spec, uniform_profile(1), IterationConfig(1, 1, 4), check=False)
    assert err.value.blocked


def test_hbm_checked_before_running():
    hbm = HbmSpec.uniform(2, 0, 2500)
    prof = uniform_profile(1, 1, act_mem=1000)
    cfg = IterationConfig(1, 1, 4)
    # 1F1B holds 2 activations on stage 0; one more lead needs 3
    simulate(chain([1]), build_1f1b(2, 4), prof, cfg, hbm)
    with pytest.raises(ValidationError):
        simulate(chain([1]), build_geopipe(2, 4, [1, 0]), prof, cfg, hbm)


def test_steady_gap_attributed_to_link():
    rep = run([1], 8)
    assert rep.per_link_steady_bubble == [2]
    # each stage waits on every other steady message: three gaps apiece
    assert rep.metrics.per_link_occurrences == [6]
    assert run([1], 8, [1, 0]).per_link_steady_bubble == [0]


def test_estimate_cross_dc_bubble():
    cluster = chain([1])
    cfg = IterationConfig(1, 1, 4, bytes_per_element=1)
    est = estimate_cross_dc_bubble(cluster, cfg, uniform_profile(1), [0, 0])
    assert est == 8
    # first-order estimate: within (T_F + T_B) per affected micro-batch of the simulated excess
    excess = run([1], 4).idle[0] - run([0], 4).idle[0]
    assert excess == 4
    assert abs(est - excess) <= 2 * 4
    assert estimate_cross_dc_bubble(cluster, cfg, uniform_profile(1), [1, 0]) == 0


def test_trace_events():
    rep = run([1], 4)
    events = export_trace(rep, chain([1]))
    validate_trace(events)
    by_ph = {ph: [e for e in events if e["ph"] == ph] for ph in "XiM"}
    assert len(by_ph["X"]) == 16
    assert len(by_ph["i"]) == 8
    assert len(by_ph["M"]) == 2
    f1 = next(e for e in by_ph["X"] if e["tid"] == 1 and e["name"] == "F1")
    assert f1["pid"] == 1 and f1["ts"] == 0.002 and f1["dur"] == 0.001


def test_trace_schema_rejects_bad_events():
    with pytest.raises(jsonschema.ValidationError):
        validate_trace([{"name": "F1", "ph": "X", "ts": 0, "pid": 0, "tid": 0}])
    with pytest.raises(jsonschema.ValidationError):
        validate_trace([{"name": "F1", "ph": "Q", "ts": 0, "dur": 1, "pid": 0, "tid": 0}])
    jsonschema.Draft202012Validator.check_schema(TRACE_SCHEMA)


def test_trace_dump_is_stable():
    rep = run([3, 1], 6, [1, 1, 0], t_f=1000, t_b=2000)
    buf1, buf2 = io.StringIO(), io.StringIO()
    dump_trace(export_trace(rep, chain([3, 1])), buf1)
    dump_trace(export_trace(run([3, 1], 6, [1, 1, 0], t_f=1000, t_b=2000), chain([3, 1])), buf2)
    assert buf1.getvalue() == buf2.getvalue()
    assert json.loads(buf1.getvalue())[0]["ph"] == "M"


def test_metrics_csv():
    text = metrics_csv(run([1000], 4, t_f=1000))
    assert text.splitlines() == [
        "stage,busy_us,idle_us",
        "0,8.000,6.000",
        "1,8.000,6.000",
        "total,16.000,12.000",
    ]
