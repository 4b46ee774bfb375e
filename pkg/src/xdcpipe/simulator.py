"""Discrete-event execution of pipeline schedules and bubble accounting."""
from __future__ import annotations

import csv
import heapq
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, TextIO

import jsonschema

from .errors import DeadlockError
from .model import (
    NS_PER_US, ClusterSpec, ComputeProfile, HbmSpec, IterationConfig,
    link_latencies, link_leads, pass_times,
)
from .schedule import BACKWARD, FORWARD, ScheduleSpec, Task, dependency_chain, validate

_END, _ARRIVE = 0, 1


@dataclass(frozen=True)
class TimelineEntry:
    task: Task
    start: int
    end: int
    gap: int  # idle time on this stage right before the task
    wait_link: int | None  # link whose message was the last thing the task waited for


@dataclass(frozen=True)
class Message:
    kind: str
    link: int
    src: int
    dst: int
    micro_batch: int
    sent: int
    arrival: int


@dataclass
class SimReport:
    p: int
    m: int
    timeline: list[TimelineEntry]
    messages: list[Message]
    makespan: int
    busy: list[int]
    idle: list[int]
    warmups: list[int]
    event_counts: dict[str, int]
    link_latencies: list[tuple[int, int]]
    metrics: "BubbleMetrics" = None

    @property
    def bubble_ratio(self) -> Fraction:
        return self.metrics.bubble_ratio

    @property
    def per_link_steady_bubble(self) -> list[Fraction]:
        return self.metrics.per_link_steady_bubble

    def stage_timeline(self, stage: int) -> list[TimelineEntry]:
        return [e for e in self.timeline if e.task.stage == stage]


@dataclass
class BubbleMetrics:
    bubble_ratio: Fraction
    steady_bubble_ratio: Fraction
    per_link_steady_bubble: list[Fraction]
    per_link_occurrences: list[int]
    per_link_total: list[int]
    structural_idle: int = 0


def _steady_positions(warmup: int, m: int) -> range:
    return range(warmup, warmup + 2 * (m - warmup))


def simulate(cluster: ClusterSpec, spec: ScheduleSpec, profile: ComputeProfile,
             cfg: IterationConfig, hbm: HbmSpec | None = None, *,
             latencies: Sequence[tuple[int, int]] | None = None,
             check: bool = True) -> SimReport:
    """Run every stage's task list to completion.

    Sends are non-blocking: a message leaves when its producing task ends and
    arrives one link latency later without delaying the sender. ``latencies``
    overrides the (forward, backward) delay of each link.
    """
    if check:
        validate(spec, cluster, profile, hbm, cfg).raise_if_failed()
    p, m = spec.p, spec.m
    lat = list(latencies) if latencies is not None else link_latencies(cluster, cfg)
    t_f, t_b = pass_times(profile, cfg.tokens_per_micro_batch)
    dur = {FORWARD: t_f, BACKWARD: t_b}

    lists = spec.lists
    pos = [{t: k for k, t in enumerate(row)} for row in lists]
    ptr = [0] * p
    running = [False] * p
    free_at = [0] * p
    # (kind, stage, mb) -> (time the input is available, link it came over)
    ready: dict[tuple[str, int, int], tuple[int, int | None]] = {}
    for j in range(1, m + 1):
        ready[(FORWARD, 0, j)] = (0, None)

    timeline: list[TimelineEntry] = []
    messages: list[Message] = []
    heap: list[tuple] = []
    counts = {"task_end": 0, "message_arrival": 0}

    def try_start(i: int, now: int):
        if running[i] or ptr[i] >= len(lists[i]):
            return
        task = lists[i][ptr[i]]
        dep = ready.get((task.kind, i, task.micro_batch))
        if dep is None or dep[0] > now:
            return
        gap = now - free_at[i]
        wait_link = dep[1] if gap > 0 and dep[0] > free_at[i] else None
        end = now + dur[task.kind]
        running[i] = True
        timeline.append(TimelineEntry(task, now, end, gap, wait_link))
        heapq.heappush(heap, (end, i, ptr[i], _END, task))

    for i in range(p):
        try_start(i, 0)

    while heap:
        now, i, _, ev, payload = heapq.heappop(heap)
        if ev == _END:
            counts["task_end"] += 1
            task = payload
            running[i] = False
            free_at[i] = now
            ptr[i] += 1
            j = task.micro_batch
            if task.kind == FORWARD:
                if i < p - 1:
                    arr = now + lat[i][0]
                    messages.append(Message(FORWARD, i, i, i + 1, j, now, arr))
                    heapq.heappush(heap, (arr, i + 1, pos[i + 1][Task(FORWARD, i + 1, j)], _ARRIVE,
                                          ((FORWARD, i + 1, j), i)))
                else:
                    ready[(BACKWARD, i, j)] = (now, None)
            elif i > 0:
                arr = now + lat[i - 1][1]
                messages.append(Message(BACKWARD, i - 1, i, i - 1, j, now, arr))
                heapq.heappush(heap, (arr, i - 1, pos[i - 1][Task(BACKWARD, i - 1, j)], _ARRIVE,
                                      ((BACKWARD, i - 1, j), i - 1)))
            try_start(i, now)
        else:
            counts["message_arrival"] += 1
            key, link = payload
            ready[key] = (now, link)
            try_start(i, now)

    if any(ptr[i] < len(lists[i]) for i in range(p)):
        blocked = [lists[i][ptr[i]] for i in range(p) if ptr[i] < len(lists[i])]
        raise DeadlockError(blocked)

    makespan = max((e.end for e in timeline), default=0)
    busy = [0] * p
    for e in timeline:
        busy[e.task.stage] += e.end - e.start
    report = SimReport(
        p=p, m=m, timeline=timeline, messages=messages, makespan=makespan,
        busy=busy, idle=[makespan - b for b in busy], warmups=spec.warmups,
        event_counts=counts, link_latencies=lat,
    )
    report.metrics = bubble_metrics(report)
    return report


def bubble_metrics(report: SimReport) -> BubbleMetrics:
    p, m = report.p, report.m
    span = report.makespan
    ratio = Fraction(0) if span == 0 else 1 - Fraction(sum(report.busy), p * span)

    n_links = max(p - 1, 0)
    total = [0] * n_links
    occ = [0] * n_links
    structural = 0
    steady_busy = steady_window = 0
    for s in range(p):
        entries = report.stage_timeline(s)
        # the first (F, B) pair still waits on pipeline fill; steady state starts after it
        steady = _steady_positions(report.warmups[s], m)[2:]
        if len(steady):
            steady_window += entries[steady[-1]].end - entries[steady[0] - 1].end
        for k in steady:
            e = entries[k]
            steady_busy += e.end - e.start
            if e.gap == 0:
                continue
            if e.wait_link is None:
                structural += e.gap
            else:
                total[e.wait_link] += e.gap
                occ[e.wait_link] += 1
    steady_ratio = Fraction(0) if steady_window == 0 else 1 - Fraction(steady_busy, steady_window)
    per_link = [Fraction(t, n) if n else Fraction(0) for t, n in zip(total, occ)]
    return BubbleMetrics(ratio, steady_ratio, per_link, occ, total, structural)


def reduction(before: float, after: float) -> float:
    """Relative drop from ``before`` to ``after``; 0 when there was nothing to remove."""
    if before <= 0:
        return 0.0
    return float((before - after) / before)


def estimate_cross_dc_bubble(cluster: ClusterSpec, cfg: IterationConfig, profile: ComputeProfile,
                             delta_n: Sequence[int]) -> int:
    """First-order bubble estimate at the chain link: per-occurrence size times frequency.

    Per occurrence the round trip over the chain link minus the lead it has
    been granted; frequency is the number of steady micro-batches at the
    link's downstream stage. This is an estimate, not an exact count.
    """
    p, m = cluster.num_stages, cfg.num_micro_batches
    chain = dependency_chain(cluster, cfg, profile, delta_n)
    fwd, bwd = link_latencies(cluster, cfg)[chain]
    t_f, t_b = pass_times(profile, cfg.tokens_per_micro_batch)
    lead = link_leads(delta_n)[chain]
    per_occurrence = max(0, fwd + bwd - lead * (t_f + t_b))
    d = chain + 1
    w_down = min(m - 1, p - 1 - d + delta_n[d])
    return per_occurrence * (m - w_down)


TRACE_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["name", "ph", "ts", "pid", "tid"],
        "properties": {
            "name": {"type": "string"},
            "ph": {"enum": ["X", "i", "M"]},
            "ts": {"type": "number", "minimum": 0},
            "dur": {"type": "number", "minimum": 0},
            "pid": {"type": "integer"},
            "tid": {"type": "integer"},
            "s": {"enum": ["t", "p", "g"]},
            "cat": {"type": "string"},
            "args": {"type": "object"},
        },
        "allOf": [
            {"if": {"properties": {"ph": {"const": "X"}}}, "then": {"required": ["dur"]}},
        ],
    },
}


def _us(ns: int) -> float:
    return ns / NS_PER_US


def export_trace(report: SimReport, cluster: ClusterSpec) -> list[dict]:
    """Chrome trace events: one thread per stage, grouped by datacenter."""
    events: list[dict] = []
    for s in range(report.p):
        events.append({"name": "thread_name", "ph": "M", "ts": 0, "pid": cluster.placement[s],
                       "tid": s, "args": {"name": f"stage {s}"}})
    for e in sorted(report.timeline, key=lambda e: (e.task.stage, e.start)):
        s = e.task.stage
        events.append({
            "name": e.task.token, "cat": "forward" if e.task.kind == FORWARD else "backward",
            "ph": "X", "ts": _us(e.start), "dur": _us(e.end - e.start),
            "pid": cluster.placement[s], "tid": s,
        })
    for msg in sorted(report.messages, key=lambda x: (x.arrival, x.dst, x.kind, x.micro_batch)):
        events.append({
            "name": f"recv {msg.kind}{msg.micro_batch}", "cat": "message", "ph": "i", "s": "t",
            "ts": _us(msg.arrival), "pid": cluster.placement[msg.dst], "tid": msg.dst,
            "args": {"link": msg.link, "sent_us": _us(msg.sent)},
        })
    return events


def validate_trace(events) -> None:
    jsonschema.validate(events, TRACE_SCHEMA)


def dump_trace(events: list[dict], out: TextIO) -> None:
    json.dump(events, out, indent=1, sort_keys=True)
    out.write("\n")


def write_metrics_csv(report: SimReport, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["stage", "busy_us", "idle_us"])
    for s in range(report.p):
        w.writerow([s, f"{_us(report.busy[s]):.3f}", f"{_us(report.idle[s]):.3f}"])
    w.writerow(["total", f"{_us(sum(report.busy)):.3f}", f"{_us(sum(report.idle)):.3f}"])


def metrics_csv(report: SimReport) -> str:
    buf = io.StringIO()
    write_metrics_csv(report, buf)
    return buf.getvalue()
