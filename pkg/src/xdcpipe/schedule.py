"""1F1B task orders, warm-up extension, and feasibility checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError, ValidationError
from .model import (
    ClusterSpec, ComputeProfile, HbmSpec, IterationConfig,
    effective_latency, hbm_usage, link_latencies, link_leads, pass_times,
)

FORWARD = "F"
BACKWARD = "B"


@dataclass(frozen=True, order=True)
class Task:
    kind: str
    stage: int
    micro_batch: int

    def __str__(self):
        return f"{self.kind}{self.micro_batch}@{self.stage}"

    @property
    def token(self) -> str:
        return f"{self.kind}{self.micro_batch}"


@dataclass(frozen=True)
class ScheduleSpec:
    p: int
    m: int
    delta_n: tuple[int, ...]
    lists: tuple[tuple[Task, ...], ...]

    def warmup(self, stage: int) -> int:
        """Warm-up depth W: forwards run at ``stage`` before its first (F, B) pair."""
        n = 0
        for t in self.lists[stage]:
            if t.kind == BACKWARD:
                break
            n += 1
        return max(n - 1, 0)

    @property
    def warmups(self) -> list[int]:
        return [self.warmup(i) for i in range(self.p)]

    def to_text(self) -> str:
        return "".join(" ".join(t.token for t in row) + "\n" for row in self.lists)

    @classmethod
    def from_text(cls, text: str, delta_n: Sequence[int] | None = None) -> "ScheduleSpec":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        p = len(rows)
        lists = []
        for stage, row in enumerate(rows):
            tasks = []
            for tok in row:
                if tok[0] not in (FORWARD, BACKWARD) or not tok[1:].isdigit():
                    raise ConfigError(f"bad task token {tok!r} on stage {stage}")
                tasks.append(Task(tok[0], stage, int(tok[1:])))
            lists.append(tuple(tasks))
        m = len(lists[0]) // 2 if lists else 0
        dn = tuple(delta_n) if delta_n is not None else (0,) * p
        return cls(p, m, dn, tuple(lists))


@dataclass(frozen=True)
class Violation:
    kind: str  # "order" | "hbm" | "lead" | "shape"
    stage: int | None
    detail: str

    def __str__(self):
        where = f"stage {self.stage}" if self.stage is not None else "schedule"
        return f"[{self.kind}] {where}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_failed(self):
        if self.violations:
            raise ValidationError(self.violations)


def check_delta_n(delta_n: Sequence[int], p: int) -> list[Violation]:
    out = []
    if len(delta_n) != p:
        return [Violation("shape", None, f"ΔN has {len(delta_n)} entries for {p} stages")]
    for i, d in enumerate(delta_n):
        if int(d) != d or d < 0:
            out.append(Violation("shape", i, f"ΔN must be a non-negative integer, got {d!r}"))
    if delta_n[-1] != 0:
        out.append(Violation("shape", p - 1, "ΔN of the last stage must be 0"))
    for i in range(p - 1):
        if delta_n[i] < delta_n[i + 1]:
            out.append(Violation("shape", i, f"ΔN not non-increasing ({delta_n[i]} < {delta_n[i + 1]})"))
    return out


def _stage_list(stage: int, m: int, w: int) -> tuple[Task, ...]:
    F = lambda j: Task(FORWARD, stage, j)
    B = lambda j: Task(BACKWARD, stage, j)
    tasks = [F(j) for j in range(1, w + 1)]
    for k in range(1, m - w + 1):
        tasks += [F(w + k), B(k)]
    tasks += [B(j) for j in range(m - w + 1, m + 1)]
    return tuple(tasks)


def build_geopipe(p: int, m: int, delta_n: Sequence[int]) -> ScheduleSpec:
    """1F1B with stage ``i`` running ``ΔN_i`` extra warm-up forwards."""
    if p < 1 or m < 1:
        raise ConfigError("p and m must be >= 1")
    bad = check_delta_n(delta_n, p)
    if bad:
        raise ValidationError(bad)
    lists = tuple(_stage_list(i, m, min(m - 1, p - 1 - i + delta_n[i])) for i in range(p))
    return ScheduleSpec(p, m, tuple(int(d) for d in delta_n), lists)


def build_1f1b(p: int, m: int) -> ScheduleSpec:
    return build_geopipe(p, m, [0] * p)


def forwards_before_backwards(tasks: Iterable[Task]) -> list[int]:
    """For each backward in list order, how many forwards precede it."""
    nf, out = 0, []
    for t in tasks:
        if t.kind == FORWARD:
            nf += 1
        else:
            out.append(nf)
    return out


def peak_in_flight(tasks: Iterable[Task]) -> int:
    live = peak = 0
    for t in tasks:
        live += 1 if t.kind == FORWARD else -1
        peak = max(peak, live)
    return peak


def _check_order(stage: int, tasks: Sequence[Task], m: int) -> list[Violation]:
    out = []
    fwd = [t.micro_batch for t in tasks if t.kind == FORWARD]
    bwd = [t.micro_batch for t in tasks if t.kind == BACKWARD]
    want = list(range(1, m + 1))
    if any(t.stage != stage for t in tasks):
        out.append(Violation("order", stage, "task assigned to another stage"))
    if sorted(fwd) != want or sorted(bwd) != want:
        out.append(Violation("order", stage, f"not a permutation of F1..F{m}, B1..B{m}"))
        return out
    if fwd != want:
        out.append(Violation("order", stage, "forwards out of micro-batch order"))
    if bwd != want:
        out.append(Violation("order", stage, "backwards out of micro-batch order"))
    seen = set()
    for t in tasks:
        if t.kind == FORWARD:
            seen.add(t.micro_batch)
        elif t.micro_batch not in seen:
            out.append(Violation("order", stage, f"B{t.micro_batch} before F{t.micro_batch}"))
    return out


def validate(spec: ScheduleSpec, cluster: ClusterSpec | None = None,
             profile: ComputeProfile | None = None, hbm: HbmSpec | None = None,
             cfg: IterationConfig | None = None) -> ValidationReport:
    """Check order invariants, deadlock-freedom and (if given) HBM bounds.

    The deadlock witness is that each stage has run at least as many forwards
    as its downstream neighbour before every backward; at k = 1 this is the
    non-increasing warm-up depth condition.
    """
    if cluster is not None and cluster.num_stages != spec.p:
        raise ConfigError(f"schedule has {spec.p} stages, cluster has {cluster.num_stages}")
    if hbm is not None and len(hbm.static_bytes) != spec.p:
        raise ConfigError(f"HBM spec has {len(hbm.static_bytes)} stages, schedule has {spec.p}")
    if cfg is not None and cfg.num_micro_batches != spec.m:
        raise ConfigError(f"schedule has m={spec.m}, iteration config has {cfg.num_micro_batches}")
    if len(spec.lists) != spec.p:
        raise ConfigError(f"schedule lists {len(spec.lists)} stages, p = {spec.p}")

    report = ValidationReport()
    report.violations += check_delta_n(spec.delta_n, spec.p)
    order_ok = True
    for i, tasks in enumerate(spec.lists):
        v = _check_order(i, tasks, spec.m)
        order_ok &= not v
        report.violations += v

    if order_ok:
        fb = [forwards_before_backwards(t) for t in spec.lists]
        for i in range(spec.p - 1):
            bad = [k + 1 for k in range(spec.m) if fb[i][k] < fb[i + 1][k]]
            if bad:
                report.violations.append(Violation(
                    "lead", i,
                    f"fewer forwards than stage {i + 1} before B{bad[0]} "
                    f"({fb[i][bad[0] - 1]} < {fb[i + 1][bad[0] - 1]}); may deadlock"))

    if hbm is not None and profile is not None and cfg is not None and order_ok:
        tokens = cfg.tokens_per_micro_batch
        for i, tasks in enumerate(spec.lists):
            used = hbm_usage(i, profile, hbm, tokens, peak_in_flight(tasks) - 1)
            if used > hbm.bound_bytes[i]:
                report.violations.append(Violation(
                    "hbm", i, f"needs {used} B, bound is {hbm.bound_bytes[i]} B"))
    return report


def link_effective_latencies(cluster: ClusterSpec, cfg: IterationConfig,
                             profile: ComputeProfile, delta_n: Sequence[int]) -> list[int]:
    t_f, t_b = pass_times(profile, cfg.tokens_per_micro_batch)
    leads = link_leads(delta_n)
    return [effective_latency(fwd, lead, t_f, t_b)
            for (fwd, _), lead in zip(link_latencies(cluster, cfg), leads)]


def dependency_chain(cluster: ClusterSpec, cfg: IterationConfig,
                     profile: ComputeProfile, delta_n: Sequence[int]) -> int:
    """Index of the link whose residual latency governs the schedule.

    Ties go to the lowest link index.
    """
    if cluster.num_stages < 2:
        raise ConfigError("a single-stage pipeline has no links")
    eff = link_effective_latencies(cluster, cfg, profile, delta_n)
    return max(range(len(eff)), key=lambda i: (eff[i], -i))
