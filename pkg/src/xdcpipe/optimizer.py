"""Warm-up extension search: greedy chain refinement, genetic search, bandwidth sweeps."""
from __future__ import annotations

import csv
import dataclasses
import io
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, TextIO

from .errors import ConfigError, InfeasibleError
from .model import (
    ClusterSpec, ComputeProfile, HbmSpec, IterationConfig, delta_n_from_leads, link_leads,
)
from .schedule import build_geopipe, link_effective_latencies, validate
from .simulator import reduction, simulate


def _raise_link(delta_n: Sequence[int], link: int) -> list[int]:
    # one more unit of lead on `link` means every stage upstream of it runs one more warm-up forward
    return [d + 1 if i <= link else d for i, d in enumerate(delta_n)]


def refine_dependency_chain(cluster: ClusterSpec, cfg: IterationConfig, profile: ComputeProfile,
                            hbm: HbmSpec | None = None) -> list[int]:
    """Greedy ΔN: keep adding lead to the link with the largest residual latency.

    A step is taken only if the schedule stays HBM-feasible and the simulated
    makespan strictly drops. When the current chain link cannot improve, the
    remaining links with residual latency are tried in decreasing order.
    """
    p, m = cluster.num_stages, cfg.num_micro_batches
    if p < 2:
        raise ConfigError("a single-stage pipeline has no links")
    delta_n = [0] * p
    best = simulate(cluster, build_geopipe(p, m, delta_n), profile, cfg, check=False).makespan
    while True:
        eff = link_effective_latencies(cluster, cfg, profile, delta_n)
        if not any(eff):
            break
        order = sorted((i for i in range(p - 1) if eff[i] > 0), key=lambda i: (-eff[i], i))
        for link in order:
            cand = _raise_link(delta_n, link)
            spec = build_geopipe(p, m, cand)
            if not validate(spec, cluster, profile, hbm, cfg).ok:
                continue
            span = simulate(cluster, spec, profile, cfg, check=False).makespan
            if span < best:
                delta_n, best = cand, span
                break
        else:
            break
    return delta_n


@dataclass(frozen=True)
class GaParams:
    population: int = 32
    generations: int = 100
    tournament: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    seed: int = 0
    elite: int = 2
    max_lead: int | None = None  # per-link lead ceiling; default: the most ΔN any stage can hold
    jobs: int = 1

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError("population must be >= 2")
        if self.generations < 0 or self.tournament < 1:
            raise ConfigError("generations must be >= 0 and tournament >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0 <= self.elite <= self.population:
            raise ConfigError("elite must be in [0, population]")


# (mbs index, seq index, per-link leads)
Genome = tuple


@dataclass(frozen=True)
class Candidate:
    micro_batch_size: int
    seq_len: int
    num_micro_batches: int
    leads: tuple[int, ...]
    delta_n: tuple[int, ...]


@dataclass
class OptResult:
    best: Candidate
    best_genome: Genome
    best_makespan: int
    best_bubble_ratio: Fraction
    baseline: Candidate
    baseline_makespan: int
    baseline_bubble_ratio: Fraction
    history: list[int]
    evaluations: int


@dataclass(frozen=True)
class SearchProblem:
    """Everything a fitness evaluation needs; picklable for worker processes."""

    cluster: ClusterSpec
    profile: ComputeProfile
    hbm: HbmSpec | None
    template: IterationConfig
    total_tokens: int
    mbs_choices: tuple[int, ...]
    seq_choices: tuple[int, ...]
    max_lead: int

    @property
    def p(self) -> int:
        return self.cluster.num_stages

    def divisible(self, a: int, b: int) -> bool:
        return self.total_tokens % (self.mbs_choices[a] * self.seq_choices[b]) == 0

    def config(self, a: int, b: int) -> IterationConfig:
        t = self.template
        return IterationConfig.from_total_tokens(
            self.total_tokens, self.mbs_choices[a], self.seq_choices[b],
            hidden_dim=t.hidden_dim, bytes_per_element=t.bytes_per_element,
            grad_msg_scale=t.grad_msg_scale)

    def feasible_pairs(self) -> list[tuple[int, int]]:
        """Index pairs that divide the token budget and fit HBM with plain 1F1B."""
        out = []
        for a in range(len(self.mbs_choices)):
            for b in range(len(self.seq_choices)):
                if not self.divisible(a, b):
                    continue
                cfg = self.config(a, b)
                spec = build_geopipe(self.p, cfg.num_micro_batches, [0] * self.p)
                if validate(spec, self.cluster, self.profile, self.hbm, cfg).ok:
                    out.append((a, b))
        return out

    def delta_n_caps(self, a: int, b: int) -> list[int]:
        """Largest ΔN each stage can hold in HBM; m - 1 where memory never binds."""
        cfg = self.config(a, b)
        m = cfg.num_micro_batches
        act = self.profile.act_mem(cfg.tokens_per_micro_batch)
        caps = []
        for i in range(self.p):
            if self.hbm is None or act == 0:
                caps.append(m - 1)
                continue
            # W + 1 activations must fit next to the static footprint
            w_max = (self.hbm.bound_bytes[i] - self.hbm.static_bytes[i]) // act - 1
            caps.append(m - 1 if w_max >= m - 1 else w_max - (self.p - 1 - i))
        return caps

    def space_size(self) -> int:
        return len(self.mbs_choices) * len(self.seq_choices) * (self.max_lead + 1) ** (self.p - 1)


def _snap(pair: tuple[int, int], feasible: Sequence[tuple[int, int]]) -> tuple[int, int]:
    if pair in feasible:
        return pair
    return min(feasible, key=lambda q: (abs(q[0] - pair[0]) + abs(q[1] - pair[1]), q))


def repair(problem: SearchProblem, genome: Genome, feasible: Sequence[tuple[int, int]]) -> Genome:
    """Snap to a feasible (mbs, seq) pair, then shed lead until HBM fits.

    While some stage overflows, one unit of lead comes off the link with the
    most lead at or downstream of the first overflowing stage (lowest index
    on ties). Spreading the cuts this way keeps repaired genomes diverse.
    """
    a, b = _snap((genome[0], genome[1]), feasible)
    m = problem.config(a, b).num_micro_batches
    caps = problem.delta_n_caps(a, b)
    leads = [min(x, m - 1) for x in genome[2]]
    while True:
        dn = delta_n_from_leads(leads)
        stage = next((i for i in range(problem.p) if dn[i] > caps[i]), None)
        if stage is None:
            return (a, b, tuple(leads))
        j = max(range(stage, problem.p - 1), key=lambda j: (leads[j], -j), default=None)
        if j is None or leads[j] == 0:
            # cannot happen for pairs from feasible_pairs(); kept as a hard stop
            raise InfeasibleError(f"stage {stage} overflows HBM even without lead")
        leads[j] -= 1


def evaluate(problem: SearchProblem, genome: Genome) -> tuple[int, Fraction]:
    """Simulated makespan and bubble ratio of an already-repaired genome."""
    a, b, leads = genome
    cfg = problem.config(a, b)
    spec = build_geopipe(problem.p, cfg.num_micro_batches, delta_n_from_leads(leads))
    rep = simulate(problem.cluster, spec, problem.profile, cfg, check=False)
    return rep.makespan, rep.bubble_ratio


def _eval_key(problem: SearchProblem, genome: Genome) -> tuple:
    # distinct lead vectors can produce the same schedule once warm-up hits m - 1
    a, b, leads = genome
    m = problem.config(a, b).num_micro_batches
    dn = delta_n_from_leads(leads)
    return a, b, tuple(min(m - 1, problem.p - 1 - i + dn[i]) for i in range(problem.p))


def _candidate(problem: SearchProblem, genome: Genome) -> Candidate:
    a, b, leads = genome
    cfg = problem.config(a, b)
    return Candidate(cfg.micro_batch_size, cfg.seq_len, cfg.num_micro_batches,
                     tuple(leads), tuple(delta_n_from_leads(leads)))


def _infeasibility_report(problem: SearchProblem) -> str:
    lines = []
    for a, mbs in enumerate(problem.mbs_choices):
        for b, seq in enumerate(problem.seq_choices):
            if not problem.divisible(a, b):
                lines.append(f"mbs={mbs} seq={seq}: {mbs * seq} does not divide {problem.total_tokens} tokens")
                continue
            cfg = problem.config(a, b)
            spec = build_geopipe(problem.p, cfg.num_micro_batches, [0] * problem.p)
            for v in validate(spec, problem.cluster, problem.profile, problem.hbm, cfg).violations:
                lines.append(f"mbs={mbs} seq={seq}: {v}")
    return "no feasible configuration:\n  " + "\n  ".join(lines)


def make_problem(cluster, profile, hbm, cfg, mbs_choices=None, seq_choices=None,
                 max_lead=None) -> SearchProblem:
    mbs_choices = tuple(mbs_choices or (cfg.micro_batch_size,))
    seq_choices = tuple(seq_choices or (cfg.seq_len,))
    if not mbs_choices or not seq_choices:
        raise ConfigError("allowed micro-batch and sequence-length sets must be non-empty")
    if cluster.num_stages < 2:
        raise ConfigError("nothing to search on a single-stage pipeline")
    total = cfg.total_tokens
    problem = SearchProblem(cluster, profile, hbm, cfg, total, mbs_choices, seq_choices, 0)
    if max_lead is None:
        # no feasible genome carries more lead on any link than the loosest stage allows
        caps = [min(c, problem.config(a, b).num_micro_batches - 1)
                for a in range(len(mbs_choices)) for b in range(len(seq_choices))
                if problem.divisible(a, b) for c in problem.delta_n_caps(a, b)]
        max_lead = max(max(caps, default=0), 0)
    return dataclasses.replace(problem, max_lead=max_lead)


def optimize_ga(cluster: ClusterSpec, profile: ComputeProfile, hbm: HbmSpec | None,
                cfg: IterationConfig, mbs_choices: Sequence[int] | None = None,
                seq_choices: Sequence[int] | None = None,
                params: GaParams = GaParams()) -> OptResult:
    """Genetic search over (micro-batch size, sequence length, per-link lead).

    ``cfg`` fixes the token budget, message shape, and the 1F1B baseline
    pair. Fitness is simulated makespan; ties go to less total lead. The
    baseline genome and the greedy chain refinement of it seed generation 0,
    and elitism keeps the best, so the result never loses to either.
    """
    problem = make_problem(cluster, profile, hbm, cfg, mbs_choices, seq_choices, params.max_lead)
    feasible = problem.feasible_pairs()
    if not feasible:
        raise InfeasibleError(_infeasibility_report(problem))

    try:
        base_pair = (problem.mbs_choices.index(cfg.micro_batch_size),
                     problem.seq_choices.index(cfg.seq_len))
    except ValueError:
        base_pair = feasible[0]
    base_pair = base_pair if base_pair in feasible else feasible[0]
    n_links = problem.p - 1
    baseline = (*base_pair, (0,) * n_links)
    greedy_dn = refine_dependency_chain(cluster, problem.config(*base_pair), profile, hbm)
    seeds = [baseline, (*base_pair, tuple(link_leads(greedy_dn)))]

    rng = random.Random(params.seed)
    cache: dict[tuple, tuple[int, Fraction]] = {}
    repaired: dict[Genome, Genome] = {}
    pool = ProcessPoolExecutor(params.jobs) if params.jobs > 1 else None

    def fitness_all(genomes: list[Genome]) -> list[tuple[int, Fraction]]:
        keys = [_eval_key(problem, g) for g in genomes]
        todo: dict[tuple, Genome] = {}
        for k, g in zip(keys, genomes):
            if k not in cache and k not in todo:
                todo[k] = g
        if pool is not None and len(todo) > 1:
            results = list(pool.map(evaluate, [problem] * len(todo), list(todo.values())))
        else:
            results = [evaluate(problem, g) for g in todo.values()]
        cache.update(zip(todo.keys(), results))
        return [cache[k] for k in keys]

    def fix(g: Genome) -> Genome:
        if g not in repaired:
            repaired[g] = repair(problem, g, feasible)
        return repaired[g]

    def rank(g: Genome, fit) -> tuple:
        return fit[0], sum(g[2]), g

    def random_genome() -> Genome:
        return (rng.randrange(len(problem.mbs_choices)), rng.randrange(len(problem.seq_choices)),
                tuple(rng.randint(0, problem.max_lead) for _ in range(n_links)))

    def mutate(g: Genome) -> Genome:
        a, b, leads = g
        if rng.random() < params.mutation_rate:
            a = rng.randrange(len(problem.mbs_choices))
        if rng.random() < params.mutation_rate:
            b = rng.randrange(len(problem.seq_choices))
        leads = tuple(rng.randint(0, problem.max_lead) if rng.random() < params.mutation_rate else x
                      for x in leads)
        return a, b, leads

    def crossover(x: Genome, y: Genome) -> Genome:
        if rng.random() >= params.crossover_rate:
            return x
        pick = lambda u, v: u if rng.random() < 0.5 else v
        return pick(x[0], y[0]), pick(x[1], y[1]), tuple(pick(u, v) for u, v in zip(x[2], y[2]))

    try:
        population = seeds + [random_genome() for _ in range(params.population - len(seeds))]
        population = [fix(g) for g in population]
        fits = fitness_all(population)
        base_fit = fits[0]
        best = min(zip(population, fits), key=lambda gf: rank(*gf))
        history = [best[1][0]]
        space = problem.space_size()

        for _ in range(params.generations):
            if len(cache) >= space:
                break
            ranked = sorted(zip(population, fits), key=lambda gf: rank(*gf))
            nxt = [g for g, _ in ranked[:params.elite]]

            def select() -> Genome:
                contenders = [rng.randrange(len(population)) for _ in range(params.tournament)]
                i = min(contenders, key=lambda i: rank(population[i], fits[i]))
                return population[i]

            while len(nxt) < params.population:
                nxt.append(mutate(crossover(select(), select())))
            population = [fix(g) for g in nxt]
            fits = fitness_all(population)
            gen_best = min(zip(population, fits), key=lambda gf: rank(*gf))
            if rank(*gen_best) < rank(*best):
                best = gen_best
            history.append(best[1][0])
    finally:
        if pool is not None:
            pool.shutdown()

    genome, (span, ratio) = best
    return OptResult(
        best=_candidate(problem, genome), best_genome=genome, best_makespan=span,
        best_bubble_ratio=ratio, baseline=_candidate(problem, baseline),
        baseline_makespan=base_fit[0], baseline_bubble_ratio=base_fit[1],
        history=history, evaluations=len(cache),
    )


@dataclass(frozen=True)
class SweepPoint:
    bandwidth_bps: float
    makespan_1f1b: int
    makespan_geopipe: int
    br_1f1b: Fraction
    br_geopipe: Fraction
    delta_n: tuple[int, ...] = ()

    @property
    def reduction(self) -> float:
        return reduction(self.br_1f1b, self.br_geopipe)


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)

    @property
    def bandwidths(self) -> list[float]:
        return [pt.bandwidth_bps for pt in self.points]

    @property
    def reductions(self) -> list[float]:
        return [pt.reduction for pt in self.points]

    def write_csv(self, out: TextIO) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["bandwidth_gbps", "makespan_1f1b_us", "makespan_geopipe_us",
                    "br_1f1b", "br_geopipe", "reduction"])
        for pt in self.points:
            w.writerow([f"{pt.bandwidth_bps / 1e9:g}", f"{pt.makespan_1f1b / 1e3:.3f}",
                        f"{pt.makespan_geopipe / 1e3:.3f}", f"{float(pt.br_1f1b):.6f}",
                        f"{float(pt.br_geopipe):.6f}", f"{pt.reduction:.6f}"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def sweep_bandwidth(cluster: ClusterSpec, grid_bps: Sequence[float], cfg: IterationConfig,
                    profile: ComputeProfile, hbm: HbmSpec | None = None, *,
                    method: str = "greedy", ga_params: GaParams | None = None) -> SweepResult:
    """1F1B vs warm-up-extended 1F1B with every cross-DC link set to each grid bandwidth."""
    grid = list(grid_bps)
    if len(grid) < 2:
        raise ConfigError("bandwidth grid needs at least 2 points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("bandwidth grid must be strictly ascending")
    if method not in ("greedy", "ga"):
        raise ConfigError(f"unknown method {method!r}")
    p, m = cluster.num_stages, cfg.num_micro_batches
    result = SweepResult()
    for bw in grid:
        cl = cluster.with_cross_dc_bandwidth(bw)
        base = simulate(cl, build_geopipe(p, m, [0] * p), profile, cfg, hbm)
        if method == "greedy":
            dn = refine_dependency_chain(cl, cfg, profile, hbm)
        else:
            dn = list(optimize_ga(cl, profile, hbm, cfg, params=ga_params or GaParams()).best.delta_n)
        geo = simulate(cl, build_geopipe(p, m, dn), profile, cfg, hbm)
        result.points.append(SweepPoint(bw, base.makespan, geo.makespan,
                                        base.bubble_ratio, geo.bubble_ratio, tuple(dn)))
    return result


@dataclass(frozen=True)
class OptimizationPoint:
    bandwidth_bps: float
    peak_reduction_bandwidth_bps: float
    epsilon: float


def find_optimization_point(sweep: SweepResult, epsilon: float = 0.01) -> OptimizationPoint:
    """Smallest bandwidth whose iteration time is within (1 + epsilon) of the top-bandwidth value.

    This is a stand-in for a bandwidth-cost trade-off; no cost model is
    involved. The peak of the bubble-ratio reduction curve is reported
    alongside for comparison.
    """
    if not sweep.points:
        raise ConfigError("empty sweep")
    if not 0 <= epsilon < 1:
        raise ConfigError("epsilon must be in [0, 1)")
    target = Fraction(sweep.points[-1].makespan_geopipe) * (1 + Fraction(epsilon))
    point = next(pt for pt in sweep.points if pt.makespan_geopipe <= target)
    red = sweep.reductions
    peak = sweep.points[max(range(len(red)), key=lambda i: (red[i], -i))]
    return OptimizationPoint(point.bandwidth_bps, peak.bandwidth_bps, epsilon)
