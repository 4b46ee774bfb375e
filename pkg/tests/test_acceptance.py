"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line; the same lines are
repeated in the pytest terminal summary.
"""
import io
import itertools
import json
import random
import time
from fractions import Fraction

import pytest

from xdcpipe.calibration import (
    MeasurementRow, MeasurementTable, fit_profile, load_measurements, uniform_profile,
    write_measurements,
)
from xdcpipe.cli import main
from xdcpipe.model import (
    ClusterSpec, HbmSpec, IterationConfig, LinkSpec, delta_n_from_leads, link_latencies, pass_times,
)
from xdcpipe.optimizer import (
    GaParams, find_optimization_point, make_problem, optimize_ga, refine_dependency_chain,
    sweep_bandwidth,
)
from xdcpipe.scenario import bundled, load_scenario
from xdcpipe.schedule import build_1f1b, build_geopipe, link_effective_latencies, validate
from xdcpipe.simulator import simulate, validate_trace

T = 1000  # one time unit, ns


@pytest.fixture
def verdict(record_property):
    """Call with (criterion, ok, detail) before asserting."""
    def report(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        print(line)
        record_property("acceptance", line)
    return report


def chain(lat):
    placement = [0]
    for _ in lat:
        placement.append(placement[-1] + 1)
    return ClusterSpec(placement, [LinkSpec(0, 1e30, c) for c in lat])


def unit_cfg(m):
    return IterationConfig(1, 1, m, bytes_per_element=1)


def span(cluster, cfg, prof, dn, hbm=None):
    p = cluster.num_stages
    return simulate(cluster, build_geopipe(p, cfg.num_micro_batches, dn), prof, cfg, hbm)


def test_criterion_1_zero_latency_closed_form(verdict):
    t0 = time.perf_counter()
    prof = uniform_profile(T)
    bad = []
    for p in range(1, 9):
        cluster = chain([0] * (p - 1))
        for m in range(p, 33):
            rep = simulate(cluster, build_1f1b(p, m), prof, unit_cfg(m))
            if rep.makespan != (m + p - 1) * 2 * T or rep.bubble_ratio != Fraction(p - 1, m + p - 1):
                bad.append((p, m))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 1.0
    verdict(1, ok, f"{elapsed:.2f} s, mismatches {bad[:3]}")
    assert not bad
    assert elapsed < 1.0


def test_criterion_2_hand_oracle(verdict):
    cluster, cfg, prof = chain([1]), unit_cfg(4), uniform_profile(1)
    base = span(cluster, cfg, prof, [0, 0])
    geo = span(cluster, cfg, prof, [1, 0])
    # hand-enumerated start times per stage
    hand = {
        "1f1b": ({0: [0, 1, 5, 6, 7, 8, 11, 13], 1: [2, 3, 4, 5, 8, 9, 10, 11]}, base),
        "lead": ({0: [0, 1, 2, 5, 6, 7, 9, 11], 1: [2, 3, 4, 5, 6, 7, 8, 9]}, geo),
    }
    timelines_ok = all(
        [e.start for e in rep.stage_timeline(s)] == starts[s]
        for starts, rep in hand.values() for s in (0, 1)
    )
    got = (base.makespan, geo.makespan, base.bubble_ratio, geo.bubble_ratio)
    want = (14, 12, Fraction(12, 28), Fraction(8, 24))
    verdict(2, timelines_ok and got == want,
            f"makespans {got[0]} and {got[1]}, bubble ratios {got[2]} and {got[3]}")
    assert timelines_ok
    assert got == want


def upstream_steady_gaps(rep):
    """Idle gaps at stage 0 in steady state (from the second F/B pair on)."""
    w, m = rep.warmups[0], rep.m
    entries = rep.stage_timeline(0)
    return [e.gap for e in entries[w + 2:w + 2 * (m - w)] if e.gap]


def test_criterion_3_absorption_law(verdict):
    t0 = time.perf_counter()
    prof = uniform_profile(T)
    m = 32
    bad = []
    for c in range(6):
        for dn in range(7):
            rep = span(chain([c * T]), unit_cfg(m), prof, [dn, 0], HbmSpec.unbounded(2))
            expected = max(0, 2 * c * T - dn * 2 * T)
            gaps = upstream_steady_gaps(rep)
            # every steady gap has the predicted size; none at all once the lead covers the round trip
            if expected == 0:
                ok = not gaps
            else:
                ok = bool(gaps) and all(abs(g - expected) <= 1 for g in gaps)
                ok &= abs(rep.per_link_steady_bubble[0] - expected) <= 1
            if not ok:
                bad.append((c, dn, expected, sorted(set(gaps))))
    elapsed = time.perf_counter() - t0
    verdict(3, not bad and elapsed < 5, f"{elapsed:.2f} s, mismatches {bad[:3]}")
    assert not bad
    assert elapsed < 5


def random_instances(n, seed):
    rng = random.Random(seed)
    for _ in range(n):
        p = rng.randint(4, 8)
        m = rng.randint(3 * p, 4 * p)
        lat = [rng.choice([0, 1, 2]) * T for _ in range(p - 1)]
        yield p, m, lat


def test_criterion_4_full_elimination(verdict):
    prof = uniform_profile(T)
    effective_ok = True
    within = 0
    gaps = []
    for p, m, lat in random_instances(20, seed=2024):
        cluster, cfg = chain(lat), unit_cfg(m)
        dn = refine_dependency_chain(cluster, cfg, prof, HbmSpec.unbounded(p))
        effective_ok &= not any(link_effective_latencies(cluster, cfg, prof, dn))
        excess = span(cluster, cfg, prof, dn).makespan - (m + p - 1) * 2 * T
        gaps.append(excess // T)
        within += excess <= 2 * T
    ok = effective_ok and within == 20
    verdict(4, ok, f"effective latencies all 0: {effective_ok}; "
                   f"{within}/20 within T_F+T_B; excess in units {gaps}")
    assert effective_ok
    assert within == 20


def test_criterion_4_supplement_round_trip_floor():
    """Every instance lands exactly on the floor set by the first forward and last backward."""
    prof = uniform_profile(T)
    for p, m, lat in random_instances(20, seed=2024):
        cluster, cfg = chain(lat), unit_cfg(m)
        dn = refine_dependency_chain(cluster, cfg, prof, HbmSpec.unbounded(p))
        assert span(cluster, cfg, prof, dn).makespan == (m + p - 1) * 2 * T + 2 * sum(lat)


def random_search_config(rng):
    p = rng.randint(2, 4)
    lat = [rng.choice([0, 1, 2, 3]) * T // 2 for _ in range(p - 1)]
    cluster = chain(lat)
    t_f = rng.randint(1, 3) * T // 2
    prof = uniform_profile(t_f, rng.randint(1, 3) * T // 2, act_mem=rng.randint(1, 3))
    mbs_choices = sorted(rng.sample([1, 2, 4], rng.randint(1, 2)))
    seq_choices = sorted(rng.sample([1, 2], rng.randint(1, 2)))
    total = 8 * rng.randint(1, 2)
    cfg = IterationConfig.from_total_tokens(total, mbs_choices[0], seq_choices[0], bytes_per_element=1)
    bound = rng.randint(p + 1, p + 5) * 3
    hbm = HbmSpec.uniform(p, 0, bound)
    return cluster, prof, hbm, cfg, mbs_choices, seq_choices


def exhaustive(problem):
    best = None
    for a, b in itertools.product(range(len(problem.mbs_choices)), range(len(problem.seq_choices))):
        if not problem.divisible(a, b):
            continue
        cfg = problem.config(a, b)
        for leads in itertools.product(range(problem.max_lead + 1), repeat=problem.p - 1):
            spec = build_geopipe(problem.p, cfg.num_micro_batches, delta_n_from_leads(leads))
            if validate(spec, problem.cluster, problem.profile, problem.hbm, cfg).ok:
                s = simulate(problem.cluster, spec, problem.profile, cfg, check=False).makespan
                best = s if best is None else min(best, s)
    return best


def test_criterion_5_optimizer_dominance_and_oracle(verdict):
    t0 = time.perf_counter()
    rng = random.Random(5)
    worse, mismatched, checked = [], [], 0
    for k in range(50):
        cluster, prof, hbm, cfg, mbs, seq = random_search_config(rng)
        res = optimize_ga(cluster, prof, hbm, cfg, mbs, seq, GaParams(seed=k))
        if res.best_makespan > res.baseline_makespan:
            worse.append(k)
        problem = make_problem(cluster, prof, hbm, cfg, mbs, seq)
        if problem.space_size() <= 10**4:
            checked += 1
            if exhaustive(problem) != res.best_makespan:
                mismatched.append(k)
    elapsed = time.perf_counter() - t0
    ok = not worse and not mismatched and elapsed < 60
    verdict(5, ok, f"{elapsed:.1f} s, {checked} oracle checks, worse {worse}, mismatched {mismatched}")
    assert not worse
    assert not mismatched
    assert checked >= 25
    assert elapsed < 60


def test_criterion_6_hbm_bound(verdict):
    prof = uniform_profile(T, T, act_mem=100)
    failures = []
    for k in range(4):
        # stage 0 of a 2-stage pipeline runs W = 1 + ΔN_0, holding W + 1 activations
        hbm = HbmSpec((0, 0), ((k + 2) * 100, 10**9))
        cluster, cfg = chain([3 * T + T // 2]), unit_cfg(24)
        assert k * 2 * T < 2 * cluster.links[0].fixed_overhead
        found = [refine_dependency_chain(cluster, cfg, prof, hbm),
                 list(optimize_ga(cluster, prof, hbm, cfg, params=GaParams(seed=k)).best.delta_n)]
        for dn in found:
            rep = span(cluster, cfg, prof, dn)
            bubble = rep.per_link_steady_bubble[0]
            if dn[0] > k or not bubble > 0:
                failures.append((k, dn, bubble))
        # the bound is tight: one more lead does not fit
        if validate(build_geopipe(2, 24, [k + 1, 0]), cluster, prof, hbm, cfg).ok:
            failures.append((k, "bound admits k + 1"))
    verdict(6, not failures, f"violations {failures}")
    assert not failures


def test_criterion_7_bandwidth_sweep(verdict):
    t0 = time.perf_counter()
    sc = load_scenario(bundled("geo3dc_8stage.toml"))
    assert sc.cluster.num_stages == 8 and len(set(sc.cluster.placement)) == 3
    assert all(sc.cluster.links[i].distance_km == 120 for i in sc.cluster.cross_dc_links())
    t_f, t_b = pass_times(sc.profile, sc.cfg.tokens_per_micro_batch)
    # latency-dominated: one cross-DC hop exceeds F + B at the slowest grid point
    slow = link_latencies(sc.cluster.with_cross_dc_bandwidth(sc.sweep_grid_bps[0]), sc.cfg)
    assert max(f for f, _ in slow) > t_f + t_b

    res = sweep_bandwidth(sc.cluster, sc.sweep_grid_bps, sc.cfg, sc.profile, sc.hbm)
    point = find_optimization_point(res, sc.epsilon)
    elapsed = time.perf_counter() - t0
    base = [pt.makespan_1f1b for pt in res.points]
    geo = [pt.makespan_geopipe for pt in res.points]
    monotone = base == sorted(base, reverse=True) and geo == sorted(geo, reverse=True)
    peak = max(res.reductions)
    ok = monotone and peak >= 0.5 and point.bandwidth_bps <= point.peak_reduction_bandwidth_bps \
        and elapsed < 30
    verdict(7, ok, f"{elapsed:.1f} s, peak reduction {peak:.1%} at "
                   f"{point.peak_reduction_bandwidth_bps / 1e9:g} Gbps, "
                   f"optimization point {point.bandwidth_bps / 1e9:g} Gbps")
    assert monotone
    assert peak >= 0.5
    assert point.bandwidth_bps <= point.peak_reduction_bandwidth_bps
    assert elapsed < 30


def test_criterion_8_determinism_and_formats(verdict, tmp_path, capsys):
    outputs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        files = [d / "opt.csv", d / "opt.json", d / "cmp.csv", d / "cmp.json", d / "sweep.csv"]
        assert main(["optimize", "--scenario", str(bundled("chain_4stage.toml")), "--seed", "7",
                     "--metrics-out", str(files[0]), "--trace-out", str(files[1])]) == 0
        assert main(["compare", "--scenario", str(bundled("absorb_2stage.toml")),
                     "--metrics-out", str(files[2]), "--trace-out", str(files[3])]) == 0
        assert main(["sweep-bandwidth", "--scenario", str(bundled("absorb_2stage.toml")),
                     "--grid", "1,10,100", "--metrics-out", str(files[4])]) == 0
        produced = sorted(d.iterdir())
        outputs.append({f.name: f.read_bytes() for f in produced})
    capsys.readouterr()
    identical = outputs[0] == outputs[1] and len(outputs[0]) == 7

    traces_ok = True
    for name, data in outputs[0].items():
        if name.endswith(".json"):
            try:
                validate_trace(json.loads(data))
            except Exception:
                traces_ok = False

    rng = random.Random(8)
    rows = {rng.randint(1, 10**5): (rng.randint(0, 10**10), rng.randint(0, 10**10), rng.randint(0, 10**11))
            for _ in range(30)}
    table = MeasurementTable(tuple(MeasurementRow(n, *v) for n, v in rows.items()))
    buf = io.StringIO()
    write_measurements(table, buf)
    prof = fit_profile(load_measurements(buf.getvalue()))
    roundtrip = all(pass_times(prof, n) == (f, b) and prof.act_mem(n) == a for n, (f, b, a) in rows.items())

    verdict(8, identical and traces_ok and roundtrip,
            f"byte-identical {identical}, traces valid {traces_ok}, table round-trip {roundtrip}")
    assert identical
    assert traces_ok
    assert roundtrip
