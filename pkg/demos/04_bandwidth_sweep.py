"""
How much cross-DC bandwidth is enough?
======================================

Eight stages over three datacenters joined by 120 km links. Sweeping the
cross-DC bandwidth shows where serialization stops mattering and only
propagation delay is left. Extending the warm-up hides most of what remains.
"""

from xdcpipe import bundled, find_optimization_point, load_scenario, optimize_ga, sweep_bandwidth
from xdcpipe.model import link_latencies, pass_times

sc = load_scenario(bundled("geo3dc_8stage.toml"))
t_f, t_b = pass_times(sc.profile, sc.cfg.tokens_per_micro_batch)
print(f"{sc.cluster.num_stages} stages, placement {list(sc.cluster.placement)}, m={sc.cfg.num_micro_batches}")
print(f"T_F={t_f / 1e3:.0f} us  T_B={t_b / 1e3:.0f} us per micro-batch")

###############################################################################
# Per-hop latency at a few bandwidths: 600 us of propagation plus
# serialization of a 40 MiB activation.
for gbps in (25, 100, 400, 3200):
    fwd, _ = link_latencies(sc.cluster.with_cross_dc_bandwidth(gbps * 1e9), sc.cfg)[2]
    print(f"{gbps:>5} Gbps: one-way {fwd / 1e3:8.0f} us")

###############################################################################
# The sweep itself. Each row compares plain 1F1B with the greedily refined
# warm-up extension at that bandwidth.
res = sweep_bandwidth(sc.cluster, sc.sweep_grid_bps, sc.cfg, sc.profile, sc.hbm)
print()
print(res.to_csv(), end="")
pt = find_optimization_point(res, sc.epsilon)
print(f"optimization point {pt.bandwidth_bps / 1e9:g} Gbps, "
      f"reduction peaks at {pt.peak_reduction_bandwidth_bps / 1e9:g} Gbps")

###############################################################################
# Memory is what limits the lead here: 40 GiB of each 64 GiB is taken before
# any activation is stored.
for p in res.points[::3]:
    print(f"{p.bandwidth_bps / 1e9:>5g} Gbps  ΔN={list(p.delta_n)}")

###############################################################################
# The genetic search may also change micro-batch size and sequence length
# within the same token budget.
ga = optimize_ga(sc.cluster, sc.profile, sc.hbm, sc.cfg, sc.mbs_choices, sc.seq_choices, sc.ga)
b = ga.best
print()
print(f"GA: mbs={b.micro_batch_size} seq={b.seq_len} m={b.num_micro_batches} ΔN={list(b.delta_n)}")
print(f"    {ga.baseline_makespan / 1e6:.1f} ms -> {ga.best_makespan / 1e6:.1f} ms "
      f"after {ga.evaluations} distinct schedules")
