"""
When accelerator memory caps the lead
=====================================

Every extra warm-up forward keeps one more micro-batch of activations alive.
With a tight HBM budget the lead stops short of what the latency needs, and
part of the bubble stays.
"""

from xdcpipe import (
    ClusterSpec, GaParams, HbmSpec, IterationConfig, LinkSpec, build_geopipe, optimize_ga,
    refine_dependency_chain, simulate, uniform_profile,
)
from xdcpipe.model import hbm_usage

UNIT = 1_000_000
GIB = 2**30
# 3.5 units of one-way latency: a 7-unit round trip against F + B = 2 units
cluster = ClusterSpec([0, 1], [LinkSpec(bandwidth_bps=1e18, fixed_overhead=7 * UNIT // 2)])
profile = uniform_profile(UNIT, UNIT, act_mem=2 * GIB)
cfg = IterationConfig(1, 4096, num_micro_batches=24)

###############################################################################
# Stage 0 holds W + 1 activations on top of 40 GiB of weights and optimizer state.
for w in range(1, 7):
    used = hbm_usage(0, profile, HbmSpec.uniform(2, 40 * GIB, 0), cfg.tokens_per_micro_batch, w)
    print(f"W={w}: {used / GIB:.0f} GiB")

###############################################################################
# Sweep the HBM bound and let both searches pick ΔN. The residual steady gap
# follows max(0, 2 T_C - ΔN (T_F + T_B)) until the bound is loose enough.
print()
print("bound  greedy ΔN  GA ΔN  steady gap (units)  makespan")
for bound_gib in (46, 48, 50, 52, 54):
    hbm = HbmSpec.uniform(2, 40 * GIB, bound_gib * GIB)
    greedy = refine_dependency_chain(cluster, cfg, profile, hbm)
    ga = optimize_ga(cluster, profile, hbm, cfg, params=GaParams(seed=0, generations=20)).best.delta_n
    rep = simulate(cluster, build_geopipe(2, 24, greedy), profile, cfg, hbm)
    print(f"{bound_gib:>3} GiB  {str(greedy):>9}  {str(list(ga)):>6}  "
          f"{float(rep.per_link_steady_bubble[0]) / UNIT:>17.1f}  {rep.makespan / UNIT:.0f}")
