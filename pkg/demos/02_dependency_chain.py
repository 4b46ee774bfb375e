"""
Following the dependency chain across three datacenters
=======================================================

Four stages span three datacenters. Link 0->1 costs one unit of latency and
link 2->3 costs two. The slowest link governs the schedule until enough lead
is granted upstream of it, at which point the next-slowest link takes over.
"""

from xdcpipe import (
    ClusterSpec, IterationConfig, LinkSpec, build_geopipe, dependency_chain, refine_dependency_chain,
    simulate, uniform_profile,
)
from xdcpipe.schedule import link_effective_latencies

UNIT = 1_000_000
profile = uniform_profile(UNIT)
cfg = IterationConfig(1, 1, num_micro_batches=8, bytes_per_element=1)
fast = 1e18
cluster = ClusterSpec(
    placement=[0, 1, 1, 2],
    links=[LinkSpec(bandwidth_bps=fast, fixed_overhead=UNIT),
           LinkSpec(bandwidth_bps=fast),
           LinkSpec(bandwidth_bps=fast, fixed_overhead=2 * UNIT)],
)


def show(delta_n):
    rep = simulate(cluster, build_geopipe(4, 8, delta_n), profile, cfg)
    eff = [e / UNIT for e in link_effective_latencies(cluster, cfg, profile, delta_n)]
    chain = dependency_chain(cluster, cfg, profile, delta_n)
    print(f"ΔN={delta_n}  W={rep.warmups}  residual latency per link={eff}  "
          f"chain=link {chain}->{chain + 1}  makespan={rep.makespan // UNIT}")


###############################################################################
# Without any lead the two-unit link 2->3 is the chain.
show([0, 0, 0, 0])

###############################################################################
# One unit of lead on link 2->3 means stages 0, 1 and 2 each run one more
# warm-up forward. Its residual drops to one unit, tying link 0->1; the tie
# goes to the upstream link.
show([1, 1, 1, 0])

###############################################################################
# The greedy refinement keeps adding lead to whichever link is the chain, as
# long as the simulated makespan improves.
best = refine_dependency_chain(cluster, cfg, profile)
show(best)

###############################################################################
# The latency cannot vanish entirely: the first forward still has to travel
# down the whole chain and the last backward back up, so the floor is the
# zero-latency makespan plus twice the summed one-way latencies.
floor = (8 + 4 - 1) * 2 + 2 * (1 + 0 + 2)
print("floor:", floor, "units")
