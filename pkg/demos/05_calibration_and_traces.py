"""
From measured pass times to a Chrome trace
==========================================

Pass times rarely scale linearly at small token counts: kernel launch
overhead dominates and the curve can even dip. The measurement table is
used as-is, interpolated between rows and extended past the last one.
"""

import json
import tempfile
from pathlib import Path

from xdcpipe import (
    ClusterSpec, IterationConfig, LinkSpec, build_geopipe, export_trace, fit_profile,
    load_measurements, pass_times, simulate,
)
from xdcpipe.simulator import dump_trace, metrics_csv, validate_trace

table = load_measurements("""\
tokens,t_f_us,t_b_us,act_mem_bytes
4096,1000,2000,1717986918
512,400,800,214748365
1024,350,700,429496730
2048,520,1040,858993459
""")
print("rows come back sorted:", [r.tokens for r in table.rows])

###############################################################################
# Query between rows, at a row, and beyond the last row.
profile = fit_profile(table)
for tokens in (256, 768, 1024, 3072, 8192):
    t_f, t_b = pass_times(profile, tokens)
    print(f"{tokens:>5} tokens: T_F {t_f / 1e3:7.1f} us  T_B {t_b / 1e3:7.1f} us  "
          f"activations {profile.act_mem(tokens) / 2**30:.2f} GiB")

###############################################################################
# A small two-datacenter run with this profile, exported for chrome://tracing
# or Perfetto. Each stage is a thread; each datacenter is a process.
cluster = ClusterSpec([0, 0, 1, 1], [LinkSpec(bandwidth_bps=1600e9), LinkSpec(120, 100e9),
                                     LinkSpec(bandwidth_bps=1600e9)])
cfg = IterationConfig(1, 2048, num_micro_batches=8, hidden_dim=5120)
rep = simulate(cluster, build_geopipe(4, 8, [2, 2, 0, 0]), profile, cfg)
events = export_trace(rep, cluster)
validate_trace(events)

out = Path(tempfile.mkdtemp()) / "trace.json"
with open(out, "w") as f:
    dump_trace(events, f)
print()
print(f"{len(events)} trace events written to {out}")
print(json.dumps(events[len(events) // 2]))

###############################################################################
# Per-stage busy and idle time, the same CSV the command line writes.
print()
print(metrics_csv(rep), end="")
