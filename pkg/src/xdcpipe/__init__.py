"""Simulate and optimize pipeline-parallel training across datacenters.

Stages of a 1F1B pipeline may sit in different datacenters; cross-DC links
add latency that shows up as pipeline bubbles. Extending the warm-up phase
upstream of a slow link (ΔN extra forwards) hides that latency behind
computation, bounded by accelerator memory.
"""
from .calibration import (
    MeasurementTable, fit_profile, load_measurements, load_measurements_file, synth_profile,
    uniform_profile, write_measurements,
)
from .errors import ConfigError, DeadlockError, InfeasibleError, ValidationError
from .model import (
    NS_PER_MS, NS_PER_US, ClusterSpec, ComputeProfile, HbmSpec, IterationConfig, Knot, LinkSpec,
    activation_message_bytes, effective_latency, hbm_usage, link_latency, pass_times,
)
from .optimizer import (
    GaParams, OptResult, SweepResult, find_optimization_point, optimize_ga,
    refine_dependency_chain, sweep_bandwidth,
)
from .scenario import Scenario, bundled, load_scenario
from .schedule import ScheduleSpec, Task, build_1f1b, build_geopipe, dependency_chain, validate
from .simulator import (
    SimReport, bubble_metrics, estimate_cross_dc_bubble, export_trace, reduction, simulate,
)

__version__ = "0.1.0"
