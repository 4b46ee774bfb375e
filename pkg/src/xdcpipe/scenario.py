"""TOML scenario documents.

A scenario bundles a cluster, an iteration shape, HBM limits, a compute
profile (measurement table or synthetic), the scheduler to run, optimizer
settings and output paths. See ``scenarios/*.toml`` for annotated examples.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .calibration import fit_profile, load_measurements_file, synth_profile, uniform_profile
from .errors import ConfigError
from .model import (
    NS_PER_US, ClusterSpec, ComputeProfile, HbmSpec, IterationConfig, LinkSpec,
)
from .optimizer import GaParams

SCHEMA_VERSION = 1
GIB = 2**30


@dataclass
class Scenario:
    name: str
    cluster: ClusterSpec
    cfg: IterationConfig
    hbm: HbmSpec | None
    profile: ComputeProfile
    scheduler: str = "1f1b"
    delta_n: str | list[int] = "greedy"
    ga: GaParams = field(default_factory=GaParams)
    mbs_choices: list[int] | None = None
    seq_choices: list[int] | None = None
    sweep_grid_bps: list[float] | None = None
    sweep_method: str = "greedy"
    epsilon: float = 0.01
    outputs: dict[str, str] = field(default_factory=dict)
    path: Path | None = None


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``bundled("uniform_4stage.toml")``."""
    return Path(str(resources.files("xdcpipe") / "scenarios" / name))


def _get(table: dict, key: str, kind, default: Any = ..., where: str = ""):
    if key not in table:
        if default is ...:
            raise ConfigError(f"missing key {where}{key}")
        return default
    val = table[key]
    ok = isinstance(val, kind) and not (kind in (int, (int, float)) and isinstance(val, bool))
    if not ok:
        raise ConfigError(f"{where}{key} has the wrong type: {val!r}")
    return val


def _num(table, key, default=..., where=""):
    return _get(table, key, (int, float), default, where)


def _link(d: dict, where: str) -> LinkSpec:
    return LinkSpec(
        distance_km=_num(d, "distance_km", 0.0, where),
        bandwidth_bps=_num(d, "bandwidth_gbps", where=where) * 1e9,
        fixed_overhead=round(_num(d, "fixed_overhead_us", 0.0, where) * NS_PER_US),
    )


def _cluster(doc: dict) -> ClusterSpec:
    c = _get(doc, "cluster", dict)
    placement = _get(c, "placement", list, where="cluster.")
    p = len(placement)
    prop = _num(c, "prop_delay_us_per_km", 5.0, "cluster.") * NS_PER_US
    if "links" in c:
        links = [_link(d, f"cluster.links[{i}].") for i, d in enumerate(_get(c, "links", list))]
    else:
        intra = _get(c, "intra_dc", dict, where="cluster.")
        cross = _get(c, "cross_dc", dict, {}, "cluster.")
        links = []
        for i in range(p - 1):
            if placement[i] == placement[i + 1]:
                links.append(_link({**intra, "distance_km": 0}, "cluster.intra_dc."))
            else:
                links.append(_link(cross, "cluster.cross_dc."))
    return ClusterSpec(tuple(placement), tuple(links), prop)


def _iteration(doc: dict) -> IterationConfig:
    it = _get(doc, "iteration", dict)
    w = "iteration."
    kw = dict(
        hidden_dim=_get(it, "hidden_dim", int, 1, w),
        bytes_per_element=_get(it, "bytes_per_element", int, 2, w),
        grad_msg_scale=float(_num(it, "grad_msg_scale", 1.0, w)),
    )
    mbs = _get(it, "micro_batch_size", int, where=w)
    seq = _get(it, "seq_len", int, where=w)
    if "num_micro_batches" in it:
        return IterationConfig(mbs, seq, _get(it, "num_micro_batches", int, where=w), **kw)
    return IterationConfig.from_total_tokens(_get(it, "total_tokens", int, where=w), mbs, seq, **kw)


def _bytes(h: dict, stem: str, p: int) -> tuple[int, ...] | None:
    for key, scale in ((f"{stem}_bytes", 1), (f"{stem}_gib", GIB)):
        if key in h:
            v = h[key]
            vals = v if isinstance(v, list) else [v] * p
            if len(vals) != p:
                raise ConfigError(f"hbm.{key} needs {p} entries")
            return tuple(round(x * scale) for x in vals)
    return None


def _hbm(doc: dict, p: int) -> HbmSpec | None:
    if "hbm" not in doc:
        return None
    h = _get(doc, "hbm", dict)
    static = _bytes(h, "static", p) or (0,) * p
    bound = _bytes(h, "bound", p)
    if bound is None:
        raise ConfigError("hbm table needs bound_bytes or bound_gib")
    return HbmSpec(static, bound)


def _profile(doc: dict, base: Path) -> ComputeProfile:
    pr = _get(doc, "profile", dict)
    if "table" in pr:
        path = base / _get(pr, "table", str)
        if not path.is_file():
            raise ConfigError(f"profile table not found: {path}")
        return fit_profile(load_measurements_file(path))
    if "uniform" in pr:
        u = _get(pr, "uniform", dict)
        t_f = round(_num(u, "t_f_us", where="profile.uniform.") * NS_PER_US)
        t_b = round(_num(u, "t_b_us", t_f / NS_PER_US, "profile.uniform.") * NS_PER_US)
        return uniform_profile(t_f, t_b, _get(u, "act_mem_bytes", int, 0))
    if "synthetic" in pr:
        s = _get(pr, "synthetic", dict)
        w = "profile.synthetic."
        return synth_profile(
            _num(s, "base_overhead_us", 0.0, w) * NS_PER_US,
            _num(s, "per_token_f_us", where=w) * NS_PER_US,
            _num(s, "per_token_b_us", where=w) * NS_PER_US,
            _num(s, "act_bytes_per_token", 0, w),
            _get(s, "tokens", list, where=w),
        )
    raise ConfigError("profile needs one of: table, uniform, synthetic")


def _ga(doc: dict) -> tuple[GaParams, list[int] | None, list[int] | None]:
    o = _get(doc, "optimizer", dict, {})
    w = "optimizer."
    params = GaParams(
        population=_get(o, "population", int, 32, w),
        generations=_get(o, "generations", int, 100, w),
        tournament=_get(o, "tournament", int, 3, w),
        crossover_rate=float(_num(o, "crossover_rate", 0.9, w)),
        mutation_rate=float(_num(o, "mutation_rate", 0.1, w)),
        seed=_get(o, "seed", int, 0, w),
        elite=_get(o, "elite", int, 2, w),
        max_lead=_get(o, "max_lead", int, None, w),
        jobs=_get(o, "jobs", int, 1, w),
    )
    return params, _get(o, "mbs_choices", list, None, w), _get(o, "seq_choices", list, None, w)


def parse_scenario(doc: dict, base: Path = Path(".")) -> Scenario:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cluster = _cluster(doc)
    cfg = _iteration(doc)
    sched = _get(doc, "schedule", dict, {})
    scheduler = _get(sched, "scheduler", str, "1f1b", "schedule.")
    if scheduler not in ("1f1b", "geopipe"):
        raise ConfigError(f"schedule.scheduler must be '1f1b' or 'geopipe', got {scheduler!r}")
    delta_n = sched.get("delta_n", "greedy")
    if not (delta_n in ("greedy", "ga") or isinstance(delta_n, list)):
        raise ConfigError("schedule.delta_n must be 'greedy', 'ga' or a list of counts")
    ga, mbs_choices, seq_choices = _ga(doc)
    sw = _get(doc, "sweep", dict, {})
    grid = _get(sw, "grid_gbps", list, None, "sweep.")
    out = _get(doc, "output", dict, {})
    return Scenario(
        name=_get(doc, "name", str, "scenario"),
        cluster=cluster, cfg=cfg, hbm=_hbm(doc, cluster.num_stages), profile=_profile(doc, base),
        scheduler=scheduler, delta_n=delta_n, ga=ga,
        mbs_choices=mbs_choices, seq_choices=seq_choices,
        sweep_grid_bps=[g * 1e9 for g in grid] if grid else None,
        sweep_method=_get(sw, "method", str, "greedy", "sweep."),
        epsilon=float(_num(sw, "epsilon", 0.01, "sweep.")),
        outputs={k: str(v) for k, v in out.items()},
    )


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sc = parse_scenario(doc, path.parent)
    sc.path = path
    return sc
