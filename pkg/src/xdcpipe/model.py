"""Domain types and closed-form latency, pass-time and memory relations.

All durations are integer nanoseconds. Sizes are integer bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import ConfigError

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

# light in fiber, ~2e8 m/s
DEFAULT_PROP_DELAY_NS_PER_KM = 5_000

CLAMP = "clamp"
LINEAR_TAIL = "linear-tail"


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class LinkSpec:
    distance_km: float = 0.0
    bandwidth_bps: float = 200e9
    fixed_overhead: int = 0

    def __post_init__(self):
        for name in ("distance_km", "bandwidth_bps", "fixed_overhead"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"link {name} must be finite and >= 0, got {v!r}")
        if self.bandwidth_bps <= 0:
            raise ConfigError("link bandwidth must be > 0")


@dataclass(frozen=True)
class ClusterSpec:
    """Pipeline stages, the datacenter hosting each, and the chain of links.

    ``links[i]`` joins stage ``i`` to stage ``i + 1``.
    """

    placement: tuple[int, ...]
    links: tuple[LinkSpec, ...]
    prop_delay_ns_per_km: float = DEFAULT_PROP_DELAY_NS_PER_KM

    def __post_init__(self):
        object.__setattr__(self, "placement", tuple(self.placement))
        object.__setattr__(self, "links", tuple(self.links))
        p = len(self.placement)
        if p < 1:
            raise ConfigError("cluster needs at least one stage")
        if len(self.links) != p - 1:
            raise ConfigError(f"{p} stages need {p - 1} links, got {len(self.links)}")
        for i, link in enumerate(self.links):
            if not self.is_cross_dc(i) and link.distance_km != 0:
                raise ConfigError(f"intra-DC link {i} must have distance_km = 0")

    @property
    def num_stages(self) -> int:
        return len(self.placement)

    def is_cross_dc(self, link: int) -> bool:
        return self.placement[link] != self.placement[link + 1]

    def cross_dc_links(self) -> list[int]:
        return [i for i in range(len(self.links)) if self.is_cross_dc(i)]

    def with_cross_dc_bandwidth(self, bandwidth_bps: float) -> "ClusterSpec":
        links = [
            LinkSpec(l.distance_km, bandwidth_bps, l.fixed_overhead) if self.is_cross_dc(i) else l
            for i, l in enumerate(self.links)
        ]
        return ClusterSpec(self.placement, tuple(links), self.prop_delay_ns_per_km)


@dataclass(frozen=True)
class IterationConfig:
    micro_batch_size: int
    seq_len: int
    num_micro_batches: int
    hidden_dim: int = 1
    bytes_per_element: int = 2
    # gradient message size relative to the activation message
    grad_msg_scale: float = 1.0

    def __post_init__(self):
        for name in ("micro_batch_size", "seq_len", "num_micro_batches", "hidden_dim", "bytes_per_element"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if not math.isfinite(self.grad_msg_scale) or self.grad_msg_scale < 0:
            raise ConfigError("grad_msg_scale must be finite and >= 0")

    @property
    def tokens_per_micro_batch(self) -> int:
        return self.micro_batch_size * self.seq_len

    @property
    def total_tokens(self) -> int:
        return self.tokens_per_micro_batch * self.num_micro_batches

    @classmethod
    def from_total_tokens(cls, total_tokens, micro_batch_size, seq_len, **kw) -> "IterationConfig":
        per_mb = micro_batch_size * seq_len
        if total_tokens % per_mb:
            raise ConfigError(f"total_tokens {total_tokens} not divisible by mbs*seq = {per_mb}")
        return cls(micro_batch_size, seq_len, total_tokens // per_mb, **kw)


@dataclass(frozen=True)
class Knot:
    tokens: int
    t_f: int
    t_b: int
    act_mem: int


@dataclass(frozen=True)
class ComputeProfile:
    """Piecewise-linear pass times and activation memory over tokens per micro-batch."""

    knots: tuple[Knot, ...]
    extrapolation: str = CLAMP

    def __post_init__(self):
        knots = tuple(k if isinstance(k, Knot) else Knot(*k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        if not knots:
            raise ConfigError("profile needs at least one knot")
        if self.extrapolation not in (CLAMP, LINEAR_TAIL):
            raise ConfigError(f"unknown extrapolation mode {self.extrapolation!r}")
        for a, b in zip(knots, knots[1:]):
            if b.tokens <= a.tokens:
                raise ConfigError("knot token values must be strictly increasing")
        for k in knots:
            if min(k.t_f, k.t_b, k.act_mem) < 0:
                raise ConfigError(f"negative value in knot at {k.tokens} tokens")

    def _interp(self, attr: str, tokens: int) -> int:
        ks = self.knots
        if len(ks) == 1 or tokens <= ks[0].tokens:
            return getattr(ks[0], attr)
        if tokens >= ks[-1].tokens:
            if self.extrapolation == CLAMP:
                return getattr(ks[-1], attr)
            a, b = ks[-2], ks[-1]
        else:
            # first knot strictly above the query
            hi = next(i for i, k in enumerate(ks) if k.tokens > tokens)
            a, b = ks[hi - 1], ks[hi]
        ya, yb = getattr(a, attr), getattr(b, attr)
        y = ya + Fraction(yb - ya) * (tokens - a.tokens) / (b.tokens - a.tokens)
        return max(0, _round_half_up(y))

    def act_mem(self, tokens: int) -> int:
        return self._interp("act_mem", tokens)


@dataclass(frozen=True)
class HbmSpec:
    static_bytes: tuple[int, ...]
    bound_bytes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "static_bytes", tuple(self.static_bytes))
        object.__setattr__(self, "bound_bytes", tuple(self.bound_bytes))
        if len(self.static_bytes) != len(self.bound_bytes):
            raise ConfigError("static_bytes and bound_bytes differ in length")
        # static > bound is left for validate() to report per stage
        if min(self.static_bytes + self.bound_bytes, default=0) < 0:
            raise ConfigError("HBM sizes must be >= 0")

    @classmethod
    def uniform(cls, p: int, static_bytes: int, bound_bytes: int) -> "HbmSpec":
        return cls((static_bytes,) * p, (bound_bytes,) * p)

    @classmethod
    def unbounded(cls, p: int) -> "HbmSpec":
        return cls.uniform(p, 0, 2**62)


def link_latency(link: LinkSpec, msg_bytes: int,
                 prop_delay_ns_per_km: float = DEFAULT_PROP_DELAY_NS_PER_KM) -> int:
    """One-way delay of a message: propagation + serialization + fixed overhead."""
    if msg_bytes < 0:
        raise ValueError("msg_bytes must be >= 0")
    prop = Fraction(link.distance_km) * Fraction(prop_delay_ns_per_km)
    serial = Fraction(msg_bytes * 8 * NS_PER_S) / Fraction(link.bandwidth_bps)
    return _round_half_up(prop + serial) + int(link.fixed_overhead)


def activation_message_bytes(cfg: IterationConfig) -> int:
    return cfg.micro_batch_size * cfg.seq_len * cfg.hidden_dim * cfg.bytes_per_element


def gradient_message_bytes(cfg: IterationConfig) -> int:
    return _round_half_up(Fraction(activation_message_bytes(cfg)) * Fraction(cfg.grad_msg_scale))


def pass_times(profile: ComputeProfile, tokens: int) -> tuple[int, int]:
    if tokens < 1:
        raise ValueError("tokens must be >= 1")
    return profile._interp("t_f", tokens), profile._interp("t_b", tokens)


def hbm_usage(stage: int, profile: ComputeProfile, hbm: HbmSpec, tokens: int, warmup: int) -> int:
    """Peak HBM at ``stage`` holding ``warmup + 1`` in-flight forward activations."""
    if warmup < 0:
        raise ValueError("warm-up depth must be >= 0")
    return hbm.static_bytes[stage] + profile.act_mem(tokens) * (warmup + 1)


def effective_latency(t_c: int, delta_n: int, t_f: int, t_b: int) -> int:
    """Latency left on a link after ``delta_n`` extra warm-up forwards hide part of it."""
    overlap = Fraction(delta_n * (t_f + t_b), 2)
    return max(0, _round_half_up(t_c - overlap))


def link_latencies(cluster: ClusterSpec, cfg: IterationConfig,
                   serialization: bool = True) -> list[tuple[int, int]]:
    """(forward, backward) one-way latency of every link for this iteration's messages.

    ``serialization=False`` gives the infinite-bandwidth limit.
    """
    fwd_bytes = activation_message_bytes(cfg) if serialization else 0
    bwd_bytes = gradient_message_bytes(cfg) if serialization else 0
    d = cluster.prop_delay_ns_per_km
    return [(link_latency(l, fwd_bytes, d), link_latency(l, bwd_bytes, d)) for l in cluster.links]


def link_leads(delta_n: Sequence[int]) -> list[int]:
    """Extra lead each link gets from a per-stage ΔN vector.

    Link ``i`` sees the difference in warm-up extension between its two
    endpoints, so raising every upstream stage by one adds one unit of lead
    to exactly one link.
    """
    return [delta_n[i] - delta_n[i + 1] for i in range(len(delta_n) - 1)]


def delta_n_from_leads(leads: Sequence[int]) -> list[int]:
    """Inverse of ``link_leads``: suffix sums with ΔN of the last stage fixed at 0."""
    out = [0] * (len(leads) + 1)
    for i in range(len(leads) - 1, -1, -1):
        out[i] = out[i + 1] + leads[i]
    return out


__all__ = [
    "NS_PER_US", "NS_PER_MS", "NS_PER_S", "DEFAULT_PROP_DELAY_NS_PER_KM",
    "CLAMP", "LINEAR_TAIL",
    "LinkSpec", "ClusterSpec", "IterationConfig", "Knot", "ComputeProfile", "HbmSpec",
    "link_latency", "activation_message_bytes", "gradient_message_bytes", "pass_times",
    "hbm_usage", "effective_latency", "link_latencies", "link_leads", "delta_n_from_leads",
]
