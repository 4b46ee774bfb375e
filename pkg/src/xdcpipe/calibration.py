"""Measured pass-time / activation-memory tables and the profiles built from them.

CSV layout::

    tokens,t_f_us,t_b_us,act_mem_bytes
    4096,10250.5,20100,2147483648
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from typing import Iterable, Sequence, TextIO

from .errors import ConfigError
from .model import CLAMP, LINEAR_TAIL, NS_PER_US, ComputeProfile, Knot, pass_times

HEADER = ["tokens", "t_f_us", "t_b_us", "act_mem_bytes"]


class MeasurementError(ConfigError):
    pass


@dataclass(frozen=True)
class MeasurementRow:
    tokens: int
    t_f: int  # ns
    t_b: int  # ns
    act_mem: int


@dataclass(frozen=True)
class MeasurementTable:
    rows: tuple[MeasurementRow, ...]

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.tokens <= 0:
                raise MeasurementError(f"tokens must be positive, got {r.tokens}")
            if r.tokens in seen:
                raise MeasurementError(f"duplicate tokens value {r.tokens}")
            if min(r.t_f, r.t_b, r.act_mem) < 0:
                raise MeasurementError(f"negative measurement at {r.tokens} tokens")
            seen.add(r.tokens)


def _us_to_ns(text: str) -> int:
    ns = Decimal(text) * NS_PER_US
    if not ns.is_finite():
        raise InvalidOperation(text)
    return int(ns.to_integral_value(ROUND_HALF_UP))


def load_measurements(document: str | TextIO) -> MeasurementTable:
    """Parse measurement CSV text (or an open file) into a table sorted by tokens."""
    text = document if isinstance(document, str) else document.read()
    reader = csv.reader(io.StringIO(text))
    rows: list[MeasurementRow] = []
    first_seen: dict[int, int] = {}
    header = None
    for lineno, rec in enumerate(reader, start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if header is None:
            header = [c.strip() for c in rec]
            if header != HEADER:
                raise MeasurementError(f"line {lineno}: expected header {','.join(HEADER)}")
            continue
        if len(rec) != len(HEADER):
            raise MeasurementError(f"line {lineno}: expected {len(HEADER)} fields, got {len(rec)}")
        try:
            tokens = int(rec[0].strip())
            row = MeasurementRow(tokens, _us_to_ns(rec[1].strip()), _us_to_ns(rec[2].strip()),
                                 int(rec[3].strip()))
        except (ValueError, InvalidOperation) as exc:
            raise MeasurementError(f"line {lineno}: malformed number ({exc})") from None
        if tokens in first_seen:
            raise MeasurementError(
                f"line {lineno}: duplicate tokens value {tokens} (first on line {first_seen[tokens]})")
        first_seen[tokens] = lineno
        rows.append(row)
    if not rows:
        raise MeasurementError("measurement file has no data rows")
    return MeasurementTable(tuple(sorted(rows, key=lambda r: r.tokens)))


def load_measurements_file(path: str | os.PathLike) -> MeasurementTable:
    with open(path, encoding="utf-8", newline="") as f:
        return load_measurements(f)


def _ns_to_us(ns: int) -> str:
    return format(Decimal(ns) / NS_PER_US, "f")


def write_measurements(table: MeasurementTable, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HEADER)
    for r in table.rows:
        w.writerow([r.tokens, _ns_to_us(r.t_f), _ns_to_us(r.t_b), r.act_mem])


def fit_profile(table: MeasurementTable) -> ComputeProfile:
    """Use the measured rows verbatim as interpolation knots.

    Below the smallest measurement the first row is held; beyond the largest
    the last segment's slope continues. Non-monotone stretches (small-token
    inefficiency) are kept as measured.
    """
    if not table.rows:
        raise MeasurementError("cannot fit an empty table")
    knots = [Knot(r.tokens, r.t_f, r.t_b, r.act_mem) for r in table.rows]
    return ComputeProfile(tuple(knots), LINEAR_TAIL)


def synth_profile(base_overhead: float, per_token_f: float, per_token_b: float,
                  act_per_token: float, tokens: Iterable[int],
                  extrapolation: str = LINEAR_TAIL) -> ComputeProfile:
    """Launch-overhead floor plus linear per-token cost; times in ns, memory in bytes."""
    grid = list(tokens)
    if not grid:
        raise ConfigError("token grid must be non-empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("token grid must be strictly ascending")
    knots = [
        Knot(n, round(max(base_overhead, per_token_f * n)), round(max(base_overhead, per_token_b * n)),
             round(act_per_token * n))
        for n in grid
    ]
    return ComputeProfile(tuple(knots), extrapolation)


def uniform_profile(t_f: int, t_b: int | None = None, act_mem: int = 0) -> ComputeProfile:
    """Pass times independent of token count."""
    return ComputeProfile((Knot(1, t_f, t_f if t_b is None else t_b, act_mem),), CLAMP)


def table_from_profile(profile: ComputeProfile, tokens: Sequence[int] | None = None) -> MeasurementTable:
    grid = tokens if tokens is not None else [k.tokens for k in profile.knots]
    rows = []
    for n in grid:
        t_f, t_b = pass_times(profile, n)
        rows.append(MeasurementRow(n, t_f, t_b, profile.act_mem(n)))
    return MeasurementTable(tuple(rows))
