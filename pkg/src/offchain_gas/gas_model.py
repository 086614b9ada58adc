"""Closed-form gas costs for the three execution modes.

M1 runs every transfer as its own transaction, M2 batches institutional
transfers through a dispatcher contract, and M3 batches them against an
off-chain account tree whose digest is mirrored on-chain.  All arithmetic is
exact (``fractions.Fraction``); rounding happens only when a report is printed.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Union

import numpy as np

Number = Union[int, Fraction, str]

MODES = ("M1", "M2", "M3")


class DegenerateWorkloadError(ValueError):
    """Raised when a workload has no transfers to amortize over."""


@dataclass(frozen=True)
class GasSchedule:
    base_fee: int = 21000
    calldata_byte: int = 16
    internal_transfer: int = 7500
    hash_op: int = 222
    digest_update: int = 5000
    sig_verify: int = 6600
    addr_bytes: int = 20
    value_bytes_m2: int = 32
    payload_bytes_m3: int = 36
    sig_bytes: int = 65
    digest_bytes: int = 32
    base_tree_depth: int = 20
    name: str = "custom"

    def __post_init__(self):
        for f in fields(self):
            if f.name == "name":
                continue
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ValueError(f"schedule field {f.name!r} must be a positive integer, got {value!r}")

    # per-request constants that appear in the published formulas
    @property
    def m2_per_write(self) -> int:
        return self.calldata_byte * (self.addr_bytes + self.value_bytes_m2) + self.internal_transfer

    @property
    def m3_per_write(self) -> int:
        return self.calldata_byte * (self.addr_bytes + self.payload_bytes_m3) + self.hash_op

    @property
    def m3_per_upload(self) -> int:
        return self.base_fee + self.calldata_byte * self.digest_bytes + self.digest_update

    @property
    def m3_per_read(self) -> int:
        """Settlement cost of one Tx2 excluding the proof terms."""
        settle_bytes = self.addr_bytes + self.payload_bytes_m3 + self.sig_bytes
        return self.calldata_byte * settle_bytes + self.sig_verify + self.internal_transfer

    def proof_gas(self, commits: Number) -> Fraction:
        """Calldata plus hashing for a settlement proof spanning ``commits`` sealed blocks."""
        b = Fraction(commits)
        depth = self.base_tree_depth + b
        return self.calldata_byte * depth * self.digest_bytes * b + depth * self.hash_op


PRESETS: dict[str, GasSchedule] = {
    "istanbul": GasSchedule(calldata_byte=16, name="istanbul"),
    "legacy": GasSchedule(calldata_byte=68, name="legacy"),
}

_SCHEDULE_FIELDS = {f.name for f in fields(GasSchedule)} - {"name"}


def get_preset(name: str) -> GasSchedule:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_schedule(path: Union[str, Path]) -> GasSchedule:
    """Load a schedule from JSON or ``key = value`` lines.

    An optional ``base`` key names the preset that supplies unspecified
    fields (default ``istanbul``); ``name`` labels the result and may not be
    one of the reserved preset names.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: expected a JSON object")
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(.+)", line)
            if m is None:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            raw[m.group(1)] = m.group(2).strip().strip('"').strip("'")

    base = get_preset(str(raw.pop("base", "istanbul")))
    name = str(raw.pop("name", path.stem))
    if name in PRESETS:
        raise ValueError(f"{path}: schedule name {name!r} is reserved for a built-in preset")
    unknown = set(raw) - _SCHEDULE_FIELDS
    if unknown:
        raise ValueError(f"{path}: unknown schedule fields {sorted(unknown)}")
    values = {}
    for key, value in raw.items():
        try:
            values[key] = int(value)
        except (TypeError, ValueError):
            raise ValueError(f"{path}: field {key!r} must be an integer, got {value!r}") from None
    return replace(base, name=name, **values)


def as_fraction(value: Number) -> Fraction:
    """Exact conversion; decimal strings such as ``"12.30"`` stay exact."""
    if isinstance(value, float):
        raise TypeError("pass decimal strings or Fractions, not binary floats")
    return Fraction(value)


@dataclass(frozen=True)
class WorkloadShape:
    """Transfer counts for one cost evaluation.

    ``nw``/``nr`` count Tx1 (institution to receiver) and Tx2 (receiver
    onward) transfers over the ``l`` blocks; ``k`` is the digest upload
    interval, so ``l / k`` batch transactions are issued.
    """

    nw: Fraction
    nr: Fraction = Fraction(0)
    l: int = 1
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "nw", as_fraction(self.nw))
        object.__setattr__(self, "nr", as_fraction(self.nr))
        if self.nw < 0 or self.nr < 0:
            raise ValueError("nw and nr must be non-negative")
        if int(self.l) != self.l or self.l < 1:
            raise ValueError("l must be a positive integer")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")

    @property
    def transfers(self) -> Fraction:
        return self.nw + self.nr

    def uploads(self, ceil: bool = False) -> Fraction:
        if ceil:
            return Fraction(math.ceil(Fraction(self.l, self.k)))
        return Fraction(self.l, self.k)


@dataclass(frozen=True)
class CostReport:
    mode: str
    total: Fraction
    amortized: Fraction
    normalized: Fraction

    @property
    def amortized_gas(self) -> int:
        return math.floor(self.amortized)

    @property
    def total_gas(self) -> int:
        return math.floor(self.total)

    @property
    def savings_pct(self) -> Fraction:
        """Percentage saved against the baseline; negative means extra cost."""
        return (1 - self.normalized) * 100


def _report(mode: str, total: Fraction, shape: WorkloadShape, s: GasSchedule) -> CostReport:
    if shape.transfers == 0:
        raise DegenerateWorkloadError("workload has no transfers (nw + nr = 0)")
    amortized = total / shape.transfers
    return CostReport(mode, total, amortized, amortized / s.base_fee)


def cost_m1(shape: WorkloadShape, s: GasSchedule, *, ceil_uploads: bool = False) -> CostReport:
    total = Fraction(s.base_fee) * shape.transfers
    return _report("M1", total, shape, s)


def cost_m2(shape: WorkloadShape, s: GasSchedule, *, ceil_uploads: bool = False) -> CostReport:
    batches = shape.uploads(ceil_uploads)
    total = s.base_fee * batches + shape.nw * s.m2_per_write + s.base_fee * shape.nr
    return _report("M2", total, shape, s)


def cost_m3(shape: WorkloadShape, s: GasSchedule, *, ceil_uploads: bool = False) -> CostReport:
    b = shape.uploads(ceil_uploads)
    total = (
        s.m3_per_upload * b
        + shape.nw * s.m3_per_write
        + shape.nr * (s.m3_per_read + s.proof_gas(b))
    )
    return _report("M3", total, shape, s)


COST_FUNCTIONS = {"M1": cost_m1, "M2": cost_m2, "M3": cost_m3}


def cost(mode: str, shape: WorkloadShape, s: GasSchedule, *, ceil_uploads: bool = False) -> CostReport:
    try:
        fn = COST_FUNCTIONS[mode.upper()]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}") from None
    return fn(shape, s, ceil_uploads=ceil_uploads)


@dataclass(frozen=True)
class WriteIntensiveCondition:
    """``nr < (slope * nw - intercept) / denominator`` and ``nw > nw_min``."""

    slope: Fraction
    intercept: Fraction
    denominator: Fraction
    nw_min: Fraction

    def integer_coefficients(self) -> tuple[int, int, int]:
        scale = math.lcm(self.slope.denominator, self.intercept.denominator, self.denominator.denominator)
        return (
            int(self.slope * scale),
            int(self.intercept * scale),
            int(self.denominator * scale),
        )


def _reduce(slope: Fraction, intercept: Fraction, denominator: Fraction) -> tuple[Fraction, Fraction, Fraction]:
    scale = math.lcm(slope.denominator, intercept.denominator, denominator.denominator)
    ints = [int(x * scale) for x in (slope, intercept, denominator)]
    g = math.gcd(*ints) or 1
    return tuple(Fraction(x, g) for x in ints)  # type: ignore[return-value]


def derive_write_intensive(s: GasSchedule, l: int = 1) -> WriteIntensiveCondition:
    """Solve ``cost_m3(...).amortized < base_fee`` for nr, with one upload per block.

    The M3 total is affine in (nw, nr), so its coefficients are recovered
    exactly by probing ``cost_m3`` itself rather than restating the formula.
    """
    def total(nw: int, nr: int) -> Fraction:
        return cost_m3(WorkloadShape(nw, nr, l, 1), s).total

    per_write = total(2, 0) - total(1, 0)
    fixed = total(1, 0) - per_write
    per_read = total(1, 1) - total(1, 0)

    # fixed + per_write*nw + per_read*nr < base*(nw + nr)
    slope = s.base_fee - per_write
    denominator = per_read - s.base_fee
    if slope <= 0 or denominator <= 0:
        raise ValueError("schedule admits no write-intensive region of the form nr < (a*nw - b)/c")
    slope, intercept, denominator = _reduce(slope, fixed, denominator)
    return WriteIntensiveCondition(slope, intercept, denominator, intercept / slope)


def evaluate_condition(c: WriteIntensiveCondition, nw: Number, nr: Number) -> bool:
    nw = as_fraction(nw)
    nr = as_fraction(nr)
    if nw < 0 or nr < 0:
        raise ValueError("nw and nr must be non-negative")
    return nw > c.nw_min and nr * c.denominator < c.slope * nw - c.intercept


def evaluate_condition_grid(c: WriteIntensiveCondition, nw_units, nr_units, scale: int) -> np.ndarray:
    """Vectorized exact form of :func:`evaluate_condition`.

    ``nw_units``/``nr_units`` are integer arrays; the evaluated point is
    ``(nw_units / scale, nr_units / scale)``.
    """
    a, b, d = c.integer_coefficients()
    nw_units = np.asarray(nw_units, dtype=np.int64)
    nr_units = np.asarray(nr_units, dtype=np.int64)
    rhs = a * nw_units - b * scale
    # nw > b/a  <=>  a*nw_units > b*scale
    return (rhs > 0) & (nr_units * d < rhs)
