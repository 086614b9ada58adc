"""Upload policies for M3: when to push the off-chain state on-chain.

A batch that carries ``nw`` pending Tx1 entries and ``nr`` pending
settlements in a single upload is cheaper than the per-transfer baseline
exactly when the write-intensive condition holds for ``(nw, nr)``.  The
policies use that test on the totals accumulated since the last upload:

* ``EveryK(k)`` uploads every ``k`` blocks.
* ``MaxDelay(k)`` uploads as soon as the accumulated batch beats the
  baseline, and unconditionally once ``k`` blocks have passed.
* ``OptimizeCost`` uploads only when a settlement is waiting and the batch
  beats the baseline; there is no age bound.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional

from .chain_sim import SimulationReport, UploadDecider, run
from .gas_model import (
    DegenerateWorkloadError,
    GasSchedule,
    WriteIntensiveCondition,
    derive_write_intensive,
    evaluate_condition,
)
from .workload import W1Workload, account_counts, funding_shortfall

OPTIMIZE_COST = "optimize_cost"
MAX_DELAY = "max_delay"
EVERY_K = "every_k"


@dataclass(frozen=True)
class Policy:
    kind: str
    schedule: GasSchedule
    k: int = 0

    def __post_init__(self):
        if self.kind == MAX_DELAY and self.k < 0:
            raise ValueError("MaxDelay needs k >= 0")
        if self.kind == EVERY_K and self.k < 1:
            raise ValueError("EveryK needs k >= 1")
        if self.kind not in (OPTIMIZE_COST, MAX_DELAY, EVERY_K):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == OPTIMIZE_COST:
            return "OptimizeCost"
        if self.kind == MAX_DELAY:
            return f"Max_{self.k}"
        return f"Every_{self.k}"

    @property
    def condition(self) -> WriteIntensiveCondition:
        return _condition(self.schedule)


@lru_cache(maxsize=None)
def _condition(s: GasSchedule) -> WriteIntensiveCondition:
    return derive_write_intensive(s, l=1)


def optimize_cost(s: GasSchedule) -> Policy:
    return Policy(OPTIMIZE_COST, s)


def max_delay(k: int, s: GasSchedule) -> Policy:
    return Policy(MAX_DELAY, s, k)


def every(k: int, s: GasSchedule) -> Policy:
    return Policy(EVERY_K, s, k)


def parse_policy(text: str, s: GasSchedule) -> Policy:
    """``optimize``/``OptimizeCost``, ``max5``/``Max_5``, ``every1``/``Every_1``."""
    t = text.strip().lower().replace("-", "_")
    if t in ("optimize", "optimizecost", "optimize_cost"):
        return optimize_cost(s)
    m = re.fullmatch(r"(max|every)_?(\d+)", t)
    if m is None:
        raise ValueError(f"unknown policy {text!r}; use optimize, max<K> or every<K>")
    k = int(m.group(2))
    return max_delay(k, s) if m.group(1) == "max" else every(k, s)


def decide_upload(window: tuple[int, int], age: int, p: Policy) -> bool:
    nw, nr = window
    if age < 0:
        raise ValueError("age must be non-negative")
    if p.kind == EVERY_K:
        return age >= p.k
    if nw == 0 and nr == 0:
        return False
    saves = evaluate_condition(p.condition, nw, nr)
    if p.kind == MAX_DELAY:
        return saves or age >= p.k
    return nr > 0 and saves


def decider_for(p: Policy) -> UploadDecider:
    return lambda nw, nr, age: decide_upload((nw, nr), age, p)


@dataclass(frozen=True)
class PolicyOutcome:
    policy: str
    schedule: str
    normalized_cost: Fraction
    average_delay: Fraction
    max_delay: int
    write_intensive_fraction: Fraction
    total_gas: int
    transfers: int
    uploads: int

    def to_row(self) -> dict:
        return {
            "policy": self.policy,
            "preset": self.schedule,
            "normalized_cost": f"{float(self.normalized_cost):.4f}",
            "average_delay": f"{float(self.average_delay):.2f}",
            "max_delay": self.max_delay,
            "write_intensive_fraction": f"{float(self.write_intensive_fraction):.4f}",
            "total_gas": self.total_gas,
            "transfers": self.transfers,
            "uploads": self.uploads,
        }


def write_intensive_fraction(w: W1Workload, s: GasSchedule) -> Fraction:
    """Share of receivers whose whole-history (nw, nr) beats the baseline in one batch."""
    counts = account_counts(w)
    if not counts:
        return Fraction(0)
    cond = _condition(s)
    hits = sum(1 for nw, nr in counts.values() if evaluate_condition(cond, nw, nr))
    return Fraction(hits, len(counts))


def simulate_policy(w: W1Workload, p: Policy, s: Optional[GasSchedule] = None) -> SimulationReport:
    s = s or p.schedule
    requests = w.requests
    if not requests:
        raise DegenerateWorkloadError("workload has no transfers")
    return run(
        requests, "M3", s, decider_for(p),
        span=w.span, initial_balances=funding_shortfall(w), checkpoint=True,
    )


def evaluate_policy(w: W1Workload, p: Policy, s: Optional[GasSchedule] = None) -> PolicyOutcome:
    s = s or p.schedule
    report = simulate_policy(w, p, s)
    return PolicyOutcome(
        policy=p.name,
        schedule=s.name,
        normalized_cost=Fraction(report.total_gas, report.transfer_count * s.base_fee),
        average_delay=report.average_delay,
        max_delay=report.max_delay,
        write_intensive_fraction=write_intensive_fraction(w, s),
        total_gas=report.total_gas,
        transfers=report.transfer_count,
        uploads=len(report.uploads),
    )


def select_write_intensive(w: W1Workload, fraction, s: Optional[GasSchedule] = None) -> W1Workload:
    """Keep the top ``fraction`` of receivers by Tx1/Tx2 ratio.

    Receivers that never send rank first; ties fall back to Tx1 count, then
    address.  ``s`` is accepted for symmetry with the other entry points.
    """
    fraction = Fraction(fraction)
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    counts = account_counts(w)

    def key(item):
        account, (nw, nr) = item
        ratio = Fraction(nw, nr) if nr else Fraction(0)
        return (nr != 0, -ratio, -nw, bytes(account))

    ranked = sorted(counts.items(), key=key)
    keep = math.ceil(fraction * len(ranked))
    return w.restrict(a for a, _ in ranked[:keep])


def outcomes_json(outcomes: Iterable[PolicyOutcome]) -> str:
    return json.dumps([o.to_row() for o in outcomes], indent=2, sort_keys=True)
