"""Block-by-block execution of a transfer trace under M1, M2 or M3.

The simulator charges gas item by item as the dispatcher / settlement
contract would, and so serves as an executable oracle for the closed forms
in :mod:`offchain_gas.gas_model`.

Upload timing in the batched modes is delegated to an *upload decider*: a
callable ``decider(nw, nr, age) -> bool`` consulted at the end of every
block, where ``nw``/``nr`` count Tx1 entries and Tx2 settlements waiting
since the last upload and ``age`` is the number of blocks since then.
Anything still pending at the end of the span is flushed in one last upload.
"""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import groupby
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .auth_state import (
    GAS_COMPONENTS,
    AccountId,
    DeltaEntry,
    KeyedSigner,
    OnChainVerifier,
    StateError,
    VerificationError,
    init_state,
    leaf_index,
    sign_settlement,
)
from .gas_model import CostReport, GasSchedule

TX1 = "tx1"
TX2 = "tx2"

UploadDecider = Callable[[int, int, int], bool]


class SimulationError(Exception):
    def __init__(self, message: str, request: Optional["TransferRequest"] = None):
        super().__init__(message)
        self.request = request


@dataclass(frozen=True)
class TransferRequest:
    sender: AccountId
    receiver: AccountId
    value: int
    block: int
    kind: str = TX1
    index: int = 0

    def __post_init__(self):
        for name in ("sender", "receiver"):
            value = getattr(self, name)
            if not isinstance(value, AccountId):
                object.__setattr__(self, name, AccountId(value))
        if self.value <= 0:
            raise ValueError("transfer value must be positive")
        if self.block < 0:
            raise ValueError("block height must be non-negative")
        if self.kind not in (TX1, TX2):
            raise ValueError(f"kind must be {TX1!r} or {TX2!r}")

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "index": self.index,
            "kind": self.kind,
            "sender": str(self.sender),
            "receiver": str(self.receiver),
            "value": str(self.value),
        }


@dataclass
class BlockGas:
    block: int
    components: dict[str, int] = field(default_factory=lambda: dict.fromkeys(GAS_COMPONENTS, 0))

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def add(self, items: Mapping[str, int]) -> None:
        for key, value in items.items():
            self.components[key] += value


@dataclass
class SimulationReport:
    mode: str
    schedule: str
    per_block: list[BlockGas]
    transfer_count: int
    per_transfer_delay: list[tuple[TransferRequest, int]]
    uploads: list[int] = field(default_factory=list)

    @property
    def total_gas(self) -> int:
        return sum(b.total for b in self.per_block)

    @property
    def components(self) -> dict[str, int]:
        out = dict.fromkeys(GAS_COMPONENTS, 0)
        for b in self.per_block:
            for key, value in b.components.items():
                out[key] += value
        return out

    @property
    def amortized(self) -> Fraction:
        return Fraction(self.total_gas, self.transfer_count) if self.transfer_count else Fraction(0)

    @property
    def delays(self) -> list[int]:
        return [d for _, d in self.per_transfer_delay]

    @property
    def average_delay(self) -> Fraction:
        delays = self.delays
        return Fraction(sum(delays), len(delays)) if delays else Fraction(0)

    @property
    def max_delay(self) -> int:
        return max(self.delays, default=0)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "schedule": self.schedule,
            "total_gas": self.total_gas,
            "transfer_count": self.transfer_count,
            "components": self.components,
            "uploads": list(self.uploads),
            "average_delay": f"{float(self.average_delay):.2f}",
            "max_delay": self.max_delay,
            "per_block": [
                {"block": b.block, **b.components, "total": b.total} for b in self.per_block
            ],
            "per_transfer_delay": [
                {**req.to_dict(), "delay": d} for req, d in self.per_transfer_delay
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def every_k(k: int) -> UploadDecider:
    """Upload on a fixed schedule, empty windows included."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return lambda nw, nr, age: age >= k


def _check_sorted(trace: Sequence[TransferRequest]) -> None:
    for prev, cur in zip(trace, trace[1:]):
        if cur.block < prev.block:
            raise SimulationError(f"trace is not sorted by block at height {cur.block}", cur)


def run(
    trace: Sequence[TransferRequest],
    mode: str,
    s: GasSchedule,
    upload_decider: Optional[UploadDecider] = None,
    *,
    span: Optional[tuple[int, int]] = None,
    initial_balances: Optional[Mapping[bytes, int]] = None,
    checkpoint: bool = False,
    signer: Optional[KeyedSigner] = None,
) -> SimulationReport:
    """Execute ``trace`` and return an itemized gas report.

    ``span`` fixes the first and last block simulated (defaults to the
    trace's own range). ``initial_balances`` seeds off-chain base balances in
    M3. With ``checkpoint`` the off-chain tree is rebuilt after every upload,
    so each settlement proof covers a single commit.
    """
    trace = list(trace)
    _check_sorted(trace)
    mode = mode.upper()
    if mode not in ("M1", "M2", "M3"):
        raise ValueError(f"unknown mode {mode!r}")
    if span is None:
        span = (trace[0].block, trace[-1].block) if trace else (0, -1)
    start, end = span
    if trace and (trace[0].block < start or trace[-1].block > end):
        raise SimulationError("trace extends beyond the simulated span")
    decider = upload_decider or every_k(1)

    by_block = {b: list(reqs) for b, reqs in groupby(trace, key=lambda r: r.block)}
    per_block = [BlockGas(b) for b in range(start, end + 1)]
    report = SimulationReport(mode, s.name, per_block, len(trace), [])

    if mode == "M1":
        for req in trace:
            per_block[req.block - start].add({"base_fees": s.base_fee})
            if req.kind == TX2:
                report.per_transfer_delay.append((req, 0))
        return report
    if mode == "M2":
        _run_m2(by_block, per_block, start, end, s, decider, report)
        return report
    _run_m3(by_block, per_block, start, end, s, decider, report,
            initial_balances or {}, checkpoint, signer or KeyedSigner())
    return report


def _run_m2(by_block, per_block, start, end, s, decider, report):
    pending = 0
    last_upload = start - 1
    for b in range(start, end + 1):
        gas = per_block[b - start]
        for req in by_block.get(b, ()):
            if req.kind == TX1:
                pending += 1
            else:
                gas.add({"base_fees": s.base_fee})
                report.per_transfer_delay.append((req, 0))
        if decider(pending, 0, b - last_upload) or (b == end and pending):
            gas.add({
                "base_fees": s.base_fee,
                "calldata": pending * s.calldata_byte * (s.addr_bytes + s.value_bytes_m2),
                "internal_transfers": pending * s.internal_transfer,
            })
            report.uploads.append(b)
            pending = 0
            last_upload = b


def _run_m3(by_block, per_block, start, end, s, decider, report, initial_balances, checkpoint, signer):
    state = init_state(initial_balances.items(), depth=s.base_tree_depth)
    verifier = OnChainVerifier.for_state(state, s, signer)
    waiting: list = []
    entries = 0
    last_upload = start - 1
    for b in range(start, end + 1):
        for req in by_block.get(b, ()):
            if req.kind == TX1:
                state.append_delta(DeltaEntry(req.receiver, req.value, req.block))
                entries += 1
            else:
                waiting.append(req)
        if not (decider(entries, len(waiting), b - last_upload) or (b == end and (entries or waiting))):
            continue

        before = verifier.gas_meter.snapshot()
        per_block[b - start].add({"base_fees": s.base_fee})
        verifier.verify_commit(state.seal_block(through=b))
        for req in waiting:
            try:
                proof = state.prove_account(req.sender)
                proof = sign_settlement(proof, req, signer, verifier.nonces.get(req.sender, 0))
                verifier.settle_account(proof, req)
            except (StateError, VerificationError) as exc:
                raise SimulationError(f"settlement failed for {req.sender} at block {req.block}: {exc}", req) from exc
            report.per_transfer_delay.append((req, b - req.block))
        after = verifier.gas_meter.snapshot()
        per_block[b - start].add({k: after[k] - before[k] for k in after})
        if checkpoint:
            verifier.rebase(state.checkpoint(verifier.claimed))
        report.uploads.append(b)
        waiting = []
        entries = 0
        last_upload = b


@dataclass(frozen=True)
class OracleComparison:
    difference: Fraction
    tolerance: Fraction
    passed: bool


def oracle_compare(report: SimulationReport, expected: CostReport, tolerance=0) -> OracleComparison:
    diff = Fraction(report.total_gas) - expected.total
    tol = Fraction(tolerance)
    return OracleComparison(diff, tol, abs(diff) <= tol)


def distinct_slot_accounts(rng: random.Random, n: int, depth: int = 20,
                           taken: Optional[set[int]] = None) -> list[AccountId]:
    """Random addresses that never share a base-tree leaf slot."""
    taken = set() if taken is None else taken
    if len(taken) + n > 1 << depth:
        raise ValueError("not enough leaf slots")
    out = []
    while len(out) < n:
        account = AccountId(rng.getrandbits(160).to_bytes(20, "big"))
        slot = leaf_index(account, depth)
        if slot in taken:
            continue
        taken.add(slot)
        out.append(account)
    return out


def shape_trace(nw: int, nr: int, l: int, seed: int = 0) -> list[TransferRequest]:
    """Integer shape as a concrete trace spanning blocks ``0 .. l-1``.

    The ``nw`` Tx1 transfers are spread evenly over the blocks; the ``nr``
    Tx2 transfers all arrive in the last block, so every settlement proof
    spans all commits of the span, as the closed form assumes.
    """
    if nw < 1 and nr > 0:
        raise ValueError("Tx2 transfers need at least one funded receiver")
    rng = random.Random(seed)
    institution, *accounts = distinct_slot_accounts(rng, 1 + nw + max(nr, 0))
    receivers, others = accounts[:nw], accounts[nw:]
    trace = []
    for i, receiver in enumerate(receivers):
        trace.append(TransferRequest(institution, receiver, 10**18, (i * l) // nw, TX1, i))
    trace.sort(key=lambda r: r.block)
    for j in range(nr):
        trace.append(TransferRequest(receivers[j % nw], others[j], 1 + j, l - 1, TX2, nw + j))
    return trace
