"""Transfer traces: ingestion, institutional senders, W1 classification, statistics.

Trace files are comma-separated with a header row::

    block_number,tx_index,from,to,value_wei

Addresses are 40 hex characters with an optional ``0x`` prefix.
"""

from __future__ import annotations

import csv
import io
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

from .auth_state import AccountId
from .chain_sim import TX1, TX2, TransferRequest, distinct_slot_accounts

TRACE_COLUMNS = ("block_number", "tx_index", "from", "to", "value_wei")
WEI_PER_ETHER = 10**18


class TraceFormatError(ValueError):
    """Carries every malformed row as ``(row_number, message)``; row 1 is the header."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        preview = "; ".join(f"row {n}: {msg}" for n, msg in errors[:5])
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        super().__init__(f"{len(errors)} malformed row(s): {preview}{more}")


class InfeasibleWorkloadError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class RawTransfer:
    block: int
    tx_index: int
    sender: AccountId
    receiver: AccountId
    value: int


class Trace(Sequence[RawTransfer]):
    """Transfers sorted by ``(block, tx_index)`` with unique keys."""

    def __init__(self, transfers: Iterable[RawTransfer] = ()):
        items = sorted(transfers, key=lambda t: (t.block, t.tx_index))
        for prev, cur in zip(items, items[1:]):
            if (prev.block, prev.tx_index) == (cur.block, cur.tx_index):
                raise ValueError(f"duplicate transfer key (block {cur.block}, index {cur.tx_index})")
        self._items = tuple(items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[RawTransfer]:
        return iter(self._items)

    def __eq__(self, other) -> bool:
        return isinstance(other, Trace) and self._items == other._items

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for t in self._items:
            writer.writerow([t.block, t.tx_index, t.sender.hex_str, t.receiver.hex_str, t.value])
        return out.getvalue()


def _parse_uint(text: str, column: str) -> int:
    text = text.strip()
    if not text.isdigit():
        raise ValueError(f"{column} must be a non-negative decimal integer, got {text!r}")
    return int(text)


def ingest_trace(source: Union[str, Path, io.TextIOBase]) -> Trace:
    """Parse trace CSV text, a path, or an open text stream."""
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    if not text.strip():
        return Trace()

    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if tuple(header) != TRACE_COLUMNS:
        raise TraceFormatError([(1, f"header must be {','.join(TRACE_COLUMNS)}")])

    rows, errors, seen = [], [], {}
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(TRACE_COLUMNS):
            errors.append((rownum, f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}"))
            continue
        try:
            block = _parse_uint(row[0], "block_number")
            index = _parse_uint(row[1], "tx_index")
            sender = AccountId(row[2].strip())
            receiver = AccountId(row[3].strip())
            value = _parse_uint(row[4], "value_wei")
        except ValueError as exc:
            errors.append((rownum, str(exc)))
            continue
        key = (block, index)
        if key in seen:
            errors.append((rownum, f"duplicate (block, tx_index) first seen on row {seen[key]}"))
            continue
        seen[key] = rownum
        rows.append(RawTransfer(block, index, sender, receiver, value))
    if errors:
        raise TraceFormatError(errors)
    return Trace(rows)


@dataclass(frozen=True)
class SenderStats:
    sender: AccountId
    tx_count: int
    amount_pct: Fraction
    total_value: int
    value_pct: Fraction

    @property
    def value_ether(self) -> Fraction:
        return Fraction(self.total_value, WEI_PER_ETHER)


def discover_institutional(trace: Trace, top_n: Optional[int] = None) -> list[SenderStats]:
    """Rank senders by transfer count, then total value, then address."""
    if not len(trace):
        return []
    counts: Counter = Counter()
    values: Counter = Counter()
    for t in trace:
        counts[t.sender] += 1
        values[t.sender] += t.value
    total_count = len(trace)
    total_value = sum(values.values())
    ranked = sorted(counts, key=lambda a: (-counts[a], -values[a], bytes(a)))
    if top_n is not None:
        ranked = ranked[:top_n]
    return [
        SenderStats(
            sender=a,
            tx_count=counts[a],
            amount_pct=Fraction(100 * counts[a], total_count),
            total_value=values[a],
            value_pct=Fraction(100 * values[a], total_value) if total_value else Fraction(0),
        )
        for a in ranked
    ]


@dataclass(frozen=True)
class W1Workload:
    institution: frozenset[AccountId]
    tx1: tuple[TransferRequest, ...]
    tx2: tuple[TransferRequest, ...]
    receivers: frozenset[AccountId]

    @property
    def requests(self) -> list[TransferRequest]:
        return sorted(self.tx1 + self.tx2, key=lambda r: (r.block, r.index))

    @property
    def span(self) -> Optional[tuple[int, int]]:
        blocks = [r.block for r in self.tx1] + [r.block for r in self.tx2]
        return (min(blocks), max(blocks)) if blocks else None

    def restrict(self, accounts: Iterable[AccountId]) -> "W1Workload":
        keep = frozenset(accounts)
        return W1Workload(
            self.institution,
            tuple(r for r in self.tx1 if r.receiver in keep),
            tuple(r for r in self.tx2 if r.sender in keep),
            self.receivers & keep,
        )


def _as_request(t: RawTransfer, kind: str) -> TransferRequest:
    return TransferRequest(t.sender, t.receiver, t.value, t.block, kind, t.tx_index)


def classify_w1(trace: Trace, institution: Iterable[Union[str, bytes]]) -> W1Workload:
    inst = frozenset(AccountId(a) for a in institution)
    if not inst:
        raise ValueError("institution must contain at least one address")
    first_funded: dict[AccountId, tuple[int, int]] = {}
    tx1, tx2 = [], []
    for t in trace:
        if t.value <= 0:
            continue
        if t.sender in inst:
            tx1.append(_as_request(t, TX1))
            first_funded.setdefault(t.receiver, (t.block, t.tx_index))
        elif t.sender in first_funded and (t.block, t.tx_index) > first_funded[t.sender]:
            tx2.append(_as_request(t, TX2))
    return W1Workload(inst, tuple(tx1), tuple(tx2), frozenset(first_funded))


def window_count(span: tuple[int, int], k: int) -> int:
    return math.ceil((span[1] - span[0] + 1) / k)


def window_stats(w: W1Workload, k: int = 1) -> tuple[Fraction, Fraction]:
    """Mean Tx1 and Tx2 counts per window of ``k`` blocks over the workload span."""
    if k < 1:
        raise ValueError("window size must be >= 1")
    span = w.span
    if span is None:
        return Fraction(0), Fraction(0)
    windows = window_count(span, k)
    return Fraction(len(w.tx1), windows), Fraction(len(w.tx2), windows)


def per_window_counts(w: W1Workload, k: int = 1) -> list[tuple[int, int]]:
    span = w.span
    if span is None:
        return []
    counts = [[0, 0] for _ in range(window_count(span, k))]
    for r in w.tx1:
        counts[(r.block - span[0]) // k][0] += 1
    for r in w.tx2:
        counts[(r.block - span[0]) // k][1] += 1
    return [tuple(c) for c in counts]


def account_counts(w: W1Workload) -> dict[AccountId, tuple[int, int]]:
    """Per receiver: (Tx1 transfers received, Tx2 transfers sent)."""
    nw: Counter = Counter(r.receiver for r in w.tx1)
    nr: Counter = Counter(r.sender for r in w.tx2)
    return {a: (nw[a], nr[a]) for a in w.receivers}


def funding_shortfall(w: W1Workload) -> dict[AccountId, int]:
    """Smallest starting balance per receiver that keeps every Tx2 covered.

    Only receipts at or before a Tx2's position count towards it, which is
    what any upload schedule guarantees.
    """
    balance: defaultdict[AccountId, int] = defaultdict(int)
    need: dict[AccountId, int] = {}
    for r in w.requests:
        if r.kind == TX1:
            balance[r.receiver] += r.value
        else:
            balance[r.sender] -= r.value
            if balance[r.sender] < 0:
                need[r.sender] = max(need.get(r.sender, 0), -balance[r.sender])
    return need


SYNTH_INSTITUTION = AccountId("0x" + "a0" * 20)


def synth_w1(nw: int, nr: int, l: int, seed: int = 0,
             institution: AccountId = SYNTH_INSTITUTION) -> Trace:
    """Constant W1 trace: per block ``nw`` fresh receivers funded, then ``nr`` onward transfers.

    Tx2 senders are drawn from receivers funded at an earlier position and
    never spend more than they received.  Generated addresses occupy
    distinct base-tree leaf slots.
    """
    if nw < 0 or nr < 0 or l < 1:
        raise ValueError("need nw >= 0, nr >= 0, l >= 1")
    if nr > 0 and nw == 0:
        raise InfeasibleWorkloadError("Tx2 transfers need receivers funded in the first block")
    return synth_blocks([(nw, nr)] * l, seed, institution)


def synth_blocks(counts: Sequence[tuple[int, int]], seed: int = 0,
                 institution: AccountId = SYNTH_INSTITUTION) -> Trace:
    """Like :func:`synth_w1` but with per-block ``(nw, nr)`` given explicitly."""
    rng = random.Random(seed)
    taken: set[int] = set()
    remaining: dict[AccountId, int] = {}
    funded: list[AccountId] = []
    transfers = []
    for block, (nw, nr) in enumerate(counts):
        index = 0
        for receiver in distinct_slot_accounts(rng, nw, taken=taken):
            value = rng.randint(10**15, 10**18)
            transfers.append(RawTransfer(block, index, institution, receiver, value))
            remaining[receiver] = value
            funded.append(receiver)
            index += 1
        for target in distinct_slot_accounts(rng, nr, taken=taken):
            candidates = [a for a in funded if remaining[a] >= 2]
            if not candidates:
                raise InfeasibleWorkloadError(f"no funded receiver can pay in block {block}")
            sender = rng.choice(candidates)
            value = rng.randint(1, remaining[sender] // 2)
            remaining[sender] -= value
            transfers.append(RawTransfer(block, index, sender, target, value))
            index += 1
    return Trace(transfers)
