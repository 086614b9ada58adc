"""Published workload statistics and a synthetic top-sender trace.

The original day of chain data is not redistributed; what survives are the
per-window Tx1/Tx2 means for three institutions, plus the top-sender table,
from which a trace with the same proportions is rebuilt here.
"""

from __future__ import annotations

import random
from fractions import Fraction

from .auth_state import AccountId
from .hashing import keccak256
from .workload import WEI_PER_ETHER, RawTransfer, Trace

# institution -> preset -> window size k -> (nw, nr) per window
PUBLISHED_STATS: dict[str, dict[str, dict[int, tuple[Fraction, Fraction]]]] = {
    "coinbase": {
        "istanbul": {1: (Fraction("12.30"), Fraction("34.76")), 5: (Fraction("59.64"), Fraction("168.60"))},
        "legacy": {1: (Fraction("12.30"), Fraction("25.62"))},
    },
    "ethermine": {
        "istanbul": {1: (Fraction("4.65"), Fraction("9.00")), 5: (Fraction("16.75"), Fraction("32.46"))},
        "legacy": {1: (Fraction("4.65"), Fraction("4.88"))},
    },
    "cryptocom": {
        "istanbul": {1: (Fraction("1.49"), Fraction("10.89")), 5: (Fraction("6.70"), Fraction("48.94"))},
        "legacy": {1: (Fraction("1.49"), Fraction("10.89"))},
    },
}

# label, address prefix, share of all transfers (%), value sent (Ether)
TOP_SENDERS = (
    ("Ethermine", "ea674f", "4.81", 5306),
    ("Coinbase 3", "ddfabc", "2.08", 18816),
    ("Coinbase 4", "3cd751", "2.08", 19127),
    ("Coinbase 5", "b5d85c", "2.05", 24248),
    ("Coinbase 6", "eb2629", "2.05", 20667),
    ("F2Pool Old", "829bd8", "1.13", 2440),
    ("Crypto.com", "46340b", "0.92", 5732),
    ("FTX Exchange 2", "c098b2", "0.81", 24320),
    ("Hiveon: Spreader 2", "3c1618", "0.78", 680),
    ("Hiveon: Spreader", "e7e6c8", "0.76", 672),
)


def published_stats(institution: str, preset: str) -> dict[int, tuple[Fraction, Fraction]]:
    try:
        return PUBLISHED_STATS[institution][preset]
    except KeyError:
        raise KeyError(f"no published statistics for {institution!r} under preset {preset!r}") from None


def _labelled_address(prefix: str, label: str) -> AccountId:
    tail = keccak256(label.encode()).hex()
    return AccountId(prefix + tail[: 40 - len(prefix)])


def top_sender_trace(total: int = 10_000, blocks: int = 6_500, total_ether: int = 2_160_000,
                     seed: int = 2022) -> tuple[Trace, dict[AccountId, str]]:
    """Trace whose top-10 senders hold the published transfer shares.

    Every remaining transfer comes from a distinct one-off sender, so the
    listed senders keep their ranks. Returns the trace and an address to
    label map.
    """
    rng = random.Random(seed)
    labels: dict[AccountId, str] = {}
    plan: list[tuple[AccountId, int]] = []  # (sender, value in wei) per transfer
    listed_ether = 0
    for label, prefix, share, ether in TOP_SENDERS:
        sender = _labelled_address(prefix, label)
        labels[sender] = label
        count = int(Fraction(share) * total / 100)
        base, extra = divmod(ether * WEI_PER_ETHER, count)
        plan.extend((sender, base + (1 if i < extra else 0)) for i in range(count))
        listed_ether += ether

    filler = total - len(plan)
    base, extra = divmod((total_ether - listed_ether) * WEI_PER_ETHER, filler)
    for i in range(filler):
        plan.append((AccountId(rng.getrandbits(160).to_bytes(20, "big")), base + (1 if i < extra else 0)))

    rng.shuffle(plan)
    per_block: dict[int, int] = {}
    transfers = []
    for sender, value in plan:
        block = rng.randrange(blocks)
        index = per_block.get(block, 0)
        per_block[block] = index + 1
        receiver = AccountId(rng.getrandbits(160).to_bytes(20, "big"))
        transfers.append(RawTransfer(block, index, sender, receiver, value))
    return Trace(transfers), labels
