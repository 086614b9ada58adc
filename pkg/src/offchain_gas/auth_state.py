"""Authenticated off-chain account state and its on-chain verifier.

Receivers' balances live in a depth-``base_tree_depth`` sparse Merkle tree.
Incoming transfers are never written into that tree; each one is appended as
a delta entry, and sealing a block folds the block's entries into the
running digest::

    d_0 = previous digest
    d_j = keccak(d_{j-1} || keccak(entry_j))

so the on-chain contract pays one hash per entry to follow the digest, and a
settlement proof grows by one level (one commit) per sealed block.

Byte layouts (all integers big-endian)::

    entry       receiver(20) value(32) block(4)
    commit      digest(32) count(u32) entry*count
    proof       account(20) base_balance(32)
                depth(u32) [sibling(32) side(u8)]*depth
                commits(u32) [items(u32) [tag(u8) entry(56) | tag(u8) hash(32)]*items]*commits
                signature(65)

``side`` is 1 when the running node is the right child; ``tag`` 1 marks an
opened entry owned by the proving account, 0 a bare entry hash.
"""

from __future__ import annotations

import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Sequence, Union

from .gas_model import GasSchedule, PRESETS
from .hashing import ZERO32, keccak256

ENTRY_BYTES = 56
SIGNATURE_BYTES = 65
GAS_COMPONENTS = (
    "base_fees",
    "calldata",
    "internal_transfers",
    "hashes",
    "digest_updates",
    "signature_checks",
    "proof_bytes",
)


class StateError(Exception):
    pass


class LeafCollisionError(StateError):
    pass


class CapacityError(StateError):
    pass


class OutOfOrderError(StateError):
    pass


class AccountNotFound(StateError, KeyError):
    pass


class PendingEntriesError(StateError):
    pass


class VerificationError(Exception):
    """Base class for anything the on-chain verifier refuses."""


class CommitRejected(VerificationError):
    pass


class ProofRejected(VerificationError):
    pass


class SignatureRejected(VerificationError):
    pass


class Overdraft(VerificationError):
    pass


class DecodeError(ValueError):
    pass


class AccountId(bytes):
    """A 20-byte address."""

    def __new__(cls, value: Union[bytes, str]):
        if isinstance(value, str):
            text = value[2:] if value[:2].lower() == "0x" else value
            if len(text) != 40:
                raise ValueError(f"address must be 40 hex characters, got {len(text)}")
            value = bytes.fromhex(text)
        if len(value) != 20:
            raise ValueError(f"address must be 20 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @property
    def hex_str(self) -> str:
        return "0x" + self.hex()

    def __str__(self) -> str:
        return self.hex_str

    def __repr__(self) -> str:
        return f"AccountId({self.hex_str!r})"


@dataclass(frozen=True)
class DeltaEntry:
    receiver: AccountId
    value: int
    block: int

    def __post_init__(self):
        if not isinstance(self.receiver, AccountId):
            object.__setattr__(self, "receiver", AccountId(self.receiver))
        if self.value <= 0 or self.value >= 1 << 256:
            raise ValueError(f"delta value must be in (0, 2**256), got {self.value}")
        if not 0 <= self.block < 1 << 32:
            raise ValueError(f"block height out of range: {self.block}")

    def serialize(self) -> bytes:
        return bytes(self.receiver) + self.value.to_bytes(32, "big") + self.block.to_bytes(4, "big")

    @classmethod
    def deserialize(cls, data: bytes) -> "DeltaEntry":
        if len(data) != ENTRY_BYTES:
            raise DecodeError("entry must be 56 bytes")
        try:
            return cls(AccountId(data[:20]), int.from_bytes(data[20:52], "big"), int.from_bytes(data[52:], "big"))
        except ValueError as exc:
            raise DecodeError(str(exc)) from None

    @property
    def leaf(self) -> bytes:
        return keccak256(self.serialize())


def fold_entries(digest: bytes, entry_hashes: Iterable[bytes]) -> bytes:
    for h in entry_hashes:
        digest = keccak256(digest + h)
    return digest


def leaf_hash(account: bytes, balance: int) -> bytes:
    # zero-balance accounts are indistinguishable from empty slots
    if balance == 0:
        return ZERO32
    return keccak256(bytes(account) + balance.to_bytes(32, "big"))


def leaf_index(account: bytes, depth: int) -> int:
    return int.from_bytes(keccak256(bytes(account)), "big") >> (256 - depth)


@lru_cache(maxsize=None)
def empty_hashes(depth: int) -> tuple[bytes, ...]:
    out = [ZERO32]
    for _ in range(depth):
        out.append(keccak256(out[-1] + out[-1]))
    return tuple(out)


class SparseMerkleTree:
    """Complete binary tree of fixed depth; absent nodes take the empty-subtree hash."""

    def __init__(self, depth: int):
        self.depth = depth
        self._empty = empty_hashes(depth)
        self._levels: list[dict[int, bytes]] = [{} for _ in range(depth + 1)]

    def node(self, level: int, index: int) -> bytes:
        return self._levels[level].get(index, self._empty[level])

    @property
    def root(self) -> bytes:
        return self.node(self.depth, 0)

    def leaf(self, index: int) -> bytes:
        return self.node(0, index)

    def set_leaf(self, index: int, value: bytes) -> None:
        if value == ZERO32:
            self._levels[0].pop(index, None)
        else:
            self._levels[0][index] = value
        for level in range(self.depth):
            parent = index >> 1
            left = self.node(level, parent << 1)
            right = self.node(level, (parent << 1) | 1)
            h = keccak256(left + right)
            if h == self._empty[level + 1]:
                self._levels[level + 1].pop(parent, None)
            else:
                self._levels[level + 1][parent] = h
            index = parent

    def path(self, index: int) -> tuple[tuple[bytes, int], ...]:
        out = []
        for level in range(self.depth):
            out.append((self.node(level, index ^ 1), index & 1))
            index >>= 1
        return tuple(out)


def root_from_path(leaf: bytes, path: Sequence[tuple[bytes, int]]) -> bytes:
    node = leaf
    for sibling, side in path:
        node = keccak256(sibling + node) if side else keccak256(node + sibling)
    return node


@dataclass(frozen=True)
class BlockCommit:
    digest: bytes
    entries: tuple[DeltaEntry, ...]

    def serialize(self) -> bytes:
        return self.digest + struct.pack(">I", len(self.entries)) + b"".join(e.serialize() for e in self.entries)

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockCommit":
        if len(data) < 36:
            raise DecodeError("commit too short")
        (count,) = struct.unpack(">I", data[32:36])
        if len(data) != 36 + count * ENTRY_BYTES:
            raise DecodeError("commit length does not match entry count")
        entries = tuple(
            DeltaEntry.deserialize(data[36 + i * ENTRY_BYTES: 36 + (i + 1) * ENTRY_BYTES]) for i in range(count)
        )
        return cls(data[:32], entries)


CommitItem = Union[DeltaEntry, bytes]


@dataclass(frozen=True)
class SettlementProof:
    account: AccountId
    base_balance: int
    base_path: tuple[tuple[bytes, int], ...]
    # one tuple per sealed commit: the account's own entries opened, others as hashes
    per_commit_paths: tuple[tuple[CommitItem, ...], ...]
    signature: bytes = bytes(SIGNATURE_BYTES)

    @property
    def commit_count(self) -> int:
        return len(self.per_commit_paths)

    @property
    def depth(self) -> int:
        return len(self.base_path) + self.commit_count

    @property
    def delta_values(self) -> tuple[tuple[DeltaEntry, ...], ...]:
        return tuple(tuple(i for i in items if isinstance(i, DeltaEntry)) for items in self.per_commit_paths)

    @property
    def claimed_balance(self) -> int:
        return self.base_balance + sum(e.value for block in self.delta_values for e in block)

    def serialize(self) -> bytes:
        parts = [bytes(self.account), self.base_balance.to_bytes(32, "big"), struct.pack(">I", len(self.base_path))]
        for sibling, side in self.base_path:
            parts.append(sibling + bytes([side]))
        parts.append(struct.pack(">I", len(self.per_commit_paths)))
        for items in self.per_commit_paths:
            parts.append(struct.pack(">I", len(items)))
            for item in items:
                if isinstance(item, DeltaEntry):
                    parts.append(b"\x01" + item.serialize())
                else:
                    parts.append(b"\x00" + item)
        parts.append(self.signature)
        return b"".join(parts)

    @classmethod
    def deserialize(cls, data: bytes) -> "SettlementProof":
        reader = _Reader(data)
        account = AccountId(reader.take(20))
        base_balance = int.from_bytes(reader.take(32), "big")
        path = []
        for _ in range(reader.u32()):
            sibling = reader.take(32)
            side = reader.take(1)[0]
            if side > 1:
                raise DecodeError("path side must be 0 or 1")
            path.append((sibling, side))
        commits = []
        for _ in range(reader.u32()):
            items: list[CommitItem] = []
            for _ in range(reader.u32()):
                tag = reader.take(1)[0]
                if tag == 1:
                    items.append(DeltaEntry.deserialize(reader.take(ENTRY_BYTES)))
                elif tag == 0:
                    items.append(reader.take(32))
                else:
                    raise DecodeError("unknown commit item tag")
            commits.append(tuple(items))
        signature = reader.take(SIGNATURE_BYTES)
        reader.finish()
        return cls(account, base_balance, tuple(path), tuple(commits), signature)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        (value,) = struct.unpack(">I", self.take(4))
        # bound by what the remaining bytes could possibly hold
        if value > len(self.data) - self.pos:
            raise DecodeError("length prefix exceeds input")
        return value

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")


class KeyedSigner:
    """Deterministic 65-byte keyed-hash stand-in for account signatures.

    Only length and accept/reject behaviour matter to the cost model; both
    sides must share the same secret.
    """

    def __init__(self, secret: bytes = b"offchain-gas"):
        self._secret = secret

    def _key(self, account: bytes) -> bytes:
        return keccak256(self._secret + bytes(account))

    def sign(self, account: bytes, message: bytes) -> bytes:
        key = self._key(account)
        r = keccak256(key + message)
        s = keccak256(r + key)
        return r + s + b"\x1b"

    def verify(self, account: bytes, message: bytes, signature: bytes) -> bool:
        return len(signature) == SIGNATURE_BYTES and signature == self.sign(account, message)


def settlement_message(sender: bytes, receiver: bytes, value: int, block: int, nonce: int) -> bytes:
    return keccak256(
        b"settle" + bytes(sender) + bytes(receiver) + value.to_bytes(32, "big") + block.to_bytes(4, "big")
        + nonce.to_bytes(8, "big")
    )


def sign_settlement(proof: SettlementProof, transfer, signer: KeyedSigner, nonce: int) -> SettlementProof:
    """Attach the account's authorization for ``transfer`` at ``nonce``."""
    message = settlement_message(proof.account, transfer.receiver, transfer.value, transfer.block, nonce)
    return replace(proof, signature=signer.sign(proof.account, message))


class GasMeter:
    """Itemized gas counter; components only ever grow."""

    def __init__(self):
        self.components: Counter = Counter({name: 0 for name in GAS_COMPONENTS})

    def charge(self, component: str, amount: int) -> None:
        if component not in self.components:
            raise KeyError(f"unknown gas component {component!r}")
        if amount < 0:
            raise ValueError("gas charges must be non-negative")
        self.components[component] += amount

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.components)


def commit_gas(s: GasSchedule, entries: int) -> dict[str, int]:
    return {
        "calldata": s.calldata_byte * (s.digest_bytes + entries * (s.addr_bytes + s.payload_bytes_m3)),
        "digest_updates": s.digest_update,
        "hashes": entries * s.hash_op,
    }


def settlement_gas(s: GasSchedule, commits: int) -> dict[str, int]:
    depth = s.base_tree_depth + commits
    return {
        "calldata": s.calldata_byte * (s.addr_bytes + s.payload_bytes_m3 + s.sig_bytes),
        "signature_checks": s.sig_verify,
        "internal_transfers": s.internal_transfer,
        "proof_bytes": s.calldata_byte * depth * s.digest_bytes * commits,
        "hashes": depth * s.hash_op,
    }


@dataclass
class _SealedCommit:
    entries: tuple[DeltaEntry, ...]
    hashes: tuple[bytes, ...]
    digest: bytes


class AuthenticatedState:
    """Off-chain server state: base tree, sealed delta log, running digest."""

    def __init__(self, depth: int = 20):
        self.depth = depth
        self.base_tree = SparseMerkleTree(depth)
        self.base_balances: dict[AccountId, int] = {}
        self._slots: dict[int, AccountId] = {}
        self.delta_log: list[_SealedCommit] = []
        self.pending: list[DeltaEntry] = []
        self.digest = self.base_tree.root
        self.sealed_through = -1
        self._delta_totals: defaultdict[AccountId, int] = defaultdict(int)
        self._pending_accounts: Counter = Counter()
        # every account ever placed or credited; survives checkpoints
        self._accounts: set[AccountId] = set()

    def _place(self, account: AccountId, balance: int) -> None:
        index = leaf_index(account, self.depth)
        owner = self._slots.get(index)
        if owner is not None and owner != account:
            if balance == 0:
                return
            raise LeafCollisionError(f"{account} and {owner} share leaf index {index}")
        if balance > 0:
            self._accounts.add(account)
            self._slots[index] = account
            self.base_balances[account] = balance
        else:
            self._slots.pop(index, None)
            self.base_balances.pop(account, None)
        self.base_tree.set_leaf(index, leaf_hash(account, balance))

    @property
    def base_root(self) -> bytes:
        return self.base_tree.root

    def effective_balance(self, account: bytes) -> int:
        account = AccountId(account)
        return self.base_balances.get(account, 0) + self._delta_totals.get(account, 0)

    def known(self, account: bytes) -> bool:
        return account in self._accounts

    def append_delta(self, entry: DeltaEntry) -> None:
        if entry.block <= self.sealed_through:
            raise OutOfOrderError(f"block {entry.block} is already sealed (through {self.sealed_through})")
        if self.pending and entry.block < self.pending[-1].block:
            raise OutOfOrderError(f"block {entry.block} precedes pending block {self.pending[-1].block}")
        self.pending.append(entry)
        self._delta_totals[entry.receiver] += entry.value
        self._accounts.add(entry.receiver)
        self._pending_accounts[entry.receiver] += 1

    def seal_block(self, through: Optional[int] = None) -> BlockCommit:
        """Fold pending entries into the digest; ``through`` marks the last covered height."""
        entries = tuple(self.pending)
        hashes = tuple(e.leaf for e in entries)
        self.digest = fold_entries(self.digest, hashes)
        self.delta_log.append(_SealedCommit(entries, hashes, self.digest))
        last = max([e.block for e in entries] + [through if through is not None else -1, self.sealed_through])
        self.sealed_through = last
        self.pending = []
        self._pending_accounts.clear()
        return BlockCommit(self.digest, entries)

    def replay_digest(self) -> bytes:
        digest = self.base_tree.root
        for commit in self.delta_log:
            digest = fold_entries(digest, (e.leaf for e in commit.entries))
        return digest

    def prove_account(self, account: bytes) -> SettlementProof:
        account = AccountId(account)
        if not self.known(account):
            raise AccountNotFound(f"{account} has neither a base balance nor deltas")
        if self._pending_accounts.get(account):
            raise PendingEntriesError(f"{account} has unsealed entries; seal the block first")
        index = leaf_index(account, self.depth)
        owner = self._slots.get(index)
        if owner is not None and owner != account:
            raise LeafCollisionError(f"leaf slot of {account} is held by {owner}")
        commits = []
        for commit in self.delta_log:
            commits.append(tuple(
                e if e.receiver == account else h for e, h in zip(commit.entries, commit.hashes)
            ))
        return SettlementProof(
            account=account,
            base_balance=self.base_balances.get(account, 0),
            base_path=self.base_tree.path(index),
            per_commit_paths=tuple(commits),
        )

    def checkpoint(self, claimed: Mapping[bytes, int]) -> bytes:
        """Fold outstanding balances into the base tree and restart the delta log.

        ``claimed`` is the value per account already moved on-chain.  Returns
        the new digest, which the verifier adopts with :meth:`OnChainVerifier.rebase`.
        """
        if self.pending:
            raise PendingEntriesError("cannot checkpoint with unsealed entries")
        updates = {}
        for account in set(self._delta_totals) | set(claimed):
            account = AccountId(account)
            value = self.effective_balance(account) - claimed.get(account, 0)
            if value < 0:
                raise StateError(f"{account} has more claimed than received")
            updates[account] = value
        self._delta_totals = defaultdict(int)
        # clear first so a vacated slot can be reused in the same checkpoint
        for account in sorted(updates):
            if updates[account] == 0:
                self._place(account, 0)
        for account in sorted(updates):
            if updates[account]:
                self._place(account, updates[account])
        self.delta_log = []
        self.digest = self.base_tree.root
        return self.digest


def init_state(accounts: Iterable[tuple[bytes, int]] = (), depth: int = 20) -> AuthenticatedState:
    state = AuthenticatedState(depth)
    seen = set()
    for account, balance in accounts:
        account = AccountId(account)
        if account in seen:
            raise ValueError(f"duplicate account {account}")
        if balance < 0:
            raise ValueError(f"negative balance for {account}")
        seen.add(account)
        if len(seen) > 1 << depth:
            raise CapacityError(f"more than 2**{depth} accounts")
        state._place(account, balance)
    state.digest = state.base_tree.root
    return state


class OnChainVerifier:
    """The settlement contract: holds the digest, on-chain balances and a gas meter."""

    def __init__(self, digest: bytes, schedule: GasSchedule = PRESETS["istanbul"],
                 signer: Optional[KeyedSigner] = None):
        self.digest = digest
        self.schedule = schedule
        self.signer = signer or KeyedSigner()
        self.commits = 0
        self.balances: dict[AccountId, int] = {}
        self.claimed: dict[AccountId, int] = {}
        self.nonces: dict[AccountId, int] = {}
        self.gas_meter = GasMeter()

    @classmethod
    def for_state(cls, state: AuthenticatedState, schedule: GasSchedule = PRESETS["istanbul"],
                  signer: Optional[KeyedSigner] = None) -> "OnChainVerifier":
        return cls(state.digest, schedule, signer)

    def _charge(self, items: Mapping[str, int]) -> None:
        for component, amount in items.items():
            self.gas_meter.charge(component, amount)

    def verify_commit(self, commit: BlockCommit) -> None:
        recomputed = fold_entries(self.digest, (e.leaf for e in commit.entries))
        if recomputed != commit.digest:
            raise CommitRejected("commit does not extend the current digest")
        self.digest = recomputed
        self.commits += 1
        self._charge(commit_gas(self.schedule, len(commit.entries)))

    def proven_balance(self, proof: SettlementProof) -> int:
        """Replay the proof against the stored digest; returns base + delta total."""
        s = self.schedule
        if len(proof.base_path) != s.base_tree_depth:
            raise ProofRejected("base path has the wrong depth")
        if proof.commit_count != self.commits:
            raise ProofRejected("proof does not cover every sealed commit")
        index = leaf_index(proof.account, s.base_tree_depth)
        for level, (_, side) in enumerate(proof.base_path):
            if side != (index >> level) & 1:
                raise ProofRejected("path does not follow the account's leaf index")
        node = root_from_path(leaf_hash(proof.account, proof.base_balance), proof.base_path)
        total = proof.base_balance
        for items in proof.per_commit_paths:
            for item in items:
                if isinstance(item, DeltaEntry):
                    if item.receiver != proof.account:
                        raise ProofRejected("opened entry belongs to another account")
                    total += item.value
                    item = item.leaf
                node = keccak256(node + item)
        if node != self.digest:
            raise ProofRejected("proof does not reconstruct the current digest")
        return total

    def settle_account(self, proof: SettlementProof, transfer) -> None:
        """Authenticate ``proof`` and execute ``transfer`` on-chain.

        ``transfer`` needs ``sender``, ``receiver``, ``value`` and ``block``.
        Nothing changes unless every check passes.
        """
        account = proof.account
        if transfer.sender != account:
            raise ProofRejected("transfer sender does not match the proven account")
        if transfer.value <= 0:
            raise ValueError("transfer value must be positive")
        proven = self.proven_balance(proof)
        nonce = self.nonces.get(account, 0)
        message = settlement_message(account, transfer.receiver, transfer.value, transfer.block, nonce)
        if not self.signer.verify(account, message, proof.signature):
            raise SignatureRejected(f"bad signature from {account}")
        claimed = self.claimed.get(account, 0)
        if proven < claimed:
            raise ProofRejected("proof shows less than was already claimed")
        available = self.balances.get(account, 0) + proven - claimed
        if transfer.value > available:
            raise Overdraft(f"{account} has {available} wei, transfer needs {transfer.value}")

        self.claimed[account] = proven
        self.balances[account] = available - transfer.value
        receiver = AccountId(transfer.receiver)
        self.balances[receiver] = self.balances.get(receiver, 0) + transfer.value
        self.nonces[account] = nonce + 1
        self._charge(settlement_gas(self.schedule, proof.commit_count))

    def rebase(self, digest: bytes) -> None:
        """Adopt a checkpointed digest; previously claimed value is folded into it."""
        self.digest = digest
        self.commits = 0
        self.claimed = {}
