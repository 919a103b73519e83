"""Account balances, the validator registry and the epoch ledger.

``ChainState`` is the full state after a block. It is committed to by a
Merkle tree over sorted ``(key, value)`` leaves:

* ``A<address>``  balance and nonce of a plain account
* ``R<address>``  registry entry of a potential validator
* ``G``           global ledger: epoch context, reward pools, supply counters

Light clients query these leaf keys against a header's ``state_root``.
"""

from __future__ import annotations

import copy
import dataclasses
import enum
import functools
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .crypto import PublicKey
from .encoding import Reader, Writer
from .merkle import MerkleProof, merkle_proof, merkle_root, verify_merkle_proof


_LEN = struct.Struct(">I")
_ACCOUNT = struct.Struct(">QQ")


class Status(enum.IntEnum):
    ACTIVE = 0
    PENDING_UNSTAKE = 1
    MARKED = 2  # marked for expulsion


@dataclass
class RegistryEntry:
    main_address: bytes
    deposit: int
    warm_key: PublicKey
    hot_key: PublicKey
    reward_address: bytes | None = None
    status: Status = Status.ACTIVE
    # PENDING_UNSTAKE: epoch whose closing macro releases the deposit
    # MARKED: epoch whose closing macro expels the entry
    status_epoch: int = 0
    # a mark caused by a fork proof cannot be lifted by reactivation
    reactivatable: bool = True

    def __setattr__(self, name, value):
        object.__setattr__(self, name, value)
        object.__setattr__(self, "_encoded", None)

    @property
    def samplable(self) -> bool:
        return self.status is Status.ACTIVE

    def encode(self) -> bytes:
        cached = self.__dict__.get("_encoded")
        if cached is not None:
            return cached
        w = Writer().blob(self.main_address).u64(self.deposit)
        w.blob(self.warm_key.point).blob(self.hot_key.point)
        w.optional(self.reward_address, Writer.blob)
        w.u8(int(self.status)).u64(self.status_epoch).flag(self.reactivatable)
        out = w.getvalue()
        object.__setattr__(self, "_encoded", out)
        return out

    @classmethod
    def decode(cls, data: bytes) -> "RegistryEntry":
        r = Reader(data)
        out = cls(r.blob(), r.u64(), PublicKey(r.blob()), PublicKey(r.blob()),
                  r.optional(Reader.blob), Status(r.u8()), r.u64(), r.flag())
        r.expect_end()
        return out

    def status_text(self) -> str:
        if self.status is Status.ACTIVE:
            return "active"
        if self.status is Status.PENDING_UNSTAKE:
            return f"pending-unstake:{self.status_epoch}"
        return f"marked:{self.status_epoch}" + ("" if self.reactivatable else ":final")


@functools.lru_cache(maxsize=64)
def _encode_list(slots: tuple[bytes, ...], keys: tuple[PublicKey, ...]) -> bytes:
    # the same list is re-encoded for every state root of an epoch
    w = Writer().seq(slots, Writer.blob).seq(keys, lambda w_, k: w_.blob(k.point))
    return w.getvalue()


@dataclass
class EpochLedger:
    """Per-epoch consensus context plus the reward pools awaiting settlement.

    ``epoch_number`` is the epoch the next block belongs to. Slot sets index
    into the validator list of the matching epoch.
    """

    epoch_number: int = 1
    slots: tuple[bytes, ...] = ()
    keys: tuple[PublicKey, ...] = ()
    prev_slots: tuple[bytes, ...] = ()
    prev_keys: tuple[PublicKey, ...] = ()
    barred: set[int] = field(default_factory=set)
    slashed: set[int] = field(default_factory=set)
    prev_slashed: set[int] = field(default_factory=set)
    # fork proofs already punished, keyed by (block_number, view, producer)
    proven: set[tuple[int, int, int]] = field(default_factory=set)
    fees: int = 0
    prev_fees: int = 0
    settled_epoch: int = 0

    def copy(self) -> "EpochLedger":
        # tuples and their keys are immutable; only the sets need fresh containers
        return dataclasses.replace(self, barred=set(self.barred), slashed=set(self.slashed),
                                   prev_slashed=set(self.prev_slashed), proven=set(self.proven))

    def accrued_per_slot(self, coinbase_total: int) -> int:
        """Share each unslashed slot of the current epoch would receive."""
        return (self.fees + coinbase_total) // max(1, len(self.slots))

    def encode(self) -> bytes:
        w = Writer().u64(self.epoch_number)
        w.raw(_encode_list(self.slots, self.keys)).raw(_encode_list(self.prev_slots, self.prev_keys))
        for s in (self.barred, self.slashed, self.prev_slashed):
            w.seq(sorted(s), Writer.u64)
        w.seq(sorted(self.proven), lambda w_, k: w_.u64(k[0]).u64(k[1]).u64(k[2]))
        w.u64(self.fees).u64(self.prev_fees).u64(self.settled_epoch)
        return w.getvalue()

    @classmethod
    def decode_from(cls, r: Reader) -> "EpochLedger":
        epoch = r.u64()
        slots = tuple(r.seq(Reader.blob))
        keys = tuple(PublicKey(b) for b in r.seq(Reader.blob))
        prev_slots = tuple(r.seq(Reader.blob))
        prev_keys = tuple(PublicKey(b) for b in r.seq(Reader.blob))
        barred, slashed, prev_slashed = (set(r.seq(Reader.u64)) for _ in range(3))
        proven = set(r.seq(lambda r_: (r_.u64(), r_.u64(), r_.u64())))
        return cls(epoch, slots, keys, prev_slots, prev_keys, barred, slashed, prev_slashed,
                   proven, r.u64(), r.u64(), r.u64())


@dataclass
class ChainState:
    balances: dict[bytes, int] = field(default_factory=dict)
    nonces: dict[bytes, int] = field(default_factory=dict)
    registry: dict[bytes, RegistryEntry] = field(default_factory=dict)
    ledger: EpochLedger = field(default_factory=EpochLedger)
    burned: int = 0
    minted: int = 0

    def copy(self) -> "ChainState":
        # registry entries are shared copy-on-write; mutate them via edit_entry
        return ChainState(dict(self.balances), dict(self.nonces), dict(self.registry),
                          self.ledger.copy(), self.burned, self.minted)

    def edit_entry(self, address: bytes) -> RegistryEntry:
        """Private copy of a registry entry, safe to mutate in place."""
        entry = copy.copy(self.registry[address])
        self.registry[address] = entry
        return entry

    def balance(self, address: bytes) -> int:
        return self.balances.get(address, 0)

    def nonce(self, address: bytes) -> int:
        return self.nonces.get(address, 0)

    def credit(self, address: bytes, amount: int) -> None:
        if amount:
            self.balances[address] = self.balances.get(address, 0) + amount

    def debit(self, address: bytes, amount: int) -> None:
        left = self.balances.get(address, 0) - amount
        if left < 0:
            raise ValueError("insufficient balance")
        if left:
            self.balances[address] = left
        else:
            self.balances.pop(address, None)

    # ------------------------------------------------------------ accounting

    def liquid(self) -> int:
        return sum(self.balances.values())

    def locked(self) -> int:
        return sum(e.deposit for e in self.registry.values())

    def pooled(self) -> int:
        """Fees collected but not yet distributed."""
        return self.ledger.fees + self.ledger.prev_fees

    def total_supply(self) -> int:
        """Liquid + locked + pooled; constant except for minting and burning."""
        return self.liquid() + self.locked() + self.pooled()

    # ------------------------------------------------------------ commitment

    def leaves(self) -> list[tuple[bytes, bytes]]:
        out = []
        bal, non = self.balances, self.nonces
        for addr in bal.keys() | non.keys():
            out.append((b"A" + addr, _ACCOUNT.pack(bal.get(addr, 0), non.get(addr, 0))))
        for addr, entry in self.registry.items():
            out.append((b"R" + addr, entry.encode()))
        out.append((b"G", self.ledger.encode() + Writer().u64(self.burned).u64(self.minted).getvalue()))
        out.sort()
        return out

    def root(self) -> bytes:
        return merkle_root([leaf_item(k, v) for k, v in self.leaves()])

    def prove(self, key: bytes) -> tuple[bytes, MerkleProof]:
        leaves = self.leaves()
        for i, (k, v) in enumerate(leaves):
            if k == key:
                return v, merkle_proof([leaf_item(k_, v_) for k_, v_ in leaves], i)
        raise KeyError(key.hex())

    def encode(self) -> bytes:
        w = Writer()
        w.seq(self.leaves(), lambda w_, kv: w_.blob(kv[0]).blob(kv[1]))
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "ChainState":
        r = Reader(data)
        pairs = r.seq(lambda r_: (r_.blob(), r_.blob()))
        r.expect_end()
        state = cls()
        for key, value in pairs:
            tag, rest = key[:1], key[1:]
            if tag == b"A":
                vr = Reader(value)
                bal, nonce = vr.u64(), vr.u64()
                if bal:
                    state.balances[rest] = bal
                if nonce:
                    state.nonces[rest] = nonce
            elif tag == b"R":
                state.registry[rest] = RegistryEntry.decode(value)
            elif tag == b"G":
                vr = Reader(value)
                state.ledger = EpochLedger.decode_from(vr)
                state.burned, state.minted = vr.u64(), vr.u64()
                vr.expect_end()
        return state


def leaf_item(key: bytes, value: bytes) -> bytes:
    return _LEN.pack(len(key)) + key + _LEN.pack(len(value)) + value


def account_key(address: bytes) -> bytes:
    return b"A" + address


def registry_key(address: bytes) -> bytes:
    return b"R" + address


def verify_state_proof(root: bytes, key: bytes, value: bytes, proof: MerkleProof) -> bool:
    return verify_merkle_proof(root, leaf_item(key, value), proof)


def decode_account(value: bytes) -> tuple[int, int]:
    r = Reader(value)
    out = (r.u64(), r.u64())
    r.expect_end()
    return out


# ---------------------------------------------------------------- text format

def format_registry(registry: dict[bytes, RegistryEntry]) -> str:
    lines = []
    for addr in sorted(registry):
        e = registry[addr]
        reward = e.reward_address.hex() if e.reward_address else "-"
        lines.append(f"{addr.hex()} {e.deposit} {e.warm_key.hex()} {e.hot_key.hex()} "
                     f"{reward} {e.status_text()}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_registry(text: str | Path) -> dict[bytes, RegistryEntry]:
    if isinstance(text, Path):
        text = text.read_text()
    out: dict[bytes, RegistryEntry] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) != 6:
            raise ValueError(f"line {lineno}: expected 6 columns, got {len(cols)}")
        addr = bytes.fromhex(cols[0])
        status, epoch, reactivatable = _parse_status(cols[5], lineno)
        out[addr] = RegistryEntry(addr, int(cols[1]), PublicKey(bytes.fromhex(cols[2])),
                                  PublicKey(bytes.fromhex(cols[3])),
                                  None if cols[4] == "-" else bytes.fromhex(cols[4]),
                                  status, epoch, reactivatable)
    return out


def _parse_status(text: str, lineno: int) -> tuple[Status, int, bool]:
    parts = text.split(":")
    if parts == ["active"]:
        return Status.ACTIVE, 0, True
    if parts[0] == "pending-unstake" and len(parts) == 2:
        return Status.PENDING_UNSTAKE, int(parts[1]), True
    if parts[0] == "marked" and len(parts) in (2, 3):
        return Status.MARKED, int(parts[1]), len(parts) == 2
    raise ValueError(f"line {lineno}: bad status {text!r}")
