"""Stake-weighted validator-list sampling and per-block slot-owner ordering.

Both samplers reduce a 256-bit hash modulo the range size, exactly as the
naive algorithm prescribes. The modulo bias is at most ``t / 2**256`` per
draw, which is negligible for every stake total this package deals with.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

from .crypto import Seed, Signature, seed_entropy


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class RangeEntry:
    validator_id: bytes
    deposit: int
    lo: int
    hi: int


@dataclass(frozen=True)
class StakeRangeTable:
    entries: tuple[RangeEntry, ...]
    total: int

    def owner_of(self, r: int) -> bytes:
        if not 0 <= r < self.total:
            raise SelectionError(f"{r} outside [0, {self.total})")
        i = bisect.bisect_left(self.entries, r, key=lambda e: e.hi)
        return self.entries[i].validator_id


@dataclass(frozen=True)
class ValidatorList:
    slots: tuple[bytes, ...]

    def __len__(self) -> int:
        return len(self.slots)

    def slots_of(self, validator_id: bytes) -> list[int]:
        return [i for i, v in enumerate(self.slots) if v == validator_id]


@dataclass(frozen=True)
class SlotOwnerList:
    order: tuple[int, ...]


def build_range_table(snapshot: Mapping[bytes, int] | Iterable[tuple[bytes, int]]) -> StakeRangeTable:
    """Order addresses lexicographically and give each a contiguous stake range."""
    pairs = snapshot.items() if isinstance(snapshot, Mapping) else snapshot
    stakes: dict[bytes, int] = {}
    for address, deposit in pairs:
        if deposit < 0:
            raise SelectionError("negative deposit")
        if address in stakes:
            raise SelectionError(f"duplicate address {address.hex()}")
        stakes[address] = deposit
    entries = []
    lo = 0
    for address in sorted(stakes):
        deposit = stakes[address]
        if deposit == 0:
            continue
        entries.append(RangeEntry(address, deposit, lo, lo + deposit - 1))
        lo += deposit
    if lo == 0:
        raise SelectionError("no eligible validators")
    return StakeRangeTable(tuple(entries), lo)


def select_validator_list(seed: Seed, table: StakeRangeTable, n: int) -> ValidatorList:
    if n < 1:
        raise SelectionError("validator list size must be positive")
    t = table.total
    return ValidatorList(tuple(table.owner_of(seed_entropy(seed, i) % t) for i in range(n)))


@lru_cache(maxsize=4096)
def _slot_order(seed_point: bytes, n: int) -> tuple[int, ...]:
    seed = Seed(Signature(seed_point))
    remaining = list(range(n))
    order = []
    i = 0
    while remaining:
        r = seed_entropy(seed, i) % len(remaining)
        order.append(remaining.pop(r))
        i += 1
    return tuple(order)


def select_slot_owners(seed: Seed, n: int) -> SlotOwnerList:
    """Random permutation of validator-list indices ``0..n-1``."""
    if n < 1:
        raise SelectionError("validator list size must be positive")
    return SlotOwnerList(_slot_order(seed.value.point, n))


def resolve_slot(seed: Seed, n: int, view: int, barred: Iterable[int] = ()) -> int:
    """Validator-list index that owns ``view`` for the block after ``seed``.

    Barred slots are skipped. If every slot is barred the unfiltered order is
    used so the chain cannot deadlock.
    """
    order = _slot_order(seed.value.point, n)
    barred = set(barred)
    eligible = [s for s in order if s not in barred] if barred else list(order)
    if not eligible:
        eligible = list(order)
    return eligible[view % len(eligible)]


def load_stakes(path_or_text: str | Path) -> dict[bytes, int]:
    """Parse ``address stake`` lines (extra columns are ignored)."""
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else path_or_text
    stakes: dict[bytes, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) < 2:
            raise SelectionError(f"line {lineno}: expected 'address stake'")
        try:
            address = bytes.fromhex(cols[0])
        except ValueError:
            address = cols[0].encode()
        stakes[address] = int(cols[1])
    return stakes
