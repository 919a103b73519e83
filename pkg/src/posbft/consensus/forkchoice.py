"""Block tree and chain selection.

Chains are ranked by (number of macro blocks, view numbers from the fork
point on, number of blocks). Once both tips share their last macro block the
second and third criteria collapse into a plain tuple comparison of the view
sequences since that macro block, because Python compares tuples
element-wise and ranks a strict prefix below its extension. Every stored
block caches that key so that head selection never walks the tree.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..chain import Block
from ..state import ChainState


class IncomparableChains(RuntimeError):
    """Two tips disagree on a finalized macro block: a safety violation."""


class Ordering(enum.Enum):
    A_BETTER = "a-better"
    B_BETTER = "b-better"
    EQUAL = "equal"


@dataclass(eq=False)
class StoredBlock:
    block: Block
    state: ChainState | None
    parent: "StoredBlock | None"
    macro_count: int
    views: tuple[int, ...]  # views of the blocks after the latest macro on this branch
    children: list["StoredBlock"] = field(default_factory=list)

    @property
    def hash(self) -> bytes:
        return self.block.hash

    @property
    def height(self) -> int:
        return self.block.height

    @property
    def key(self) -> tuple[int, tuple[int, ...]]:
        return (self.macro_count, self.views)

    def better_than(self, other: "StoredBlock") -> bool:
        """Strict preference used for head selection; ties go to the smaller hash."""
        a, b = self.key, other.key
        if a != b:
            return a > b
        return self.hash < other.hash


class ChainStore:
    """All known valid blocks since the last finalized macro block, plus the finalized chain."""

    def __init__(self, genesis: Block, genesis_state: ChainState) -> None:
        root = StoredBlock(genesis, genesis_state, None, 0, ())
        self.blocks: dict[bytes, StoredBlock] = {genesis.hash: root}
        self.genesis = root
        self.finalized = root
        # finalized chain by height, for export and ancestry of old heights
        self.canonical: dict[int, StoredBlock] = {0: root}
        self._states_released = 1

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self.blocks

    def get(self, block_hash: bytes) -> StoredBlock | None:
        return self.blocks.get(block_hash)

    def add(self, block: Block, state: ChainState) -> StoredBlock:
        parent = self.blocks[block.header.parent_hash]
        if block.is_macro:
            entry = StoredBlock(block, state, parent, parent.macro_count + 1, ())
        else:
            entry = StoredBlock(block, state, parent, parent.macro_count, parent.views + (block.view,))
        parent.children.append(entry)
        self.blocks[block.hash] = entry
        return entry

    def ancestor_at(self, entry: StoredBlock, height: int) -> StoredBlock | None:
        if height > entry.height or height < 0:
            return None
        if height <= self.finalized.height:
            return self.canonical.get(height)
        while entry is not None and entry.height > height:
            entry = entry.parent
        return entry

    def is_ancestor(self, anc: StoredBlock, entry: StoredBlock) -> bool:
        return self.ancestor_at(entry, anc.height) is anc

    def lca(self, a: StoredBlock, b: StoredBlock) -> StoredBlock:
        while a is not b:
            if a.height >= b.height:
                a = a.parent
            else:
                b = b.parent
            if a is None or b is None:
                raise IncomparableChains("no common ancestor")
        return a

    def branch(self, tip: StoredBlock) -> "BranchView":
        return BranchView(self, tip)

    def finalize(self, macro: StoredBlock, keep_states_from: int) -> list[StoredBlock]:
        """Make ``macro`` the finalized root; drop blocks not descending from it.

        States are kept from height ``keep_states_from`` on; older ones are
        released to bound memory. Returns the dropped blocks.
        """
        path = []
        e = macro
        while e is not None and e.height > self.finalized.height:
            path.append(e)
            e = e.parent
        if e is not self.finalized:
            raise IncomparableChains("finalized macro does not extend the previous one")
        for entry in reversed(path):
            self.canonical[entry.height] = entry
        on_path = {id(p) for p in path}
        dropped = []
        stack = list(self.finalized.children)
        while stack:
            c = stack.pop()
            if id(c) in on_path:
                if c is not macro:
                    stack.extend(c.children)
                continue
            dropped.append(c)
            stack.extend(c.children)
        for c in dropped:
            del self.blocks[c.hash]
        for entry in [self.finalized] + path[1:]:
            entry.children = [c for c in entry.children if id(c) in on_path]
        self.finalized = macro
        for h in range(self._states_released, keep_states_from):
            old = self.canonical.get(h)
            if old is not None and old is not self.genesis:
                old.state = None
        self._states_released = max(self._states_released, keep_states_from)
        return dropped

    def best_tip(self, excluded=lambda e: False) -> StoredBlock:
        """Best block in the unfinalized tree whose branch has no excluded block."""
        best = self.finalized
        stack = list(self.finalized.children)
        while stack:
            e = stack.pop()
            if excluded(e):
                continue
            if e.better_than(best):
                best = e
            stack.extend(e.children)
        return best


class BranchView:
    """Read-only ancestry of one branch for the consensus rules."""

    def __init__(self, store: ChainStore, tip: StoredBlock) -> None:
        self.store = store
        self.tip = tip

    def _entry(self, height: int) -> StoredBlock | None:
        return self.store.ancestor_at(self.tip, height)

    def block_at(self, height: int) -> Block | None:
        e = self._entry(height)
        return e.block if e is not None else None

    def state_at(self, height: int) -> ChainState | None:
        e = self._entry(height)
        return e.state if e is not None else None


def compare_chains(store: ChainStore, a: StoredBlock, b: StoredBlock) -> Ordering:
    """Rank two tips by walking back to their common ancestor.

    Raises :class:`IncomparableChains` when both branches contain a
    different macro block after the common ancestor.
    """
    anc = store.lca(a, b)
    branch_a = _branch_since(a, anc)
    branch_b = _branch_since(b, anc)
    macros_a = [e for e in branch_a if e.block.is_macro]
    macros_b = [e for e in branch_b if e.block.is_macro]
    if macros_a and macros_b:
        raise IncomparableChains(f"conflicting macro blocks after height {anc.height}")
    key_a = (len(macros_a), tuple(e.block.view for e in branch_a))
    key_b = (len(macros_b), tuple(e.block.view for e in branch_b))
    if key_a > key_b:
        return Ordering.A_BETTER
    if key_b > key_a:
        return Ordering.B_BETTER
    return Ordering.EQUAL


def _branch_since(tip: StoredBlock, anc: StoredBlock) -> list[StoredBlock]:
    out = []
    while tip is not anc:
        out.append(tip)
        tip = tip.parent
    out.reverse()
    return out
