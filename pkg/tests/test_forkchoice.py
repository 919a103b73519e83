from dataclasses import dataclass, field

import pytest
from hypothesis import given
from hypothesis import strategies as st

from posbft.consensus.forkchoice import ChainStore, IncomparableChains, Ordering, compare_chains
from posbft.encoding import sha256
from posbft.state import ChainState


@dataclass(frozen=True)
class _Header:
    parent_hash: bytes


@dataclass(frozen=True)
class Stub:
    """Only the fields the block tree looks at."""

    height: int
    view: int
    parent: bytes
    is_macro: bool = False
    salt: bytes = b""
    header: _Header = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "header", _Header(self.parent))

    @property
    def hash(self) -> bytes:
        return sha256(self.parent + bytes([self.view, self.is_macro]) + self.salt)


def fresh():
    g = Stub(0, 0, bytes(32), True)
    store = ChainStore(g, ChainState())
    return store, store.genesis


def grow(store, entry, views, macro_at=(), salt=b""):
    for i, v in enumerate(views):
        b = Stub(entry.height + 1, v, entry.hash, i in macro_at, salt)
        entry = store.add(b, ChainState())
    return entry


def test_more_macros_wins():
    store, g = fresh()
    a = grow(store, g, [0, 0, 0], macro_at={2})
    b = grow(store, g, [0, 0, 0, 0, 0])
    assert a.key > b.key and a.better_than(b)
    assert compare_chains(store, a, b) is Ordering.A_BETTER


def test_higher_view_at_fork_point_wins():
    store, g = fresh()
    a = grow(store, g, [0, 1])
    b = grow(store, g, [0, 0, 0, 0])
    assert a.better_than(b)
    assert compare_chains(store, a, b) is Ordering.A_BETTER
    assert store.best_tip() is a


def test_first_difference_decides():
    store, g = fresh()
    base = grow(store, g, [0, 2])
    a = grow(store, base, [0, 3])
    b = grow(store, base, [1, 0, 0])
    assert compare_chains(store, a, b) is Ordering.B_BETTER


def test_longer_wins_on_equal_prefix():
    store, g = fresh()
    a = grow(store, g, [0, 0])
    b = grow(store, a, [0])
    assert b.better_than(a)
    assert compare_chains(store, a, b) is Ordering.B_BETTER


def test_identical_keys_tie_broken_by_hash():
    store, g = fresh()
    a = grow(store, g, [0, 1], salt=b"a")
    b = grow(store, g, [0, 1], salt=b"b")
    assert compare_chains(store, a, b) is Ordering.EQUAL
    assert a.better_than(b) != b.better_than(a)
    assert store.best_tip() is min((a, b), key=lambda e: e.hash)


def test_conflicting_macros_incomparable():
    store, g = fresh()
    a = grow(store, g, [0, 0], macro_at={1}, salt=b"a")
    b = grow(store, g, [0, 1], macro_at={1}, salt=b"b")
    with pytest.raises(IncomparableChains):
        compare_chains(store, a, b)


def test_ancestry_and_lca():
    store, g = fresh()
    base = grow(store, g, [0, 0])
    a = grow(store, base, [0, 0])
    b = grow(store, base, [1])
    assert store.lca(a, b) is base
    assert store.is_ancestor(base, a) and not store.is_ancestor(a, b)
    assert store.ancestor_at(a, 2) is base and store.ancestor_at(a, 9) is None
    view = store.branch(a)
    assert view.block_at(2) is base.block and view.state_at(0) is g.state


def test_finalize_prunes_side_branches():
    store, g = fresh()
    side = grow(store, g, [1, 0], salt=b"side")
    macro = grow(store, g, [0, 0, 0], macro_at={2})
    tail = grow(store, macro, [0])
    dropped = store.finalize(macro, keep_states_from=2)
    assert {e.hash for e in dropped} == {side.hash, side.parent.hash}
    assert side.hash not in store and tail.hash in store
    assert store.finalized is macro and store.canonical[3] is macro
    assert store.canonical[1].state is None and store.canonical[2].state is not None
    assert store.best_tip() is tail
    # ancestry below the finalized block goes through the canonical map
    assert store.ancestor_at(tail, 1) is store.canonical[1]


def test_finalize_must_extend_previous():
    store, g = fresh()
    m1 = grow(store, g, [0, 0], macro_at={1}, salt=b"x")
    other = grow(store, g, [0, 1], macro_at={1}, salt=b"y")
    store.finalize(m1, keep_states_from=0)
    orphan = Stub(3, 0, other.hash, True)
    # the other branch was dropped, so a block on it cannot even be stored
    with pytest.raises(KeyError):
        store.add(orphan, ChainState())


def test_best_tip_honours_exclusion():
    store, g = fresh()
    a = grow(store, g, [0, 1])
    b = grow(store, g, [0, 0])
    assert store.best_tip(lambda e: e is a) is b
    assert store.best_tip(lambda e: e is a.parent) is b


@given(branches=st.lists(st.lists(st.integers(0, 3), min_size=1, max_size=6), min_size=2,
                         max_size=5))
def test_best_tip_matches_pairwise_comparison(branches):
    store, g = fresh()
    tips = [grow(store, g, views, salt=bytes([i])) for i, views in enumerate(branches)]
    best = store.best_tip()
    for t in tips:
        assert compare_chains(store, best, t) in (Ordering.A_BETTER, Ordering.EQUAL)
