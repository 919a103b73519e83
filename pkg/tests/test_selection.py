import math
import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from posbft.crypto import Seed, Signature, genesis_seed
from posbft.encoding import sha256
from posbft.selection import (SelectionError, build_range_table, load_stakes, resolve_slot,
                              select_slot_owners, select_validator_list)

A1, A2, A3 = b"\x01" * 20, b"\x02" * 20, b"\x03" * 20
TABLE1 = {A1: 10, A2: 50, A3: 15}


def seed(i: int) -> Seed:
    return Seed(Signature(sha256(b"sel" + i.to_bytes(8, "big"))))


def chi2_upper_001(df: int) -> float:
    """Wilson-Hilferty upper quantile of chi-square at alpha = 0.001."""
    z = 3.090232
    return df * (1 - 2 / (9 * df) + z * math.sqrt(2 / (9 * df))) ** 3


# ---------------------------------------------------------------- range table

def test_table1_ranges():
    t = build_range_table(TABLE1)
    assert [(e.lo, e.hi) for e in t.entries] == [(0, 9), (10, 59), (60, 74)]
    assert t.total == 75
    assert t.owner_of(9) == A1 and t.owner_of(10) == A2 and t.owner_of(74) == A3


def test_single_validator_range():
    t = build_range_table({A1: 7})
    assert [(e.lo, e.hi) for e in t.entries] == [(0, 6)]


@given(perm=st.permutations(list(TABLE1.items())))
def test_table_independent_of_input_order(perm):
    assert build_range_table(perm) == build_range_table(TABLE1)


def test_empty_or_zero_stake():
    with pytest.raises(SelectionError, match="no eligible validators"):
        build_range_table({})
    with pytest.raises(SelectionError, match="no eligible validators"):
        build_range_table({A1: 0})


@given(stakes=st.dictionaries(st.binary(min_size=1, max_size=4), st.integers(1, 1000), min_size=1))
def test_ranges_contiguous(stakes):
    t = build_range_table(stakes)
    lo = 0
    for e in t.entries:
        assert e.lo == lo and e.hi - e.lo + 1 == e.deposit
        lo = e.hi + 1
    assert lo == t.total == sum(stakes.values())
    assert [e.validator_id for e in t.entries] == sorted(stakes)


def test_load_stakes_text():
    text = f"# address stake\n{A1.hex()} 10\n\n{A2.hex()} 50\n"
    assert load_stakes(text) == {A1: 10, A2: 50}


# ---------------------------------------------------------------- validator list

def test_single_validator_owns_all_slots():
    assert set(select_validator_list(seed(0), build_range_table({A1: 7}), 10).slots) == {A1}


def test_validator_list_deterministic():
    t = build_range_table(TABLE1)
    assert select_validator_list(seed(1), t, 50) == select_validator_list(seed(1), t, 50)


def test_table1_share_monte_carlo():
    # one 100,000-slot list is 100,000 independent draws r = hash(S || i) mod t
    t = build_range_table(TABLE1)
    slots = select_validator_list(seed(2), t, 100_000).slots
    share = slots.count(A2) / len(slots)
    assert abs(share - 50 / 75) < 0.01


def test_chi_square_proportional_to_stake():
    stakes = {bytes([i]) * 4: s for i, s in enumerate([1, 2, 3, 5, 8, 13, 21, 34], 1)}
    t = build_range_table(stakes)
    draws = 100_000
    counts = Counter(select_validator_list(seed(3), t, draws).slots)
    chi2 = sum((counts[a] - draws * s / t.total) ** 2 / (draws * s / t.total)
               for a, s in stakes.items())
    assert chi2 < chi2_upper_001(len(stakes) - 1)


def test_seed_bit_flip_changes_list():
    t = build_range_table({bytes([i]): 10 + i for i in range(20)})
    rng = random.Random(5)
    changed = 0
    for k in range(100):
        raw = bytearray(sha256(b"flip" + bytes([k])))
        base = select_validator_list(Seed(Signature(bytes(raw))), t, 100)
        bit = rng.randrange(256)
        raw[bit // 8] ^= 1 << (bit % 8)
        changed += select_validator_list(Seed(Signature(bytes(raw))), t, 100) != base
    assert changed >= 99


# ---------------------------------------------------------------- slot owners

def test_slot_owners_n1():
    assert select_slot_owners(seed(0), 1).order == (0,)


def test_slot_owners_permutation_1000_seeds():
    rng = random.Random(6)
    for i in range(1000):
        n = rng.randint(1, 40)
        assert sorted(select_slot_owners(seed(i), n).order) == list(range(n))


def test_first_position_uniform_n3():
    firsts = Counter(select_slot_owners(seed(i), 3).order[0] for i in range(60_000))
    for idx in range(3):
        assert abs(firsts[idx] / 60_000 - 1 / 3) < 0.015


def test_slot_owners_deterministic_and_seed_dependent():
    assert select_slot_owners(seed(1), 16) == select_slot_owners(seed(1), 16)
    assert select_slot_owners(seed(1), 16) != select_slot_owners(seed(2), 16)


def test_resolve_slot_skips_barred():
    order = select_slot_owners(seed(7), 4).order
    assert resolve_slot(seed(7), 4, 0) == order[0]
    assert resolve_slot(seed(7), 4, 1) == order[1]
    assert resolve_slot(seed(7), 4, 0, {order[0]}) == order[1]
    # views wrap around the eligible list
    assert resolve_slot(seed(7), 4, 4) == order[0]
    assert resolve_slot(seed(7), 4, 0, set(range(4))) == order[0]


def test_invalid_sizes():
    with pytest.raises(SelectionError):
        select_slot_owners(genesis_seed(), 0)
    with pytest.raises(SelectionError):
        select_validator_list(genesis_seed(), build_range_table(TABLE1), 0)
