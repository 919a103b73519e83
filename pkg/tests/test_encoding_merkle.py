import pytest
from hypothesis import given
from hypothesis import strategies as st

from posbft.encoding import DecodeError, Reader, Writer, sha256, tagged
from posbft.merkle import (EMPTY_ROOT, MerkleProof, leaf_hash, merkle_proof, merkle_root,
                           node_hash, verify_merkle_proof)

items = st.lists(st.binary(max_size=40), max_size=33)


def brute_root(xs):
    level = [sha256(b"\x00" + x) for x in xs]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def test_integers_are_big_endian_fixed_width():
    assert Writer().u8(1).u32(2).u64(3).getvalue() == b"\x01" + b"\x00\x00\x00\x02" + bytes(7) + b"\x03"


def test_blob_is_length_prefixed():
    assert Writer().blob(b"abc").getvalue() == b"\x00\x00\x00\x03abc"


@given(a=st.integers(0, 2**64 - 1), b=st.binary(max_size=64), c=st.lists(st.integers(0, 2**32 - 1)),
       d=st.none() | st.binary(max_size=8), e=st.booleans(), s=st.text(max_size=20))
def test_round_trip(a, b, c, d, e, s):
    data = (Writer().u64(a).blob(b).seq(c, Writer.u32).optional(d, Writer.blob).flag(e).text(s)
            .getvalue())
    r = Reader(data)
    assert (r.u64(), r.blob(), r.seq(Reader.u32), r.optional(Reader.blob), r.flag(), r.text()) == \
        (a, b, c, d, e, s)
    r.expect_end()


@given(data=st.binary(max_size=64))
def test_reader_never_crashes_unexpectedly(data):
    r = Reader(data)
    try:
        r.seq(Reader.blob)
        r.optional(Reader.u64)
    except DecodeError:
        pass


def test_decode_errors():
    with pytest.raises(DecodeError):
        Reader(b"\x00\x00").u32()
    with pytest.raises(DecodeError):
        Reader(b"\x02").flag()
    with pytest.raises(DecodeError):
        Reader(b"\x05").optional(Reader.u8)
    with pytest.raises(DecodeError):
        Reader(b"\xff\xff\xff\xff").seq(Reader.u8)
    with pytest.raises(DecodeError):
        Reader(b"x").expect_end()


def test_tagged_differs_by_tag_and_value():
    assert tagged("PREPARE", 1) != tagged("COMMIT", 1)
    assert tagged("VIEW-CHANGE", 1, 2) != tagged("VIEW-CHANGE", 2, 1)


# ---------------------------------------------------------------- merkle

def test_empty_root():
    assert merkle_root([]) == EMPTY_ROOT == sha256(b"")


def test_single_leaf():
    assert merkle_root([b"x"]) == leaf_hash(b"x")


def test_four_leaves_by_hand():
    a, b, c, d = (leaf_hash(x) for x in (b"a", b"b", b"c", b"d"))
    assert merkle_root([b"a", b"b", b"c", b"d"]) == node_hash(node_hash(a, b), node_hash(c, d))


def test_odd_level_duplicates_last():
    a, b, c = (leaf_hash(x) for x in (b"a", b"b", b"c"))
    assert merkle_root([b"a", b"b", b"c"]) == node_hash(node_hash(a, b), node_hash(c, c))


@given(xs=items)
def test_root_matches_brute_force(xs):
    if xs:
        assert merkle_root(xs) == brute_root(xs)


@given(xs=items.filter(bool), data=st.data())
def test_proofs_verify(xs, data):
    i = data.draw(st.integers(0, len(xs) - 1))
    root = merkle_root(xs)
    proof = merkle_proof(xs, i)
    assert verify_merkle_proof(root, xs[i], proof)
    assert MerkleProof.from_json(proof.to_json()) == proof
    assert not verify_merkle_proof(root, xs[i] + b"!", proof)


def test_tampered_proof_rejected():
    xs = [bytes([i]) for i in range(6)]
    root = merkle_root(xs)
    p = merkle_proof(xs, 2)
    bad = MerkleProof(p.index, p.leaf_count, (sha256(b"evil"),) + p.siblings[1:])
    assert not verify_merkle_proof(root, xs[2], bad)
    assert not verify_merkle_proof(root, xs[2], MerkleProof(3, p.leaf_count, p.siblings))
    assert not verify_merkle_proof(root, xs[2], MerkleProof(2, 6, p.siblings[:-1]))
    with pytest.raises(IndexError):
        merkle_proof(xs, 6)
