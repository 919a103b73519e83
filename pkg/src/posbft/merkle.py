"""Binary Merkle trees with duplicate-last padding and inclusion proofs."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .encoding import sha256

EMPTY_ROOT = sha256(b"")


@lru_cache(maxsize=1 << 16)
def leaf_hash(item: bytes) -> bytes:
    # state trees re-hash mostly unchanged leaves block after block
    return sha256(b"\x00" + item)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(b"\x01" + left + right)


def _levels(items: list[bytes]) -> list[list[bytes]]:
    level = [leaf_hash(x) for x in items]
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def merkle_root(items: list[bytes]) -> bytes:
    if not items:
        return EMPTY_ROOT
    return _levels(list(items))[-1][0]


@dataclass(frozen=True)
class MerkleProof:
    index: int
    leaf_count: int
    siblings: tuple[bytes, ...]

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "leaf_count": self.leaf_count,
            "siblings": [s.hex() for s in self.siblings],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MerkleProof":
        return cls(int(obj["index"]), int(obj["leaf_count"]),
                   tuple(bytes.fromhex(s) for s in obj["siblings"]))


def merkle_proof(items: list[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(items):
        raise IndexError("leaf index out of range")
    siblings = []
    i = index
    for level in _levels(list(items))[:-1]:
        sib = i ^ 1
        siblings.append(level[sib] if sib < len(level) else level[i])
        i //= 2
    return MerkleProof(index, len(items), tuple(siblings))


def verify_merkle_proof(root: bytes, item: bytes, proof: MerkleProof) -> bool:
    if not 0 <= proof.index < proof.leaf_count:
        return False
    expected_depth = 0
    width = proof.leaf_count
    while width > 1:
        width = (width + 1) // 2
        expected_depth += 1
    if len(proof.siblings) != expected_depth:
        return False
    h = leaf_hash(item)
    i = proof.index
    for sib in proof.siblings:
        h = node_hash(sib, h) if i % 2 else node_hash(h, sib)
        i //= 2
    return h == root
