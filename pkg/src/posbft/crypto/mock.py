"""Keyed-hash stand-in for BLS.

Public keys are hashes of the secret scalar and signatures are hashes of
(public key, message), so anyone holding a public key can recompute a
signature. That is fine for simulation; it is not a signature scheme.
Aggregation is addition modulo 2**256, which is order independent and maps
a single signature to itself.
"""

from __future__ import annotations

import hashlib

NAME = "mock"
SK_LEN = 32
PK_LEN = 32
SIG_LEN = 32
_MOD = 1 << 256


def _h(tag: bytes, *parts: bytes) -> bytes:
    h = hashlib.sha256(tag)
    for p in parts:
        h.update(p)
    return h.digest()


def derive_secret(entropy: bytes) -> bytes:
    x = int.from_bytes(_h(b"mock-sk", entropy), "big")
    return (x or 1).to_bytes(SK_LEN, "big")


def public_key(scalar: bytes) -> bytes:
    return _h(b"mock-pk", scalar)


def _sig_for(pk: bytes, message: bytes) -> bytes:
    return _h(b"mock-sig", pk, message)


def sign(scalar: bytes, message: bytes) -> bytes:
    return _sig_for(public_key(scalar), message)


def verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    if len(pk) != PK_LEN or len(sig) != SIG_LEN:
        return False
    return _sig_for(pk, message) == sig


def combine(sigs: list[bytes]) -> bytes:
    total = sum(int.from_bytes(s, "big") for s in sigs) % _MOD
    return total.to_bytes(SIG_LEN, "big")


def aggregate_verify(pks: list[bytes], message: bytes, agg: bytes) -> bool:
    if len(agg) != SIG_LEN or any(len(pk) != PK_LEN for pk in pks):
        return False
    return combine([_sig_for(pk, message) for pk in pks]) == agg


def hash_to_seed(data: bytes) -> bytes:
    return _h(b"mock-seed", data)
