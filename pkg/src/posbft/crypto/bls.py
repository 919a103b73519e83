"""BLS12-381 backend (minimal-pubkey-size variant).

Public keys live in G1 (48 bytes compressed), signatures in G2 (96 bytes).
Hashing to G2 follows the IETF hash-to-curve suite used by the
``BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_POP_`` ciphersuite; the pairing and
group arithmetic are delegated to ``milagro_bls_binding``.
"""

from __future__ import annotations

import hashlib

import milagro_bls_binding as _milagro

NAME = "bls"
SK_LEN = 32
PK_LEN = 48
SIG_LEN = 96
CURVE_ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001


def derive_secret(entropy: bytes) -> bytes:
    # 512 bits reduced mod r keeps the bias below 2**-250
    x = int.from_bytes(hashlib.sha512(b"bls-sk" + entropy).digest(), "big") % CURVE_ORDER
    return (x or 1).to_bytes(SK_LEN, "big")


def public_key(scalar: bytes) -> bytes:
    return _milagro.SkToPk(scalar)


def sign(scalar: bytes, message: bytes) -> bytes:
    return _milagro.Sign(scalar, message)


def verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    if len(pk) != PK_LEN or len(sig) != SIG_LEN:
        return False
    try:
        return bool(_milagro.Verify(pk, message, sig))
    except Exception:
        return False


def combine(sigs: list[bytes]) -> bytes:
    return _milagro.Aggregate(list(sigs))


def aggregate_verify(pks: list[bytes], message: bytes, agg: bytes) -> bool:
    if len(agg) != SIG_LEN or any(len(pk) != PK_LEN for pk in pks):
        return False
    try:
        return bool(_milagro.FastAggregateVerify(list(pks), message, agg))
    except Exception:
        return False


def hash_to_seed(data: bytes) -> bytes:
    """Map external entropy to a G2 point.

    The point is ``k * H(data)`` for a scalar ``k`` derived from ``data`` itself,
    so it is a fixed public function of the input and lands in the same group
    as every later seed.
    """
    return sign(derive_secret(b"genesis-seed" + data), data)
