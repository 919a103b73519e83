"""Signatures, aggregation, proofs of possession and the seed chain.

Two interchangeable backends implement the same contract: ``"bls"`` (real
pairing-based BLS12-381) and ``"mock"`` (keyed hashes, fast, insecure). The
backend of a public key or signature is recovered from its byte length, so
values never need to carry a scheme tag on the wire.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from types import ModuleType
from typing import Iterable, Sequence

from ..encoding import Reader, Writer, sha256
from . import bls as _bls
from . import mock as _mock

BACKENDS: dict[str, ModuleType] = {"mock": _mock, "bls": _bls}
_BY_PK_LEN = {m.PK_LEN: m for m in BACKENDS.values()}
_BY_SIG_LEN = {m.SIG_LEN: m for m in BACKENDS.values()}

GENESIS_SEED_CONSTANT = b"posbft genesis seed constant v1\x00"


class CryptoError(ValueError):
    pass


def backend(name: str) -> ModuleType:
    try:
        return BACKENDS[name]
    except KeyError:
        raise CryptoError(f"unknown signature scheme {name!r}") from None


@dataclass(frozen=True)
class SecretKey:
    scalar: bytes = field(repr=False)
    scheme: str = "mock"


@dataclass(frozen=True, order=True)
class PublicKey:
    point: bytes

    @property
    def scheme(self) -> str:
        m = _BY_PK_LEN.get(len(self.point))
        return m.NAME if m else "unknown"

    def hex(self) -> str:
        return self.point.hex()

    def encode_into(self, w: Writer) -> None:
        w.blob(self.point)

    @classmethod
    def decode_from(cls, r: Reader) -> "PublicKey":
        return cls(r.blob())

    def encode(self) -> bytes:
        return Writer().blob(self.point).getvalue()


@dataclass(frozen=True)
class Signature:
    point: bytes

    def encode_into(self, w: Writer) -> None:
        w.blob(self.point)

    @classmethod
    def decode_from(cls, r: Reader) -> "Signature":
        return cls(r.blob())


@dataclass(frozen=True)
class AggregateSignature:
    point: bytes
    signers: tuple[bool, ...]

    @property
    def positions(self) -> list[int]:
        return [i for i, bit in enumerate(self.signers) if bit]

    def count(self) -> int:
        return sum(self.signers)

    def encode_into(self, w: Writer) -> None:
        w.blob(self.point)
        w.u32(len(self.signers))
        packed = bytearray((len(self.signers) + 7) // 8)
        for i, bit in enumerate(self.signers):
            if bit:
                packed[i // 8] |= 0x80 >> (i % 8)
        w.raw(bytes(packed))

    @classmethod
    def decode_from(cls, r: Reader) -> "AggregateSignature":
        point = r.blob()
        size = r.u32()
        packed = r.raw((size + 7) // 8)
        bits = tuple(bool(packed[i // 8] & (0x80 >> (i % 8))) for i in range(size))
        return cls(point, bits)


@dataclass(frozen=True)
class ProofOfPossession:
    signature: Signature


@dataclass(frozen=True)
class Seed:
    value: Signature

    def encode(self) -> bytes:
        return Writer().text("SEED").blob(self.value.point).getvalue()

    def encode_into(self, w: Writer) -> None:
        w.blob(self.value.point)

    @classmethod
    def decode_from(cls, r: Reader) -> "Seed":
        return cls(Signature(r.blob()))


def keygen(entropy: bytes, scheme: str = "mock") -> tuple[SecretKey, PublicKey]:
    """Deterministically map 32 bytes of entropy to a keypair."""
    m = backend(scheme)
    scalar = m.derive_secret(bytes(entropy))
    return SecretKey(scalar, scheme), PublicKey(m.public_key(scalar))


def public_key_of(sk: SecretKey) -> PublicKey:
    return PublicKey(backend(sk.scheme).public_key(sk.scalar))


def sign(sk: SecretKey, message: bytes) -> Signature:
    return Signature(backend(sk.scheme).sign(sk.scalar, message))


def verify(pk: PublicKey, message: bytes, sig: Signature) -> bool:
    m = _BY_PK_LEN.get(len(pk.point))
    if m is None or len(sig.point) != m.SIG_LEN:
        return False
    return m.verify(pk.point, message, sig.point)


def aggregate(sigs: Sequence[Signature], positions: Sequence[int],
              size: int | None = None) -> AggregateSignature:
    """Sum signatures and record their signer positions in a bitmap.

    ``size`` is the length of the ordered key list the positions index into;
    it defaults to the smallest list that contains every position.
    """
    if not sigs:
        raise CryptoError("nothing to aggregate")
    if len(sigs) != len(positions):
        raise CryptoError("one position per signature required")
    if len(set(positions)) != len(positions):
        raise CryptoError("duplicate signer")
    if size is None:
        size = max(positions) + 1
    if min(positions) < 0 or max(positions) >= size:
        raise CryptoError("signer position out of range")
    lengths = {len(s.point) for s in sigs}
    if len(lengths) != 1 or lengths.pop() not in _BY_SIG_LEN:
        raise CryptoError("mixed or malformed signatures")
    m = _BY_SIG_LEN[len(sigs[0].point)]
    if len(sigs) == 1:
        point = sigs[0].point
    else:
        try:
            point = m.combine([s.point for s in sigs])
        except Exception as exc:
            raise CryptoError(f"cannot aggregate: {exc}") from exc
    chosen = set(positions)
    return AggregateSignature(point, tuple(i in chosen for i in range(size)))


def aggregate_verify(keys: Sequence[PublicKey], message: bytes,
                     agg: AggregateSignature) -> bool:
    if len(agg.signers) != len(keys):
        raise CryptoError("bitmap/key-list mismatch")
    selected = [keys[i].point for i in agg.positions]
    if not selected:
        return False
    m = _BY_PK_LEN.get(len(selected[0]))
    if m is None or len(agg.point) != m.SIG_LEN:
        return False
    return m.aggregate_verify(selected, message, agg.point)


def possession_message(pk: PublicKey) -> bytes:
    return Writer().text("POP").blob(pk.point).getvalue()


def prove_possession(sk: SecretKey) -> ProofOfPossession:
    return ProofOfPossession(sign(sk, possession_message(public_key_of(sk))))


def verify_possession(pk: PublicKey, pop: ProofOfPossession | None) -> bool:
    return pop is not None and verify(pk, possession_message(pk), pop.signature)


def genesis_seed(entropy: bytes = GENESIS_SEED_CONSTANT, scheme: str = "mock") -> Seed:
    """Hash external entropy into the seed space of ``scheme``."""
    return Seed(Signature(backend(scheme).hash_to_seed(entropy)))


def next_seed(sk: SecretKey, prev: Seed) -> Seed:
    return Seed(sign(sk, prev.encode()))


def verify_seed(pk: PublicKey, prev: Seed, claimed: Seed) -> bool:
    return verify(pk, prev.encode(), claimed.value)


def seed_entropy(seed: Seed, counter: int) -> int:
    """256-bit integer ``hash(S || i)`` with ``i`` as 8-byte big-endian."""
    if counter < 0:
        raise CryptoError("counter must be non-negative")
    return int.from_bytes(sha256(seed.value.point + counter.to_bytes(8, "big")), "big")


def write_key_file(path: str | Path, keys: Iterable[tuple[SecretKey, PublicKey]]) -> None:
    lines = [f"{sk.scalar.hex()} {pk.hex()}" for sk, pk in keys]
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_file(path: str | Path) -> list[tuple[SecretKey, PublicKey]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CryptoError(f"line {lineno}: expected '<secret hex> <public hex>'")
        scalar, point = bytes.fromhex(parts[0]), bytes.fromhex(parts[1])
        m = _BY_PK_LEN.get(len(point))
        if m is None or len(scalar) != m.SK_LEN:
            raise CryptoError(f"line {lineno}: unrecognised key lengths")
        sk = SecretKey(scalar, m.NAME)
        if public_key_of(sk).point != point:
            raise CryptoError(f"line {lineno}: public key does not match secret")
        out.append((sk, PublicKey(point)))
    return out


__all__ = [
    "AggregateSignature", "BACKENDS", "CryptoError", "ProofOfPossession", "PublicKey",
    "SecretKey", "Seed", "Signature", "aggregate", "aggregate_verify", "genesis_seed",
    "keygen", "next_seed", "prove_possession", "public_key_of", "read_key_file",
    "seed_entropy", "sign", "verify", "verify_possession", "verify_seed",
    "write_key_file",
]
