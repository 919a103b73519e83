"""Block structures, evidence types and their canonical encoding.

Micro and macro blocks share one header layout. Whether a height carries a
macro block is a property of the chain parameters (every ``m + 1``-th
height), so the header itself has no kind field.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

from .crypto import (AggregateSignature, ProofOfPossession, PublicKey, SecretKey, Seed,
                     Signature, aggregate_verify, sign, verify)
from .encoding import ZERO_HASH, DecodeError, Reader, Writer, sha256, tagged
from .merkle import merkle_root


class ChainError(ValueError):
    pass


# --------------------------------------------------------------------------- messages

def block_sign_message(header_hash: bytes) -> bytes:
    return Writer().text("BLOCK").hash(header_hash).getvalue()


def prepare_message(header_hash: bytes) -> bytes:
    return Writer().text("PREPARE").hash(header_hash).getvalue()


def commit_message(header_hash: bytes) -> bytes:
    return Writer().text("COMMIT").hash(header_hash).getvalue()


def view_change_message(view: int, block_number: int) -> bytes:
    return tagged("VIEW-CHANGE", view, block_number)


# --------------------------------------------------------------------------- header

@dataclass(frozen=True)
class BlockHeader:
    parent_hash: bytes
    block_number: int
    view_number: int
    digest_root: bytes
    transactions_root: bytes
    state_root: bytes

    def encode_into(self, w: Writer) -> None:
        (w.hash(self.parent_hash).u64(self.block_number).u64(self.view_number)
         .hash(self.digest_root).hash(self.transactions_root).hash(self.state_root))

    @classmethod
    def decode_from(cls, r: Reader) -> "BlockHeader":
        return cls(r.hash(), r.u64(), r.u64(), r.hash(), r.hash(), r.hash())

    def encode(self) -> bytes:
        w = Writer()
        self.encode_into(w)
        return w.getvalue()

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.encode())


def hash_header(header: BlockHeader) -> bytes:
    return header.hash


# --------------------------------------------------------------------------- transactions

class TxKind(enum.IntEnum):
    TRANSFER = 0
    STAKING = 1
    RESTAKING = 2
    UNSTAKING = 3
    REACTIVATE = 4
    TIMESTAMP = 5  # internal, never gossiped

    @property
    def external(self) -> bool:
        return self is not TxKind.TIMESTAMP


def _w_pk(w: Writer, pk: PublicKey) -> None:
    w.blob(pk.point)


def _w_sig(w: Writer, sig: Signature) -> None:
    w.blob(sig.point)


@dataclass(frozen=True)
class Transaction:
    """External or internal state-transition input.

    ``sender`` is the main address of the account paying the fee and whose
    nonce is consumed; for staking-family transactions it is the validator's
    main address, which doubles as its public cold key.
    """

    kind: TxKind
    sender: bytes
    nonce: int = 0
    fee: int = 0
    amount: int | None = None
    recipient: bytes | None = None
    warm_key: PublicKey | None = None
    hot_key: PublicKey | None = None
    proof_of_possession: ProofOfPossession | None = None
    reward_address: bytes | None = None
    timestamp: int | None = None
    signature: Signature | None = None

    def _encode_body(self, w: Writer) -> None:
        w.u8(int(self.kind)).blob(self.sender).u64(self.nonce).u64(self.fee)
        w.optional(self.amount, Writer.u64)
        w.optional(self.recipient, Writer.blob)
        w.optional(self.warm_key, _w_pk)
        w.optional(self.hot_key, _w_pk)
        w.optional(self.proof_of_possession, lambda w_, p: _w_sig(w_, p.signature))
        w.optional(self.reward_address, Writer.blob)
        w.optional(self.timestamp, Writer.u64)

    def signing_bytes(self) -> bytes:
        w = Writer().text("TX")
        self._encode_body(w)
        return w.getvalue()

    def encode_into(self, w: Writer) -> None:
        self._encode_body(w)
        w.optional(self.signature, _w_sig)

    @classmethod
    def decode_from(cls, r: Reader) -> "Transaction":
        try:
            kind = TxKind(r.u8())
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
        sender = r.blob()
        nonce, fee = r.u64(), r.u64()
        amount = r.optional(Reader.u64)
        recipient = r.optional(Reader.blob)
        warm = r.optional(PublicKey.decode_from)
        hot = r.optional(PublicKey.decode_from)
        pop = r.optional(lambda r_: ProofOfPossession(Signature(r_.blob())))
        reward = r.optional(Reader.blob)
        ts = r.optional(Reader.u64)
        sig = r.optional(Signature.decode_from)
        return cls(kind, sender, nonce, fee, amount, recipient, warm, hot, pop, reward, ts, sig)

    def encode(self) -> bytes:
        w = Writer()
        self.encode_into(w)
        return w.getvalue()

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.encode())


def sign_transaction(tx: Transaction, sk: SecretKey) -> Transaction:
    return dataclasses.replace(tx, signature=sign(sk, tx.signing_bytes()))


# --------------------------------------------------------------------------- evidence

@dataclass(frozen=True)
class ViewChangeMessage:
    """Signed vote ``<VIEW-CHANGE, i, b>`` to move height ``b`` into view ``i``.

    ``view_number`` is the view being requested: a quorum of messages with
    ``view_number = i`` retires the owner of view ``i - 1``.
    """

    view_number: int
    block_number: int
    signer_index: int
    signature: Signature

    def message(self) -> bytes:
        return view_change_message(self.view_number, self.block_number)

    def encode_into(self, w: Writer) -> None:
        w.u64(self.view_number).u64(self.block_number).u64(self.signer_index)
        _w_sig(w, self.signature)

    @classmethod
    def decode_from(cls, r: Reader) -> "ViewChangeMessage":
        return cls(r.u64(), r.u64(), r.u64(), Signature.decode_from(r))


@dataclass(frozen=True)
class MicroJustification:
    producer_index: int
    signature: Signature

    def encode_into(self, w: Writer) -> None:
        w.u64(self.producer_index)
        _w_sig(w, self.signature)

    @classmethod
    def decode_from(cls, r: Reader) -> "MicroJustification":
        return cls(r.u64(), Signature.decode_from(r))


@dataclass(frozen=True)
class ForkProof:
    header_a: BlockHeader
    header_b: BlockHeader
    justification_a: MicroJustification
    justification_b: MicroJustification

    def encode_into(self, w: Writer) -> None:
        self.header_a.encode_into(w)
        self.header_b.encode_into(w)
        self.justification_a.encode_into(w)
        self.justification_b.encode_into(w)

    @classmethod
    def decode_from(cls, r: Reader) -> "ForkProof":
        return cls(BlockHeader.decode_from(r), BlockHeader.decode_from(r),
                   MicroJustification.decode_from(r), MicroJustification.decode_from(r))

    @property
    def block_number(self) -> int:
        return self.header_a.block_number

    @property
    def view_number(self) -> int:
        return self.header_a.view_number

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.header_a.block_number, self.header_a.view_number,
                self.justification_a.producer_index)

    def canonical(self) -> "ForkProof":
        """Same proof with the two headers in hash order."""
        if self.header_a.hash <= self.header_b.hash:
            return self
        return ForkProof(self.header_b, self.header_a, self.justification_b, self.justification_a)


def _encode_seq(w: Writer, items: Sequence) -> None:
    w.seq(items, lambda w_, x: x.encode_into(w_))


# --------------------------------------------------------------------------- blocks

@dataclass(frozen=True)
class MicroDigest:
    timestamp: int
    seed: Seed
    view_changes: tuple[ViewChangeMessage, ...] = ()
    fork_proofs: tuple[ForkProof, ...] = ()

    def items(self) -> list[bytes]:
        out = [Writer().text("ts").u64(self.timestamp).getvalue(),
               Writer().text("seed").blob(self.seed.value.point).getvalue()]
        for vc in self.view_changes:
            w = Writer().text("vc")
            vc.encode_into(w)
            out.append(w.getvalue())
        for fp in self.fork_proofs:
            w = Writer().text("fp")
            fp.encode_into(w)
            out.append(w.getvalue())
        return out

    def encode_into(self, w: Writer) -> None:
        w.u64(self.timestamp)
        self.seed.encode_into(w)
        _encode_seq(w, self.view_changes)
        _encode_seq(w, self.fork_proofs)

    @classmethod
    def decode_from(cls, r: Reader) -> "MicroDigest":
        return cls(r.u64(), Seed.decode_from(r),
                   tuple(r.seq(ViewChangeMessage.decode_from)),
                   tuple(r.seq(ForkProof.decode_from)))


@dataclass(frozen=True)
class MacroDigest(MicroDigest):
    validator_list_keys: tuple[PublicKey, ...] = ()
    prev_macro_hash: bytes = ZERO_HASH

    def items(self) -> list[bytes]:
        out = super().items()
        out.extend(Writer().text("vk").blob(k.point).getvalue() for k in self.validator_list_keys)
        out.append(Writer().text("prev").hash(self.prev_macro_hash).getvalue())
        return out

    def encode_into(self, w: Writer) -> None:
        super().encode_into(w)
        w.seq(self.validator_list_keys, _w_pk)
        w.hash(self.prev_macro_hash)

    @classmethod
    def decode_from(cls, r: Reader) -> "MacroDigest":
        base = MicroDigest.decode_from(r)
        keys = tuple(r.seq(PublicKey.decode_from))
        return cls(base.timestamp, base.seed, base.view_changes, base.fork_proofs,
                   keys, r.hash())


@dataclass(frozen=True)
class MacroJustification:
    prepare: AggregateSignature
    commit: AggregateSignature

    def encode_into(self, w: Writer) -> None:
        self.prepare.encode_into(w)
        self.commit.encode_into(w)

    @classmethod
    def decode_from(cls, r: Reader) -> "MacroJustification":
        return cls(AggregateSignature.decode_from(r), AggregateSignature.decode_from(r))


@dataclass(frozen=True)
class MicroBlock:
    header: BlockHeader
    digest: MicroDigest
    transactions: tuple[Transaction, ...]
    justification: MicroJustification

    is_macro = False

    @property
    def hash(self) -> bytes:
        return self.header.hash

    @property
    def height(self) -> int:
        return self.header.block_number

    @property
    def view(self) -> int:
        return self.header.view_number

    def encode_into(self, w: Writer) -> None:
        self.header.encode_into(w)
        self.digest.encode_into(w)
        _encode_seq(w, self.transactions)
        self.justification.encode_into(w)

    @classmethod
    def decode_from(cls, r: Reader) -> "MicroBlock":
        return cls(BlockHeader.decode_from(r), MicroDigest.decode_from(r),
                   tuple(r.seq(Transaction.decode_from)), MicroJustification.decode_from(r))

    def encode(self) -> bytes:
        w = Writer()
        self.encode_into(w)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "MicroBlock":
        r = Reader(data)
        out = cls.decode_from(r)
        r.expect_end()
        return out


@dataclass(frozen=True)
class MacroBlock:
    header: BlockHeader
    digest: MacroDigest
    justification: MacroJustification | None = None  # None only for genesis
    transactions: tuple[Transaction, ...] = field(default=(), init=False)

    is_macro = True

    @property
    def hash(self) -> bytes:
        return self.header.hash

    @property
    def height(self) -> int:
        return self.header.block_number

    @property
    def view(self) -> int:
        return self.header.view_number

    def with_justification(self, justification: MacroJustification) -> "MacroBlock":
        return MacroBlock(self.header, self.digest, justification)

    def encode_into(self, w: Writer) -> None:
        self.header.encode_into(w)
        self.digest.encode_into(w)
        w.optional(self.justification, lambda w_, j: j.encode_into(w_))

    @classmethod
    def decode_from(cls, r: Reader) -> "MacroBlock":
        return cls(BlockHeader.decode_from(r), MacroDigest.decode_from(r),
                   r.optional(MacroJustification.decode_from))

    def encode(self) -> bytes:
        w = Writer()
        self.encode_into(w)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "MacroBlock":
        r = Reader(data)
        out = cls.decode_from(r)
        r.expect_end()
        return out


Block = MicroBlock | MacroBlock


def transactions_root(txs: Sequence[Transaction]) -> bytes:
    return merkle_root([tx.encode() for tx in txs])


def digest_root(digest: MicroDigest) -> bytes:
    return merkle_root(digest.items())


def check_roots(block: Block) -> bool:
    return (block.header.digest_root == digest_root(block.digest)
            and block.header.transactions_root == transactions_root(block.transactions))


# --------------------------------------------------------------------------- validity

SlotResolver = Callable[[int, int], int]


def verify_fork_proof(proof: ForkProof, validator_list: Sequence[PublicKey],
                      slot_owner_resolver: SlotResolver,
                      epoch_bounds: tuple[int, int] | None = None) -> bool:
    """Check two distinct, same-slot headers signed by the slot owner.

    ``epoch_bounds`` is the inclusive height range the validator list is valid
    for; a proof outside it raises instead of returning False.
    """
    a, b = proof.header_a, proof.header_b
    if epoch_bounds is not None:
        lo, hi = epoch_bounds
        if not lo <= a.block_number <= hi:
            raise ChainError("foreign epoch proof")
    if a == b:
        return False
    if a.block_number != b.block_number or a.view_number != b.view_number:
        return False
    owner = slot_owner_resolver(a.block_number, a.view_number)
    ja, jb = proof.justification_a, proof.justification_b
    if ja.producer_index != owner or jb.producer_index != owner:
        return False
    if not 0 <= owner < len(validator_list):
        return False
    pk = validator_list[owner]
    return (verify(pk, block_sign_message(a.hash), ja.signature)
            and verify(pk, block_sign_message(b.hash), jb.signature))


def verify_macro_justification(block: MacroBlock, validator_list: Sequence[PublicKey],
                               f: int) -> bool:
    j = block.justification
    if j is None:
        return False
    n = len(validator_list)
    if len(j.prepare.signers) != n or len(j.commit.signers) != n:
        raise ChainError("bitmap/key-list mismatch")
    quorum = 2 * f + 1
    if j.prepare.count() < quorum or j.commit.count() < quorum:
        return False
    both = sum(1 for p, c in zip(j.prepare.signers, j.commit.signers) if p and c)
    if both < quorum:
        return False
    h = block.header.hash
    return (aggregate_verify(validator_list, prepare_message(h), j.prepare)
            and aggregate_verify(validator_list, commit_message(h), j.commit))


def encode_block(block: Block) -> bytes:
    return block.encode()
