"""Wire messages exchanged between nodes (in-process objects, never serialized)."""

from __future__ import annotations

from dataclasses import dataclass

from ..chain import Block, MacroBlock, Transaction, ViewChangeMessage
from ..crypto import AggregateSignature, Signature


@dataclass(frozen=True)
class BlockMsg:
    block: Block


@dataclass(frozen=True)
class TxMsg:
    tx: Transaction


@dataclass(frozen=True)
class ViewChangeMsg:
    vc: ViewChangeMessage


@dataclass(frozen=True)
class ProposalMsg:
    view: int
    block: MacroBlock


@dataclass(frozen=True)
class PrepareMsg:
    height: int
    block_hash: bytes
    slots: tuple[int, ...]
    signature: Signature


@dataclass(frozen=True)
class CommitMsg:
    height: int
    block_hash: bytes
    slots: tuple[int, ...]
    signature: Signature


@dataclass(frozen=True)
class CertificateMsg:
    """A proposal together with 2f+1 aggregated prepares, re-sent after a view change."""

    block: MacroBlock
    prepare: AggregateSignature


@dataclass(frozen=True)
class HeadMsg:
    height: int
    block_hash: bytes


@dataclass(frozen=True)
class BlockRequest:
    block_hash: bytes


Message = (BlockMsg | TxMsg | ViewChangeMsg | ProposalMsg | PrepareMsg | CommitMsg
           | CertificateMsg | HeadMsg | BlockRequest)


def gossip_key(msg) -> tuple | None:
    """Identity used by the network to suppress duplicate floods, or None."""
    if isinstance(msg, BlockMsg):
        return ("block", msg.block.hash)
    if isinstance(msg, TxMsg):
        return ("tx", msg.tx.hash)
    return None
