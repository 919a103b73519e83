"""Archival, full and light synchronization from a chain export.

archival
    decodes and fully validates every block from genesis, re-deriving the
    state.
full
    follows the macro blocks only (``prev_macro_hash`` links plus a 2f+1
    justification under the previous validator list), takes the shipped
    state snapshot if its root matches the last macro header, and fully
    validates the micro blocks after that macro. Older micro records are
    skipped without being decoded.
light
    checks the same macro chain, then only the headers and digests of the
    current epoch: links, digest roots, producer, signature, seed chain and
    view-change quorums. No transaction is executed and no state is held;
    account data is obtained through Merkle proofs against ``state_root``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .chain import (Block, BlockHeader, ChainError, MacroBlock, block_sign_message, digest_root,
                    verify_macro_justification)
from .consensus.rules import ListChainView, Rejected, apply_block, check_view_changes
from .crypto import PublicKey, verify, verify_seed
from .encoding import DecodeError
from .export import MACRO, ChainExport, parse_export
from .merkle import MerkleProof
from .params import ChainParams
from .selection import resolve_slot
from .state import ChainState, verify_state_proof


class SyncError(Exception):
    """``kind`` is one of: format, block, macro-link, justification, state-root, header, proof."""

    def __init__(self, kind: str, height: int | None, reason: str) -> None:
        where = f" at height {height}" if height is not None else ""
        super().__init__(f"{kind} error{where}: {reason}")
        self.kind = kind
        self.height = height
        self.reason = reason


@dataclass
class SyncResult:
    mode: str
    head_hash: bytes
    head_height: int
    validator_list: tuple[PublicKey, ...]
    state_root: bytes
    state: ChainState | None = None
    headers: list[BlockHeader] = field(default_factory=list)
    decoded_heights: list[int] = field(default_factory=list)  # which records were read


def _load(source) -> ChainExport:
    if isinstance(source, ChainExport):
        return source
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        try:
            data = Path(source).read_bytes()
        except OSError as exc:
            raise SyncError("format", None, f"cannot read {source}: {exc}") from None
    try:
        return parse_export(data)
    except (DecodeError, ValueError) as exc:
        raise SyncError("format", None, str(exc)) from None


def _decode(rec, out: list[int]) -> Block:
    out.append(rec.height)
    try:
        block = rec.decode()
    except (DecodeError, ValueError) as exc:
        raise SyncError("format", rec.height, str(exc)) from None
    if block.height != rec.height:
        raise SyncError("format", rec.height, "record height does not match block")
    return block


# ---------------------------------------------------------------- archival

def sync_archival(source) -> SyncResult:
    export = _load(source)
    params = export.genesis.params
    parent, state = export.genesis.build()
    blocks: dict[int, Block] = {0: parent}
    states: dict[int, ChainState] = {0: state}
    read: list[int] = []
    for rec in export.records:
        block = _decode(rec, read)
        try:
            state = apply_block(parent, state, block, params, ListChainView(blocks, states))
        except Rejected as exc:
            raise SyncError("block", block.height, exc.reason) from None
        blocks[block.height] = block
        states[block.height] = state
        if block.is_macro:
            # evidence never reaches back past the previous epoch
            floor = params.macro_height(params.epoch_of(block.height) - 1)
            for h in [h for h in states if 0 < h < floor]:
                del states[h]
        parent = block
    return SyncResult("archival", parent.hash, parent.height, state.ledger.keys,
                      parent.header.state_root, state, decoded_heights=read)


# ---------------------------------------------------------------- macro chain

def _macro_chain(export: ChainExport, read: list[int]) -> tuple[MacroBlock, list, ChainParams]:
    """Verify the macro-block chain; returns the last macro and the records after it."""
    params = export.genesis.params
    last, _ = export.genesis.build()
    keys = last.digest.validator_list_keys
    records = export.records
    macro_idx = [i for i, rec in enumerate(records) if rec.kind == MACRO]
    for i in macro_idx:
        block = _decode(records[i], read)
        if not isinstance(block, MacroBlock) or not params.is_macro_height(block.height):
            raise SyncError("format", block.height, "macro record at a micro height")
        if block.digest.prev_macro_hash != last.hash:
            raise SyncError("macro-link", block.height, "prev_macro_hash does not match")
        if block.height != last.height + params.m + 1:
            raise SyncError("macro-link", block.height, "macro block missing")
        try:
            ok = verify_macro_justification(block, keys, params.f)
        except (ChainError, ValueError) as exc:
            raise SyncError("justification", block.height, str(exc)) from None
        if not ok:
            raise SyncError("justification", block.height, "no 2f+1 justification")
        last, keys = block, block.digest.validator_list_keys
    tail = records[macro_idx[-1] + 1:] if macro_idx else records
    return last, tail, params


# ---------------------------------------------------------------- full

def sync_full(source) -> SyncResult:
    export = _load(source)
    read: list[int] = []
    macro, tail, params = _macro_chain(export, read)
    if macro.height == 0:
        state = export.genesis.initial_state()
    else:
        if export.snapshot is None or export.snapshot_height != macro.height:
            raise SyncError("state-root", macro.height, "no state snapshot for the last macro block")
        try:
            state = export.snapshot_state()
        except (DecodeError, ValueError) as exc:
            raise SyncError("format", macro.height, f"snapshot: {exc}") from None
    if state.root() != macro.header.state_root:
        raise SyncError("state-root", macro.height, "snapshot does not match the macro state root")
    blocks: dict[int, Block] = {macro.height: macro}
    states: dict[int, ChainState] = {macro.height: state}
    parent = macro
    for rec in tail:
        block = _decode(rec, read)
        try:
            state = apply_block(parent, state, block, params, ListChainView(blocks, states))
        except Rejected as exc:
            raise SyncError("block", block.height, exc.reason) from None
        blocks[block.height], states[block.height] = block, state
        parent = block
    return SyncResult("full", parent.hash, parent.height, state.ledger.keys,
                      parent.header.state_root, state, decoded_heights=read)


# ---------------------------------------------------------------- light

def sync_light(source) -> SyncResult:
    export = _load(source)
    read: list[int] = []
    macro, tail, params = _macro_chain(export, read)
    keys = macro.digest.validator_list_keys
    barred: set[int] = set()
    parent: Block = macro
    headers = [macro.header]
    for rec in tail:
        block = _decode(rec, read)
        h = block.height
        if block.is_macro or block.header.parent_hash != parent.hash or h != parent.height + 1:
            raise SyncError("header", h, "broken header chain")
        if digest_root(block.digest) != block.header.digest_root:
            raise SyncError("header", h, "digest root mismatch")
        producer = block.justification.producer_index
        owner = resolve_slot(parent.digest.seed, params.n, block.view, barred)
        if producer != owner or producer in barred:
            raise SyncError("header", h, "wrong producer")
        pk = keys[producer]
        if not verify(pk, block_sign_message(block.hash), block.justification.signature):
            raise SyncError("header", h, "bad signature")
        if not verify_seed(pk, parent.digest.seed, block.digest.seed):
            raise SyncError("header", h, "bad seed")
        try:
            check_view_changes(block.digest.view_changes, h, block.view, keys, params)
        except Rejected as exc:
            raise SyncError("header", h, exc.reason) from None
        if params.punishments:
            # mirror the barring that full nodes derive from the same digest
            skipped = [resolve_slot(parent.digest.seed, params.n, j, barred)
                       for j in range(block.view)]
            for proof in block.digest.fork_proofs:
                if params.epoch_of(proof.block_number) == params.epoch_of(h):
                    barred.add(proof.justification_a.producer_index)
            barred.update(skipped)
        headers.append(block.header)
        parent = block
    return SyncResult("light", parent.hash, parent.height, keys, parent.header.state_root,
                      headers=headers, decoded_heights=read)


SYNC_MODES = {"archival": sync_archival, "full": sync_full, "light": sync_light}


def sync(mode: str, source) -> SyncResult:
    try:
        fn = SYNC_MODES[mode]
    except KeyError:
        raise SyncError("format", None, f"unknown sync mode {mode!r}") from None
    return fn(source)


# ---------------------------------------------------------------- state queries

def make_proof(state: ChainState, key: bytes, height: int) -> dict:
    """JSON-ready Merkle proof of one state leaf."""
    value, proof = state.prove(key)
    return {"height": height, "state_root": state.root().hex(), "key": key.hex(),
            "value": value.hex(), "proof": proof.to_json()}


def check_proof(obj: dict, state_root: bytes, key: bytes | None = None) -> bytes:
    """Return the proven value, or raise ``SyncError("proof", ...)``."""
    try:
        k = bytes.fromhex(obj["key"])
        value = bytes.fromhex(obj["value"])
        proof = MerkleProof.from_json(obj["proof"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SyncError("proof", obj.get("height") if isinstance(obj, dict) else None,
                        f"malformed proof: {exc}") from None
    if key is not None and k != key:
        raise SyncError("proof", obj.get("height"), "proof is for a different key")
    if not verify_state_proof(state_root, k, value, proof):
        raise SyncError("proof", obj.get("height"), "Merkle proof does not match the state root")
    return value


def load_proof(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SyncError("proof", None, f"cannot read proof: {exc}") from None
