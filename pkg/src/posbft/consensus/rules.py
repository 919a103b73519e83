"""Block validity and state transition, independent of any node.

These functions are shared by the live node, the block producer and archival
or full sync, so that all of them agree bit for bit on the post-state.
Ancestry that a rule needs (the seed before a forked height, the previous
macro block) is read through a :class:`ChainView` of the branch being
extended.
"""

from __future__ import annotations

from typing import Iterable, Protocol, Sequence

from ..chain import (Block, BlockHeader, ForkProof, MacroBlock, MacroDigest, MicroBlock,
                     MicroDigest, MicroJustification, Transaction, ViewChangeMessage,
                     block_sign_message, check_roots, digest_root, transactions_root,
                     verify_fork_proof, verify_macro_justification)
from ..crypto import PublicKey, SecretKey, Seed, next_seed, sign, verify, verify_seed
from ..encoding import ZERO_HASH
from ..params import ChainParams
from ..selection import resolve_slot
from ..staking import (Rejected, apply_transaction, draw_validator_list, punish, rotate_epoch,
                       settle_epoch)
from ..state import ChainState

__all__ = [
    "ChainView", "ListChainView", "Rejected", "apply_block", "apply_macro_block",
    "apply_micro_block", "build_macro_proposal", "build_micro_block", "check_fork_proofs",
    "check_view_changes", "execute_macro", "execute_micro", "slot_owner",
]


class ChainView(Protocol):
    def block_at(self, height: int) -> Block | None: ...

    def state_at(self, height: int) -> ChainState | None: ...


class ListChainView:
    """Branch given as explicit per-height maps; missing heights are unknown."""

    def __init__(self, blocks: dict[int, Block] | None = None,
                 states: dict[int, ChainState] | None = None) -> None:
        self.blocks = blocks if blocks is not None else {}
        self.states = states if states is not None else {}

    def block_at(self, height: int) -> Block | None:
        return self.blocks.get(height)

    def state_at(self, height: int) -> ChainState | None:
        return self.states.get(height)


def slot_owner(parent: Block, parent_state: ChainState, params: ChainParams, view: int) -> int:
    """Validator-list slot entitled to the block after ``parent`` at ``view``."""
    return resolve_slot(parent.digest.seed, params.n, view, parent_state.ledger.barred)


# ---------------------------------------------------------------- evidence checks

def check_view_changes(view_changes: Sequence[ViewChangeMessage], height: int, view: int,
                       keys: Sequence[PublicKey], params: ChainParams) -> None:
    """Require 2f+1 distinct valid signers for every view ``1..view``."""
    if view == 0:
        if view_changes:
            raise Rejected("bad view change")
        return
    signers: dict[int, set[int]] = {}
    for vc in view_changes:
        if vc.block_number != height or not 1 <= vc.view_number <= view:
            raise Rejected("bad view change")
        if vc.signer_index >= len(keys):
            raise Rejected("bad view change")
        seen = signers.setdefault(vc.view_number, set())
        if vc.signer_index in seen:
            raise Rejected("bad view change")
        if not verify(keys[vc.signer_index], vc.message(), vc.signature):
            raise Rejected("bad view change")
        seen.add(vc.signer_index)
    for target in range(1, view + 1):
        if len(signers.get(target, ())) < params.quorum:
            raise Rejected("missing view-change quorum")


def _proof_resolver(chain: ChainView, params: ChainParams, fallback: ForkProof):
    def resolve(height: int, view: int) -> int:
        before = chain.block_at(height - 1)
        before_state = chain.state_at(height - 1)
        if before is None or before_state is None:
            # ancestry not held (full sync of a trimmed chain): trust the claimed index
            return fallback.justification_a.producer_index
        return slot_owner(before, before_state, params, view)
    return resolve


def check_fork_proofs(proofs: Sequence[ForkProof], height: int, parent_state: ChainState,
                      params: ChainParams, chain: ChainView) -> list[tuple[ForkProof, bool]]:
    """Validate proofs for inclusion at ``height``; returns (proof, is_previous_epoch)."""
    ledger = parent_state.ledger
    epoch = ledger.epoch_number
    out = []
    keys_seen = set()
    for proof in proofs:
        b = proof.block_number
        if b >= height or params.is_macro_height(b):
            raise Rejected("bad fork proof")
        proof_epoch = params.epoch_of(b)
        if proof_epoch == epoch:
            keys, previous = ledger.keys, False
        elif proof_epoch == epoch - 1 and ledger.prev_keys:
            keys, previous = ledger.prev_keys, True
        else:
            raise Rejected("bad fork proof")
        if proof.key in ledger.proven or proof.key in keys_seen:
            raise Rejected("duplicate fork proof")
        if not verify_fork_proof(proof, keys, _proof_resolver(chain, params, proof),
                                 params.epoch_bounds(proof_epoch)):
            raise Rejected("bad fork proof")
        keys_seen.add(proof.key)
        out.append((proof, previous))
    return out


def _apply_evidence(state: ChainState, parent: Block, parent_state: ChainState,
                    params: ChainParams, view: int,
                    proofs: Iterable[tuple[ForkProof, bool]]) -> None:
    for proof, previous in proofs:
        state.ledger.proven.add(proof.key)
        punish(state, proof.justification_a.producer_index, previous_epoch=previous, fork=True,
               params=params)
    # owners skipped by the embedded view-change quorums are treated as delayers
    skipped = [slot_owner(parent, parent_state, params, j) for j in range(view)]
    for slot in dict.fromkeys(skipped):
        punish(state, slot, previous_epoch=False, fork=False, params=params)


# ---------------------------------------------------------------- transitions

def execute_micro(parent: Block, parent_state: ChainState, params: ChainParams, view: int,
                  proofs: Sequence[tuple[ForkProof, bool]], txs: Iterable[Transaction],
                  skip_invalid: bool = False) -> tuple[ChainState, list[Transaction]]:
    state = parent_state.copy()
    _apply_evidence(state, parent, parent_state, params, view, proofs)
    epoch = state.ledger.epoch_number
    included = []
    for tx in txs:
        if len(included) >= params.max_block_txs:
            break
        # rejected transactions leave the state untouched, no copy needed
        try:
            apply_transaction(state, tx, epoch)
        except Rejected as exc:
            if skip_invalid:
                continue
            raise Rejected(f"bad transaction: {exc.reason}") from None
        included.append(tx)
    return state, included


def execute_macro(parent: Block, parent_state: ChainState, params: ChainParams, view: int,
                  proofs: Sequence[tuple[ForkProof, bool]], seed: Seed) -> ChainState:
    state = parent_state.copy()
    _apply_evidence(state, parent, parent_state, params, view, proofs)
    settle_epoch(state, params)
    slots, keys = draw_validator_list(state, seed, params)
    rotate_epoch(state, slots, keys, params)
    return state


def _check_common(parent: Block, block: Block, params: ChainParams, macro: bool) -> None:
    h = block.height
    if h != parent.height + 1 or block.header.parent_hash != parent.hash:
        raise Rejected("bad parent link")
    if params.is_macro_height(h) != macro:
        raise Rejected("bad height")
    if not check_roots(block):
        raise Rejected("bad roots")
    if block.digest.timestamp < parent.digest.timestamp:
        raise Rejected("bad timestamp")


def apply_micro_block(parent: Block, parent_state: ChainState, block: MicroBlock,
                      params: ChainParams, chain: ChainView) -> ChainState:
    """Validate ``block`` on top of ``parent`` and return the post-state."""
    _check_common(parent, block, params, macro=False)
    ledger = parent_state.ledger
    producer = block.justification.producer_index
    if producer >= params.n:
        raise Rejected("wrong producer")
    if producer in ledger.barred:
        raise Rejected("barred validator")
    if producer != slot_owner(parent, parent_state, params, block.view):
        raise Rejected("wrong producer")
    pk = ledger.keys[producer]
    if not verify(pk, block_sign_message(block.hash), block.justification.signature):
        raise Rejected("bad signature")
    if not verify_seed(pk, parent.digest.seed, block.digest.seed):
        raise Rejected("bad seed")
    check_view_changes(block.digest.view_changes, block.height, block.view, ledger.keys, params)
    if len(block.transactions) > params.max_block_txs:
        raise Rejected("too many transactions")
    if any(not tx.kind.external for tx in block.transactions):
        raise Rejected("bad transaction: internal transaction in block body")
    proofs = check_fork_proofs(block.digest.fork_proofs, block.height, parent_state, params, chain)
    state, _ = execute_micro(parent, parent_state, params, block.view, proofs, block.transactions)
    if state.root() != block.header.state_root:
        raise Rejected("bad state root")
    return state


def apply_macro_block(parent: Block, parent_state: ChainState, block: MacroBlock,
                      params: ChainParams, chain: ChainView,
                      check_justification: bool = True) -> ChainState:
    """Validate a macro block (or, without justification, a proposal)."""
    _check_common(parent, block, params, macro=True)
    ledger = parent_state.ledger
    leader = slot_owner(parent, parent_state, params, block.view)
    if not verify_seed(ledger.keys[leader], parent.digest.seed, block.digest.seed):
        raise Rejected("bad seed")
    check_view_changes(block.digest.view_changes, block.height, block.view, ledger.keys, params)
    proofs = check_fork_proofs(block.digest.fork_proofs, block.height, parent_state, params, chain)
    prev_macro = chain.block_at(params.macro_height(params.epoch_of(block.height) - 1))
    if prev_macro is not None and block.digest.prev_macro_hash != prev_macro.hash:
        raise Rejected("bad macro link")
    state = execute_macro(parent, parent_state, params, block.view, proofs, block.digest.seed)
    if tuple(block.digest.validator_list_keys) != state.ledger.keys:
        raise Rejected("bad validator list")
    if state.root() != block.header.state_root:
        raise Rejected("bad state root")
    if check_justification:
        try:
            ok = verify_macro_justification(block, ledger.keys, params.f)
        except ValueError:
            ok = False
        if not ok:
            raise Rejected("bad justification")
    return state


def apply_block(parent: Block, parent_state: ChainState, block: Block, params: ChainParams,
                chain: ChainView) -> ChainState:
    if isinstance(block, MacroBlock):
        return apply_macro_block(parent, parent_state, block, params, chain)
    return apply_micro_block(parent, parent_state, block, params, chain)


# ---------------------------------------------------------------- production

def build_micro_block(parent: Block, parent_state: ChainState, params: ChainParams,
                      chain: ChainView, slot: int, sk: SecretKey, view: int, timestamp: int,
                      view_changes: Sequence[ViewChangeMessage] = (),
                      fork_proofs: Sequence[ForkProof] = (),
                      candidates: Iterable[Transaction] = ()) -> MicroBlock:
    """Assemble and sign a micro block; invalid candidate transactions are skipped.

    Raises ``Rejected("not slot owner")`` if ``slot`` does not own ``view``.
    """
    if slot != slot_owner(parent, parent_state, params, view):
        raise Rejected("not slot owner")
    check_view_changes(view_changes, parent.height + 1, view, parent_state.ledger.keys, params)
    proofs = check_fork_proofs(fork_proofs, parent.height + 1, parent_state, params, chain)
    state, txs = execute_micro(parent, parent_state, params, view, proofs, candidates,
                               skip_invalid=True)
    digest = MicroDigest(max(timestamp, parent.digest.timestamp), next_seed(sk, parent.digest.seed),
                         tuple(view_changes), tuple(fork_proofs))
    header = BlockHeader(parent.hash, parent.height + 1, view, digest_root(digest),
                         transactions_root(txs), state.root())
    return MicroBlock(header, digest, tuple(txs),
                      MicroJustification(slot, sign(sk, block_sign_message(header.hash))))


def build_macro_proposal(parent: Block, parent_state: ChainState, params: ChainParams,
                         chain: ChainView, sk: SecretKey, view: int, timestamp: int,
                         view_changes: Sequence[ViewChangeMessage] = (),
                         fork_proofs: Sequence[ForkProof] = ()) -> tuple[MacroBlock, ChainState]:
    height = parent.height + 1
    check_view_changes(view_changes, height, view, parent_state.ledger.keys, params)
    proofs = check_fork_proofs(fork_proofs, height, parent_state, params, chain)
    seed = next_seed(sk, parent.digest.seed)
    state = execute_macro(parent, parent_state, params, view, proofs, seed)
    prev_macro = chain.block_at(params.macro_height(params.epoch_of(height) - 1))
    digest = MacroDigest(max(timestamp, parent.digest.timestamp), seed, tuple(view_changes),
                         tuple(fork_proofs), state.ledger.keys,
                         prev_macro.hash if prev_macro is not None else ZERO_HASH)
    header = BlockHeader(parent.hash, height, view, digest_root(digest), transactions_root(()),
                         state.root())
    return MacroBlock(header, digest), state
