import dataclasses

import pytest

from posbft.chain import (ForkProof, MacroJustification, MicroJustification, block_sign_message,
                          commit_message, digest_root, prepare_message)
from posbft.consensus.rules import (Rejected, apply_block, apply_macro_block, build_macro_proposal,
                                    build_micro_block, check_view_changes, slot_owner)
from posbft.crypto import Signature, aggregate, next_seed, sign
from posbft.state import Status

from conftest import make_kit


def accept(kit, block):
    parent, state = kit.head
    post = apply_block(parent, state, block, kit.params, kit.view())
    kit.extend(block, post)
    return post


def resign(kit, block, **digest_changes):
    """Re-seal ``block`` after editing its digest, as its producer would."""
    digest = dataclasses.replace(block.digest, **digest_changes)
    header = dataclasses.replace(block.header, digest_root=digest_root(digest))
    slot = block.justification.producer_index
    sk = kit.secret_for(kit.head[1], slot)
    just = MicroJustification(slot, sign(sk, block_sign_message(header.hash)))
    return dataclasses.replace(block, header=header, digest=digest, justification=just)


def rejects(kit, block, reason):
    parent, state = kit.head
    with pytest.raises(Rejected, match=reason):
        apply_block(parent, state, block, kit.params, kit.view())


# ---------------------------------------------------------------- micro blocks

def test_valid_block_with_transfer(kit):
    block = kit.build(candidates=[kit.transfer(amount=40, fee=2)])
    post = accept(kit, block)
    assert post.root() == block.header.state_root
    assert post.balance(b"\x07" * 32) == 40
    assert post.ledger.fees == 2


def test_invalid_candidates_skipped_by_producer(kit):
    good, bad = kit.transfer(nonce=0), kit.transfer(nonce=5)
    block = kit.build(candidates=[bad, good])
    assert block.transactions == (good,)


def test_not_slot_owner(kit):
    wrong = (kit.owner() + 1) % kit.params.n
    with pytest.raises(Rejected, match="not slot owner"):
        kit.build(slot=wrong)


def test_wrong_producer_index_rejected(kit):
    block = kit.build()
    other = (block.justification.producer_index + 1) % kit.params.n
    forged = dataclasses.replace(block, justification=MicroJustification(
        other, sign(kit.secret_for(kit.head[1], other), block_sign_message(block.hash))))
    rejects(kit, forged, "wrong producer")


def test_bad_signature_rejected(kit):
    block = kit.build()
    forged = dataclasses.replace(block, justification=dataclasses.replace(
        block.justification, signature=Signature(bytes(32))))
    rejects(kit, forged, "bad signature")


def test_bad_seed_rejected(kit):
    block = kit.build()
    parent, state = kit.head
    someone = kit.secret_for(state, (block.justification.producer_index + 1) % kit.params.n)
    rejects(kit, resign(kit, block, seed=next_seed(someone, parent.digest.seed)), "bad seed")


def test_bad_timestamp_rejected(kit):
    accept(kit, kit.build(ts=500))
    block = kit.build(ts=600)
    rejects(kit, resign(kit, block, timestamp=499), "bad timestamp")


def test_timestamp_clamped_to_parent(kit):
    accept(kit, kit.build(ts=500))
    assert kit.build(ts=10).digest.timestamp == 500


def test_bad_roots_and_links(kit):
    block = kit.build(candidates=[kit.transfer()])
    rejects(kit, dataclasses.replace(block, transactions=()), "bad roots")
    parent, state = kit.head
    accept(kit, kit.build())
    # a block for height 1 no longer fits on the new head
    with pytest.raises(Rejected, match="bad parent link"):
        apply_block(kit.head[0], kit.head[1], block, kit.params, kit.view())


def test_tampered_state_root(kit):
    block = kit.build()
    header = dataclasses.replace(block.header, state_root=bytes(32))
    slot = block.justification.producer_index
    sig = sign(kit.secret_for(kit.head[1], slot), block_sign_message(header.hash))
    rejects(kit, dataclasses.replace(block, header=header,
                                     justification=MicroJustification(slot, sig)), "bad state root")


# ---------------------------------------------------------------- view changes

def test_higher_view_needs_quorum(kit):
    with pytest.raises(Rejected, match="missing view-change quorum"):
        kit.build(view=1)
    q = kit.quorum(1, 1)
    with pytest.raises(Rejected, match="missing view-change quorum"):
        kit.build(view=1, view_changes=q[:-1])
    block = kit.build(view=1, view_changes=q)
    post = accept(kit, block)
    # the skipped view-0 owner forfeits the slot reward but may reactivate
    slot = slot_owner(kit.blocks[0], kit.states[0], kit.params, 0)
    entry = post.registry[post.ledger.slots[slot]]
    assert entry.status is Status.MARKED and entry.reactivatable
    assert slot in post.ledger.slashed


def test_view_change_evidence_checks(kit):
    keys, params = kit.head[1].ledger.keys, kit.params
    q = kit.quorum(1, 2)
    check_view_changes(q, 1, 2, keys, params)
    with pytest.raises(Rejected, match="missing view-change quorum"):
        check_view_changes(kit.quorum(1, 1), 1, 2, keys, params)
    with pytest.raises(Rejected, match="bad view change"):
        check_view_changes(q + [q[0]], 1, 2, keys, params)  # duplicate signer
    with pytest.raises(Rejected, match="bad view change"):
        check_view_changes(kit.quorum(2, 1), 1, 1, keys, params)  # other height
    with pytest.raises(Rejected, match="bad view change"):
        check_view_changes(q[:1], 1, 0, keys, params)  # evidence at view 0
    forged = dataclasses.replace(q[0], signature=Signature(bytes(32)))
    with pytest.raises(Rejected, match="bad view change"):
        check_view_changes([forged] + q[1:], 1, 2, keys, params)


# ---------------------------------------------------------------- fork proofs

def test_fork_proof_bars_and_slashes(kit):
    a, b = kit.build(ts=100), kit.build(ts=101)
    proof = ForkProof(a.header, b.header, a.justification, b.justification)
    cheater = a.justification.producer_index
    post = accept(kit, a)
    block = kit.build(fork_proofs=[proof])
    post = accept(kit, block)
    assert cheater in post.ledger.barred and cheater in post.ledger.slashed
    assert proof.key in post.ledger.proven
    # the same proof cannot be used twice
    with pytest.raises(Rejected, match="duplicate fork proof"):
        kit.build(fork_proofs=[proof])


def test_barred_validator_cannot_produce():
    kit = make_kit()
    # walk until the cheater owns a later height, then check it is refused
    a, b = kit.build(ts=100), kit.build(ts=101)
    cheater = a.justification.producer_index
    accept(kit, a)
    accept(kit, kit.build(fork_proofs=[ForkProof(a.header, b.header, a.justification,
                                                 b.justification)]))
    parent, state = kit.head
    for view in range(4):
        assert slot_owner(parent, state, kit.params, view) != cheater
    forged = build_micro_block(parent, state.copy(), kit.params, kit.view(), kit.owner(0),
                               kit.secret_for(state, kit.owner(0)), 0, 10_000)
    sig = sign(kit.secret_for(state, cheater), block_sign_message(forged.hash))
    rejects(kit, dataclasses.replace(forged, justification=MicroJustification(cheater, sig)),
            "barred validator")


# ---------------------------------------------------------------- macro blocks

def fill_epoch(kit):
    while kit.head[0].height < kit.params.m:
        accept(kit, kit.build())


def justify(kit, block, signers):
    state = kit.head[1]
    h = block.header.hash
    sks = [kit.secret_for(state, s) for s in signers]
    p = aggregate([sign(sk, prepare_message(h)) for sk in sks], list(signers), kit.params.n)
    c = aggregate([sign(sk, commit_message(h)) for sk in sks], list(signers), kit.params.n)
    return block.with_justification(MacroJustification(p, c))


def test_macro_block_finalizes_epoch(kit):
    fill_epoch(kit)
    parent, state = kit.head
    leader = kit.owner(0)
    proposal, post = build_macro_proposal(parent, state, kit.params, kit.view(),
                                          kit.secret_for(state, leader), 0, 5000)
    assert proposal.height == kit.params.m + 1
    apply_macro_block(parent, state, proposal, kit.params, kit.view(), check_justification=False)
    rejects(kit, proposal, "bad justification")
    rejects(kit, justify(kit, proposal, [0, 1]), "bad justification")
    full = apply_block(parent, state, justify(kit, proposal, [0, 1, 2]), kit.params, kit.view())
    assert full.root() == post.root()
    assert full.ledger.epoch_number == 2 and full.ledger.settled_epoch == 1
    # epoch 1 is paid out by the next macro block, not this one
    assert full.minted == 0 and full.ledger.prev_fees == 0


def test_macro_with_wrong_leader_seed(kit):
    fill_epoch(kit)
    parent, state = kit.head
    wrong = (kit.owner(0) + 1) % kit.params.n
    proposal, _ = build_macro_proposal(parent, state, kit.params, kit.view(),
                                       kit.secret_for(state, wrong), 0, 5000)
    rejects(kit, justify(kit, proposal, [0, 1, 2]), "bad seed")


def test_micro_at_macro_height_rejected(kit):
    fill_epoch(kit)
    parent, state = kit.head
    slot = kit.owner(0)
    block = build_micro_block(parent, state, kit.params, kit.view(), slot,
                              kit.secret_for(state, slot), 0, 5000)
    rejects(kit, block, "bad height")

