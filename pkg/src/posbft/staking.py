"""Registry transitions, transaction application and epoch settlement.

All ``apply_*`` functions validate first and mutate ``state`` only once every
check has passed, so a rejected transaction leaves the state untouched.
Callers that need the previous state must pass a copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .chain import Transaction, TxKind
from .crypto import PublicKey, verify, verify_possession
from .params import ChainParams
from .selection import SelectionError, build_range_table, select_validator_list
from .state import ChainState, RegistryEntry, Status


class Rejected(ValueError):
    """A transaction or block failed validation; ``reason`` is stable text."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class SettlementError(RuntimeError):
    pass


def _check_envelope(state: ChainState, tx: Transaction, signer: PublicKey) -> None:
    if tx.signature is None or not verify(signer, tx.signing_bytes(), tx.signature):
        raise Rejected("bad signature")
    if tx.nonce != state.nonce(tx.sender):
        raise Rejected("bad nonce")


def _charge(state: ChainState, tx: Transaction, extra: int = 0) -> None:
    state.debit(tx.sender, tx.fee + extra)
    state.nonces[tx.sender] = tx.nonce + 1
    state.ledger.fees += tx.fee


def apply_transfer(state: ChainState, tx: Transaction) -> None:
    _check_envelope(state, tx, PublicKey(tx.sender))
    if tx.amount is None or tx.recipient is None:
        raise Rejected("malformed transfer")
    if state.balance(tx.sender) < tx.fee + tx.amount:
        raise Rejected("insufficient balance")
    _charge(state, tx, tx.amount)
    state.credit(tx.recipient, tx.amount)


def apply_stake(state: ChainState, tx: Transaction) -> None:
    _check_envelope(state, tx, PublicKey(tx.sender))
    if tx.amount is None or tx.amount <= 0 or tx.warm_key is None or tx.hot_key is None:
        raise Rejected("malformed staking transaction")
    if not verify_possession(tx.hot_key, tx.proof_of_possession):
        raise Rejected("rogue key")
    if tx.sender in state.registry:
        raise Rejected("already registered")
    if state.balance(tx.sender) < tx.fee + tx.amount:
        raise Rejected("insufficient balance")
    _charge(state, tx, tx.amount)
    state.registry[tx.sender] = RegistryEntry(tx.sender, tx.amount, tx.warm_key, tx.hot_key,
                                              tx.reward_address)


def apply_restake(state: ChainState, tx: Transaction) -> None:
    """Update the non-blank fields of an entry; signed by its warm key.

    ``amount`` is the new deposit, so it may move funds either way.
    """
    entry = state.registry.get(tx.sender)
    if entry is None:
        raise Rejected("unknown validator")
    _check_envelope(state, tx, entry.warm_key)
    if tx.hot_key is not None and not verify_possession(tx.hot_key, tx.proof_of_possession):
        raise Rejected("rogue key")
    delta = 0
    if tx.amount is not None:
        if tx.amount <= 0:
            raise Rejected("deposit must stay positive")
        delta = tx.amount - entry.deposit
    if state.balance(tx.sender) < tx.fee + max(delta, 0):
        raise Rejected("insufficient balance")
    _charge(state, tx, max(delta, 0))
    if delta < 0:
        state.credit(tx.sender, -delta)
    entry = state.edit_entry(tx.sender)
    if tx.amount is not None:
        entry.deposit = tx.amount
    if tx.warm_key is not None:
        entry.warm_key = tx.warm_key
    if tx.hot_key is not None:
        entry.hot_key = tx.hot_key
    if tx.reward_address is not None:
        entry.reward_address = tx.reward_address


def apply_unstake(state: ChainState, tx: Transaction, current_epoch: int) -> None:
    entry = state.registry.get(tx.sender)
    if entry is None:
        raise Rejected("unknown validator")
    _check_envelope(state, tx, PublicKey(tx.sender))
    if entry.status is Status.PENDING_UNSTAKE:
        raise Rejected("already pending")
    if state.balance(tx.sender) < tx.fee:
        raise Rejected("insufficient balance")
    _charge(state, tx)
    if entry.status is Status.MARKED:
        # expulsion already returns the deposit; keep the earlier deadline
        return
    entry = state.edit_entry(tx.sender)
    entry.status = Status.PENDING_UNSTAKE
    entry.status_epoch = current_epoch + 1


def apply_reactivate(state: ChainState, tx: Transaction, current_epoch: int) -> None:
    """Lift a delay mark by proving the hot key is still controlled."""
    entry = state.registry.get(tx.sender)
    if entry is None:
        raise Rejected("unknown validator")
    _check_envelope(state, tx, entry.warm_key)
    if entry.status is not Status.MARKED or not entry.reactivatable:
        raise Rejected("nothing to reactivate")
    if current_epoch > entry.status_epoch:
        raise Rejected("deadline passed")
    if tx.hot_key != entry.hot_key or not verify_possession(entry.hot_key, tx.proof_of_possession):
        raise Rejected("rogue key")
    if state.balance(tx.sender) < tx.fee:
        raise Rejected("insufficient balance")
    _charge(state, tx)
    entry = state.edit_entry(tx.sender)
    entry.status = Status.ACTIVE
    entry.status_epoch = 0


def apply_transaction(state: ChainState, tx: Transaction, current_epoch: int) -> None:
    if tx.kind is TxKind.TRANSFER:
        apply_transfer(state, tx)
    elif tx.kind is TxKind.STAKING:
        apply_stake(state, tx)
    elif tx.kind is TxKind.RESTAKING:
        apply_restake(state, tx)
    elif tx.kind is TxKind.UNSTAKING:
        apply_unstake(state, tx, current_epoch)
    elif tx.kind is TxKind.REACTIVATE:
        apply_reactivate(state, tx, current_epoch)
    else:
        raise Rejected("internal transaction in block body")


# ---------------------------------------------------------------- punishment

def punish(state: ChainState, slot: int, *, previous_epoch: bool, fork: bool,
           params: ChainParams) -> None:
    """Slash a slot's epoch reward, bar it if current, and mark its owner.

    The owner is expelled at the macro block closing the epoch after the one
    the misbehaviour happened in. Delay marks can be lifted by reactivation;
    fork marks cannot.
    """
    if not params.punishments:
        return
    ledger = state.ledger
    epoch = ledger.epoch_number - (1 if previous_epoch else 0)
    if previous_epoch:
        ledger.prev_slashed.add(slot)
        address = ledger.prev_slots[slot]
    else:
        ledger.slashed.add(slot)
        ledger.barred.add(slot)
        address = ledger.slots[slot]
    if address not in state.registry:
        return
    entry = state.edit_entry(address)
    deadline = epoch + 1
    if entry.status is Status.MARKED:
        entry.status_epoch = min(entry.status_epoch, deadline)
        entry.reactivatable = entry.reactivatable and not fork
    elif entry.status is Status.PENDING_UNSTAKE:
        # release is already scheduled; a fork still pins the entry until then
        entry.status_epoch = min(entry.status_epoch, deadline)
    else:
        entry.status = Status.MARKED
        entry.status_epoch = deadline
        entry.reactivatable = not fork


# ---------------------------------------------------------------- settlement

@dataclass
class Settlement:
    epoch: int
    pool: int = 0
    distributions: dict[bytes, int] = field(default_factory=dict)
    burned: int = 0
    expelled: list[bytes] = field(default_factory=list)
    released: list[bytes] = field(default_factory=list)


def settle_epoch(state: ChainState, params: ChainParams) -> Settlement:
    """Run the reward and registry bookkeeping of the macro closing the current epoch.

    Pays out the pool of the *previous* epoch (its fees plus freshly minted
    coinbase) equally per slot, burns slashed shares and the division
    remainder, then expels marked entries and releases unstaked deposits whose
    deadline is this epoch. Does not rotate the validator list.
    """
    ledger = state.ledger
    epoch = ledger.epoch_number
    if ledger.settled_epoch >= epoch:
        raise SettlementError(f"epoch {epoch} already settled")
    out = Settlement(epoch)

    if ledger.prev_slots:
        minted = params.coinbase * (params.m + 1)
        state.minted += minted
        pool = ledger.prev_fees + minted
        out.pool = pool
        ledger.prev_fees = 0
        share = pool // len(ledger.prev_slots)
        out.burned = pool - share * len(ledger.prev_slots)
        for slot, address in enumerate(ledger.prev_slots):
            if slot in ledger.prev_slashed:
                out.burned += share
                continue
            out.distributions[address] = out.distributions.get(address, 0) + share
        for address, amount in out.distributions.items():
            entry = state.registry.get(address)
            if entry is not None and entry.reward_address is not None:
                state.credit(entry.reward_address, amount)
            elif entry is not None:
                state.edit_entry(address).deposit += amount
            else:
                state.credit(address, amount)
        state.burned += out.burned

    for address in sorted(state.registry):
        entry = state.registry[address]
        if entry.status is Status.MARKED and entry.status_epoch <= epoch:
            out.expelled.append(address)
        elif entry.status is Status.PENDING_UNSTAKE and entry.status_epoch <= epoch:
            out.released.append(address)
    for address in out.expelled + out.released:
        entry = state.registry.pop(address)
        state.credit(address, entry.deposit)

    ledger.settled_epoch = epoch
    return out


def rotate_epoch(state: ChainState, slots: tuple[bytes, ...], keys: tuple,
                 params: ChainParams) -> None:
    """Install the freshly sampled list; the closing epoch becomes ``prev``."""
    ledger = state.ledger
    ledger.prev_slots, ledger.prev_keys = ledger.slots, ledger.keys
    ledger.prev_slashed = ledger.slashed
    ledger.prev_fees = ledger.fees
    ledger.slots, ledger.keys = tuple(slots), tuple(keys)
    ledger.slashed = set()
    ledger.barred = set()
    ledger.fees = 0
    # proofs stay admissible for one more epoch, older keys can go
    floor = params.epoch_bounds(ledger.epoch_number)[0]
    ledger.proven = {k for k in ledger.proven if k[0] >= floor}
    ledger.epoch_number += 1


def registry_snapshot(state: ChainState) -> dict[bytes, int]:
    """Stakes eligible for the next sampling: pending and marked entries excluded."""
    return {a: e.deposit for a, e in state.registry.items() if e.samplable and e.deposit > 0}


def draw_validator_list(state: ChainState, seed, params: ChainParams
                        ) -> tuple[tuple[bytes, ...], tuple[PublicKey, ...]]:
    """Sample the next epoch's list from the current registry snapshot.

    ``fixed`` mode skips the stake draw and gives every samplable entry the
    slots ``i, i + k, i + 2k, ...`` in address order; it exists so that
    experiments can pin the exact number of adversarial slots.
    """
    snapshot = registry_snapshot(state)
    if not snapshot:
        # every entry is marked or leaving; keep the chain alive with what is left
        snapshot = {a: e.deposit for a, e in state.registry.items() if e.deposit > 0}
    if params.list_mode == "fixed":
        addresses = sorted(snapshot)
        if not addresses:
            raise SelectionError("no eligible validators")
        slots = tuple(addresses[i % len(addresses)] for i in range(params.n))
    else:
        table = build_range_table(snapshot)
        slots = select_validator_list(seed, table, params.n).slots
    return slots, tuple(state.registry[a].hot_key for a in slots)
