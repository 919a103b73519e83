"""Per-validator protocol state machine.

A :class:`Node` is driven by three entry points, ``start``, ``on_message``
and ``on_timer``; each runs to completion and talks to the outside world only
through the ``net`` object it was built with (see :class:`Network`).
Adversarial behaviours subclass ``Node`` and override the small hook methods
near the bottom of the class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from ..chain import (Block, BlockHeader, ForkProof, MacroBlock, MacroJustification,
                     MicroBlock, MicroJustification, ViewChangeMessage, commit_message,
                     prepare_message, view_change_message)
from ..crypto import (AggregateSignature, PublicKey, SecretKey, Signature, aggregate,
                      aggregate_verify, keygen, sign, verify)
from ..encoding import sha256
from ..params import ChainParams
from ..state import ChainState
from .forkchoice import ChainStore, StoredBlock
from .messages import (BlockMsg, BlockRequest, CertificateMsg, CommitMsg, HeadMsg, PrepareMsg,
                       ProposalMsg, TxMsg, ViewChangeMsg)
from .rules import (Rejected, apply_block, apply_macro_block, build_macro_proposal,
                    build_micro_block, check_fork_proofs, slot_owner)


class Network(Protocol):
    def broadcast(self, src: int, msg) -> None: ...

    def send(self, src: int, dst: int, msg) -> None: ...

    def set_timer(self, node: int, at: int, token) -> None: ...

    def record(self, node: int, kind: str, **fields) -> None: ...


@dataclass(frozen=True)
class ValidatorKeys:
    """Cold (account), warm (signalling) and hot (block signing) keypairs."""

    cold: tuple[SecretKey, PublicKey]
    warm: tuple[SecretKey, PublicKey]
    hot: tuple[SecretKey, PublicKey]

    @classmethod
    def derive(cls, material: bytes, scheme: str = "mock") -> "ValidatorKeys":
        return cls(*(keygen(sha256(role + material), scheme) for role in (b"cold", b"warm", b"hot")))

    @property
    def address(self) -> bytes:
        return self.cold[1].point


@dataclass
class MacroRound:
    height: int
    proposals: dict[bytes, tuple[MacroBlock, ChainState]] = field(default_factory=dict)
    pending: list[ProposalMsg] = field(default_factory=list)
    prepared: dict[int, bytes] = field(default_factory=dict)  # view -> block prepared in it
    committed: bytes | None = None  # the lock: set once this node sends a commit
    prepares: dict[bytes, dict[int, Signature]] = field(default_factory=dict)
    commits: dict[bytes, dict[int, Signature]] = field(default_factory=dict)
    sent_prepare: set[bytes] = field(default_factory=set)
    proposed_views: set[int] = field(default_factory=set)
    outbox: list = field(default_factory=list)
    finalized: bool = False


def short(h: bytes) -> str:
    return h[:4].hex()


class Node:
    behavior = "honest"
    orphan_limit = 512

    def __init__(self, index: int, keys: ValidatorKeys, genesis_block: MacroBlock,
                 genesis_state: ChainState, params: ChainParams, net: Network,
                 validator=apply_block) -> None:
        self.index = index
        # apply_block or a memoizing wrapper with the same signature
        self.validator = validator
        self.keys = keys
        self.hot_sk, self.hot_pk = keys.hot
        self.params = params
        self.net = net
        self.store = ChainStore(genesis_block, genesis_state)
        self.head: StoredBlock = self.store.genesis
        self.offline = False
        self.my_slots: list[int] = []
        self.work_height = 0
        self.work_view = 0
        self._timer_seq = 0
        self.stalled = False

        self.vcs: dict[tuple[int, int], dict[int, ViewChangeMessage]] = {}
        self.quorum: dict[int, int] = {}
        self.own_vcs: list[ViewChangeMessage] = []

        self.mempool: dict[bytes, tuple[int, object]] = {}
        self._tx_seq = 0
        self.fork_pool: dict[tuple[int, int, int], ForkProof] = {}
        self.slot_headers: dict[tuple[int, int, int], tuple[BlockHeader, MicroJustification]] = {}

        self.orphans: dict[bytes, list[tuple[int, Block]]] = {}
        self.invalid: set[bytes] = set()
        self.tainted: set[bytes] = set()
        self.by_height: dict[int, list[StoredBlock]] = {}
        self.rounds: dict[int, MacroRound] = {}
        self.produced: set[tuple[bytes, int]] = set()
        # (height, view) slots already signed; an honest producer never signs a
        # second header for the same slot, even after its first one was reverted
        self.signed: set[tuple[int, int]] = set()

    # ------------------------------------------------------------ entry points

    def start(self, now: int) -> None:
        self._enter_height(now)

    def on_message(self, now: int, sender: int, msg) -> None:
        if self.offline:
            return
        if isinstance(msg, BlockMsg):
            self._on_block(now, sender, msg.block)
        elif isinstance(msg, ViewChangeMsg):
            self._store_vc(now, msg.vc)
        elif isinstance(msg, TxMsg):
            self._on_tx(msg.tx)
        elif isinstance(msg, ProposalMsg):
            self._on_proposal(now, sender, msg)
        elif isinstance(msg, PrepareMsg):
            self._on_vote(now, msg, commit=False)
        elif isinstance(msg, CommitMsg):
            self._on_vote(now, msg, commit=True)
        elif isinstance(msg, CertificateMsg):
            self._on_certificate(now, sender, msg)
        elif isinstance(msg, HeadMsg):
            if msg.block_hash not in self.store and msg.height > self.head.height:
                self.net.send(self.index, sender, BlockRequest(msg.block_hash))
        elif isinstance(msg, BlockRequest):
            entry = self.store.get(msg.block_hash)
            if entry is not None:
                self.net.send(self.index, sender, BlockMsg(entry.block))

    def on_timer(self, now: int, token) -> None:
        if self.offline:
            return
        kind, seq = token
        if kind == "local":
            self._on_block(now, self.index, seq)
            return
        if seq != self._timer_seq:
            return
        if kind == "view":
            self._on_timeout(now)
        elif kind == "retx":
            self._retransmit(now)
            self.net.set_timer(self.index, now + self.params.delta_ms, ("retx", seq))

    # ------------------------------------------------------------ chain view helpers

    @property
    def head_state(self) -> ChainState:
        return self.head.state

    @property
    def epoch(self) -> int:
        return self.head.state.ledger.epoch_number

    def _round(self, height: int) -> MacroRound:
        r = self.rounds.get(height)
        if r is None:
            r = self.rounds[height] = MacroRound(height)
        return r

    def _update_slots(self) -> None:
        keys = self.head.state.ledger.keys
        self.my_slots = [i for i, k in enumerate(keys) if k == self.hot_pk]

    # ------------------------------------------------------------ blocks

    def _on_block(self, now: int, sender: int, block: Block) -> None:
        h = block.hash
        if h in self.store or h in self.invalid:
            return
        if block.height <= self.store.finalized.height:
            return
        if block.is_macro and block.justification is None:
            return
        parent = self.store.get(block.header.parent_hash)
        if parent is None:
            self._stash_orphan(sender, block)
            return
        if parent.hash in self.tainted or (
                not block.is_macro and block.view < self.quorum.get(block.height, 0)):
            self.net.record(self.index, "refuse", h=block.height, v=block.view, block=short(h))
            return
        if parent.state is None:
            return
        try:
            state = self.validator(parent.block, parent.state, block, self.params,
                                   self.store.branch(parent))
        except Rejected as exc:
            self.invalid.add(h)
            self.net.record(self.index, "reject", h=block.height, v=block.view, block=short(h),
                            reason=exc.reason)
            return
        self._accept(now, block, state)

    def _stash_orphan(self, sender: int, block: Block) -> None:
        waiting = self.orphans.setdefault(block.header.parent_hash, [])
        if any(b.hash == block.hash for _, b in waiting):
            return
        if sum(len(v) for v in self.orphans.values()) >= self.orphan_limit:
            return
        waiting.append((sender, block))
        self.net.send(self.index, sender, BlockRequest(block.header.parent_hash))

    def _accept(self, now: int, block: Block, state: ChainState) -> None:
        entry = self.store.add(block, state)
        self.by_height.setdefault(block.height, []).append(entry)
        self._relay(block)
        self.net.record(self.index, "accept", h=block.height, v=block.view, block=short(block.hash))
        if block.is_macro:
            self._finalize(now, entry)
        else:
            for vc in block.digest.view_changes:
                self._store_vc(now, vc, verified=True)
            self._detect_equivocation(block)
            if entry.hash not in self.tainted and (self.head.hash in self.tainted
                                                   or entry.better_than(self.head)):
                self._set_head(now, entry)
        for sender, orphan in self.orphans.pop(block.hash, []):
            self._on_block(now, sender, orphan)
        r = self.rounds.get(block.height + 1)
        if r is not None and r.pending:
            pending, r.pending = r.pending, []
            for msg in pending:
                self._on_proposal(now, self.index, msg)

    def _detect_equivocation(self, block: MicroBlock) -> None:
        j = block.justification
        key = (block.height, block.view, j.producer_index)
        seen = self.slot_headers.get(key)
        if seen is None:
            self.slot_headers[key] = (block.header, j)
            return
        if seen[0] == block.header or key in self.fork_pool:
            return
        self.fork_pool[key] = ForkProof(seen[0], block.header, seen[1], j).canonical()
        self.net.record(self.index, "fork-proof", h=key[0], v=key[1], slot=key[2])

    def _finalize(self, now: int, entry: StoredBlock) -> None:
        p = self.params
        h = entry.height
        epoch = p.epoch_of(h)
        keep_from = p.macro_height(max(epoch - 1, 0))
        self.store.finalize(entry, keep_from)
        for old in [k for k in self.by_height if k <= h]:
            del self.by_height[old]
        for key in [k for k in self.vcs if k[0] <= h]:
            del self.vcs[key]
        for old in [k for k in self.quorum if k <= h]:
            del self.quorum[old]
        for old in [k for k in self.rounds if k <= h]:
            del self.rounds[old]
        floor = p.epoch_bounds(epoch)[0]
        self.slot_headers = {k: v for k, v in self.slot_headers.items() if k[0] >= floor}
        self.fork_pool = {k: v for k, v in self.fork_pool.items() if k[0] >= floor}
        self.tainted.clear()
        self.invalid.clear()
        self.produced = {k for k in self.produced if k[0] in self.store}
        self.signed = {k for k in self.signed if k[0] > h}
        self.own_vcs = [vc for vc in self.own_vcs if vc.block_number > h]
        self.net.record(self.index, "finalize", h=h, block=entry.hash.hex())
        self._set_head(now, entry)

    def _set_head(self, now: int, entry: StoredBlock) -> None:
        old = self.head
        if entry is old:
            return
        self.head = entry
        if self.store.ancestor_at(entry, old.height) is not old:
            anc = self.store.lca(old, entry)
            self.net.record(self.index, "revert", depth=old.height - anc.height,
                            old=short(old.hash), new=short(entry.hash))
        self.net.record(self.index, "head", h=entry.height, v=entry.block.view, block=short(entry.hash))
        self._prune_mempool()
        self._enter_height(now)

    def _enter_height(self, now: int) -> None:
        h = self.head.height + 1
        if h != self.work_height:
            self.work_height = h
            self._update_slots()
            self._enter_view(now, self.quorum.get(h, 0))
        else:
            self._try_produce(now)

    def _enter_view(self, now: int, view: int) -> None:
        self.work_view = view
        self.stalled = False
        self._timer_seq += 1
        self.net.set_timer(self.index, now + (view + 1) * self.params.delta_ms,
                           ("view", self._timer_seq))
        if view:
            self.net.record(self.index, "enter-view", h=self.work_height, v=view)
        if self.params.is_macro_height(self.work_height):
            self._pbft_enter_view(now)
        self._try_produce(now)

    # ------------------------------------------------------------ view change

    def _on_timeout(self, now: int) -> None:
        h, target = self.work_height, self.work_view + 1
        self.stalled = True
        self.net.record(self.index, "timeout", h=h, v=self.work_view)
        self.net.set_timer(self.index, now + self.params.delta_ms, ("retx", self._timer_seq))
        msg = view_change_message(target, h)
        for slot in list(self.my_slots):
            vc = ViewChangeMessage(target, h, slot, sign(self.hot_sk, msg))
            self.own_vcs.append(vc)
            self._emit_view_change(now, vc)
            self._store_vc(now, vc, verified=True)

    def _store_vc(self, now: int, vc: ViewChangeMessage, verified: bool = False) -> None:
        h = vc.block_number
        if h <= self.store.finalized.height or vc.view_number < 1:
            return
        ledger = self.head.state.ledger
        if self.params.epoch_of(h) != ledger.epoch_number or vc.signer_index >= len(ledger.keys):
            return
        bucket = self.vcs.setdefault((h, vc.view_number), {})
        if vc.signer_index in bucket:
            return
        if not verified and not verify(ledger.keys[vc.signer_index], vc.message(), vc.signature):
            return
        bucket[vc.signer_index] = vc
        self._observed_view_change(now, vc)
        if len(bucket) >= self.params.quorum and vc.view_number > self.quorum.get(h, 0):
            self.quorum[h] = vc.view_number
            self.net.record(self.index, "vc-quorum", h=h, v=vc.view_number)
            self._apply_quorum(now, h, vc.view_number)

    def _apply_quorum(self, now: int, height: int, view: int) -> None:
        """Refuse every micro block at ``height`` below ``view``, even if already accepted."""
        for entry in self.by_height.get(height, []):
            if not entry.block.is_macro and entry.block.view < view and entry.hash not in self.tainted:
                self._taint(entry)
        if self.head.hash in self.tainted:
            best = self.store.best_tip(lambda e: e.hash in self.tainted)
            self._set_head(now, best)
        elif height == self.work_height and view > self.work_view:
            self._enter_view(now, view)

    def _taint(self, entry: StoredBlock) -> None:
        stack = [entry]
        while stack:
            e = stack.pop()
            self.tainted.add(e.hash)
            stack.extend(e.children)

    def _collect_vcs(self, height: int, view: int) -> tuple[ViewChangeMessage, ...] | None:
        out = []
        for target in range(1, view + 1):
            bucket = self.vcs.get((height, target), {})
            if len(bucket) < self.params.quorum:
                return None
            out.extend(bucket[s] for s in sorted(bucket)[:self.params.quorum])
        return tuple(out)

    def _retransmit(self, now: int) -> None:
        self.net.broadcast(self.index, HeadMsg(self.head.height, self.head.hash))
        for vc in self.own_vcs:
            if vc.block_number == self.work_height and vc.view_number == self.work_view + 1:
                self._emit_view_change(now, vc)
        r = self.rounds.get(self.work_height)
        if r is not None:
            for msg in r.outbox:
                self.net.broadcast(self.index, msg)

    # ------------------------------------------------------------ production

    def _try_produce(self, now: int) -> None:
        if self.offline or not self.my_slots:
            return
        h, v, parent = self.work_height, self.work_view, self.head
        if (parent.hash, v) in self.produced:
            return
        owner = slot_owner(parent.block, parent.state, self.params, v)
        if owner not in self.my_slots:
            return
        vcs = self._collect_vcs(h, v)
        if vcs is None:
            return
        if self.params.is_macro_height(h):
            self._propose(now, parent, v, vcs)
            return
        if (h, v) in self.signed:
            return
        self.signed.add((h, v))
        self.produced.add((parent.hash, v))
        block = build_micro_block(parent.block, parent.state, self.params,
                                  self.store.branch(parent), owner, self.hot_sk, v, now, vcs,
                                  self._admissible_proofs(parent), self._candidates(parent))
        self.net.record(self.index, "produce", h=h, v=v, block=short(block.hash),
                        txs=len(block.transactions))
        self._release_micro(now, block, parent, owner, v, vcs)

    def _admissible_proofs(self, parent: StoredBlock) -> list[ForkProof]:
        out = []
        chain = self.store.branch(parent)
        for proof in self.fork_pool.values():
            try:
                check_fork_proofs(out + [proof], parent.height + 1, parent.state, self.params, chain)
            except Rejected:
                continue
            out.append(proof)
        return out

    def _candidates(self, parent: StoredBlock) -> list:
        items = sorted(self.mempool.values(), key=lambda st: (-st[1].fee, st[0]))
        return [tx for _, tx in items]

    def _on_tx(self, tx) -> None:
        if tx.hash in self.mempool or not tx.kind.external:
            return
        if tx.nonce < self.head.state.nonce(tx.sender):
            return
        self._tx_seq += 1
        self.mempool[tx.hash] = (self._tx_seq, tx)

    def _prune_mempool(self) -> None:
        state = self.head.state
        if state is None or not self.mempool:
            return
        stale = [h for h, (_, tx) in self.mempool.items() if tx.nonce < state.nonce(tx.sender)]
        for h in stale:
            del self.mempool[h]

    # ------------------------------------------------------------ PBFT

    def _propose(self, now: int, parent: StoredBlock, view: int, vcs) -> None:
        r = self._round(parent.height + 1)
        if view in r.proposed_views or r.committed is not None:
            return
        r.proposed_views.add(view)
        self.produced.add((parent.hash, view))
        block, _ = build_macro_proposal(parent.block, parent.state, self.params,
                                        self.store.branch(parent), self.hot_sk, view, now, vcs,
                                        self._admissible_proofs(parent))
        self.net.record(self.index, "propose", h=block.height, v=view, block=short(block.hash))
        msg = ProposalMsg(view, block)
        r.outbox.append(msg)
        self.net.broadcast(self.index, msg)
        self._on_proposal(now, self.index, msg)

    def _on_proposal(self, now: int, sender: int, msg: ProposalMsg) -> None:
        block = msg.block
        h = block.height
        if h <= self.store.finalized.height:
            return
        r = self._round(h)
        if block.hash not in r.proposals:
            parent = self.store.get(block.header.parent_hash)
            if parent is None:
                if len(r.pending) < 16:
                    r.pending.append(msg)
                    self.net.send(self.index, sender, BlockRequest(block.header.parent_hash))
                return
            if parent.hash in self.tainted or parent.state is None:
                return
            try:
                state = apply_macro_block(parent.block, parent.state, block, self.params,
                                          self.store.branch(parent), check_justification=False)
            except Rejected as exc:
                self.net.record(self.index, "reject-proposal", h=h, v=block.view,
                                reason=exc.reason)
                return
            r.proposals[block.hash] = (block, state)
        self._maybe_prepare(now, r, block.hash)
        self._check_prepared(now, r, block.hash)
        self._check_commit(now, r, block.hash)

    def _maybe_prepare(self, now: int, r: MacroRound, block_hash: bytes) -> None:
        # One prepare per view. A node that already committed is locked: any two
        # finalizations would need one honest node committing to both.
        block, _ = r.proposals[block_hash]
        if block.view in r.prepared or r.committed not in (None, block_hash):
            return
        if (self.work_height != r.height or self.head.hash != block.header.parent_hash
                or block.view != self.work_view):
            return
        r.prepared[block.view] = block_hash
        self._send_vote(now, r, block_hash, commit=False)

    def _send_vote(self, now: int, r: MacroRound, block_hash: bytes, commit: bool) -> None:
        if not self.my_slots:
            return
        if commit:
            sig = sign(self.hot_sk, commit_message(block_hash))
            msg = CommitMsg(r.height, block_hash, tuple(self.my_slots), sig)
        else:
            r.sent_prepare.add(block_hash)
            sig = sign(self.hot_sk, prepare_message(block_hash))
            msg = PrepareMsg(r.height, block_hash, tuple(self.my_slots), sig)
        if self._withhold_vote(r, commit):
            return
        r.outbox.append(msg)
        self.net.broadcast(self.index, msg)
        self._on_vote(now, msg, commit, verified=True)

    def _on_vote(self, now: int, msg, commit: bool, verified: bool = False) -> None:
        h = msg.height
        if h <= self.store.finalized.height or not msg.slots:
            return
        ledger = self.head.state.ledger
        if self.params.epoch_of(h) != ledger.epoch_number:
            return
        if any(s >= len(ledger.keys) for s in msg.slots):
            return
        pk = ledger.keys[msg.slots[0]]
        if any(ledger.keys[s] != pk for s in msg.slots):
            return
        r = self._round(h)
        book = r.commits if commit else r.prepares
        votes = book.setdefault(msg.block_hash, {})
        if all(s in votes for s in msg.slots):
            return
        text = commit_message(msg.block_hash) if commit else prepare_message(msg.block_hash)
        if not verified and not verify(pk, text, msg.signature):
            return
        for s in msg.slots:
            votes[s] = msg.signature
        self._check_prepared(now, r, msg.block_hash)
        self._check_commit(now, r, msg.block_hash)

    def _check_prepared(self, now: int, r: MacroRound, block_hash: bytes) -> None:
        if r.committed is not None or block_hash not in r.proposals:
            return
        if len(r.prepares.get(block_hash, ())) < self.params.quorum:
            return
        r.committed = block_hash
        self._send_vote(now, r, block_hash, commit=True)

    def _check_commit(self, now: int, r: MacroRound, block_hash: bytes) -> None:
        if r.finalized or block_hash not in r.proposals:
            return
        prepares = r.prepares.get(block_hash, {})
        commits = r.commits.get(block_hash, {})
        if sum(1 for s in commits if s in prepares) < self.params.quorum:
            return
        n = self.params.n
        p_slots, c_slots = sorted(prepares), sorted(commits)
        just = MacroJustification(aggregate([prepares[s] for s in p_slots], p_slots, n),
                                  aggregate([commits[s] for s in c_slots], c_slots, n))
        block, state = r.proposals[block_hash]
        if block.header.parent_hash not in self.store:
            return
        r.finalized = True
        self._accept(now, block.with_justification(just), state)

    def _pbft_enter_view(self, now: int) -> None:
        r = self._round(self.work_height)
        if self.work_view > 0 and r.committed is not None:
            cert = self._certificate(r, r.committed)
            if cert is not None:
                r.outbox.append(cert)
                self.net.broadcast(self.index, cert)
        for block_hash in list(r.proposals):
            self._maybe_prepare(now, r, block_hash)

    def _certificate(self, r: MacroRound, block_hash: bytes) -> CertificateMsg | None:
        prepares = r.prepares.get(block_hash, {})
        if len(prepares) < self.params.quorum or block_hash not in r.proposals:
            return None
        slots = sorted(prepares)
        agg = aggregate([prepares[s] for s in slots], slots, self.params.n)
        return CertificateMsg(r.proposals[block_hash][0], agg)

    def _on_certificate(self, now: int, sender: int, msg: CertificateMsg) -> None:
        block = msg.block
        h = block.height
        if h <= self.store.finalized.height:
            return
        ledger = self.head.state.ledger
        if self.params.epoch_of(h) != ledger.epoch_number:
            return
        agg: AggregateSignature = msg.prepare
        if len(agg.signers) != len(ledger.keys) or agg.count() < self.params.quorum:
            return
        if not aggregate_verify(ledger.keys, prepare_message(block.hash), agg):
            return
        self._on_proposal(now, sender, ProposalMsg(block.view, block))
        r = self._round(h)
        if block.hash not in r.proposals:
            return
        if r.committed is None:
            r.committed = block.hash
            if block.hash not in r.sent_prepare:
                self._send_vote(now, r, block.hash, commit=False)
            self._send_vote(now, r, block.hash, commit=True)
        elif r.committed == block.hash and block.hash not in r.sent_prepare:
            self._send_vote(now, r, block.hash, commit=False)

    # ------------------------------------------------------------ behaviour hooks

    def _relay(self, block: Block) -> None:
        self.net.broadcast(self.index, BlockMsg(block))

    def _release_micro(self, now: int, block: MicroBlock, parent: StoredBlock, slot: int,
                       view: int, vcs) -> None:
        self._submit_local(now, block)

    def _submit_local(self, now: int, block: Block) -> None:
        # queued rather than handled inline, so a long run of own slots does not recurse
        self.net.set_timer(self.index, now, ("local", block))

    def _emit_view_change(self, now: int, vc: ViewChangeMessage) -> None:
        self.net.broadcast(self.index, ViewChangeMsg(vc))

    def _observed_view_change(self, now: int, vc: ViewChangeMessage) -> None:
        pass

    def _withhold_vote(self, r: MacroRound, commit: bool) -> bool:
        return False
