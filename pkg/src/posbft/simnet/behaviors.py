"""Adversarial node variants used by the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..chain import MicroBlock, ViewChangeMessage
from ..consensus.messages import BlockMsg, ViewChangeMsg
from ..consensus.node import Node, short
from ..consensus.rules import build_micro_block


class OfflineNode(Node):
    """Goes permanently silent once its head reaches ``from_height``."""

    behavior = "offline"

    def __init__(self, *args, from_height: int = 0, **kw) -> None:
        super().__init__(*args, **kw)
        self.from_height = from_height

    def start(self, now: int) -> None:
        if self.from_height <= 0:
            self.offline = True
            self.net.record(self.index, "offline", h=0)
            return
        super().start(now)

    def _set_head(self, now, entry) -> None:
        super()._set_head(now, entry)
        if not self.offline and self.head.height >= self.from_height:
            self.offline = True
            self.net.record(self.index, "offline", h=self.head.height)


class EquivocatorNode(Node):
    """Signs two different blocks for every owned slot and splits them across peers."""

    behavior = "equivocator"

    def __init__(self, *args, peers: int, **kw) -> None:
        super().__init__(*args, **kw)
        self.peers = [i for i in range(peers) if i != self.index]
        self._own: set[bytes] = set()

    def _release_micro(self, now, block, parent, slot, view, vcs) -> None:
        twin = build_micro_block(parent.block, parent.state, self.params, self.store.branch(parent),
                                 slot, self.hot_sk, view, block.digest.timestamp + 1, vcs,
                                 block.digest.fork_proofs, block.transactions)
        self._own.update((block.hash, twin.hash))
        self.net.record(self.index, "equivocate", h=block.height, v=view,
                        a=short(block.hash), b=short(twin.hash))
        for k, peer in enumerate(self.peers):
            self.net.send(self.index, peer, BlockMsg(block if k % 2 == 0 else twin))
        self._submit_local(now, block)

    def _relay(self, block) -> None:
        if block.hash not in self._own:
            super()._relay(block)


class DelayerNode(Node):
    """Withholds its own micro blocks until it sees a view change against them."""

    behavior = "delayer"

    def __init__(self, *args, **kw) -> None:
        super().__init__(*args, **kw)
        self._held: MicroBlock | None = None

    def _release_micro(self, now, block, parent, slot, view, vcs) -> None:
        self._held = block
        self.net.record(self.index, "withhold", h=block.height, v=view, block=short(block.hash))

    def _emit_view_change(self, now, vc) -> None:
        if self._held is not None and vc.block_number == self._held.height:
            return
        super()._emit_view_change(now, vc)

    def _observed_view_change(self, now, vc) -> None:
        held = self._held
        if (held is not None and vc.block_number == held.height
                and vc.view_number == held.view + 1 and vc.signer_index not in self.my_slots):
            self._held = None
            self.net.record(self.index, "release", h=held.height, block=short(held.hash))
            self._on_block(now, self.index, held)


@dataclass
class Coalition:
    """Shared plan of the withheld-view-change attack."""

    members: list[int]
    release_after: int = 3
    nodes: dict[int, "VcWithholderNode"] = field(default_factory=dict)
    attack_height: int | None = None
    withheld: list[tuple[int, ViewChangeMessage]] = field(default_factory=list)
    block_released: bool = False
    votes_released: bool = False


class VcWithholderNode(Node):
    """Member of an f+1 coalition that withholds view-change votes.

    The first coalition member that owns a view-0 slot with enough room
    before the epoch's macro block withholds its block until honest nodes
    start voting to skip it, then publishes it. The coalition keeps its own
    votes for that height private until ``release_after`` more blocks have
    been built on top, at which point the votes complete a quorum and every
    node abandons the already accepted block.
    """

    behavior = "vc_withholder"

    def __init__(self, *args, coalition: Coalition, **kw) -> None:
        super().__init__(*args, **kw)
        self.coalition = coalition
        coalition.nodes[self.index] = self
        self._held: MicroBlock | None = None

    def _release_micro(self, now, block, parent, slot, view, vcs) -> None:
        c = self.coalition
        room = self.params.macro_height(self.params.epoch_of(block.height)) - block.height
        if c.attack_height is None and view == 0 and block.height > 1 and room > c.release_after + 2:
            c.attack_height = block.height
            self._held = block
            self.net.record(self.index, "withhold", h=block.height, v=view, block=short(block.hash))
            return
        super()._release_micro(now, block, parent, slot, view, vcs)

    def _hiding(self, vc) -> bool:
        c = self.coalition
        return (c.attack_height == vc.block_number and not c.votes_released
                and vc.signer_index in self.my_slots)

    def _emit_view_change(self, now, vc) -> None:
        if self._hiding(vc):
            if (self.index, vc) not in self.coalition.withheld:
                self.coalition.withheld.append((self.index, vc))
            return
        super()._emit_view_change(now, vc)

    def _store_vc(self, now, vc, verified=False) -> None:
        # our own withheld votes stay out of our books too, or we would act on
        # a quorum the rest of the network cannot see
        if self._hiding(vc):
            return
        super()._store_vc(now, vc, verified)

    def _observed_view_change(self, now, vc) -> None:
        held = self._held
        if (held is not None and vc.block_number == held.height
                and vc.signer_index not in self._coalition_slots()):
            self._held = None
            self.coalition.block_released = True
            self.net.record(self.index, "release", h=held.height, block=short(held.hash))
            self._on_block(now, self.index, held)

    def _coalition_slots(self) -> set[int]:
        out = set()
        for node in self.coalition.nodes.values():
            out.update(node.my_slots)
        return out

    def _set_head(self, now, entry) -> None:
        super()._set_head(now, entry)
        c = self.coalition
        if (c.attack_height is not None and c.block_released and not c.votes_released
                and self.head.height >= c.attack_height + c.release_after):
            c.votes_released = True
            self.net.record(self.index, "release-votes", h=c.attack_height, votes=len(c.withheld))
            for signer, vc in c.withheld:
                self.net.broadcast(signer, ViewChangeMsg(vc))
                c.nodes[signer]._store_vc(now, vc, verified=True)


class CensorNode(Node):
    """Never includes transactions sent by ``target``."""

    behavior = "censor"

    def __init__(self, *args, target: bytes, **kw) -> None:
        super().__init__(*args, **kw)
        self.target = target

    def _candidates(self, parent) -> list:
        return [tx for tx in super()._candidates(parent) if tx.sender != self.target]
