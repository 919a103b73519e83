import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from posbft.chain import (Transaction, TxKind, ViewChangeMessage, sign_transaction,
                          view_change_message)
from posbft.consensus.node import ValidatorKeys
from posbft.consensus.rules import ListChainView, build_micro_block, slot_owner
from posbft.crypto import keygen, sign
from posbft.encoding import sha256
from posbft.genesis import Genesis
from posbft.params import ChainParams
from posbft.state import RegistryEntry

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@dataclass
class Kit:
    """A hand-driven chain over genesis for rule-level tests."""

    params: ChainParams
    keys: list[ValidatorKeys]
    genesis: Genesis
    blocks: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    user: tuple = None

    @property
    def head(self):
        h = max(self.blocks)
        return self.blocks[h], self.states[h]

    def view(self) -> ListChainView:
        return ListChainView(dict(self.blocks), dict(self.states))

    def secret_for(self, state, slot: int):
        pk = state.ledger.keys[slot]
        return next(k.hot[0] for k in self.keys if k.hot[1] == pk)

    def owner(self, view: int = 0) -> int:
        parent, state = self.head
        return slot_owner(parent, state, self.params, view)

    def vc(self, height: int, view: int, slot: int, state=None) -> ViewChangeMessage:
        state = state or self.head[1]
        sk = self.secret_for(state, slot)
        return ViewChangeMessage(view, height, slot, sign(sk, view_change_message(view, height)))

    def quorum(self, height: int, views: int) -> list[ViewChangeMessage]:
        out = []
        for v in range(1, views + 1):
            out += [self.vc(height, v, s) for s in range(self.params.quorum)]
        return out

    def build(self, view: int = 0, slot: int | None = None, ts: int | None = None, **kw):
        parent, state = self.head
        slot = self.owner(view) if slot is None else slot
        ts = parent.digest.timestamp + 100 if ts is None else ts
        return build_micro_block(parent, state, self.params, self.view(), slot,
                                 self.secret_for(state, slot), view, ts, **kw)

    def extend(self, block, state) -> None:
        self.blocks[block.height] = block
        self.states[block.height] = state

    def transfer(self, amount: int = 5, fee: int = 1, nonce: int = 0, to: bytes = b"\x07" * 32):
        sk, pk = self.user
        tx = Transaction(TxKind.TRANSFER, pk.point, nonce, fee, amount=amount, recipient=to)
        return sign_transaction(tx, sk)


def make_kit(n: int = 4, m: int = 10, list_mode: str = "fixed", scheme: str = "mock",
             punishments: bool = True, stakes=None) -> Kit:
    params = ChainParams(n=n, m=m, list_mode=list_mode, scheme=scheme, punishments=punishments)
    keys = [ValidatorKeys.derive(b"kit" + i.to_bytes(4, "big"), scheme) for i in range(n)]
    user = keygen(sha256(b"kit-user"), scheme)
    balances = {k.address: 10_000 for k in keys}
    balances[user[1].point] = 1_000_000
    stakes = stakes or [1000] * n
    registry = [RegistryEntry(k.address, s, k.warm[1], k.hot[1]) for k, s in zip(keys, stakes)]
    genesis = Genesis.create(params, balances, registry)
    block, state = genesis.build()
    kit = Kit(params, keys, genesis, user=user)
    kit.extend(block, state)
    return kit


@pytest.fixture
def kit() -> Kit:
    return make_kit()


@pytest.fixture
def timer():
    """Wall-clock budget check: ``with timer(60): ...``."""
    class _Timer:
        def __init__(self, limit):
            self.limit = limit

        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            self.elapsed = time.perf_counter() - self.start
            if exc[0] is None:
                assert self.elapsed < self.limit, f"took {self.elapsed:.1f}s, budget {self.limit}s"
    return _Timer


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
