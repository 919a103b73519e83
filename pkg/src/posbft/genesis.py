"""Genesis record: parameters, initial accounts and registry, genesis seed."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .chain import BlockHeader, MacroBlock, MacroDigest, digest_root, transactions_root
from .crypto import GENESIS_SEED_CONSTANT, Seed, genesis_seed
from .encoding import ZERO_HASH, Reader, Writer
from .params import ChainParams
from .staking import draw_validator_list
from .state import ChainState, EpochLedger, RegistryEntry


@dataclass(frozen=True)
class Genesis:
    params: ChainParams
    seed: Seed
    timestamp: int = 0
    balances: tuple[tuple[bytes, int], ...] = ()
    registry: tuple[RegistryEntry, ...] = field(default=())

    @classmethod
    def create(cls, params: ChainParams, balances: dict[bytes, int],
               registry: list[RegistryEntry], timestamp: int = 0,
               entropy: bytes = GENESIS_SEED_CONSTANT) -> "Genesis":
        return cls(params, genesis_seed(entropy, params.scheme), timestamp,
                   tuple(sorted(balances.items())),
                   tuple(sorted(registry, key=lambda e: e.main_address)))

    def initial_state(self) -> ChainState:
        state = ChainState(balances={a: v for a, v in self.balances if v},
                           registry={e.main_address: copy.copy(e) for e in self.registry})
        slots, keys = draw_validator_list(state, self.seed, self.params)
        state.ledger = EpochLedger(epoch_number=1, slots=slots, keys=keys)
        return state

    def build(self) -> tuple[MacroBlock, ChainState]:
        state = self.initial_state()
        digest = MacroDigest(self.timestamp, self.seed, (), (), state.ledger.keys, ZERO_HASH)
        header = BlockHeader(ZERO_HASH, 0, 0, digest_root(digest), transactions_root(()),
                             state.root())
        return MacroBlock(header, digest), state

    def encode(self) -> bytes:
        w = Writer()
        self.params.encode_into(w)
        self.seed.encode_into(w)
        w.u64(self.timestamp)
        w.seq(self.balances, lambda w_, kv: w_.blob(kv[0]).u64(kv[1]))
        w.seq(self.registry, lambda w_, e: w_.blob(e.encode()))
        return w.getvalue()

    @classmethod
    def decode_from(cls, r: Reader) -> "Genesis":
        params = ChainParams.decode_from(r)
        seed = Seed.decode_from(r)
        ts = r.u64()
        balances = tuple(r.seq(lambda r_: (r_.blob(), r_.u64())))
        registry = tuple(RegistryEntry.decode(b) for b in r.seq(Reader.blob))
        return cls(params, seed, ts, balances, registry)
