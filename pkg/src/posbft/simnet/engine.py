"""Deterministic discrete-event simulation of a validator network.

Events live in one heap ordered by ``(time, sequence)``; every handler runs
to completion before the next event is popped. All randomness comes from
``random.Random`` streams seeded from ``SimConfig.rng_seed``, so a config
fully determines the trace.

Gossip is a direct flood: a broadcast schedules one delivery per peer with
an independently sampled delay. Whether a message crosses a partition is
decided when it is sent; messages already in flight when a window opens
still arrive, and nothing dropped is replayed after the window closes.
"""

from __future__ import annotations

import dataclasses
import heapq
import random
from dataclasses import dataclass
from pathlib import Path

from ..chain import Block, Transaction, TxKind, sign_transaction
from ..consensus.messages import BlockMsg, ProposalMsg, TxMsg, gossip_key
from ..consensus.node import Node, ValidatorKeys
from ..consensus.rules import Rejected, apply_block
from ..crypto import keygen, prove_possession, public_key_of
from ..encoding import sha256
from ..export import write_export
from ..genesis import Genesis
from ..params import ChainParams
from ..state import RegistryEntry
from .behaviors import (CensorNode, Coalition, DelayerNode, EquivocatorNode, OfflineNode,
                        VcWithholderNode)
from .config import ConfigError, Partition, SimConfig, inject_partition
from .trace import SimTrace, format_event

CLIENT = -1
_DELIVER, _TIMER, _CLIENT_TX, _TICK, _MARK = range(5)


@dataclass(frozen=True)
class BlockInfo:
    height: int
    parent: bytes
    view: int
    is_macro: bool
    origin: int  # first node seen sending it; for micro blocks this is the producer


class ValidationCache:
    """Shares block validation among the simulated nodes.

    A block's header commits to its parent, so the outcome of validating it
    is the same at every node; only the first node to see a block pays for
    it. A hit requires the very same block (all fields, not only the header
    hash), so a tampered body or justification is validated afresh.
    """

    def __init__(self) -> None:
        self.results: dict[bytes, tuple[Block, object]] = {}

    def __call__(self, parent, parent_state, block, params, chain):
        hit = self.results.get(block.hash)
        if hit is None or not (hit[0] is block or hit[0] == block):
            try:
                result = apply_block(parent, parent_state, block, params, chain)
            except Rejected as exc:
                result = exc
            hit = (block, result)
            self.results[block.hash] = hit
        if isinstance(hit[1], Rejected):
            raise Rejected(hit[1].reason)
        return hit[1]

    def prune(self, below: int) -> None:
        self.results = {k: v for k, v in self.results.items() if v[0].height >= below}


class Simulation:
    def __init__(self, config: SimConfig) -> None:
        config.validate()
        self.config = config
        self.params = ChainParams(
            n=config.n_validators, m=config.epoch_length, delta_ms=config.delta_ms,
            coinbase=config.coinbase, max_block_txs=config.max_block_txs,
            list_mode=config.list_mode, punishments=config.punishments, scheme=config.scheme)
        seed = str(config.rng_seed)
        self.delay_rng = random.Random(f"{seed}:delay")
        self.work_rng = random.Random(f"{seed}:workload")
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.lines: list[str] = []
        self._stopped = False

        n = config.n_validators
        tag = config.rng_seed.to_bytes(8, "big", signed=True)
        self.keys = [ValidatorKeys.derive(b"validator" + tag + i.to_bytes(4, "big"), config.scheme)
                     for i in range(n)]
        self.user_keys = [keygen(sha256(b"user" + tag + k.to_bytes(4, "big")), config.scheme)
                          for k in range(config.workload.users)]
        self.user_nonce = [0] * len(self.user_keys)
        stakes = config.stakes or (config.default_stake,) * n
        balances = {k.address: config.validator_balance for k in self.keys}
        for _, pk in self.user_keys:
            balances[pk.point] = config.workload.user_balance
        registry = [RegistryEntry(k.address, stake, k.warm[1], k.hot[1])
                    for k, stake in zip(self.keys, stakes)]
        self.genesis = Genesis.create(self.params, balances, registry,
                                      entropy=sha256(b"genesis" + tag))
        self.genesis_block, self.genesis_state = self.genesis.build()

        self.behaviors = [config.behavior_of(i) for i in range(n)]
        members = [i for i, b in enumerate(self.behaviors) if b.kind == "vc_withholder"]
        self.coalition = (Coalition(members, self.behaviors[members[0]].release_after)
                          if members else None)
        self.cache = ValidationCache()
        self.nodes: list[Node] = [self._make_node(i) for i in range(n)]

        self.blocks: dict[bytes, Block] = {}
        self.info: dict[bytes, BlockInfo] = {}
        self._delivered: set[tuple[int, tuple]] = set()
        self.messages = dict(sent=0, delivered=0, dropped_partition=0, dropped_offline=0,
                             suppressed=0)
        self.heads = [0] * n
        self.produced = 0
        self.timeouts = 0
        self.vc_quorums: set[tuple[int, int]] = set()
        self.reverts: dict[int, int] = {}
        self.finalized: dict[int, str] = {}
        self.finalize_count = [0] * n
        self.conflicts: list[tuple[int, int, str, str]] = []
        self.submitted: list[tuple[int, bytes, int]] = []  # (time, tx hash, reference height)
        self.max_time = (config.max_time_ms if config.max_time_ms is not None
                         else (config.duration_blocks + 10) * 20 * config.delta_ms)

    # ------------------------------------------------------------ setup

    def _make_node(self, i: int) -> Node:
        b = self.behaviors[i]
        args = (i, self.keys[i], self.genesis_block, self.genesis_state, self.params, self,
                self.cache)
        if b.kind == "offline":
            return OfflineNode(*args, from_height=b.from_height)
        if b.kind == "delayer":
            return DelayerNode(*args)
        if b.kind == "equivocator":
            return EquivocatorNode(*args, peers=self.config.n_validators)
        if b.kind == "vc_withholder":
            return VcWithholderNode(*args, coalition=self.coalition)
        if b.kind == "censor":
            return CensorNode(*args, target=self.resolve_address(b.target))
        return Node(*args)

    def resolve_address(self, target: str) -> bytes:
        if target.startswith("user:"):
            k = int(target[5:])
            if not 0 <= k < len(self.user_keys):
                raise ConfigError(f"unknown user {k}")
            return self.user_keys[k][1].point
        if target.startswith("validator:"):
            return self.keys[int(target[10:])].address
        try:
            return bytes.fromhex(target)
        except ValueError:
            raise ConfigError(f"bad censor target {target!r}") from None

    @property
    def honest(self) -> list[int]:
        return [i for i, b in enumerate(self.behaviors) if b.kind == "honest"]

    @property
    def reference(self) -> Node:
        """Lowest-indexed honest node; its view of the chain feeds the metrics."""
        live = self.honest or [i for i, nd in enumerate(self.nodes) if not nd.offline] or [0]
        return self.nodes[live[0]]

    # ------------------------------------------------------------ Network interface

    def _push(self, at: int, kind: int, *payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, kind, payload))

    def _delay(self, src: int, dst: int) -> int:
        d = self.config.delay
        if d.model == "uniform":
            return self.delay_rng.randint(d.lo, d.hi)
        if d.model == "table":
            for s, t, v in d.links:
                if s == src and t == dst:
                    return v
        return d.d

    def _partition_at(self, t: int) -> Partition | None:
        for p in self.config.partitions:
            if p.start_ms <= t < p.end_ms:
                return p
        return None

    def _cut(self, src: int, dst: int) -> bool:
        if src == CLIENT:
            return False
        p = self._partition_at(self.now)
        if p is None:
            return False
        return not any(src in g and dst in g for g in p.groups)

    def _see_block(self, src: int, block: Block) -> None:
        if block.hash not in self.info:
            self.blocks[block.hash] = block
            self.info[block.hash] = BlockInfo(block.height, block.header.parent_hash, block.view,
                                              block.is_macro, src)

    def _post(self, src: int, dst: int, msg, gossip: bool) -> None:
        self.messages["sent"] += 1
        if self._cut(src, dst):
            self.messages["dropped_partition"] += 1
            return
        if gossip:
            key = gossip_key(msg)
            if key is not None:
                if (dst, key) in self._delivered:
                    self.messages["suppressed"] += 1
                    return
                self._delivered.add((dst, key))
        delay = self._delay(src, dst) if src != CLIENT else 0
        if isinstance(msg, (BlockMsg, ProposalMsg)):
            delay += self.config.validation_ms
        self._push(self.now + delay, _DELIVER, dst, src, msg)

    def broadcast(self, src: int, msg) -> None:
        if isinstance(msg, BlockMsg):
            self._see_block(src, msg.block)
        for dst in range(self.config.n_validators):
            if dst != src:
                self._post(src, dst, msg, gossip=True)

    def send(self, src: int, dst: int, msg) -> None:
        if isinstance(msg, BlockMsg):
            self._see_block(src, msg.block)
        self._post(src, dst, msg, gossip=False)

    def set_timer(self, node: int, at: int, token) -> None:
        self._push(max(at, self.now), _TIMER, node, token)

    def record(self, node: int, kind: str, **fields) -> None:
        if self.config.trace_events:
            self.lines.append(format_event(self.now, node, kind, fields))
        honest = node >= 0 and self.behaviors[node].kind == "honest"
        if kind == "head":
            self.heads[node] = fields["h"]
            self._check_stop()
        elif kind == "produce":
            self.produced += 1
        elif kind == "timeout":
            self.timeouts += 1
        elif kind == "vc-quorum":
            self.vc_quorums.add((fields["h"], fields["v"]))
        elif kind == "revert" and honest:
            self.reverts[fields["depth"]] = self.reverts.get(fields["depth"], 0) + 1
        elif kind == "finalize":
            self.finalize_count[node] += 1
            if len(self.cache.results) > 4096:
                self.cache.prune(min(nd.store.finalized.height for nd in self.nodes))
            h, block = fields["h"], fields["block"]
            seen = self.finalized.setdefault(h, block)
            if seen != block:
                self.conflicts.append((h, node, seen[:8], block[:8]))

    # ------------------------------------------------------------ client side

    def submit(self, tx: Transaction, at: int | None = None) -> None:
        """Hand ``tx`` to every validator at time ``at`` (default: now)."""
        self._push(self.now if at is None else at, _CLIENT_TX, tx)

    def transfer(self, user: int, recipient: bytes, amount: int, fee: int = 1) -> Transaction:
        """Build the next signed transfer of ``user`` (advances its local nonce)."""
        sk, pk = self.user_keys[user]
        tx = Transaction(TxKind.TRANSFER, pk.point, self.user_nonce[user], fee, amount=amount,
                         recipient=recipient)
        self.user_nonce[user] += 1
        return sign_transaction(tx, sk)

    def staking(self, sk, amount: int, fee: int = 1, nonce: int = 0,
                scheme: str | None = None) -> Transaction:
        """Registration of a fresh validator whose cold key is ``sk``; helper for scenarios."""
        scheme = scheme or self.config.scheme
        warm = keygen(sha256(b"warm" + public_key_of(sk).point), scheme)
        hot = keygen(sha256(b"hot" + public_key_of(sk).point), scheme)
        tx = Transaction(TxKind.STAKING, public_key_of(sk).point, nonce, fee, amount=amount,
                         warm_key=warm[1], hot_key=hot[1], proof_of_possession=prove_possession(hot[0]))
        return sign_transaction(tx, sk)

    def _on_client_tx(self, tx: Transaction) -> None:
        self.submitted.append((self.now, tx.hash, self.reference.head.height))
        self.lines.append(format_event(self.now, CLIENT, "submit",
                                       dict(tx=tx.hash[:4].hex(), sender=tx.sender[:4].hex())))
        for dst in range(self.config.n_validators):
            self._post(CLIENT, dst, TxMsg(tx), gossip=True)

    def _on_tick(self) -> None:
        w = self.config.workload
        users = len(self.user_keys)
        if users >= 2:
            a = self.work_rng.randrange(users)
            b = (a + 1 + self.work_rng.randrange(users - 1)) % users
            self._on_client_tx(self.transfer(a, self.user_keys[b][1].point, w.amount, w.fee))
        self._push(self.now + w.interval_ms, _TICK)

    # ------------------------------------------------------------ main loop

    def _check_stop(self) -> None:
        live = [i for i in self.honest if not self.nodes[i].offline]
        if not live:
            live = [i for i, nd in enumerate(self.nodes) if not nd.offline]
        if live and min(self.heads[i] for i in live) >= self.config.duration_blocks:
            self._stopped = True

    def start(self) -> None:
        for p in self.config.partitions:
            self._push(p.start_ms, _MARK, "partition-start", p)
            self._push(p.end_ms, _MARK, "partition-end", p)
        if self.config.workload.interval_ms > 0:
            self._push(self.config.workload.interval_ms, _TICK)
        for node in self.nodes:
            node.start(0)

    def step(self) -> bool:
        """Process one event; False once the run is over."""
        if self._stopped or not self._queue:
            return False
        at, _, kind, payload = heapq.heappop(self._queue)
        if at > self.max_time:
            self._stopped = True
            return False
        self.now = at
        if kind == _DELIVER:
            dst, src, msg = payload
            node = self.nodes[dst]
            if node.offline:
                self.messages["dropped_offline"] += 1
            else:
                self.messages["delivered"] += 1
                node.on_message(at, src, msg)
        elif kind == _TIMER:
            i, token = payload
            self.nodes[i].on_timer(at, token)
        elif kind == _CLIENT_TX:
            self._on_client_tx(payload[0])
        elif kind == _TICK:
            self._on_tick()
        else:
            label, p = payload
            groups = " | ".join(",".join(map(str, g)) for g in p.groups).replace(" ", "")
            self.lines.append(format_event(at, CLIENT, label, dict(groups=groups)))
        return not self._stopped

    def run_until(self, t: int) -> None:
        while self._queue and self._queue[0][0] <= t and self.step():
            pass

    def run(self) -> SimTrace:
        self.start()
        while self.step():
            pass
        return self.trace()

    # ------------------------------------------------------------ results

    def chain(self, node: Node | None = None) -> list[Block]:
        """Blocks from genesis to the head of ``node`` (default: reference node)."""
        node = node or self.reference
        store = node.store
        out = [store.canonical[h].block for h in range(store.finalized.height + 1)]
        tail = []
        e = node.head
        while e is not store.finalized:
            tail.append(e.block)
            e = e.parent
        return out + tail[::-1]

    def export(self, path: str | Path, node: Node | None = None) -> None:
        node = node or self.reference
        fin = node.store.finalized
        write_export(path, self.genesis, self.chain(node), (fin.height, fin.state))

    def producer_of(self, block: Block) -> int:
        return self.info[block.hash].origin if block.hash in self.info else -1

    def metrics(self) -> dict:
        chain = self.chain()
        body = chain[1:]
        ref = self.reference
        canon = {b.hash for b in chain}
        micro = [b for b in body if not b.is_macro]

        # side branches hanging off the reference chain
        children: dict[bytes, list[bytes]] = {}
        for h, inf in self.info.items():
            if h not in canon:
                children.setdefault(inf.parent, []).append(h)

        def depth(h: bytes) -> int:
            return 1 + max((depth(c) for c in children.get(h, ())), default=0)

        forks: dict[int, int] = {}
        for h, inf in self.info.items():
            if (h not in canon and inf.parent in canon and inf.parent != ref.head.hash
                    and not inf.is_macro):
                d = depth(h)
                forks[d] = forks.get(d, 0) + 1

        # consecutive micro blocks; a handoff is one whose producer differs from its parent's
        intervals, handoffs = [], []
        for i, b in enumerate(body):
            if b.is_macro or chain[i].is_macro:
                continue
            gap = b.digest.timestamp - chain[i].digest.timestamp
            intervals.append(gap)
            if i and self.producer_of(b) != self.producer_of(chain[i]):
                handoffs.append(gap)
        views = {b.height: b.view for b in body if b.view > 0}
        malicious = [self.behaviors[self.producer_of(b)].kind != "honest"
                     if self.producer_of(b) >= 0 else False for b in body]
        out = {
            "duration_ms": self.now,
            "n_validators": self.config.n_validators,
            "byzantine": sum(1 for b in self.behaviors if b.kind != "honest"),
            "height": ref.head.height,
            "head": ref.head.hash.hex(),
            "blocks_produced": self.produced,
            "finalized_macros": ref.store.finalized.height // (self.params.m + 1),
            "view_changes": len(self.vc_quorums),
            "view_change_heights": len(views),
            "view_change_rate": len(views) / len(body) if body else 0.0,
            "views_per_height": {str(h): v for h, v in sorted(views.items())},
            "timeouts": self.timeouts,
            "forks": sum(forks.values()),
            "fork_histogram": {str(k): v for k, v in sorted(forks.items())},
            "revert_histogram": {str(k): v for k, v in sorted(self.reverts.items())},
            "mean_interval_ms": sum(intervals) / len(intervals) if intervals else 0.0,
            "mean_handoff_ms": sum(handoffs) / len(handoffs) if handoffs else 0.0,
            "micro_blocks": len(micro),
            "heads": [[nd.head.height, nd.head.hash[:4].hex()] for nd in self.nodes],
            "safety_violation": bool(self.conflicts),
            "conflicts": [list(c) for c in self.conflicts],
            "messages": dict(self.messages),
            "malicious_windows": malicious_windows(body, malicious, self.params),
            "included_fork_proofs": sum(len(b.digest.fork_proofs) for b in body),
            "tx_inclusion": self._inclusion(body),
        }
        return out

    def _inclusion(self, body: list[Block]) -> dict:
        where = {}
        for b in body:
            for tx in b.transactions if not b.is_macro else ():
                where.setdefault(tx.hash, b.height)
        delays = [where[h] - ref_h for _, h, ref_h in self.submitted if h in where]
        return {"submitted": len(self.submitted), "included": len(delays),
                "max_delay_blocks": max(delays, default=0)}

    def trace(self) -> SimTrace:
        return SimTrace(list(self.lines), self.metrics())


def malicious_windows(body: list[Block], malicious: list[bool], params: ChainParams,
                      max_depth: int = 5) -> dict:
    """Per depth d, how many length-d windows of micro heights were all adversarial.

    Windows never span a macro block, since a malicious subchain cannot
    outlive the epoch's finality.
    """
    runs: list[list[bool]] = []
    cur: list[bool] = []
    for b, bad in zip(body, malicious):
        if b.is_macro:
            runs.append(cur)
            cur = []
        else:
            cur.append(bad)
    runs.append(cur)
    out = {}
    for d in range(1, max_depth + 1):
        hits = trials = 0
        for run in runs:
            for i in range(len(run) - d + 1):
                trials += 1
                hits += all(run[i:i + d])
        out[str(d)] = [hits, trials]
    return out


def run(config: SimConfig) -> SimTrace:
    return Simulation(config).run()


# ---------------------------------------------------------------- engineered partitions

@dataclass(frozen=True)
class SplitPlan:
    height: int  # last block both sides share
    owners: tuple[int, ...]  # producers of the next z blocks
    next_owner: int  # owner of the block after them, on the other side
    group: tuple[int, ...]
    start_ms: int
    end_ms: int


def engineer_partition(config: SimConfig, z: int, length_ms: int | None = None
                       ) -> tuple[SimConfig, SplitPlan]:
    """Find a split in which one side owns exactly the next ``z`` slots.

    A partition-free dry run of ``config`` fixes the honest chain. We look
    for a height ``h`` whose next ``z`` blocks come from a small set of
    validators while the block after them belongs to someone else, put those
    validators (topped up to ``f + 1``) on one side, and open the window right
    after block ``h`` was sent. Neither side reaches ``2f + 1``, so view
    changes cannot rescue either of them. Since the dry run and the real one
    coincide up to the window start, the plan holds in the real run.
    """
    if config.partitions:
        raise ConfigError("engineer_partition expects a config without partitions")
    n, f = config.n_validators, config.f
    length_ms = length_ms or 5 * config.delta_ms
    dry = Simulation(dataclasses.replace(config, trace_events=False))
    dry.run()
    chain = dry.chain()
    for i in range(1, len(chain) - z - 1):
        window = chain[i + 1:i + z + 2]
        if any(b.is_macro or b.view for b in window) or chain[i].view:
            continue
        owners = tuple(dry.producer_of(b) for b in window[:-1])
        nxt = dry.producer_of(window[-1])
        side = set(owners)
        if nxt in side or len(side) > 2 * f:
            continue
        for extra in range(n):
            if len(side) >= f + 1:
                break
            if extra != nxt:
                side.add(extra)
        if not f + 1 <= len(side) <= 2 * f:
            continue
        start = chain[i].digest.timestamp + 1
        if start >= window[0].digest.timestamp:
            continue
        group = tuple(sorted(side))
        other = tuple(x for x in range(n) if x not in side)
        out = inject_partition(config, start, start + length_ms, (group, other))
        return out, SplitPlan(chain[i].height, owners, nxt, group, start, start + length_ms)
    raise ConfigError(f"no height with {z} consecutive owners on one side found")
