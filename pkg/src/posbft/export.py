"""Chain export file.

Layout (all integers big-endian)::

    magic        "POSBFT-CHAIN" 00 01
    genesis      u32 length + genesis record
    count        u32 number of block records (genesis block excluded)
    record*      u8 kind (0 micro, 1 macro) | u64 height | u32 length | block bytes
    snapshot     u8 present | [u64 height | u32 length | state bytes]

The snapshot is the full state after the last macro block in the file. It is
what a full node downloads instead of replaying old epochs; archival sync
ignores it and re-derives everything.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .chain import Block, MacroBlock, MicroBlock
from .encoding import DecodeError, Reader, Writer
from .genesis import Genesis
from .state import ChainState

MAGIC = b"POSBFT-CHAIN\x00\x01"
MICRO, MACRO = 0, 1


@dataclass(frozen=True)
class BlockRecord:
    kind: int
    height: int
    raw: bytes

    def decode(self) -> Block:
        try:
            if self.kind == MACRO:
                return MacroBlock.decode(self.raw)
            if self.kind == MICRO:
                return MicroBlock.decode(self.raw)
        except (DecodeError, ValueError) as exc:
            raise DecodeError(f"block at height {self.height}: {exc}") from None
        raise DecodeError(f"unknown record kind {self.kind}")


@dataclass
class ChainExport:
    genesis: Genesis
    records: list[BlockRecord]
    snapshot_height: int | None = None
    snapshot: bytes | None = None

    def snapshot_state(self) -> ChainState | None:
        return ChainState.decode(self.snapshot) if self.snapshot is not None else None


def encode_export(genesis: Genesis, blocks: Iterable[Block],
                  snapshot: tuple[int, ChainState] | None = None) -> bytes:
    w = Writer().raw(MAGIC).blob(genesis.encode())
    blocks = [b for b in blocks if b.height > 0]
    w.u32(len(blocks))
    for b in blocks:
        raw = b.encode()
        w.u8(MACRO if b.is_macro else MICRO).u64(b.height).blob(raw)
    if snapshot is None:
        w.u8(0)
    else:
        height, state = snapshot
        w.u8(1).u64(height).blob(state.encode())
    return w.getvalue()


def write_export(path: str | Path, genesis: Genesis, blocks: Iterable[Block],
                 snapshot: tuple[int, ChainState] | None = None) -> None:
    Path(path).write_bytes(encode_export(genesis, blocks, snapshot))


def parse_export(data: bytes) -> ChainExport:
    """Split an export into records without decoding any block."""
    r = Reader(data)
    if r.raw(len(MAGIC)) != MAGIC:
        raise DecodeError("not a chain export")
    genesis_reader = Reader(r.blob())
    genesis = Genesis.decode_from(genesis_reader)
    genesis_reader.expect_end()
    records = []
    for _ in range(r.u32()):
        kind, height = r.u8(), r.u64()
        records.append(BlockRecord(kind, height, r.blob()))
    out = ChainExport(genesis, records)
    if r.flag():
        out.snapshot_height = r.u64()
        out.snapshot = r.blob()
    r.expect_end()
    return out


def read_export(path: str | Path) -> ChainExport:
    return parse_export(Path(path).read_bytes())


def iter_blocks(export: ChainExport) -> Iterator[Block]:
    for rec in export.records:
        yield rec.decode()
