from __future__ import annotations

from dataclasses import dataclass

from .encoding import Reader, Writer


@dataclass(frozen=True)
class ChainParams:
    """Consensus constants fixed at genesis.

    Heights ``0, m+1, 2(m+1), ...`` carry macro blocks; epoch ``e >= 1`` is the
    run of ``m`` micro blocks ending with the macro block at ``e * (m + 1)``.
    """

    n: int
    m: int
    delta_ms: int = 1000
    coinbase: int = 10
    max_block_txs: int = 200
    list_mode: str = "sampled"  # "sampled" (stake-weighted draw) or "fixed"
    punishments: bool = True
    scheme: str = "mock"

    def __post_init__(self) -> None:
        if self.n < 4 or (self.n - 1) % 3:
            raise ValueError(f"validator list size must be 3f+1 with f >= 1, got {self.n}")
        if self.m < 1:
            raise ValueError("epoch must contain at least one micro block")
        if self.delta_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.list_mode not in ("sampled", "fixed"):
            raise ValueError(f"unknown list mode {self.list_mode!r}")

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def is_macro_height(self, height: int) -> bool:
        return height % (self.m + 1) == 0

    def epoch_of(self, height: int) -> int:
        return (height + self.m) // (self.m + 1)

    def macro_height(self, epoch: int) -> int:
        return epoch * (self.m + 1)

    def epoch_bounds(self, epoch: int) -> tuple[int, int]:
        return ((epoch - 1) * (self.m + 1) + 1, epoch * (self.m + 1))

    def encode_into(self, w: Writer) -> None:
        (w.u64(self.n).u64(self.m).u64(self.delta_ms).u64(self.coinbase)
         .u64(self.max_block_txs).text(self.list_mode).flag(self.punishments).text(self.scheme))

    @classmethod
    def decode_from(cls, r: Reader) -> "ChainParams":
        return cls(r.u64(), r.u64(), r.u64(), r.u64(), r.u64(), r.text(), r.flag(), r.text())
