"""Experiment description and its INI-style scenario file format.

Example scenario::

    [sim]
    rng_seed = 7
    n_validators = 4
    epoch_length = 10
    delta_ms = 1000
    duration_blocks = 25

    [delay]
    model = constant
    d = 100

    [behavior]
    3 = offline:0

    [partition.1]
    start_ms = 4000
    end_ms = 9000
    groups = 0,1 | 2,3
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

BEHAVIOR_KINDS = ("honest", "offline", "delayer", "equivocator", "vc_withholder", "censor")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DelayModel:
    model: str = "constant"  # constant | uniform | table
    d: int = 100
    lo: int = 50
    hi: int = 150
    # (src, dst, delay_ms) overrides for the table model; other links use d
    links: tuple[tuple[int, int, int], ...] = ()

    def validate(self, n: int) -> None:
        if self.model not in ("constant", "uniform", "table"):
            raise ConfigError(f"unknown delay model {self.model!r}")
        if self.d < 0 or self.lo < 0 or self.hi < self.lo:
            raise ConfigError("delays must be non-negative with lo <= hi")
        for src, dst, delay in self.links:
            if not (0 <= src < n and 0 <= dst < n) or delay < 0:
                raise ConfigError(f"bad link entry {(src, dst, delay)}")


@dataclass(frozen=True)
class Behavior:
    kind: str = "honest"
    from_height: int = 0  # offline: height at which the node goes silent
    target: str | None = None  # censor: "user:<k>" or an address in hex
    release_after: int = 3  # vc_withholder: blocks to wait before releasing votes

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        parts = [p.strip() for p in text.split(":")]
        kind = parts[0]
        if kind not in BEHAVIOR_KINDS:
            raise ConfigError(f"unknown behavior {kind!r}")
        try:
            if kind == "offline":
                return cls(kind, from_height=int(parts[1]) if len(parts) > 1 else 0)
            if kind == "censor":
                if len(parts) < 2:
                    raise ConfigError("censor needs a target, e.g. censor:user:0")
                return cls(kind, target=":".join(parts[1:]))
            if kind == "vc_withholder":
                return cls(kind, release_after=int(parts[1]) if len(parts) > 1 else 3)
        except ValueError as exc:
            raise ConfigError(f"bad behavior {text!r}: {exc}") from None
        return cls(kind)

    def __str__(self) -> str:
        if self.kind == "offline":
            return f"offline:{self.from_height}"
        if self.kind == "censor":
            return f"censor:{self.target}"
        if self.kind == "vc_withholder":
            return f"vc_withholder:{self.release_after}"
        return self.kind


@dataclass(frozen=True)
class Partition:
    start_ms: int
    end_ms: int
    groups: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class Workload:
    users: int = 4
    user_balance: int = 1_000_000
    interval_ms: int = 0  # 0 disables background transfers
    amount: int = 1
    fee: int = 1


@dataclass(frozen=True)
class SimConfig:
    rng_seed: int = 1
    n_validators: int = 4
    stakes: tuple[int, ...] | None = None  # None: everyone gets default_stake
    default_stake: int = 1000
    validator_balance: int = 10_000
    epoch_length: int = 10
    delta_ms: int = 1000
    delay: DelayModel = field(default_factory=DelayModel)
    validation_ms: int = 0
    duration_blocks: int = 25
    max_time_ms: int | None = None
    behaviors: tuple[tuple[int, Behavior], ...] = ()
    partitions: tuple[Partition, ...] = ()
    coinbase: int = 10
    max_block_txs: int = 200
    list_mode: str = "sampled"
    punishments: bool = True
    scheme: str = "mock"
    workload: Workload = field(default_factory=Workload)
    trace_events: bool = True

    @property
    def f(self) -> int:
        return (self.n_validators - 1) // 3

    def behavior_of(self, node: int) -> Behavior:
        for idx, b in self.behaviors:
            if idx == node:
                return b
        return Behavior()

    def validate(self) -> None:
        n = self.n_validators
        if n < 4 or (n - 1) % 3:
            raise ConfigError(f"n_validators must be 3f+1 with f >= 1, got {n}")
        if self.delta_ms <= 0:
            raise ConfigError("delta_ms must be positive")
        if self.epoch_length < 1:
            raise ConfigError("epoch_length must be at least 1")
        if self.stakes is not None and (len(self.stakes) != n or min(self.stakes) <= 0):
            raise ConfigError("stakes must list one positive stake per validator")
        if self.duration_blocks <= 0 and self.max_time_ms is None:
            raise ConfigError("either duration_blocks or max_time_ms must bound the run")
        if self.list_mode not in ("sampled", "fixed"):
            raise ConfigError(f"unknown list_mode {self.list_mode!r}")
        if self.scheme not in ("mock", "bls"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        self.delay.validate(n)
        seen = set()
        for idx, b in self.behaviors:
            if not 0 <= idx < n:
                raise ConfigError(f"behavior assigned to unknown validator {idx}")
            if idx in seen:
                raise ConfigError(f"validator {idx} has two behaviors")
            if b.kind not in BEHAVIOR_KINDS:
                raise ConfigError(f"unknown behavior {b.kind!r}")
            seen.add(idx)
        for i, p in enumerate(self.partitions):
            _check_partition(p, n)
            for q in self.partitions[:i]:
                if p.start_ms < q.end_ms and q.start_ms < p.end_ms:
                    raise ConfigError("overlapping partition windows")


def _check_partition(p: Partition, n: int) -> None:
    if p.end_ms <= p.start_ms or p.start_ms < 0:
        raise ConfigError("partition window must have start < end")
    members = [x for g in p.groups for x in g]
    if sorted(members) != list(range(n)) or len(p.groups) < 2:
        raise ConfigError("partition groups must split all validators into >= 2 groups")


def inject_partition(config: SimConfig, t_start: int, t_end: int,
                     groups) -> SimConfig:
    p = Partition(int(t_start), int(t_end), tuple(tuple(sorted(g)) for g in groups))
    out = dataclasses.replace(config, partitions=config.partitions + (p,))
    _check_partition(p, config.n_validators)
    for q in config.partitions:
        if p.start_ms < q.end_ms and q.start_ms < p.end_ms:
            raise ConfigError("overlapping partition windows")
    if config.max_time_ms is not None and t_end > config.max_time_ms:
        raise ConfigError("partition window outside run duration")
    return out


def assign_behavior(config: SimConfig, validator: int, behavior: Behavior | str) -> SimConfig:
    if not 0 <= validator < config.n_validators:
        raise ConfigError(f"unknown validator {validator}")
    if isinstance(behavior, str):
        behavior = Behavior.parse(behavior)
    rest = tuple((i, b) for i, b in config.behaviors if i != validator)
    return dataclasses.replace(config, behaviors=tuple(sorted(rest + ((validator, behavior),),
                                                             key=lambda x: x[0])))


# ---------------------------------------------------------------- file format

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_INT_FIELDS = ("rng_seed", "n_validators", "default_stake", "validator_balance", "epoch_length",
               "delta_ms", "validation_ms", "duration_blocks", "coinbase", "max_block_txs")


def parse_config_text(text: str) -> SimConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse scenario: {exc}") from None
    if not cp.has_section("sim"):
        raise ConfigError("missing [sim] section")
    kw: dict = {}
    try:
        sim = cp["sim"]
        for key in sim:
            value = sim[key]
            if key in _INT_FIELDS:
                kw[key] = int(value)
            elif key == "max_time_ms":
                kw[key] = int(value)
            elif key in ("punishments", "trace_events"):
                kw[key] = _bool(value)
            elif key in ("list_mode", "scheme"):
                kw[key] = value.strip()
            elif key == "stakes":
                kw[key] = tuple(int(x) for x in value.replace(",", " ").split())
            else:
                raise ConfigError(f"unknown [sim] key {key!r}")
        if cp.has_section("delay"):
            sec = cp["delay"]
            links = []
            dkw: dict = {}
            for key in sec:
                if key == "model":
                    dkw["model"] = sec[key].strip()
                elif key in ("d", "lo", "hi"):
                    dkw[key] = int(sec[key])
                elif key.startswith("link."):
                    _, src, dst = key.split(".")
                    links.append((int(src), int(dst), int(sec[key])))
                else:
                    raise ConfigError(f"unknown [delay] key {key!r}")
            kw["delay"] = DelayModel(links=tuple(sorted(links)), **dkw)
        if cp.has_section("workload"):
            sec = cp["workload"]
            wkw = {}
            for key in sec:
                if key not in {f.name for f in dataclasses.fields(Workload)}:
                    raise ConfigError(f"unknown [workload] key {key!r}")
                wkw[key] = int(sec[key])
            kw["workload"] = Workload(**wkw)
        if cp.has_section("behavior"):
            kw["behaviors"] = tuple(sorted((int(k), Behavior.parse(v))
                                           for k, v in cp["behavior"].items()))
        parts = []
        for name in cp.sections():
            if name.startswith("partition"):
                sec = cp[name]
                groups = tuple(tuple(int(x) for x in g.replace(",", " ").split())
                               for g in sec["groups"].split("|"))
                parts.append(Partition(int(sec["start_ms"]), int(sec["end_ms"]), groups))
        kw["partitions"] = tuple(sorted(parts, key=lambda p: p.start_ms))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad scenario value: {exc}") from None
    config = SimConfig(**kw)
    config.validate()
    return config


def load_config(path: str | Path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text)


def format_config(config: SimConfig) -> str:
    """Inverse of :func:`parse_config_text` (comments are not preserved)."""
    lines = ["[sim]"]
    for name in _INT_FIELDS:
        lines.append(f"{name} = {getattr(config, name)}")
    if config.max_time_ms is not None:
        lines.append(f"max_time_ms = {config.max_time_ms}")
    if config.stakes is not None:
        lines.append("stakes = " + ", ".join(map(str, config.stakes)))
    lines += [f"list_mode = {config.list_mode}", f"punishments = {str(config.punishments).lower()}",
              f"scheme = {config.scheme}", f"trace_events = {str(config.trace_events).lower()}", ""]
    d = config.delay
    lines += ["[delay]", f"model = {d.model}", f"d = {d.d}", f"lo = {d.lo}", f"hi = {d.hi}"]
    lines += [f"link.{s}.{t} = {v}" for s, t, v in d.links]
    w = config.workload
    lines += ["", "[workload]"] + [f"{f.name} = {getattr(w, f.name)}" for f in dataclasses.fields(w)]
    if config.behaviors:
        lines += ["", "[behavior]"] + [f"{i} = {b}" for i, b in config.behaviors]
    for k, p in enumerate(config.partitions, 1):
        lines += ["", f"[partition.{k}]", f"start_ms = {p.start_ms}", f"end_ms = {p.end_ms}",
                  "groups = " + " | ".join(",".join(map(str, g)) for g in p.groups)]
    return "\n".join(lines) + "\n"
