"""``posbft`` command line: run scenarios, report on traces, calculators, sync."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .analysis import (AnalysisError, X_RULES, binomial_tail, finality_probability, format_rows,
                       report, revert_probability, threshold)
from .encoding import DecodeError
from .simnet.config import ConfigError, load_config, parse_config_text
from .simnet.engine import Simulation
from .simnet.trace import TraceError
from .state import account_key
from .sync import SyncError, check_proof, load_proof, make_proof, sync, sync_full, sync_light

EXIT_OK, EXIT_ERROR, EXIT_UNSAFE = 0, 1, 2


def bundled_scenarios() -> list[str]:
    root = resources.files("posbft") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def read_scenario(name: str):
    path = Path(name)
    if path.exists():
        return load_config(path)
    fname = name if name.endswith(".cfg") else name + ".cfg"
    res = resources.files("posbft") / "scenarios" / fname
    if not res.is_file():
        raise ConfigError(f"no such scenario file or bundled scenario: {name}")
    return parse_config_text(res.read_text())


def _emit(rows: list[tuple[str, object]], fmt: str) -> None:
    sys.stdout.write(format_rows([(k, str(v)) for k, v in rows], fmt))


def _probability(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a probability: {text!r}") from None


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    config = read_scenario(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(config)
    trace = sim.run()
    trace.write(out / "trace.tsv")
    (out / "metrics.json").write_text(json.dumps(trace.metrics, indent=2, sort_keys=True) + "\n")
    sim.export(out / "chain.bin")
    m = trace.metrics
    _emit([("height", m["height"]), ("finalized_macros", m["finalized_macros"]),
           ("view_changes", m["view_changes"]), ("view_change_rate", f"{m['view_change_rate']:.6g}"),
           ("forks", m["forks"]), ("safety_violation", str(m["safety_violation"]).lower()),
           ("trace", out / "trace.tsv"), ("chain", out / "chain.bin")], args.format)
    return EXIT_UNSAFE if m["safety_violation"] else EXIT_OK


def cmd_report(args) -> int:
    sys.stdout.write(report(args.trace, args.format))
    return EXIT_OK


def cmd_binomial(args) -> int:
    x = args.x if args.x is not None else threshold(args.n, args.x_rule)
    value = binomial_tail(args.n, args.p, x)
    _emit([("n", args.n), ("p", args.p), ("x", x), ("probability", f"{value:.10g}"),
           ("percent", f"{100 * value:.6f}")], args.format)
    return EXIT_OK


def cmd_finality(args) -> int:
    depths = [args.d] if args.d is not None else list(range(1, 7))
    rows = []
    for d in depths:
        fin = finality_probability(d, args.f, args.n)
        rows.append((f"d={d}", f"{100 * fin:.4f}\t{revert_probability(d, args.f, args.n):.6g}"))
    if args.format == "text":
        print("# depth: final% revert-probability")
    _emit(rows, args.format)
    return EXIT_OK


def cmd_sync(args) -> int:
    r = sync(args.mode, args.chain)
    rows = [("mode", r.mode), ("head_height", r.head_height), ("head_hash", r.head_hash.hex()),
            ("state_root", r.state_root.hex()), ("validators", len(r.validator_list)),
            ("validator_list", ",".join(k.hex()[:16] for k in r.validator_list)),
            ("records_read", len(r.decoded_heights))]
    _emit(rows, args.format)
    return EXIT_OK


def _key(args) -> bytes:
    try:
        raw = bytes.fromhex(args.key)
    except ValueError:
        raise SyncError("proof", None, f"key is not hex: {args.key!r}") from None
    return account_key(raw) if args.account else raw


def cmd_prove(args) -> int:
    r = sync_full(args.chain)
    key = _key(args)
    try:
        obj = make_proof(r.state, key, r.head_height)
    except KeyError:
        raise SyncError("proof", r.head_height, f"no state entry under key {key.hex()}") from None
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_query(args) -> int:
    obj = load_proof(args.proof)
    if args.chain:
        root = sync_light(args.chain).state_root
    else:
        try:
            root = bytes.fromhex(obj["state_root"])
        except (KeyError, ValueError):
            raise SyncError("proof", None, "proof carries no state root") from None
    value = check_proof(obj, root, _key(args))
    rows = [("key", _key(args).hex()), ("value", value.hex()), ("state_root", root.hex()),
            ("verified", "true")]
    if _key(args)[:1] == b"A" and len(value) == 16:
        rows += [("balance", int.from_bytes(value[:8], "big")),
                 ("nonce", int.from_bytes(value[8:], "big"))]
    _emit(rows, args.format)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("text", "tsv"), default="text")
    p = argparse.ArgumentParser(prog="posbft", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", parents=[fmt], help="run a scenario file or bundled scenario")
    s.add_argument("config")
    s.add_argument("--out", default="run-output")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", parents=[fmt], help="summarize a trace file")
    s.add_argument("trace")
    s.set_defaults(func=cmd_report)

    calc = sub.add_parser("calc", help="analytical calculators")
    csub = calc.add_subparsers(dest="calc", required=True)
    s = csub.add_parser("binomial-tail", parents=[fmt], help="P(X >= x), X ~ Bin(n, p)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=_probability, required=True)
    s.add_argument("--x", type=int, help="threshold; default derived from --x-rule")
    s.add_argument("--x-rule", choices=sorted(X_RULES), default="n-1/3")
    s.set_defaults(func=cmd_binomial)
    s = csub.add_parser("finality", parents=[fmt], help="1 - (f/n)^d")
    s.add_argument("--d", type=int, help="depth; default prints d = 1..6")
    s.add_argument("--f", type=int, help="Byzantine slots; default is the f/n -> 1/3 limit")
    s.add_argument("--n", type=int, help="list size; default 3f+1")
    s.set_defaults(func=cmd_finality)

    s = sub.add_parser("sync", parents=[fmt], help="synchronize from a chain export")
    s.add_argument("--mode", choices=("archival", "full", "light"), required=True)
    s.add_argument("--chain", required=True)
    s.set_defaults(func=cmd_sync)

    s = sub.add_parser("prove", help="write a Merkle proof of one state entry")
    s.add_argument("--chain", required=True)
    s.add_argument("--key", required=True, help="hex leaf key (or address with --account)")
    s.add_argument("--account", action="store_true", help="treat --key as an account address")
    s.add_argument("--out")
    s.set_defaults(func=cmd_prove)

    s = sub.add_parser("query", parents=[fmt], help="verify a state proof")
    s.add_argument("--key", required=True)
    s.add_argument("--account", action="store_true")
    s.add_argument("--proof", required=True)
    s.add_argument("--chain", help="light-sync this export and check against its head state root")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("scenarios", help="list bundled scenarios")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TraceError, SyncError, AnalysisError, DecodeError) as exc:
        print(f"posbft: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
