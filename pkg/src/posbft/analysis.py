"""Closed-form security numbers and the trace report."""

from __future__ import annotations

import math
from fractions import Fraction

from .simnet.trace import SimTrace, TraceError


class AnalysisError(ValueError):
    pass


def _logsumexp(values: list[float]) -> float:
    top = max(values)
    if top == -math.inf:
        return -math.inf
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def binomial_tail(n: int, p: float | Fraction, x: int) -> float:
    """P(X >= x) for X ~ Binomial(n, p), summed in log space."""
    if n < 0 or not 0 <= x <= n:
        raise AnalysisError(f"need 0 <= x <= n, got n={n}, x={x}")
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise AnalysisError(f"probability out of range: {p}")
    if x == 0:
        return 1.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    lgn = math.lgamma(n + 1)
    terms = [lgn - math.lgamma(k + 1) - math.lgamma(n - k + 1) + k * lp + (n - k) * lq
             for k in range(x, n + 1)]
    return min(1.0, math.exp(_logsumexp(terms)))


X_RULES = {
    "n-1/3": lambda n: (n - 1) // 3,  # largest f with n >= 3f + 1
    "n/3": lambda n: n // 3,
}


def threshold(n: int, rule: str = "n-1/3") -> int:
    try:
        return X_RULES[rule](n)
    except KeyError:
        raise AnalysisError(f"unknown x rule {rule!r}") from None


def revert_probability(d: int, f: int | None = None, n: int | None = None) -> float:
    """(f/n)^d; without ``f`` the f/n -> 1/3 limit is used."""
    if d < 0:
        raise AnalysisError("depth must be non-negative")
    if f is None:
        ratio = 1 / 3
    else:
        if f < 0:
            raise AnalysisError("f must be non-negative")
        n = 3 * f + 1 if n is None else n
        if n <= 0 or f > n:
            raise AnalysisError("need 0 <= f <= n")
        ratio = f / n
    return ratio ** d


def finality_probability(d: int, f: int | None = None, n: int | None = None) -> float:
    """Probability that a block with ``d`` successors is not reverted before the next macro."""
    return 1.0 - revert_probability(d, f, n)


# ---------------------------------------------------------------- report

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report_rows(trace: SimTrace) -> list[tuple[str, str]]:
    m = trace.metrics
    required = ("duration_ms", "height", "view_change_rate", "fork_histogram",
                "revert_histogram", "malicious_windows")
    missing = [k for k in required if k not in m]
    if missing:
        raise TraceError(f"trace metrics lack {', '.join(missing)}")
    rows: list[tuple[str, str]] = []
    secs = m["duration_ms"] / 1000
    rows.append(("height", _fmt(m["height"])))
    rows.append(("simulated_seconds", _fmt(secs)))
    rows.append(("blocks_per_second", _fmt(m["height"] / secs if secs else 0.0)))
    rows.append(("view_change_rate", _fmt(m["view_change_rate"])))
    rows.append(("finalized_macros", _fmt(m.get("finalized_macros", 0))))
    rows.append(("safety_violation", _fmt(m.get("safety_violation", False)).lower()))
    forks = {int(k): v for k, v in m["fork_histogram"].items()}
    top = max(forks, default=0)
    for length in range(1, max(top, 1) + 1):
        rows.append((f"fork_length.{length}", _fmt(forks.get(length, 0))))
    reverts = {int(k): v for k, v in m["revert_histogram"].items()}
    total = sum(reverts.values())
    for d in range(1, max(max(reverts, default=0), 5) + 1):
        share = reverts.get(d, 0) / total if total else 0.0
        rows.append((f"revert_depth.{d}", f"{reverts.get(d, 0)}\t{_fmt(share)}\t{_fmt(3.0 ** -d)}"))
    n = m.get("n_validators")
    f = m.get("byzantine", 0)
    for d, (hits, trials) in sorted(m["malicious_windows"].items(), key=lambda kv: int(kv[0])):
        d = int(d)
        p = (f / n) ** d if n else 0.0
        freq = hits / trials if trials else 0.0
        sigma = math.sqrt(p * (1 - p) / trials) if trials else 0.0
        z = (freq - p) / sigma if sigma else 0.0
        rows.append((f"malicious_run.{d}",
                     f"{hits}\t{trials}\t{_fmt(freq)}\t{_fmt(p)}\t{_fmt(sigma)}\t{_fmt(z)}"))
    return rows


REPORT_LEGEND = {
    "revert_depth": "count share 3^-d",
    "malicious_run": "hits windows frequency (f/n)^d sigma z",
}


def format_rows(rows: list[tuple[str, str]], fmt: str = "text") -> str:
    if fmt == "tsv":
        return "".join(f"{k}\t{v}\n" for k, v in rows)
    width = max((len(k) for k, _ in rows), default=0)
    out = []
    for prefix, legend in REPORT_LEGEND.items():
        if any(k.startswith(prefix + ".") for k, _ in rows):
            out.append(f"# {prefix}: {legend}")
    out += [f"{k.ljust(width)}  {v.replace(chr(9), '  ')}" for k, v in rows]
    return "\n".join(out) + "\n"


def report(trace: SimTrace | str, fmt: str = "text") -> str:
    if not isinstance(trace, SimTrace):
        trace = SimTrace.read(trace)
    return format_rows(report_rows(trace), fmt)
