"""Command-line front end: ``offchain-gas <command> [options]``.

Commands
    cost      closed-form cost of M1/M2/M3 for a workload shape
    discover  rank senders of a trace by transfer count
    classify  split a trace into Tx1/Tx2 requests for an institution
    stats     per-window Tx1/Tx2 means
    simulate  run a workload block by block and itemize the gas
    sweep     amortized M2/M3 gas across upload intervals
    policy    cost/delay outcome of upload policies

Every command takes ``--preset`` or ``--schedule-file``, ``--format`` and
``--output``. Gas is printed as floored integers and percentages with two
decimals, so identical invocations give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import fixtures
from .auth_state import AccountId
from .chain_sim import SimulationError, every_k, run
from .gas_model import (
    MODES,
    PRESETS,
    DegenerateWorkloadError,
    GasSchedule,
    WorkloadShape,
    cost,
    get_preset,
    load_schedule,
)
from .policy import decider_for, evaluate_policy, parse_policy, select_write_intensive
from .workload import (
    SYNTH_INSTITUTION,
    InfeasibleWorkloadError,
    TraceFormatError,
    W1Workload,
    classify_w1,
    discover_institutional,
    funding_shortfall,
    ingest_trace,
    synth_w1,
    window_count,
    window_stats,
)

FORMATS = ("table", "csv", "json")
DEFAULT_POLICIES = "max0,max5,max10,max15,optimize"


class CliError(Exception):
    """Runtime failure reported on stderr with exit status 1."""


class UsageError(Exception):
    """Bad arguments; reported with exit status 2."""


# ---------------------------------------------------------------- formatting

def fixed(value: Fraction, places: int = 2) -> str:
    """Exact decimal rounding, halves away from zero."""
    value = Fraction(value)
    scale = 10**places
    scaled = abs(value) * scale
    units = math.floor(scaled + Fraction(1, 2))
    sign = "-" if value < 0 and units else ""
    whole, frac = divmod(units, scale)
    return f"{sign}{whole}.{frac:0{places}d}" if places else f"{sign}{whole}"


def versus_baseline(savings_pct: Fraction) -> str:
    text = fixed(savings_pct)
    if text in ("0.00", "-0.00"):
        return "0.00%"
    if savings_pct > 0:
        return f"saves {text}%"
    return f"costs {fixed(-savings_pct)}% more"


def render(rows: list[dict], columns: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{c: r[c] for c in columns} for r in rows], indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
        return out.getvalue()
    cells = [[str(c) for c in columns]] + [[str(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit(args, text: str) -> None:
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ parsing

def decimal_arg(text: str) -> Fraction:
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a decimal number: {text!r}") from None
    return value


def k_range_arg(text: str) -> list[int]:
    """``5``, ``1-10`` or ``1,2,5``."""
    ks: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                ks.extend(range(lo, hi + 1))
            else:
                ks.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}; use 5, 1-10 or 1,2,5") from None
    if not ks:
        raise argparse.ArgumentTypeError("k range is empty")
    if min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be >= 1")
    return sorted(set(ks))


def schedule_from(args) -> GasSchedule:
    if args.schedule_file:
        try:
            return load_schedule(args.schedule_file)
        except OSError as exc:
            raise CliError(f"cannot read schedule file {args.schedule_file}: {exc.strerror}") from exc
    return get_preset(args.preset or "istanbul")


def read_labels(path: str) -> dict[AccountId, str]:
    """``address,label`` lines; a header row and ``#`` comments are skipped."""
    labels: dict[AccountId, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read labels file {path}: {exc.strerror}") from exc
    for n, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
            continue
        if n == 1 and row[0].strip().lower() == "address":
            continue
        try:
            labels[AccountId(row[0].strip())] = ",".join(row[1:]).strip()
        except ValueError as exc:
            raise CliError(f"{path} line {n}: {exc}") from exc
    return labels


def load_trace(path: str):
    try:
        return ingest_trace(Path(path))
    except OSError as exc:
        raise CliError(f"cannot read trace {path}: {exc.strerror}") from exc


def institution_from(args, trace) -> list[AccountId]:
    inst = [AccountId(a) for a in (args.institution or [])]
    if getattr(args, "institution_file", None):
        inst.extend(read_labels(args.institution_file))
    if not inst:
        top = discover_institutional(trace, 1)
        if not top:
            raise CliError("trace is empty; no institution to classify against")
        inst = [top[0].sender]
    return inst


def workload_from(args) -> W1Workload:
    if args.trace:
        trace = load_trace(args.trace)
        return classify_w1(trace, institution_from(args, trace))
    if args.synthetic:
        nw, nr = args.synthetic
        return classify_w1(synth_w1(nw, nr, args.blocks, args.seed), [SYNTH_INSTITUTION])
    raise UsageError("give --trace or --synthetic")


def int_pair_arg(text: str) -> tuple[int, int]:
    try:
        nw, nr = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NW,NR integers, got {text!r}") from None
    if nw < 0 or nr < 0:
        raise argparse.ArgumentTypeError("NW and NR must be non-negative")
    return nw, nr


def decimal_pair_arg(text: str) -> tuple[Fraction, Fraction]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected NW,NR, got {text!r}")
    return decimal_arg(parts[0]), decimal_arg(parts[1])


# ----------------------------------------------------------------- commands

COST_COLUMNS = ("mode", "total_gas", "amortized_gas", "normalized", "vs_baseline")


def cost_rows(shape: WorkloadShape, s: GasSchedule, modes: Sequence[str]) -> list[dict]:
    rows = []
    for mode in modes:
        r = cost(mode, shape, s)
        rows.append({
            "mode": mode,
            "total_gas": r.total_gas,
            "amortized_gas": r.amortized_gas,
            "normalized": fixed(r.normalized, 4),
            "vs_baseline": versus_baseline(r.savings_pct),
        })
    return rows


def cmd_cost(args) -> None:
    s = schedule_from(args)
    try:
        shape = WorkloadShape(nw=args.nw, nr=args.nr, l=args.l, k=args.k)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid shape: {exc}") from exc
    modes = MODES if args.mode == "all" else (args.mode.upper(),)
    emit(args, render(cost_rows(shape, s, modes), COST_COLUMNS, args.format))


DISCOVER_COLUMNS = ("rank", "sender", "label", "amount_pct", "value_ether", "value_pct", "transfers")


def cmd_discover(args) -> None:
    labels: dict[AccountId, str] = {}
    if args.fixture:
        trace, labels = fixtures.top_sender_trace()
    elif args.trace:
        trace = load_trace(args.trace)
    else:
        raise UsageError("give --trace or --fixture")
    if args.labels:
        labels.update(read_labels(args.labels))
    rows = []
    for rank, st in enumerate(discover_institutional(trace, args.top), start=1):
        rows.append({
            "rank": rank,
            "sender": str(st.sender),
            "label": labels.get(st.sender, ""),
            "amount_pct": fixed(st.amount_pct),
            "value_ether": fixed(st.value_ether),
            "value_pct": fixed(st.value_pct),
            "transfers": st.tx_count,
        })
    emit(args, render(rows, DISCOVER_COLUMNS, args.format))


CLASSIFY_COLUMNS = ("kind", "block", "index", "sender", "receiver", "value")


def cmd_classify(args) -> None:
    trace = load_trace(args.trace)
    w = classify_w1(trace, institution_from(args, trace))
    rows = [r.to_dict() for r in w.requests]
    emit(args, render(rows, CLASSIFY_COLUMNS, args.format))


STATS_COLUMNS = ("source", "k", "windows", "nw", "nr")


def cmd_stats(args) -> None:
    rows = []
    if args.fixture:
        s = schedule_from(args)
        published = fixtures.published_stats(args.fixture, s.name)
        for k in args.k or sorted(published):
            if k not in published:
                raise CliError(f"no published statistics for {args.fixture} at k={k}")
            nw, nr = published[k]
            rows.append({"source": args.fixture, "k": k, "windows": "", "nw": fixed(nw), "nr": fixed(nr)})
    else:
        w = workload_from(args)
        span = w.span
        for k in args.k or [1]:
            nw, nr = window_stats(w, k)
            rows.append({
                "source": args.trace or "synthetic",
                "k": k,
                "windows": window_count(span, k) if span else 0,
                "nw": fixed(nw, 4),
                "nr": fixed(nr, 4),
            })
    emit(args, render(rows, STATS_COLUMNS, args.format))


BLOCK_COLUMNS = ("block", "base_fees", "calldata", "internal_transfers", "hashes",
                 "digest_updates", "signature_checks", "proof_bytes", "total")


def cmd_simulate(args) -> None:
    s = schedule_from(args)
    w = workload_from(args)
    if not w.requests:
        raise CliError("workload has no transfers")
    if args.policy:
        decider = decider_for(parse_policy(args.policy, s))
    else:
        decider = every_k(args.k)
    report = run(w.requests, args.mode.upper(), s, decider, span=w.span,
                 initial_balances=funding_shortfall(w), checkpoint=True)
    if args.format == "json":
        emit(args, report.to_json() + "\n")
        return
    rows = [{"block": b.block, **b.components, "total": b.total} for b in report.per_block]
    rows.append({"block": "all", **report.components, "total": report.total_gas})
    emit(args, render(rows, BLOCK_COLUMNS, args.format))


SWEEP_COLUMNS = ("k", "nw", "nr", "m1", "m2", "m3")


def sweep_stats(args, s: GasSchedule, k: int) -> tuple[Fraction, Fraction]:
    if args.fixture:
        published = fixtures.published_stats(args.fixture, s.name)
        if k not in published:
            raise CliError(f"no published statistics for {args.fixture} at k={k}")
        return published[k]
    if args.synthetic:
        nw, nr = args.synthetic
        return nw * k, nr * k
    return window_stats(args.workload, k)


def cmd_sweep(args) -> None:
    s = schedule_from(args)
    if args.trace:
        args.workload = workload_from(args)
    elif not (args.fixture or args.synthetic):
        raise UsageError("give --trace, --fixture or --synthetic")
    rows = []
    for k in args.k:
        nw, nr = sweep_stats(args, s, k)
        try:
            shape = WorkloadShape(nw=nw, nr=nr, l=k, k=k)
        except ValueError as exc:
            raise CliError(f"k={k}: {exc}") from exc
        row = {"k": k, "nw": fixed(nw), "nr": fixed(nr)}
        for mode in MODES:
            row[mode.lower()] = cost(mode, shape, s).amortized_gas
        rows.append(row)
    emit(args, render(rows, SWEEP_COLUMNS, args.format))
    if args.figure:
        from .plotting import sweep_figure

        sweep_figure([r["k"] for r in rows], [r["m2"] for r in rows], [r["m3"] for r in rows],
                     s.base_fee, args.figure, title=f"{s.name} schedule")


POLICY_COLUMNS = ("policy", "preset", "normalized_cost", "average_delay", "max_delay",
                  "write_intensive_fraction", "total_gas", "transfers", "uploads")


def cmd_policy(args) -> None:
    s = schedule_from(args)
    try:
        policies = [parse_policy(p, s) for p in args.policies.split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not policies:
        raise UsageError("no policies given")
    w = workload_from(args)
    if args.top_fraction is not None:
        if not w.receivers:
            raise CliError("workload has no receiver accounts to select from")
        try:
            w = select_write_intensive(w, args.top_fraction, s)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    outcomes = [evaluate_policy(w, p, s) for p in policies]
    emit(args, render([o.to_row() for o in outcomes], POLICY_COLUMNS, args.format))
    if args.figure:
        from .plotting import policy_figure

        policy_figure([o.policy for o in outcomes],
                      [float(o.normalized_cost) for o in outcomes],
                      [float(o.average_delay) for o in outcomes],
                      args.figure, title=f"{s.name} schedule")


# ------------------------------------------------------------------- parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), help="gas schedule preset (default istanbul)")
    src.add_argument("--schedule-file", metavar="PATH", help="JSON or key = value schedule file")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--output", metavar="PATH", help="write here instead of stdout")
    return p


def _workload_args(p: argparse.ArgumentParser, synthetic: bool = True) -> None:
    p.add_argument("--trace", metavar="CSV", help="transfer trace")
    p.add_argument("--institution", action="append", metavar="ADDR",
                   help="institutional sender; repeatable (default: top sender of the trace)")
    p.add_argument("--institution-file", metavar="PATH", help="address,label lines naming the institution")
    if synthetic:
        p.add_argument("--synthetic", type=int_pair_arg, metavar="NW,NR",
                       help="constant synthetic workload, per-block counts")
        p.add_argument("--blocks", type=int, default=30, help="blocks in the synthetic workload")
        p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="offchain-gas", description="Gas cost models for batched and off-chain transfers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", parents=[common], help="closed-form cost for a workload shape")
    p.add_argument("--nw", type=decimal_arg, required=True, help="Tx1 transfers per window")
    p.add_argument("--nr", type=decimal_arg, default=Fraction(0), help="Tx2 transfers per window")
    p.add_argument("--l", type=decimal_arg, default=Fraction(1), help="blocks per window")
    p.add_argument("--k", type=decimal_arg, default=Fraction(1), help="blocks between uploads")
    p.add_argument("--mode", choices=("m1", "m2", "m3", "all"), default="all")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("discover", parents=[common], help="rank senders by transfer count")
    p.add_argument("--trace", metavar="CSV")
    p.add_argument("--fixture", action="store_true", help="use the built-in top-sender trace")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--labels", metavar="PATH", help="address,label lines")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("classify", parents=[common], help="list Tx1/Tx2 requests")
    _workload_args(p, synthetic=False)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stats", parents=[common], help="per-window Tx1/Tx2 means")
    _workload_args(p)
    p.add_argument("--fixture", choices=sorted(fixtures.PUBLISHED_STATS), help="published statistics")
    p.add_argument("--k", type=k_range_arg, help="window sizes, e.g. 1-10")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("simulate", parents=[common], help="block-by-block gas itemization")
    _workload_args(p)
    p.add_argument("--mode", choices=("m1", "m2", "m3"), default="m3")
    p.add_argument("--k", type=int, default=1, help="upload every k blocks")
    p.add_argument("--policy", help="upload policy instead of a fixed interval (M3)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="amortized gas across upload intervals")
    _workload_args(p, synthetic=False)
    p.add_argument("--fixture", choices=sorted(fixtures.PUBLISHED_STATS), help="published statistics")
    p.add_argument("--synthetic", type=decimal_pair_arg, metavar="NW,NR", help="constant per-block means")
    p.add_argument("--k", type=k_range_arg, default=list(range(1, 11)), help="e.g. 1-10 or 1,5")
    p.add_argument("--figure", metavar="PATH", help="also render a figure")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("policy", parents=[common], help="cost/delay outcome of upload policies")
    _workload_args(p)
    p.add_argument("--policies", default=DEFAULT_POLICIES, help=f"comma list (default {DEFAULT_POLICIES})")
    p.add_argument("--top-fraction", type=decimal_arg, help="keep only the most write-intensive receivers")
    p.add_argument("--figure", metavar="PATH", help="also render a figure")
    p.set_defaults(func=cmd_policy)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CliError, TraceFormatError, InfeasibleWorkloadError, DegenerateWorkloadError,
            SimulationError, KeyError, ValueError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"offchain-gas: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
