"""Command-line entry point.

Exit codes: 0 ok, 1 verification failure, 2 usage error, 3 I/O error,
4 invariant breach in the demo.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
from pathlib import Path
from typing import Sequence

from . import throughput
from .ledger import CorruptRecord, read_chain, verify_chain
from .network import chain_files

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INVARIANT = 4


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v.replace("_", "")) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _name_list(text: str) -> list[str]:
    names = [v.strip().lower() for v in text.split(",") if v.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty chain list")
    return names


def read_config(path: str) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment.  Keys may use
    dashes or underscores."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.read_string("[config]\n" + Path(path).read_text())
    return {k.replace("-", "_"): v for k, v in parser["config"].items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="healthchain",
        description="Healthcare blockchain capacity simulator and sidechain network prototype.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="key = value file supplying defaults for these flags")
        return p

    p = add("sweep", "Unsealed backlog after one horizon for a range of sealing rates (CSV).")
    p.add_argument("--lambda-day", type=float, help="expected transactions per horizon")
    p.add_argument("--mu", type=_float_list, default="7,25,50",
                   help="comma-separated sealing rates in tx/s (default: 7,25,50)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=throughput.DAY_SECONDS)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("capacity", "Number of sidechains needed per chain technology.")
    p.add_argument("--patients", type=_int_list,
                   default=",".join(map(str, throughput.TABLE1_PATIENTS)))
    p.add_argument("--chains", type=_name_list, default=",".join(throughput.CHAIN_TPS))
    p.add_argument("--rate-per-patient", type=float,
                   default=throughput.DEFAULT_TX_PER_PATIENT_DAY,
                   help="transactions per patient per day (default: 110)")
    p.add_argument("--cardano-tps", type=float, default=throughput.CHAIN_TPS["cardano"])
    p.add_argument("--csv", help="also write the table to this CSV path")

    p = add("demo", "End-to-end run of the mainchain/sidechain network.")
    p.add_argument("--hospitals", type=int, default=3)
    p.add_argument("--patients", type=int, default=10)
    p.add_argument("--txs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="directory to persist the network into")

    p = add("verify", "Verify every chain file in a network directory (or one chain file).")
    p.add_argument("path")
    return parser


def _parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    values: dict[str, str] = {}
    if known.config:
        try:
            values = read_config(known.config)
        except (OSError, configparser.Error) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
    subparsers = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    ).choices
    for sp in subparsers.values():
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in values.items() if k in dests})
    args = parser.parse_args(argv)
    unknown = set(values) - {a.dest for a in subparsers[args.command]._actions}
    if unknown:
        parser.error(f"unknown config keys for {args.command}: {', '.join(sorted(unknown))}")
    args._parser = parser
    return args


def cmd_sweep(args) -> int:
    if args.lambda_day is None:
        args._parser.error("sweep: --lambda-day is required")
    if not args.lambda_day > 0 or args.horizon <= 0 or args.workers < 1:
        args._parser.error("sweep: --lambda-day and --horizon must be positive")
    rows = throughput.sweep(args.lambda_day, args.mu, args.seed, args.horizon, args.workers)
    buf = io.StringIO()
    throughput.write_sweep_csv(rows, buf)
    return _emit(buf.getvalue(), args.out)


def cmd_capacity(args) -> int:
    chains = {}
    for name in args.chains:
        if name == "cardano":
            chains[name] = args.cardano_tps
        elif name in throughput.CHAIN_TPS:
            chains[name] = throughput.CHAIN_TPS[name]
        else:
            args._parser.error(f"capacity: unknown chain {name!r}")
    if args.rate_per_patient <= 0 or args.cardano_tps <= 0:
        args._parser.error("capacity: rates must be positive")
    rows = throughput.capacity_table(args.patients, chains, args.rate_per_patient)
    header = ["patients", "tx_per_day", *chains]
    cells = [[_fmt(r[h]) for h in header] for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    print("\n".join(lines))
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[_plain(r[h]) for h in header] for r in rows])
        return _emit(buf.getvalue(), args.csv)
    return EXIT_OK


def _fmt(v) -> str:
    if float(v).is_integer():
        return f"{int(v):,}"
    return str(v)


def _plain(v) -> str:
    return str(int(v)) if float(v).is_integer() else str(v)


def cmd_demo(args) -> int:
    from .demo import run_demo

    if args.hospitals < 1 or args.patients < 1 or args.txs < 0:
        args._parser.error("demo: --hospitals and --patients must be >= 1, --txs >= 0")
    try:
        result = run_demo(args.hospitals, args.patients, args.txs, args.seed, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    sys.stdout.write(result.report)
    return EXIT_OK if result.ok else EXIT_INVARIANT


def cmd_verify(args) -> int:
    path = Path(args.path)
    if not path.exists():
        print(f"error: {path} does not exist", file=sys.stderr)
        return EXIT_IO
    files = [path] if path.is_file() else list(chain_files(path))
    failed = False
    for f in files:
        try:
            report = verify_chain(read_chain(f))
        except CorruptRecord as exc:
            print(f"{f.name}: FAIL corrupt record at line {exc.line}: {exc.reason}")
            failed = True
            continue
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"{f.name}: {report.status()}")
        failed |= not report.ok
    return EXIT_VERIFY if failed else EXIT_OK


def _emit(text: str, path: str | None) -> int:
    if path is None:
        sys.stdout.write(text)
        return EXIT_OK
    try:
        Path(path).write_text(text)
    except OSError as exc:
        print(f"error: cannot write {path}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "capacity": cmd_capacity, "demo": cmd_demo, "verify": cmd_verify}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
