"""Command line: ``steinpp EXPERIMENT [--config PATH] [--out DIR] ...`` and ``steinpp selftest``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .experiments import EXPERIMENTS, ConfigError, ExperimentResult, parse_config, run_experiment
from .runner import resolve_threads

log = logging.getLogger("steinpp")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_text(res: ExperimentResult, fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{c: row.get(c) for c in res.columns} for row in res.rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(res.columns)
    for row in res.rows:
        w.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in res.columns])
    return buf.getvalue()


def acceptance_text(res: ExperimentResult, complete: bool = True) -> str:
    doc = {"passed": res.passed and complete, "complete": complete,
           "checks": [{"name": c.name, "value": c.value, "threshold": c.threshold, "passed": c.passed}
                      for c in res.checks]}
    return json.dumps(doc, indent=2) + "\n"


def write_outputs(out: Path, cfg, res: ExperimentResult, complete: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = results_text(res, cfg.format)
    (out / f"results.{cfg.format}").write_text(body)
    manifest = {"library": "steinpp", "version": __version__, "seed": cfg.seed, "config": cfg.to_dict(),
                "results_file": f"results.{cfg.format}",
                "results_sha256": hashlib.sha256(body.encode()).hexdigest()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "acceptance.json").write_text(acceptance_text(res, complete))


def print_table(res: ExperimentResult, stream=sys.stdout) -> None:
    for row in res.rows:
        stream.write("  ".join(f"{c}={_fmt(row[c]) if not isinstance(row[c], float) else f'{row[c]:.6g}'}"
                               for c in res.columns if c in row) + "\n")
    for c in res.checks:
        stream.write(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.6g}  threshold={c.threshold:g}\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steinpp", description="Poisson process approximation experiments")
    p.add_argument("--version", action="version", version=f"steinpp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", type=Path, help="key = value configuration file")
        s.add_argument("--out", type=Path, default=Path("results") / name, help="output directory")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--threads", type=int, help="worker threads (default $STEINPP_THREADS or 1)")
        s.add_argument("--format", choices=("csv", "json"), help="results table format")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry; repeatable")
    s = sub.add_parser("selftest", help="fast built-in checks (under a minute)")
    s.add_argument("--mutate", choices=("circumsphere",), help=argparse.SUPPRESS)
    s.add_argument("--out", type=Path, help="also write the selftest report here")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    if args.command == "selftest":
        from .selftest import run_selftest

        return run_selftest(mutation=args.mutate, out=args.out)
    try:
        text = args.config.read_text() if args.config else ""
        text += "".join(f"\n{item}" for item in args.set)
        cfg = parse_config(text, {"experiment": args.command, "seed": args.seed, "format": args.format})
    except ConfigError as exc:
        for problem in exc.problems:
            sys.stderr.write(f"config error: {problem}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"cannot read config: {exc}\n")
        return 2
    threads = resolve_threads(args.threads)

    def flush(res):
        row = res.rows[-1]
        log.info("row %d done: %s", len(res.rows), ", ".join(f"{k}={row[k]}" for k in list(row)[:2]))
        write_outputs(args.out, cfg, res, complete=False)

    res = ExperimentResult()
    try:
        res = run_experiment(cfg, threads, on_row=flush)
    except KeyboardInterrupt:
        log.info("interrupted; partial results kept in %s", args.out)
        return 130
    write_outputs(args.out, cfg, res)
    print_table(res)
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
