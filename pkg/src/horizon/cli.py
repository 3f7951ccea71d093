"""Command line runner: ``horizon <subcommand> [CONFIG] [--config PATH] [--out DIR] [--seed N] [--workers N]``.

Outputs go to ``<out>/<experiment>-<UTC timestamp>/``: ``report.json``,
``series.csv`` and any plots. The directory is assembled under a temporary
name and renamed at the end, so a failed run leaves nothing behind.
Exit status is 0 on success, 2 when the report carries an unreliability
flag and 1 on any error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

from horizon.config import PARAMS, parse_config, parse_seed
from horizon.errors import ConfigError, HorizonError
from horizon.rng import set_workers

EXIT_OK, EXIT_ERROR, EXIT_UNRELIABLE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="horizon", description="Numerical experiments on horizontal-like maps.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config_file", nargs="?", help="config file (same as --config)")
        p.add_argument("--config", dest="config", help="path to the INI config")
        p.add_argument("--out", help="output root (default $HORIZON_OUT or ./horizon-out)")
        p.add_argument("--seed", type=parse_seed, help="seed, overrides the config")
        p.add_argument("--workers", type=int, help="worker threads; results do not depend on it")

    for name in PARAMS:
        common(sub.add_parser(name, help=f"run the {name} experiment"))
    run = sub.add_parser("run", help="run SUBCOMMAND CONFIG")
    run.add_argument("subcommand", choices=sorted(PARAMS))
    common(run)
    return ap


def _utc_stamp() -> str:
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())


def execute(subcommand: str, config_text: str, out_root: Path, seed: int | None = None,
            workers: int | None = None) -> tuple[int, Path | None]:
    """Run one experiment and write its outputs; returns (exit status, output directory)."""
    from horizon.experiments import RUNNERS

    cfg = parse_config(config_text, subcommand, seed)
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = workers
    set_workers(cfg.workers)
    started = time.time()
    rep, files = RUNNERS[subcommand](cfg)
    rep.stamp(started)
    out_root.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_root))
    try:
        (tmp / "report.json").write_text(rep.to_json(), encoding="utf-8")
        with open(tmp / "series.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(rep.series_csv())
        for name, text in sorted(files.items()):
            with open(tmp / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        final = out_root / f"{rep.experiment}-{_utc_stamp()}"
        i = 1
        while final.exists():
            final = out_root / f"{rep.experiment}-{_utc_stamp()}-{i}"
            i += 1
        os.rename(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return (EXIT_UNRELIABLE if rep.unreliable else EXIT_OK), final


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    sub = args.subcommand if args.command == "run" else args.command
    path = args.config or args.config_file
    if not path:
        print("error: a config file is required", file=sys.stderr)
        return EXIT_ERROR
    out_root = Path(args.out or os.environ.get("HORIZON_OUT") or "horizon-out")
    try:
        text = Path(path).read_text(encoding="utf-8")
        status, where = execute(sub, text, out_root, args.seed, args.workers)
    except (ConfigError, HorizonError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(str(where))
    return status


if __name__ == "__main__":
    sys.exit(main())
