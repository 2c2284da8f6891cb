"""
Command-line experiment runner.

    ginolab e1 --seed 7 --out runs/e1
    ginolab e3 --deltas 0,0.1,0.2,0.3
    ginolab bounds --set bounds.inject=1      # fault-injection self-test, exits 2

Configuration precedence: built-in defaults, then ``--config FILE`` (flat
``key=value`` lines), then the ``GINO_SEED`` environment variable, then
command-line flags. The effective configuration is written to
``config.json`` in the output directory.

Exit codes: 0 success, 1 error, 2 violated bound, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .diagnostics import EXPERIMENTS, ExperimentReport, parse_config_text, resolve
from .diagnostics.experiments import new_report
from .diagnostics.models import base_metric, forcing_spec, trained_gino
from .errors import BoundViolation, GinoLabError
from .io import emit_report, save_checkpoint, write_field
from .oracle import resolvent_apply
from .sampler import SeededRng, sample_batch

EXIT_OK, EXIT_ERROR, EXIT_BOUND, EXIT_USAGE = 0, 1, 2, 64
COMMANDS = ("e1", "e2", "e3", "e4", "e5", "e6a", "e6b", "bounds", "train", "gen-data")
GEN_STREAM = 0x6E4
LOCK_NAME = ".lock"

log = logging.getLogger("ginolab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ginolab", description="Operator-learning experiments on the flat torus.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--seed", type=int, help="experiment seed (overrides config and GINO_SEED)")
    p.add_argument("--out", type=Path, help="output directory (default runs/<command>)")
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--plot", action="store_true", help="also render PNG line charts")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")
    p.add_argument("--deltas", help="comma-separated E3 perturbation sizes")
    p.add_argument("--lambdas", help="comma-separated E6A cutoffs")
    p.add_argument("--weights", help="comma-separated E6B smoothness weights")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    return p


def effective_config(args, environ=os.environ) -> dict:
    layers = []
    if args.config:
        layers.append(parse_config_text(Path(args.config).read_text()))
    if environ.get("GINO_SEED"):
        layers.append({"seed": environ["GINO_SEED"]})
    flags = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = value.strip()
    for flag, key in (("deltas", "e3.deltas"), ("lambdas", "e6a.lambdas"), ("weights", "e6b.weights")):
        if getattr(args, flag) is not None:
            flags[key] = getattr(args, flag)
    if args.seed is not None:
        flags["seed"] = str(args.seed)
    layers.append(flags)
    return resolve(*layers)


@contextmanager
def locked(out_dir: Path):
    """Exclusive ownership of ``out_dir`` for the duration of a run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise GinoLabError(f"{out_dir} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def run_train(config: dict, out_dir: Path, log_fn=None) -> ExperimentReport:
    """Train the default GINO and store its checkpoint next to the history."""
    model, history = trained_gino(config, log=log_fn)
    report = new_report("train", config, history.columns)
    for record in history.records:
        report.add(*record)
    report.summary.update({k: v for k, v in history.last().items() if k != "step"})
    save_checkpoint(model, out_dir / "checkpoint.txt")
    return report


def run_gen_data(config: dict, out_dir: Path) -> ExperimentReport:
    """Forcing and resolvent-solution pairs as field files."""
    spec = forcing_spec(config)
    f = sample_batch(spec, SeededRng(config["seed"], GEN_STREAM), config["gen.count"])
    u = resolvent_apply(f, base_metric(config))
    data_dir = out_dir / "data"
    data_dir.mkdir(exist_ok=True)
    report = new_report("gen-data", config, ("index", "forcing_rms", "solution_rms"))
    for i in range(len(f)):
        write_field(data_dir / f"forcing_{i:04d}.gfld", f[i])
        write_field(data_dir / f"solution_{i:04d}.gfld", u[i])
        report.add(i, float(np.sqrt(np.mean(f[i] ** 2))), float(np.sqrt(np.mean(u[i] ** 2))))
    report.summary["count"] = len(f)
    return report


def run(argv=None, environ=os.environ) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = effective_config(args, environ)
    except UsageError as exc:
        print(f"ginolab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GinoLabError as exc:
        print(f"ginolab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ginolab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    out_dir = args.out or Path("runs") / args.command
    log_fn = log.info if args.verbose else None
    try:
        with locked(Path(out_dir)) as out:
            try:
                if args.command == "train":
                    report = run_train(config, out, log_fn)
                elif args.command == "gen-data":
                    report = run_gen_data(config, out)
                else:
                    report = EXPERIMENTS[args.command](config, log=log_fn)
            except BoundViolation as exc:
                emit_report(exc.report, out, args.plot)
                print(f"ginolab: bound violated: {exc}", file=sys.stderr)
                return EXIT_BOUND
            emit_report(report, out, args.plot)
    except (GinoLabError, OSError, ValueError) as exc:
        print(f"ginolab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
