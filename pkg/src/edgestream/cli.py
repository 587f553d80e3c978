"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 scenario validation error,
3 runtime failure. Output goes to ``--out`` if given, else to
``$EDGESTREAM_OUT`` if set, else to ``runs/<scenario name>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, FramingError, ScenarioError
from .scenario import load_scenario, override

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
OUT_ENV = "EDGESTREAM_OUT"

log = logging.getLogger("edgestream")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edgestream", description="Adaptive uplink video streaming to an edge server.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one arm of a scenario")
    run.add_argument("scenario", help="built-in name or path to a scenario file")
    arm = run.add_mutually_exclusive_group()
    arm.add_argument("--adaptation", dest="adaptation", action="store_const", const=True, default=None,
                     help="force the adaptive controller on")
    arm.add_argument("--no-adaptation", dest="adaptation", action="store_const", const=False,
                     help="fixed encoder settings instead of the controller")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)

    cmp_ = sub.add_parser("compare", help="simulate both arms on the same frames and schedule")
    cmp_.add_argument("scenario")
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out", type=Path)

    live = sub.add_parser("live", help="run one side of a live UDP session")
    live.add_argument("--role", choices=("client", "server"), required=True)
    live.add_argument("--scenario", required=True)
    live.add_argument("--peer", required=True, help="HOST:PORT of the server (the bind address for --role server)")
    live.add_argument("--no-adaptation", dest="adaptation", action="store_const", const=False, default=None)
    live.add_argument("--seed", type=int)
    live.add_argument("--out", type=Path)

    val = sub.add_parser("validate", help="check a scenario file and print its resolved name")
    val.add_argument("scenario")
    return p


def output_dir(flag: Optional[Path], name: str) -> Path:
    if flag is not None:
        return flag
    env = os.environ.get(OUT_ENV)
    return Path(env) if env else Path("runs") / name


def _line(summary) -> str:
    med = summary.rtt.median
    med_text = f"{med * 1e3:.1f} ms" if med is not None else "n/a"
    return (f"{summary.label}: frames {summary.frames_completed}/{summary.frames_total}, "
            f"median RTT {med_text}, violations {summary.violation_fraction:.3f}, "
            f"loss {summary.loss_fraction:.3f}")


def delta_report(adaptive, fixed) -> dict:
    def pair(a, b):
        return {"adaptation": a, "no_adaptation": b,
                "delta": None if a is None or b is None else round(a - b, 9)}
    return {
        "median_rtt": pair(adaptive.rtt.median, fixed.rtt.median),
        "violation_fraction": pair(adaptive.violation_fraction, fixed.violation_fraction),
        "loss_fraction": pair(adaptive.loss_fraction, fixed.loss_fraction),
    }


def _cmd_run(args) -> int:
    from .sim import run_sim

    sc = override(load_scenario(args.scenario), seed=args.seed, adaptation=args.adaptation)
    out = output_dir(args.out, sc.name)
    result = run_sim(sc, out)
    print(_line(result.summary))
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    from .sim import run_sim

    base = override(load_scenario(args.scenario), seed=args.seed)
    out = output_dir(args.out, base.name)
    arms = {}
    for label, adaptation in (("adaptation", True), ("no-adaptation", False)):
        arms[label] = run_sim(override(base, adaptation=adaptation), out / label).summary
        print(_line(arms[label]))
    delta = delta_report(arms["adaptation"], arms["no-adaptation"])
    try:
        (out / "delta.json").write_text(json.dumps(delta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {out / 'delta.json'}: {exc.strerror or exc}") from exc
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_live(args) -> int:
    from . import metrics
    from .live import run_live

    sc = override(load_scenario(args.scenario), seed=args.seed, adaptation=args.adaptation)
    summary = run_live(sc, args.role, args.peer)
    if summary is not None:
        out = output_dir(args.out, sc.name + "-live")
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(metrics.summary_json(summary), encoding="utf-8")
        print(_line(summary))
        print(f"wrote {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok: {sc.name} ({sc.run_length:g} s, {sc.n_epochs} epochs)")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "live": _cmd_live, "validate": _cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FramingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
