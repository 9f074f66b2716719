"""Command line interface.

    cdwnet check     [--config P] [--kind dd|dr] [--rhs paper|exact]
    cdwnet cell      [--config P] [--kind dd|dr] [--rhs ...] [--dt DT] [--duration T] [--out DIR]
    cdwnet grid      [--config P] [--size WxH] [--rhs ...] [--dt DT] [--duration T] [--out DIR]
    cdwnet scenario  [--template vortex|wave|life] [--config P] [--size WxH] [...]
    cdwnet calibrate --r0 OHMS --freq HZ [--config P] [--kind ...] [--rhs ...]

Times are in the internal unit (t0 = 0.01 with the default cell
capacitance).  Exit status: 0 success, 1 invalid input, 2 runtime failure.
The last line printed is always a one-line JSON status.
"""
from __future__ import annotations

import argparse
import json
import sys

from ..cell import NonOscillatingError
from .calibrate import calibrate_physical
from .config import ConfigError, default_config, load_config
from .runners import run_cell, run_check, run_grid, run_template

__all__ = ["main", "build_parser"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 30x30, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdwnet", description="MIT relaxation-oscillator network simulator")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, run=True):
        sp.add_argument("--config", help="configuration file")
        sp.add_argument("--rhs", choices=("paper", "exact"), help="cell rhs model")
        if run:
            sp.add_argument("--dt", type=float, help="time step")
            sp.add_argument("--duration", type=float, help="simulated time")
            sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("check", help="self-oscillation diagnostics")
    common(sp, run=False)
    sp.add_argument("--kind", choices=("dd", "dr"))
    sp = sub.add_parser("cell", help="single-oscillator run")
    common(sp)
    sp.add_argument("--kind", choices=("dd", "dr"))
    sp = sub.add_parser("grid", help="uniform network run")
    common(sp)
    sp.add_argument("--size", type=_size)
    sp = sub.add_parser("scenario", help="built-in template run")
    common(sp)
    sp.add_argument("--template", choices=("vortex", "wave", "life"))
    sp.add_argument("--size", type=_size)
    sp = sub.add_parser("calibrate", help="physical capacitance for a target frequency")
    common(sp, run=False)
    sp.add_argument("--kind", choices=("dd", "dr"))
    sp.add_argument("--r0", type=float, required=True, help="unit resistance in ohms")
    sp.add_argument("--freq", type=float, required=True, help="target frequency in Hz")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    over = {}
    if args.rhs:
        over["cell__rhs_model"] = args.rhs
    if getattr(args, "kind", None):
        over["cell__kind"] = args.kind
    if getattr(args, "dt", None) is not None:
        over["run__dt"] = args.dt
    if getattr(args, "duration", None) is not None:
        over["run__duration"] = args.duration
    if getattr(args, "out", None):
        over["run__output_dir"] = args.out
    if getattr(args, "size", None):
        over["grid__width"], over["grid__height"] = args.size
    if getattr(args, "template", None):
        over["scenario__template"] = args.template
    return cfg.replace(**over) if over else cfg


def _execute(args) -> dict:
    cfg = _config(args)
    if args.command == "check":
        result = run_check(cfg)
        print(json.dumps(result["report"], indent=2))
        return {"oscillates": result["report"]["oscillates"],
                "trapped_branch": result["report"]["trapped_branch"]}
    if args.command == "calibrate":
        cal = calibrate_physical(args.r0, args.freq, cfg.cell_config())
        print(json.dumps(cal.as_dict(), indent=2))
        return {"C_phys": cal.c_phys}
    if args.command == "cell":
        art = run_cell(cfg)
    elif args.command == "grid":
        art = run_grid(cfg)
    else:
        if cfg["scenario.template"] == "none":
            raise ConfigError("scenario.template: give --template or set it in the config")
        art = run_template(cfg)
    out = cfg["run.output_dir"]
    files = art.write(out)
    print(f"wrote {len(files)} files to {out}")
    return {"out": out, "files": len(files)}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        if command is None:
            raise _UsageError("a subcommand is required")
        info = _execute(args)
        status, code = {"status": "ok", "command": command, **info}, 0
    except (_UsageError, ConfigError, NonOscillatingError, ValueError) as exc:
        if isinstance(exc, _UsageError):
            print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        status, code = {"status": "error", "kind": "validation", "command": command,
                        "message": str(exc)}, 1
    except Exception as exc:  # runtime failures surface as exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        status, code = {"status": "error", "kind": "runtime", "command": command,
                        "message": f"{type(exc).__name__}: {exc}"}, 2
    sys.stdout.flush()
    print(json.dumps(status))
    return code


if __name__ == "__main__":
    sys.exit(main())
