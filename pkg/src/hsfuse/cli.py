"""``hsfuse`` command-line interface.

Subcommands::

    hsfuse simulate  --out DIR
    hsfuse calibrate --yh FILE --ym FILE --out DIR
    hsfuse fuse      --yh FILE --ym FILE --response FILE --kernel FILE --out DIR
    hsfuse evaluate  --fused FILE --truth FILE --out DIR
    hsfuse pipeline  --out DIR [--skip-simulate --yh FILE --ym FILE --truth FILE]

Every subcommand accepts ``--config FILE`` (INI, one section per stage) and
per-option flags; flags win over the file.

Exit status: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import commands
from .config import OPTIONS, RunConfig, load_ini, parse_value
from .cubeio import ContainerError
from .errors import NumericalError, ValidationError

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_VALIDATION", "EXIT_NUMERICAL", "EXIT_IO"]

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("hsfuse")

_STAGE_SECTIONS = {
    "simulate": ("simulate",),
    "calibrate": ("preprocess", "calibrate"),
    "fuse": ("preprocess", "solver"),
    "evaluate": ("evaluate",),
    "pipeline": ("simulate", "preprocess", "calibrate", "solver", "evaluate"),
}


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by itself; raise instead so main() owns the exit code
    def error(self, message):
        raise _ArgumentError(f"{self.prog}: {message}")


def _add_options(p: argparse.ArgumentParser, sections) -> None:
    for sec in sections:
        grp = p.add_argument_group(sec)
        for opt in OPTIONS:
            if opt.section != sec:
                continue
            flag = "--" + opt.name.replace("_", "-")
            default = "" if opt.default is None else f" (default {opt.default})"
            if opt.parse.__name__ == "_bool":
                grp.add_argument(flag, dest=opt.name, action="store_const", const=True, default=None,
                                 help=opt.help + default)
            else:
                grp.add_argument(flag, dest=opt.name, default=None, metavar=opt.name.upper(),
                                 help=opt.help + default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hsfuse", description="Hyperspectral and multispectral image fusion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--out", required=True, help="output directory")
        _add_options(p, _STAGE_SECTIONS[name])
        return p

    command("simulate", "write a synthetic scene, its two observations and the true operators")
    p = command("calibrate", "estimate the spectral response and blur kernel")
    p.add_argument("--yh", required=True, help="hyperspectral container")
    p.add_argument("--ym", required=True, help="multispectral or panchromatic container")
    p.add_argument("--kernel-true", help="reference kernel, reported in the diagnostics")
    p = command("fuse", "fuse the two images")
    p.add_argument("--yh", required=True)
    p.add_argument("--ym", required=True)
    p.add_argument("--response", required=True, help="spectral response container")
    p.add_argument("--kernel", dest="kernel_file", required=True, help="blur kernel container")
    p = command("evaluate", "quality indices of a fused cube")
    p.add_argument("--fused", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--basis", help="subspace basis for projecting the reference (default: E.hscube next to --fused)")
    p = command("pipeline", "simulate, calibrate, fuse and evaluate")
    p.add_argument("--skip-simulate", action="store_true", help="use --yh/--ym/--truth instead of simulating")
    p.add_argument("--yh")
    p.add_argument("--ym")
    p.add_argument("--truth")
    return parser


def _resolve(args) -> RunConfig:
    ini = load_ini(args.config) if args.config else {}
    flags = {}
    for opt in OPTIONS:
        value = getattr(args, opt.name, None)
        if value is None:
            continue
        flags[opt.name] = value if isinstance(value, bool) else parse_value(opt.name, value)
    return RunConfig(ini, flags)


def _run(args) -> dict:
    cfg = _resolve(args)
    if args.command == "simulate":
        return commands.cmd_simulate(cfg, args.out)
    if args.command == "calibrate":
        return commands.cmd_calibrate(args.yh, args.ym, cfg, args.out, args.kernel_true)
    if args.command == "fuse":
        return commands.cmd_fuse(args.yh, args.ym, args.response, args.kernel_file, cfg, args.out)
    if args.command == "evaluate":
        return commands.cmd_evaluate(args.fused, args.truth, cfg, args.out, args.basis)
    return commands.cmd_pipeline(cfg, args.out, args.skip_simulate, args.yh, args.ym, args.truth)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, commands.StageError):
        exc = exc.cause
    if isinstance(exc, (ContainerError, OSError)):
        return EXIT_IO
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_VALIDATION


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = _run(args)
    except (ValidationError, NumericalError, ContainerError, commands.StageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    summary = result.get("summary")
    if summary:
        print(" ".join(f"{k}={v:.6g}" for k, v in summary.items()))
    for name, path in result.items():
        if name != "summary":
            log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
