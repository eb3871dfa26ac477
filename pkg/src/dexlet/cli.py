"""Command-line driver: ``dexlet {check,simplify,lin,grad,run} FILE ...``.

Exit codes: 0 on success, 1 on a user error (parse, type, effect, telescope,
differentiation), 2 on an internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys

from . import eval as ev
from . import pipeline, printer
from .errors import DexError

COMMAND_STAGES = {
    "check": ("parsed", "core"),
    "simplify": ("parsed", "core", "simplified", "optimized"),
    "lin": pipeline.STAGES,
    "grad": pipeline.STAGES,
    "run": pipeline.STAGES,
}


def _stages(text: str) -> list:
    out = [s.strip() for s in text.split(",") if s.strip()]
    for s in out:
        if s not in pipeline.STAGES:
            raise argparse.ArgumentTypeError(
                f"unknown stage {s!r} (choose from {', '.join(pipeline.STAGES)})")
    return out


def _chunks(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--chunks must be at least 1")
    return n


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad usage is a user error, not an internal one
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--dump-ir", type=_stages, default=[], metavar="STAGE[,STAGE...]",
                        help="print intermediate programs: " + ", ".join(pipeline.STAGES))
    common.add_argument("--chunks", type=_chunks, default=1, help="chunks for parallel loops")
    common.add_argument("--output", choices=("text", "json"), default="text")

    p = _Parser(prog="dexlet", description="Compile and run Dex-style array programs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in (("check", "parse and typecheck; print the program's type"),
                      ("simplify", "print the first-order program"),
                      ("run", "evaluate the program")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("file")
    sp = sub.add_parser("lin", parents=[common], help="primal and tangent of FN at POINT")
    sp.add_argument("file")
    sp.add_argument("fn")
    sp.add_argument("point")
    sp.add_argument("tangent", nargs="?", default=None, help="tangent direction (default: all ones)")
    sp = sub.add_parser("grad", parents=[common], help="gradient of FN at POINT")
    sp.add_argument("file")
    sp.add_argument("fn")
    sp.add_argument("point")
    return p


def render_error(err: DexError, path: str) -> str:
    where = f"{path}:{err.loc[0]}:{err.loc[1]}" if err.loc else path
    return f"{where}: error[{err.code}]: {err.message} ({type(err).__name__})"


def _fence(name: str, body: str, out) -> None:
    print(f"=== {name} ===", file=out)
    if body:
        print(body, file=out)


def execute(args, out=None) -> int:
    out = out or sys.stdout
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read()
    extra = None
    if args.command == "lin":
        extra = pipeline.lin_statement(args.fn, args.point, args.tangent)
    elif args.command == "grad":
        extra = pipeline.grad_statement(args.fn, args.point)

    allowed = COMMAND_STAGES[args.command]
    for s in args.dump_ir:
        if s not in allowed:
            raise DexError(f"stage {s!r} is not produced by '{args.command}'")

    if args.command == "check":
        c = pipeline.front_end(text)
    else:
        c = pipeline.compile_source(text, extra)
    for s in pipeline.STAGES:
        if s in args.dump_ir:
            _fence(s, c.dumps.get(s, ""), out)

    if args.command == "check":
        _fence("result", printer.show_value(c.type), out)
        return 0
    if args.command == "simplify":
        if "optimized" not in args.dump_ir:
            _fence("optimized", c.dumps["optimized"], out)
        return 0
    value = c.run(chunks=args.chunks)
    _fence("result", ev.to_json(value) if args.output == "json" else ev.format_value(value), out)
    return 0


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return execute(args)
    except DexError as err:
        print(render_error(err, args.file), file=sys.stderr)
        return 1
    except OSError as err:
        print(f"dexlet: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # an invariant of the compiler itself was violated
        print(f"dexlet: internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
