"""Command-line entry point.

Exit status: 0 when every hard check passes, 1 when a check or the solver
fails, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .commands import cmd_convergence, cmd_solve, cmd_verify, value_table_csv
from .config import preset_names, resolve_config
from .registry import ConfigError

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="switchbsde", description="Multi-mode reflected BSDE and optimal switching solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("config", help="path to a JSON config, or a bundled preset name")
        p.add_argument("--out", type=Path, help="write the output here instead of stdout")
        p.add_argument("--seed", type=int, help="override the config seed")

    for name, helptext in (("solve", "solve and report diagnostics"),
                           ("verify", "run the full diagnostic battery")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--timing", action="store_true", help="include wall-clock timings in the report")
        p.add_argument("--quiet", action="store_true", help="no check summary on stderr")
        if name == "solve":
            p.add_argument("--csv", type=Path, help="also write the value table as CSV")

    p = sub.add_parser("convergence", help="refinement study with the step count doubled per level")
    common(p)
    p.add_argument("--levels", type=int, required=True)

    sub.add_parser("presets", help="list the bundled presets")
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    try:
        config = resolve_config(args.config)
        if args.seed is not None:
            config = config.with_overrides(seed=args.seed)
        if args.command == "convergence":
            if args.levels < 2:
                print("switchbsde: error: --levels must be at least 2", file=sys.stderr)
                return EXIT_USAGE
            _emit(cmd_convergence(config, args.levels).to_csv(), args.out)
            return EXIT_OK
        run = cmd_solve if args.command == "solve" else cmd_verify
        report = run(config, timing=args.timing)
    except ConfigError as exc:
        print(f"switchbsde: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"switchbsde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK

    _emit(report.to_json(), args.out)
    if getattr(args, "csv", None) is not None and report.stage is not None:
        args.csv.write_text(value_table_csv(report.stage.solution, report.stage.lattice))
    if not args.quiet:
        print("\n".join(report.summary_lines()), file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
