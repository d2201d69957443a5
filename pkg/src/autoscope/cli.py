"""Command-line entry point: ``autoscope {generate,run,bench,rl-train,report}``.

Exit status is 0 on success, 1 for invalid input (bad flags, malformed or
inconsistent configuration) and 2 when a run fails while executing.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .campaign.config import ConfigError, load_spec
from .campaign.records import ChecksumError, write_outputs
from .campaign.report import make_report
from .campaign.runner import run_campaign
from .sample import gen_domain_phantom, save_sample

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

log = logging.getLogger("autoscope")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    p = _Parser(prog="autoscope", description="Simulated autonomous scanning-probe experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic ferroelectric sample")
    g.add_argument("--style", choices=("stripes", "bubbles", "mixed"), default="stripes")
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--extent", type=float, nargs=2, default=(100.0, 100.0), metavar=("X_NM", "Y_NM"))
    g.add_argument("--period", type=int, default=8)

    for name, text in (("run", "run a campaign"), ("bench", "compare sampling arms"),
                       ("rl-train", "train a tip or writing agent")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("spec", type=Path, help="campaign TOML file")

    r = sub.add_parser("report", parents=[common], help="summaries and figures for a run directory")
    r.add_argument("run_dir", type=Path)
    return p


def _run(args) -> int:
    spec = load_spec(args.spec)
    if args.command == "bench":
        spec.kind = "bench_recon"
    elif args.command == "rl-train" and spec.kind not in ("rl_tip", "rl_write"):
        raise ConfigError(f"rl-train needs kind rl_tip or rl_write, got {spec.kind!r}")
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.output_dir = str(args.out)
    spec.validate()
    record = run_campaign(spec)
    manifest = write_outputs(record, spec.output_dir)
    if not args.quiet:
        print(manifest)
    if record.failed:
        log.error("run failed: %s (partial outputs kept in %s)", record.error, spec.output_dir)
        return EXIT_FAILED
    return EXIT_OK


def _generate(args) -> int:
    sample = gen_domain_phantom(args.width, args.height, tuple(args.extent), args.style,
                                0 if args.seed is None else args.seed, period=args.period)
    out = args.out or Path("sample")
    out.mkdir(parents=True, exist_ok=True)
    paths = save_sample(sample, out / "sample")
    if not args.quiet:
        print("\n".join(str(p) for p in paths))
    return EXIT_OK


def _report(args) -> int:
    paths = make_report(args.run_dir, args.out)
    if not args.quiet:
        print("\n".join(str(p) for p in paths))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except ConfigError as exc:
        print(f"autoscope: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"generate": _generate, "report": _report}.get(args.command, _run)
    try:
        return handler(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"autoscope: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ChecksumError as exc:
        print(f"autoscope: corrupt run directory: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        log.exception("unexpected failure")
        print(f"autoscope: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
