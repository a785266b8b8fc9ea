import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from src.modules.commands import example1d, illustrate, regenerate, sweeps, verify
from src.modules.dif_core import Variant
from src.modules.errors import ConfigError, DifError

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def variant_list(text):
    try:
        return [Variant.parse(v).value for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value scenario file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed of the Monte-Carlo runs")
    common.add_argument("--jobs", type=int, default=int(os.getenv("DIFKIT_JOBS", "1")), help="worker threads for sweeps")
    common.add_argument("--variants", type=variant_list, help="comma-separated filter variants")
    common.add_argument("--mc-runs", type=int, help="Monte-Carlo runs per configuration")
    common.add_argument("--log-level", default=os.getenv("DIFKIT_LOG_LEVEL", "WARNING"), choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = ArgumentParser(prog="difkit", description="Dynamically iterated filters: demos, sweeps and verification.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("illustrate", parents=[common], help="cubic-model iterates and grid posterior").set_defaults(run=illustrate.run)
    sub.add_parser("example1d", parents=[common], help="loss landscape and iterate paths on the trig model").set_defaults(run=example1d.run)
    sub.add_parser("track-sweep", parents=[common], help="coordinated-turn tracking noise sweep").set_defaults(run=sweeps.run_tracking)
    sub.add_parser("tdoa-sweep", parents=[common], help="TDOA localization noise sweep").set_defaults(run=sweeps.run_tdoa)
    p = sub.add_parser("verify", parents=[common], help="run the oracle suites")
    p.add_argument("--suite", dest="suites", action="append", help="run only this suite (repeatable)")
    p.add_argument("--inject-fault", action="store_true", help="disable covariance symmetrization (the suites must fail)")
    p.set_defaults(run=verify.run)
    p = sub.add_parser("fixtures", parents=[common], help="regenerate the golden fixture manifest")
    p.add_argument("--check", action="store_true", help="only compare against the stored manifest")
    p.add_argument("--manifest", help="manifest path")
    p.set_defaults(run=regenerate.run)
    return parser


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.run(args)
    except (ConfigError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except DifError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
