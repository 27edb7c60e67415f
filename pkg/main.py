import argparse
import logging
import sys

import settings
from commands import (
    data_commands, eval_commands, experiment_commands, plan_commands, render_commands, train_commands,
)
from errors import MPDError

logger = logging.getLogger("mpd")

COMMANDS = [data_commands, train_commands, plan_commands, eval_commands, render_commands, experiment_commands]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpd", description="Diffusion-prior motion planning for planar robots")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS:
        module.register(subparsers)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.handler(args)
    except MPDError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
