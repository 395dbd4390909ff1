import argparse
import json
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.commands import bench, evaluate, parse_set_options, segment, synth, write_manifest
from src.config import __version__, load_config
from src.errors import EXIT_OK
from src.exception_handlers import handle_exception, success_response
from src.logging_config import bind_run, get_logger, setup_logging

load_dotenv()

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulse-dtw",
        description="""
        Cardiac cycle segmentation and fiducial point detection for pulsatile signals.

        Subcommands:
        * synth    - synthetic PPG records with exact ground truth
        * segment  - Boosted-SpringDTW (single or dynamic template), SpringDTW or adaptive threshold
        * evaluate - precision/recall/F1 and inter-beat-interval agreement against ground truth
        * bench    - wall-time scaling of the segmentation
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override any configuration value")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (synth, segment, evaluate, bench):
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(
        log_level=args.log_level or os.getenv("LOG_LEVEL", "INFO"),
        log_file=os.getenv("LOG_FILE", "logs/pulse_dtw.log"),
        enable_file_logging=os.getenv("LOG_TO_FILE", "true").lower() == "true",
        enable_console_logging=True,
    )
    bind_run(command=args.command)

    try:
        overrides = parse_set_options(args.set)
        overrides.update({key: getattr(args, key) for key in args.config_keys if getattr(args, key) is not None})
        config = load_config(args.config, overrides)
        bind_run(command=args.command, method=config.method, seed=config.seed)
        logger.info(f"Running {args.command}", extra={"extra_fields": {"output_dir": config.output_dir}})
        data = args.handler(config, args)
        write_manifest(config, args.command, {"argv": list(argv) if argv is not None else sys.argv[1:]})
    except Exception as exc:
        exit_code, payload = handle_exception(exc)
        print(json.dumps(payload, default=str), file=sys.stderr)
        return exit_code

    print(json.dumps(success_response(data), default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
