"""
Main entry point for the S-Align Lab.

Runs one command per process:
1. Resolves the experiment config (profile, config file, overrides, SALIGN_SEED).
2. Validates it.
3. Executes the command and writes its artifacts.

Example:
    python main.py gen-data --profile toy
    python main.py train --override train.lambda=0 --override continuity.enabled=false
"""

import argparse
import logging
import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent))
from config import LOG_LEVEL, LOG_FORMAT, LOG_FILE, PROFILES
from salign.cli import COMMANDS, run


def setup_logging():
    """Configures basic logging for the application.

    Sets up logging to output to the console. If a LOG_FILE is specified
    in the configuration, it also adds a file handler to log to a file.
    """
    handlers = [logging.StreamHandler()]

    # Add a file handler if LOG_FILE is set in the environment variables.
    if LOG_FILE:
        try:
            file_handler = logging.FileHandler(LOG_FILE, mode='w', encoding='utf-8')
            handlers.append(file_handler)
            print(f"Logging to file: {LOG_FILE}")
        except Exception as e:
            print(f"Warning: Could not set up log file. Error: {e}")

    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL),
        format=LOG_FORMAT,
        handlers=handlers
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="S-Align speech translation training lab")
    parser.add_argument('command', choices=COMMANDS, help="What to run.")
    parser.add_argument('--config', default=None, help="JSON config file (nested sections).")
    parser.add_argument('--override', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help="Dotted config override; may be repeated.")
    parser.add_argument('--profile', choices=sorted(PROFILES), default=None,
                        help="Hyperparameter profile (default: toy).")
    parser.add_argument('--plot', action='store_true', default=None,
                        help="Also render PNG plots for diagnostics.")
    return parser


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.override, args.profile, args.plot)


if __name__ == "__main__":
    sys.exit(main())
