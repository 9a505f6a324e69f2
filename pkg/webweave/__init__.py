#!/usr/bin/env python3
from __future__ import annotations

import argparse
import json
import sys

import singer
import singer.utils as singer_utils

from webweave.experiments import EXPERIMENT_CODES, run
from webweave.schema import validate_config
from webweave.web.exceptions import (
    WebweaveConfigError,
    WebweaveExceptionError,
)
from webweave.web.lattice import DEFAULT_MEMORY_BUDGET_SITES

__version__ = "0.1.0"

LOGGER = singer.get_logger()

VALIDATE = "validate"

# only non-statistical settings carry defaults
CONFIG = {
    "threads": 1,
    "memory_budget_sites": DEFAULT_MEMORY_BUDGET_SITES,
}


def parse_args(argv=None):
    parser = argparse.ArgumentParser(prog="webweave", description="Brownian web simulations and diagnostics.")
    parser.add_argument("experiment", choices=[*EXPERIMENT_CODES, VALIDATE])
    parser.add_argument("-c", "--config", required=True, help="Experiment config file")
    parser.add_argument("--seed", type=int, help="Override the config seed")
    parser.add_argument("--out", help="Override the config output_dir")
    parser.add_argument("--threads", type=int, help="Override the config thread count")
    return parser.parse_args(argv)


def load_config(path):
    try:
        return singer_utils.load_json(path)
    except (OSError, ValueError) as e:
        raise WebweaveExceptionError(f"Cannot read config {path}: {e}") from e


def apply_overrides(config, args):
    config = dict(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["output_dir"] = args.out
    if args.threads is not None:
        config["threads"] = args.threads
    return config


def do_validate(config):
    violations = validate_config(config)
    print(json.dumps({"valid": not violations, "violations": violations}, indent=2))
    return 0 if not violations else WebweaveConfigError.exit_code


def do_run(experiment, config):
    violations = validate_config(config)
    if not violations and config["experiment"] != experiment:
        violations = [
            {"path": "/experiment", "message": f"Config is for {config['experiment']!r}, not {experiment!r}."}
        ]
    if violations:
        raise WebweaveConfigError(violations)

    run_config = {**CONFIG, **config}
    summary = run(run_config, __version__)
    print(json.dumps({"summary": f"{run_config['output_dir']}/summary.json", "hash": summary["hash"]}))
    return 0


def main_impl(argv=None):
    args = parse_args(argv)
    config = apply_overrides(load_config(args.config), args)
    if args.experiment == VALIDATE:
        return do_validate(config)
    return do_run(args.experiment, config)


def error_document(e, exit_code):
    error = {"type": type(e).__name__, "message": str(e), "exit_code": exit_code}
    if isinstance(e, WebweaveConfigError):
        error["violations"] = e.violations
    return json.dumps({"error": error})


def main(argv=None):
    try:
        sys.exit(main_impl(argv))
    except WebweaveExceptionError as e:
        LOGGER.critical(e)
        print(error_document(e, e.exit_code))
        sys.exit(e.exit_code)
    except Exception as e:
        LOGGER.critical(e)
        print(error_document(e, 1))
        raise e
