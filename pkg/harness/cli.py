"""
Command line entry point: run experiments, dump market truths, re-summarize results and fill
observation files.
"""
import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError
from rich.console import Console

from campaign.config import settings
from campaign.preprocessing import ObservationPreprocessor
from evaluation.report import print_summary, runs_from_per_epoch, summarize, write_summary
from harness.plan import load_plan
from harness.runner import run_experiment, truth_for_repetition
from market.simulator import load_truth, save_truth

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_FAILURE = 2


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise argparse.ArgumentTypeError(f"Expected a boolean, got {value!r}")


def parse_slot(value: str):
    if value == 'all':
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Slot must be 'all' or an hour 0..23, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='skott', description=settings.PROJECT_NAME)
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help='Run an experiment plan')
    run.add_argument('--plan', help='JSON experiment plan, defaults apply when omitted')
    run.add_argument('--seed', type=int, help='Master seed')
    run.add_argument('--reps', type=int, help='Repetitions per stack')
    run.add_argument('--out', help='Output directory')
    run.add_argument('--day-parting', type=parse_bool, help='Run one optimizer per hour of the day')
    run.add_argument('--stacks', help='Comma separated stacks, e.g. vnl,skt1,skt1+skt2')
    run.add_argument('--baseline', help='Stack the clicks are compared to, defaults to the first stack')
    run.add_argument('--slot', type=parse_slot, help="Hour slot to run under day parting, or 'all'")

    truth = subparsers.add_parser('truth', help='Dump or inspect a market truth')
    truth.add_argument('--plan', help='JSON experiment plan the truth is drawn for')
    truth.add_argument('--seed', type=int, help='Master seed')
    truth.add_argument('--rep', type=int, default=0, help='Repetition index')
    truth.add_argument('--out', help='Where to write the truth JSON')
    truth.add_argument('--load', help='Truth JSON to print instead of drawing one')

    report = subparsers.add_parser('report', help='Summarize an existing per epoch CSV')
    report.add_argument('--input', required=True, help='per_epoch.csv written by run')
    report.add_argument('--baseline', required=True, help='Stack the clicks are compared to')
    report.add_argument('--out', help='Where to write summary.json')

    preprocess = subparsers.add_parser('preprocess', help='Fill missing cells of an observation CSV')
    preprocess.add_argument('--input', required=True, help='CSV with epoch, media_object_id, impressions, clicks, spend')
    preprocess.add_argument('--out', help='Where to write the filled CSV')

    return parser


def plan_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Plan keys set on the command line"""
    overrides: Dict[str, Any] = {}
    campaign: Dict[str, Any] = {}
    if args.seed is not None:
        overrides['master_seed'] = args.seed
    if getattr(args, 'reps', None) is not None:
        campaign['repetitions'] = args.reps
    if getattr(args, 'day_parting', None) is not None:
        campaign['day_parting'] = args.day_parting
    if getattr(args, 'out', None) is not None and args.command == 'run':
        overrides['output_dir'] = args.out
    if getattr(args, 'stacks', None):
        overrides['stacks'] = [stack.strip() for stack in args.stacks.split(',')]
        overrides['baseline'] = None
    if getattr(args, 'baseline', None) is not None and args.command == 'run':
        overrides['baseline'] = args.baseline
    if getattr(args, 'slot', None) is not None:
        overrides['slot'] = args.slot
    if campaign:
        overrides['campaign'] = campaign
    return overrides


def command_run(args: argparse.Namespace, console: Console) -> int:
    plan = load_plan(args.plan, plan_overrides(args))
    outcome = run_experiment(plan, console=console)
    if outcome.failures or not outcome.rows:
        return EXIT_PARTIAL_FAILURE
    return EXIT_OK


def command_truth(args: argparse.Namespace, console: Console) -> int:
    if args.load is not None:
        truth = load_truth(args.load)
    else:
        plan = load_plan(args.plan, plan_overrides(args))
        truth = truth_for_repetition(plan, args.rep)
        if args.out is not None:
            save_truth(truth, args.out)

    console.print(f"sha256 {truth.digest()}")
    console.print(pd.DataFrame({'ctr': truth.ctr, 'itot': truth.itot, 'beta': truth.beta}).to_string())
    return EXIT_OK


def command_report(args: argparse.Namespace, console: Console) -> int:
    if not os.path.exists(args.input):
        raise FileNotFoundError(f"Per epoch table not found at {args.input}")

    runs = runs_from_per_epoch(pd.read_csv(args.input))
    rows = summarize(runs, args.baseline)
    print_summary(rows, title=f"Results against {args.baseline}", console=console)
    if args.out is not None:
        write_summary(rows, args.out, args.baseline)
    return EXIT_OK


def command_preprocess(args: argparse.Namespace, console: Console) -> int:
    filled = ObservationPreprocessor(args.input, args.out).run()
    console.print(f"Filled {len(filled)} rows from {args.input}")
    return EXIT_OK


COMMANDS = {
    'run': command_run,
    'truth': command_truth,
    'report': command_report,
    'preprocess': command_preprocess,
}


def main(argv: Optional[List[str]] = None, console: Optional[Console] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL.upper(),
                        format='%(asctime)s - %(levelname)s - %(message)s')

    args = build_parser().parse_args(argv)
    console = console or Console()
    try:
        return COMMANDS[args.command](args, console)
    except (ValidationError, ValueError, FileNotFoundError) as e:
        LOGGER.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == '__main__':
    sys.exit(main())
