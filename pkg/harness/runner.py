import concurrent.futures
import json
import logging
import os
import zlib
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from rich.console import Console

from campaign.config import Settings, settings as default_settings
from campaign.discounting import budget_per_epoch_per_media_object
from campaign.models import HOURS_PER_DAY
from evaluation.metrics import RunMetrics, kl_divergence_rescaled
from evaluation.report import (
    SummaryRow,
    per_epoch_frame,
    print_summary,
    series_frame,
    summarize,
    write_frame,
    write_summary,
)
from harness.plan import ExperimentPlan
from harness.stacks import StackOptimizer, StackSpec, parse_stack, slot_profile
from market.models import MarketTruth
from market.simulator import evolve_truth, generate_truth, inject_gaps, load_truth, simulate_epoch

LOGGER = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ['repetition', 'algorithm', 'epoch', 'slot', 'media_object', 'weight', 'bid', 'budget']


class RunFailure(BaseModel):
    """A repetition of a stack that raised instead of finishing"""

    algorithm: str
    repetition: int
    message: str


class RunResult(NamedTuple):
    metrics: RunMetrics
    trajectories: pd.DataFrame


class ExperimentOutcome(NamedTuple):
    rows: List[SummaryRow]
    failures: List[RunFailure]
    runs: List[RunMetrics]


def derive_seed(master_seed: int, *keys: Union[int, str]) -> np.random.SeedSequence:
    """SeedSequence of master_seed and keys; strings enter through their CRC32"""
    entropy = [master_seed]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.SeedSequence(entropy)


def make_rng(master_seed: int, *keys: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *keys))


def truth_for_repetition(plan: ExperimentPlan, repetition: int) -> MarketTruth:
    """
    Market truth shared by every stack of a repetition

    Loaded from plan.truth_file when set, drawn from the master seed otherwise.
    """
    if plan.truth_file is not None:
        truth = load_truth(plan.truth_file)
        if truth.size != plan.campaign.num_media_objects:
            raise ValueError(f"Truth file has {truth.size} media objects, "
                             f"campaign has {plan.campaign.num_media_objects}")
    else:
        truth = generate_truth(plan.simulator, make_rng(plan.master_seed, repetition, "truth"))

    LOGGER.info(f"Repetition {repetition}: market truth sha256 {truth.digest()}")
    return truth


def _epoch_schedule(plan: ExperimentPlan) -> List[Tuple[int, int, int, int]]:
    """(global epoch, slot, epoch of the slot's optimizer, day) in chronological order"""
    config = plan.campaign
    if not config.day_parting:
        return [(epoch, 0, epoch, epoch // HOURS_PER_DAY) for epoch in range(config.epochs)]

    slots = set(plan.slots)
    return [(day * HOURS_PER_DAY + hour, hour, day, day)
            for day in range(config.epochs_per_slot)
            for hour in range(HOURS_PER_DAY) if hour in slots]


def _closed_loop(spec: StackSpec, plan: ExperimentPlan, repetition: int, truth: MarketTruth) -> RunResult:
    config = plan.campaign
    seed = plan.master_seed
    gap_probability = plan.simulator.gap_probability

    optimizers: Dict[int, StackOptimizer] = {}
    click_rngs: Dict[int, np.random.Generator] = {}
    gap_rngs: Dict[int, np.random.Generator] = {}
    for slot in plan.slots:
        algo_rng = make_rng(seed, repetition, spec.name, "algo", slot, config.rng_seed)
        optimizers[slot] = StackOptimizer(spec, config, slot_profile(config, slot), algo_rng)
        click_rngs[slot] = make_rng(seed, repetition, "clicks", slot)
        gap_rngs[slot] = make_rng(seed, repetition, "gaps", slot)

    campaign_budget = sum(optimizer.profile.total_budget for optimizer in optimizers.values())
    records = {name: [] for name in ('spend', 'clicks', 'impressions', 'budget', 'slot', 'day', 'kld')}
    trajectories = []

    for epoch, slot, local_epoch, day in _epoch_schedule(plan):
        optimizer = optimizers[slot]
        budgets, bids = optimizer.budgets.copy(), optimizer.bids.copy()

        obs = simulate_epoch(evolve_truth(truth, epoch), budgets, bids, click_rngs[slot])
        seen = obs
        if gap_probability > 0:
            seen = optimizer.fill_gaps(inject_gaps(obs, gap_probability, gap_rngs[slot]))

        optimizer.update(seen, local_epoch, day)

        records['spend'].append(obs.spend.sum())
        records['clicks'].append(obs.clicks.sum())
        records['impressions'].append(obs.impressions.sum())
        records['budget'].append(budgets.sum())
        records['slot'].append(slot)
        records['day'].append(day)
        records['kld'].append(kl_divergence_rescaled(optimizer.weights))

        if plan.write_trajectories:
            trajectories.append(pd.DataFrame({
                'repetition': repetition,
                'algorithm': spec.name,
                'epoch': epoch,
                'slot': slot,
                'media_object': np.arange(config.num_media_objects),
                'weight': optimizer.weights.weights,
                'bid': bids,
                'budget': budgets,
            }))

    metrics = RunMetrics(
        algorithm=spec.name,
        repetition=repetition,
        campaign_budget=campaign_budget,
        spend=records['spend'],
        clicks=records['clicks'],
        rescaled_kld=records['kld'],
        impressions=records['impressions'],
        budget=records['budget'],
        slot=records['slot'],
        day=records['day'],
    )
    frame = pd.concat(trajectories, ignore_index=True) if trajectories else pd.DataFrame(columns=TRAJECTORY_COLUMNS)
    return RunResult(metrics, frame)


def run_campaign(spec: StackSpec, plan: ExperimentPlan, repetition: int, truth: MarketTruth) -> RunResult:
    """
    One repetition of a stack with a single optimizer over all T epochs

    Every epoch the market answers the current budgets and bids, the optimizer learns from the
    (preprocessed) observation and prepares the next budgets and bids.
    """
    if plan.campaign.day_parting:
        raise ValueError("Campaign is day parted, use run_day_parted")
    return _closed_loop(spec, plan, repetition, truth)


def run_day_parted(spec: StackSpec, plan: ExperimentPlan, repetition: int, truth: MarketTruth) -> RunResult:
    """
    One repetition of a stack with an independent optimizer per hour slot

    Each optimizer only sees the epochs of its hour; results are merged in chronological order.
    """
    if not plan.campaign.day_parting:
        raise ValueError("Campaign is not day parted, use run_campaign")
    return _closed_loop(spec, plan, repetition, truth)


def run_stack(spec: StackSpec, plan: ExperimentPlan, repetition: int, truth: MarketTruth) -> RunResult:
    runner = run_day_parted if plan.campaign.day_parting else run_campaign
    return runner(spec, plan, repetition, truth)


def write_outputs(plan: ExperimentPlan, results: Sequence[RunResult], rows: Sequence[SummaryRow],
                  failures: Sequence[RunFailure]) -> None:
    runs = [result.metrics for result in results]
    out = plan.output_dir
    write_frame(per_epoch_frame(runs), os.path.join(out, 'per_epoch.csv'))
    write_frame(series_frame(runs), os.path.join(out, 'series.csv'))
    if plan.write_trajectories:
        frames = [result.trajectories for result in results]
        trajectories = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=TRAJECTORY_COLUMNS)
        write_frame(trajectories, os.path.join(out, 'trajectories.csv'))

    failure_records = [failure.model_dump() for failure in failures]
    write_summary(rows, os.path.join(out, 'summary.json'), plan.baseline, failure_records)
    with open(os.path.join(out, 'failures.json'), 'w') as f:
        json.dump(failure_records, f, indent=2)


def run_experiment(plan: ExperimentPlan, settings: Optional[Settings] = None,
                   console: Optional[Console] = None) -> ExperimentOutcome:
    """
    Run every stack for every repetition and write the reports

    Stacks of one repetition share the market truth and the click draws. Runs execute on a thread
    pool; a run that raises is recorded as a RunFailure and the summary covers the rest.

    Raises:
        FileNotFoundError: when the plan names a truth file that does not exist
    """
    settings = settings or default_settings
    config = plan.campaign

    bem = budget_per_epoch_per_media_object(config)
    regime = "above" if bem >= config.cpc_goal else "below"
    LOGGER.info(f"Budget per epoch per media object {bem:.3f} is {regime} the CPC goal {config.cpc_goal}")
    LOGGER.info(f"Running {len(plan.stacks)} stacks x {config.repetitions} repetitions on slots {plan.slots}")

    truths = {rep: truth_for_repetition(plan, rep) for rep in range(config.repetitions)}
    jobs = [(stack, rep) for rep in range(config.repetitions) for stack in plan.stacks]
    specs = {stack: parse_stack(stack) for stack in plan.stacks}

    results: Dict[Tuple[str, int], RunResult] = {}
    errors: Dict[Tuple[str, int], str] = {}

    with concurrent.futures.ThreadPoolExecutor(max_workers=settings.MAX_WORKERS) as executor:
        futures = {executor.submit(run_stack, specs[stack], plan, rep, truths[rep]): (stack, rep)
                   for stack, rep in jobs}

        for future in concurrent.futures.as_completed(futures):
            job = futures[future]
            try:
                results[job] = future.result()
            except Exception as e:
                LOGGER.error(f"Error running {job[0]} repetition {job[1]}: {e}")
                errors[job] = str(e)

    ordered = [results[job] for job in jobs if job in results]
    failures = [RunFailure(algorithm=job[0], repetition=job[1], message=errors[job])
                for job in jobs if job in errors]
    runs = [result.metrics for result in ordered]

    try:
        rows = summarize(runs, plan.baseline)
    except ValueError as e:
        LOGGER.error(f"Could not summarize: {e}")
        rows = []

    write_outputs(plan, ordered, rows, failures)
    if rows:
        print_summary(rows, title=f"Results against {plan.baseline}", console=console)
    if failures:
        LOGGER.warning(f"{len(failures)} of {len(jobs)} runs failed")

    return ExperimentOutcome(rows, failures, runs)
