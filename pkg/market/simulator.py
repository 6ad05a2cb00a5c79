import json
import logging
import os
from typing import Optional

import numpy as np

from campaign.models import HOURS_PER_DAY, EpochObservation, as_vector
from market.models import MarketTruth, SimulatorConfig
from optimization.bid_setter import expected_cpm

logger = logging.getLogger(__name__)


def generate_truth(cfg: SimulatorConfig, rng: Optional[np.random.Generator] = None) -> MarketTruth:
    """
    Draw ctr, itot and beta of every media object uniformly from their intervals

    Args:
        cfg: sampling intervals, schedule and number of media objects
        rng: random stream, seeded from cfg.seed when omitted

    Returns:
        MarketTruth carrying the schedule and daily cycle of cfg
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    size = cfg.num_media_objects

    ctr = rng.uniform(*cfg.ctr_interval, size=size)
    itot = rng.uniform(*cfg.itot_interval, size=size)
    beta = rng.uniform(*cfg.beta_interval, size=size)

    return MarketTruth(ctr=ctr, itot=itot, beta=beta, schedule=list(cfg.truth_schedule),
                       daily_itot_amplitude=cfg.daily_itot_amplitude)


def daily_cycle(hour: int, amplitude: float) -> float:
    """Volume multiplier 1 - A cos(2 pi hour / 24), lowest at midnight"""
    return 1.0 - amplitude * np.cos(2.0 * np.pi * (hour % HOURS_PER_DAY) / HOURS_PER_DAY)


def evolve_truth(truth: MarketTruth, epoch: int) -> MarketTruth:
    """
    Market parameters in effect at an epoch

    Multipliers are applied to the base truth, not compounded across epochs. The result has no
    schedule of its own.
    """
    if epoch < 0:
        raise ValueError("Epoch cannot be negative")

    active = [entry for entry in truth.schedule if entry.active(epoch)]
    if not active and truth.daily_itot_amplitude == 0:
        return truth

    fields = {'ctr': truth.ctr.copy(), 'itot': truth.itot.copy(), 'beta': truth.beta.copy()}
    fields['itot'] *= daily_cycle(epoch, truth.daily_itot_amplitude)
    for entry in active:
        fields[entry.field][entry.media_object] *= entry.multiplier

    if np.any(fields['ctr'] > 1):
        logger.warning(f"Scheduled ctr above 1 at epoch {epoch}, clamping to 1")
        fields['ctr'] = np.minimum(fields['ctr'], 1.0)

    return MarketTruth(**fields)


def simulate_epoch(truth: MarketTruth, budgets, bids, rng: np.random.Generator) -> EpochObservation:
    """
    Turn budgets and bids into impressions, spend and clicks

    N = floor(min(1000 B / CPM, Itot P(b))), S = N CPM / 1000 and C ~ Binomial(N, ctr). Media
    objects with no budget or a zero bid buy nothing.
    """
    budgets, bids = as_vector(budgets), as_vector(bids)
    if not budgets.size == bids.size == truth.size:
        raise ValueError("Budgets, bids and market differ in length")
    if np.any(budgets < 0) or np.any(bids < 0):
        raise ValueError("Budgets and bids must be non-negative")

    active = (budgets > 0) & (bids > 0)
    impressions = np.zeros(truth.size)
    spend = np.zeros(truth.size)

    if active.any():
        b, beta = bids[active], truth.beta[active]
        cpm = expected_cpm(b, beta)
        available = truth.itot[active] * b / (b + beta)
        bought = np.floor(np.minimum(1000.0 * budgets[active] / cpm, available))
        impressions[active] = bought
        spend[active] = np.minimum(bought * cpm / 1000.0, budgets[active])

    # drawn for every media object so the stream does not depend on which ones were active
    clicks = rng.binomial(impressions.astype(np.int64), truth.ctr).astype(float)

    return EpochObservation(impressions=impressions, clicks=clicks, spend=spend)


def inject_gaps(obs: EpochObservation, probability: float, rng: np.random.Generator) -> EpochObservation:
    """Replace every cell with NaN independently with the given probability"""
    if not 0.0 <= probability < 1.0:
        raise ValueError("Gap probability must lie in [0, 1)")
    if probability == 0:
        return obs

    lost = rng.random((3, obs.size)) < probability
    cells = np.vstack([obs.impressions, obs.clicks, obs.spend])
    cells[lost] = np.nan
    return EpochObservation(impressions=cells[0], clicks=cells[1], spend=cells[2])


def save_truth(truth: MarketTruth, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, 'w') as f:
        json.dump(truth.to_dict(), f, indent=2)

    logger.info(f"Market truth {truth.digest()[:12]} saved to {path}")


def load_truth(path: str) -> MarketTruth:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Market truth not found at {path}")

    with open(path, 'r') as f:
        data = json.load(f)

    truth = MarketTruth(**data)
    logger.info(f"Loaded market truth {truth.digest()[:12]} with {truth.size} media objects")
    return truth
