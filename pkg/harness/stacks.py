import logging
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from campaign.models import HOURS_PER_DAY, CampaignConfig, EpochObservation, MediaObjectAccumulators, WeightVector
from campaign.preprocessing import OBSERVATION_FIELDS, preprocess_frame
from optimization.baselines import (
    Exp3State,
    LopState,
    PstParams,
    exp3_budget_step,
    lop_step,
    pst_step,
    vnl_step,
)
from optimization.bid_setter import NadamHyper, bid_step
from optimization.budget_partitioner import PartitionerParams, partition_step
from optimization.pacer import Pacer, SpendProfile

logger = logging.getLogger(__name__)

PARTITIONERS = ('vnl', 'mab', 'lop', 'skt1')
BIDDERS = ('skt2', 'pst')
PACERS = ('skt3',)


class StackSpec(BaseModel):
    """Which partitioner, bid setter and pacer an algorithm stack runs"""
    model_config = ConfigDict(frozen=True)

    name: str
    partitioner: str = 'vnl'
    bidder: Optional[str] = None
    pacing: bool = False


def parse_stack(name: str) -> StackSpec:
    """
    Parse a stack name such as skt1+skt2+skt3

    Components are joined with '+' in the order partitioning, bid setting, pacing; each stage
    appears at most once. A stack without partitioner keeps the budget split fixed.
    """
    components = [part.strip() for part in name.split('+')]
    if not name or any(not part for part in components):
        raise ValueError(f"Malformed stack name {name!r}")

    partitioner, bidder, pacing = None, None, False
    stage = 0
    for part in components:
        if part in PARTITIONERS and stage < 1 and partitioner is None:
            partitioner, stage = part, 1
        elif part in BIDDERS and stage < 2:
            bidder, stage = part, 2
        elif part in PACERS and stage < 3:
            pacing, stage = True, 3
        else:
            raise ValueError(f"Unknown or misplaced component {part!r} in stack {name!r}")

    return StackSpec(name=name, partitioner=partitioner or 'vnl', bidder=bidder, pacing=pacing)


def slot_profile(config: CampaignConfig, slot: int) -> SpendProfile:
    """
    Spend profile of one optimizer

    Under day parting every hour slot gets the epochs of its hour and their share of the budget.
    """
    if config.ideal_profile is not None:
        campaign_profile = SpendProfile(ideal_cumulative=config.ideal_profile)
    else:
        campaign_profile = SpendProfile.uniform(config.total_budget, config.epochs)

    if not config.day_parting:
        return campaign_profile
    per_epoch = campaign_profile.ideal_epoch_budget[slot::HOURS_PER_DAY]
    return SpendProfile(ideal_cumulative=np.cumsum(per_epoch))


class StackOptimizer:
    """
    State of one algorithm stack for one optimizer instance

    Holds the budgets and bids to use in the next epoch and updates them from every observation
    in the order partitioning, bid setting, pacing.
    """

    def __init__(self, spec: StackSpec, config: CampaignConfig, profile: SpendProfile,
                 rng: np.random.Generator):
        self.spec = spec
        self.config = config
        self.profile = profile
        self.rng = rng
        size = config.num_media_objects

        self.weights = WeightVector.uniform(size)
        self.accumulators = MediaObjectAccumulators.initial(size, config.initial_bid)
        self.partitioner_params = PartitionerParams.from_config(config)
        self.nadam = NadamHyper.from_config(config)
        self.pst = PstParams.from_config(config)
        self.exp3 = Exp3State.initial(size, config) if spec.partitioner == 'mab' else None
        self.lop = LopState.initial(size, config) if spec.partitioner == 'lop' else None
        self.pacer = Pacer(profile, config.aggressiveness) if spec.pacing else None

        self.budgets = float(profile.ideal_epoch_budget[0]) * self.weights.weights
        self.cumulative_spend = 0.0
        self._history: List[EpochObservation] = []

    @property
    def bids(self) -> np.ndarray:
        return self.accumulators.bids

    def fill_gaps(self, obs: EpochObservation) -> EpochObservation:
        """Preprocessed view of the latest observation, using everything seen so far"""
        self._history.append(obs)
        if not any(seen.has_gaps() for seen in self._history):
            return obs

        latest = {}
        for field in OBSERVATION_FIELDS:
            table = pd.DataFrame([getattr(seen, field) for seen in self._history])
            latest[field] = preprocess_frame(table).iloc[-1].to_numpy()

        impressions = np.clip(latest['impressions'], 0.0, None)
        bought = impressions > 0
        clicks = np.where(bought, np.clip(np.minimum(latest['clicks'], impressions), 0.0, None), 0.0)
        spend = np.where(bought, np.clip(latest['spend'], 0.0, None), 0.0)
        return EpochObservation(impressions=impressions, clicks=clicks, spend=spend)

    def _partition(self, obs: EpochObservation, allocated: np.ndarray, day: int,
                   ideal_budget: float) -> np.ndarray:
        kind = self.spec.partitioner
        if kind == 'skt1':
            self.weights, self.accumulators = partition_step(
                self.accumulators, obs, self.weights, self.partitioner_params, day, allocated)
        elif kind == 'mab':
            self.exp3, budgets = exp3_budget_step(self.exp3, obs, ideal_budget, allocated, self.rng)
            self.weights = WeightVector.from_budgets(budgets)
            return budgets
        elif kind == 'lop':
            self.lop, budgets = lop_step(self.lop, obs, ideal_budget)
            self.weights = WeightVector.from_budgets(budgets)
            return budgets
        else:
            self.weights = vnl_step(self.weights)
        return ideal_budget * self.weights.weights

    def _set_bids(self, obs: EpochObservation, allocated: np.ndarray) -> None:
        if self.spec.bidder == 'skt2':
            self.accumulators = bid_step(self.accumulators, obs, allocated, self.config, self.nadam)
        elif self.spec.bidder == 'pst':
            bids = pst_step(self.pst, obs, self.accumulators.bids, allocated)
            self.accumulators = self.accumulators.model_copy(update={'bids': bids})

    def update(self, obs: EpochObservation, epoch: int, day: int) -> None:
        """
        Learn from the epoch just run and prepare the next one

        Args:
            obs: preprocessed observation of the epoch
            epoch: index of the epoch among the epochs of this optimizer
            day: days elapsed, drives the regularization of the partitioner
        """
        allocated = self.budgets
        self.cumulative_spend += float(obs.spend.sum())

        last = epoch >= self.profile.epochs - 1
        # the final repartition is still learned, against the budget of the last epoch
        ideal_budget = float(self.profile.ideal_epoch_budget[min(epoch + 1, self.profile.epochs - 1)])

        budgets = self._partition(obs, allocated, day, ideal_budget)
        self._set_bids(obs, allocated)

        if last:
            self.budgets = np.zeros_like(allocated)
            return

        if self.pacer is not None:
            total = self.pacer.next_budget(epoch, self.cumulative_spend)
            budgets = total * self.weights.weights
        self.budgets = budgets
