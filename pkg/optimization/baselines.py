"""
Comparison algorithms: the do-nothing vnl, the exp3 bandit and the lop greedy partitioners,
and the rule-based pst bid setter
"""
import logging
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from campaign.models import CampaignConfig, EpochObservation, as_vector

logger = logging.getLogger(__name__)

# exp3 weights are rescaled once the largest one passes this value
EXP3_WEIGHT_CEILING = 1e100


def vnl_step(state):
    """The vanilla algorithm changes nothing"""
    return state


class Exp3State(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray
    gamma: float = Field(..., gt=0, le=1)
    clicks_goal_avg: np.ndarray
    cpc_goal: float = Field(..., gt=0)
    smoothing: float = Field(0.87, ge=0, lt=1)

    @field_validator('weights', 'clicks_goal_avg', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @field_validator('weights')
    @classmethod
    def positive_weights(cls, v):
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("exp3 weights must be positive and finite")
        return v

    @model_validator(mode='after')
    def check_shapes(self):
        if self.weights.size != self.clicks_goal_avg.size:
            raise ValueError("Weights and click averages differ in length")
        return self

    @property
    def size(self) -> int:
        return self.weights.size

    @classmethod
    def initial(cls, size: int, config: CampaignConfig) -> "Exp3State":
        return cls(weights=np.ones(size), gamma=config.exp3_gamma, clicks_goal_avg=np.zeros(size),
                   cpc_goal=config.cpc_goal, smoothing=config.exp3_smoothing)


def exp3_probabilities(state: Exp3State) -> np.ndarray:
    """Mixture (1 - gamma) w / sum(w) + gamma / K"""
    return (1.0 - state.gamma) * state.weights / state.weights.sum() + state.gamma / state.size


def exp3_reward(clicks: float, cpc: float, clicks_goal: float, cpc_goal: float) -> float:
    """
    Reward x / (1 + x) with x = (C / C_goal) * (CPC_goal / CPC)

    Zero clicks give x = 0 whatever the CPC.
    """
    if clicks == 0:
        return 0.0
    if cpc <= 0 or clicks_goal <= 0 or cpc_goal <= 0:
        raise ValueError("CPC and goals must be positive")
    x = (clicks / clicks_goal) * (cpc_goal / cpc)
    return x / (1.0 + x)


def exp3_step(state: Exp3State, chosen_index: int, reward: float) -> Exp3State:
    """Importance weighted update of the drawn arm, w_i * exp(gamma * (R / p_i) / K)"""
    if not 0.0 <= reward < 1.0:
        raise ValueError(f"Reward {reward} is outside [0, 1)")
    if not 0 <= chosen_index < state.size:
        raise ValueError(f"No arm {chosen_index}")

    probabilities = exp3_probabilities(state)
    estimate = reward / probabilities[chosen_index]
    weights = state.weights.copy()
    weights[chosen_index] *= np.exp(state.gamma * estimate / state.size)

    if weights.max() > EXP3_WEIGHT_CEILING:
        weights = weights / weights.max()

    return state.model_copy(update={'weights': weights})


def exp3_budget_step(state: Exp3State, obs: EpochObservation, epoch_budget: float, allocated,
                     rng: np.random.Generator) -> Tuple[Exp3State, np.ndarray]:
    """
    One epoch of the exp3 partitioner

    An arm is drawn from the current probabilities and rewarded with what it achieved during the
    epoch. The click goal is the larger of the running click average and the clicks the allotted
    budget buys at the goal CPC.

    Args:
        state: bandit state before the epoch
        obs: preprocessed observation of the epoch
        epoch_budget: total budget of the next epoch
        allocated: budgets given to the media objects during the epoch
        rng: algorithm-internal random stream

    Returns:
        The new state and the budgets of the next epoch, epoch_budget times the probabilities
    """
    allocated = as_vector(allocated)
    probabilities = exp3_probabilities(state)
    arm = int(rng.choice(state.size, p=probabilities))

    clicks, spend = float(obs.clicks[arm]), float(obs.spend[arm])
    clicks_goal = max(float(state.clicks_goal_avg[arm]), allocated[arm] / state.cpc_goal)
    cpc = spend / clicks if clicks > 0 else np.inf
    reward = exp3_reward(clicks, cpc, clicks_goal, state.cpc_goal)

    state = exp3_step(state, arm, reward)
    averages = state.smoothing * state.clicks_goal_avg + (1.0 - state.smoothing) * obs.clicks
    state = state.model_copy(update={'clicks_goal_avg': averages})

    return state, epoch_budget * exp3_probabilities(state)


class LopState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    disc_spend: np.ndarray
    disc_clicks: np.ndarray
    alpha_lower: float = Field(..., gt=0, lt=1)
    alpha_upper: float = Field(..., gt=1)
    gamma: float = Field(..., ge=0, le=1)

    @field_validator('disc_spend', 'disc_clicks', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @property
    def size(self) -> int:
        return self.disc_spend.size

    @classmethod
    def initial(cls, size: int, config: CampaignConfig) -> "LopState":
        return cls(disc_spend=np.zeros(size), disc_clicks=np.zeros(size),
                   alpha_lower=config.lop_alpha_lower, alpha_upper=config.lop_alpha_upper,
                   gamma=config.discount_gamma)


def greedy_fill(lower: np.ndarray, upper: np.ndarray, cpc: np.ndarray, budget: float) -> np.ndarray:
    """
    Give every media object its lower bound, then the surplus to the cheapest clicks first

    Lower bounds are scaled down proportionally when the budget cannot cover them.
    """
    required = lower.sum()
    if budget < required:
        logger.warning(f"Budget {budget:.4f} is below the lower bounds {required:.4f}, scaling them")
        return lower * (budget / required) if required > 0 else np.zeros_like(lower)

    allocation = lower.copy()
    remaining = budget - required
    for i in np.argsort(cpc, kind='stable'):
        if remaining <= 0:
            break
        extra = min(remaining, upper[i] - lower[i])
        allocation[i] += extra
        remaining -= extra
    return allocation


def lop_step(state: LopState, obs: EpochObservation, remaining_budget: float) -> Tuple[LopState, np.ndarray]:
    """
    One epoch of the lop partitioner

    Bounds follow the spend of the epoch, alpha_l * S <= B <= alpha_u * S, and the CPC is
    estimated from discounted spend and clicks, infinite for media objects without clicks.

    Returns:
        The new state and the budgets of the next epoch
    """
    if obs.size != state.size:
        raise ValueError("Observation and state differ in length")

    spend = obs.spend
    state = state.model_copy(update={
        'disc_spend': spend + state.gamma * state.disc_spend,
        'disc_clicks': obs.clicks + state.gamma * state.disc_clicks,
    })

    lower, upper = state.alpha_lower * spend, state.alpha_upper * spend
    if upper.sum() <= 0:
        logger.warning("Nothing was spent, falling back to the uniform split")
        return state, np.full(state.size, remaining_budget / state.size)

    cpc = np.divide(state.disc_spend, state.disc_clicks,
                    out=np.full(state.size, np.inf), where=state.disc_clicks > 0)
    return state, greedy_fill(lower, upper, cpc, remaining_budget)


class PstParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    cpc_goal: float = Field(..., gt=0)
    down_multiplier: float = Field(..., gt=0, lt=1)
    up_multiplier: float = Field(..., gt=1)
    underdelivery_ratio: float = Field(..., gt=0, lt=1)
    bid_lower: float = Field(..., ge=0)
    bid_upper: float = Field(..., gt=0)

    @classmethod
    def from_config(cls, config: CampaignConfig) -> "PstParams":
        return cls(cpc_goal=config.cpc_goal, down_multiplier=config.pst_down_multiplier,
                   up_multiplier=config.pst_up_multiplier,
                   underdelivery_ratio=config.pst_underdelivery_ratio,
                   bid_lower=config.bid_lower, bid_upper=config.bid_upper)


def pst_step(params: PstParams, obs: EpochObservation, bids, budgets) -> np.ndarray:
    """
    Rule-based bid update

    Under-delivering media objects get a slightly higher bid, the others a lower bid when their
    CPC is above the goal. Media objects without budget keep their bid.
    """
    bids, budgets = as_vector(bids), as_vector(budgets)
    if not bids.size == budgets.size == obs.size:
        raise ValueError("Observation, bids and budgets differ in length")

    spend, clicks = obs.spend, obs.clicks
    funded = budgets > 0
    delivery = np.divide(spend, budgets, out=np.ones_like(spend), where=funded)
    cpc = np.divide(spend, clicks, out=np.full(spend.size, np.inf), where=clicks > 0)

    under_delivering = funded & (delivery < params.underdelivery_ratio)
    too_expensive = funded & ~under_delivering & (cpc > params.cpc_goal)

    updated = bids.copy()
    updated[under_delivering] *= params.up_multiplier
    updated[too_expensive] *= params.down_multiplier
    return np.clip(updated, params.bid_lower, params.bid_upper)
