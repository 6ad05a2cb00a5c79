import logging
import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import bisect

from campaign.models import CampaignConfig, EpochObservation, MediaObjectAccumulators, as_vector

logger = logging.getLogger(__name__)

# root search bracket for beta, relative to the bid
BETA_BRACKET = (1e-9, 1e6)
# observed CPM at or above b/2 is pulled just under it
CPM_CEILING = 1.0 - 1e-6


class BidLandscape(BaseModel):
    """Median winning bid and available inventory per media object"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: np.ndarray
    total_inventory: np.ndarray

    @field_validator('beta', 'total_inventory', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @field_validator('beta')
    @classmethod
    def positive_beta(cls, v):
        if np.any(v <= 0):
            raise ValueError("beta must be positive")
        return v

    @field_validator('total_inventory')
    @classmethod
    def non_negative_inventory(cls, v):
        if np.any(v < 0):
            raise ValueError("Inventory cannot be negative")
        return v


class NadamHyper(BaseModel):
    """Nadam hyperparameters; mu_schedule, when set, overrides the constant mu per step"""
    model_config = ConfigDict(frozen=True)

    step_size: float = Field(..., gt=0)
    mu: float = Field(0.9, gt=0, lt=1)
    nu: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    mu_schedule: Optional[List[float]] = None

    @field_validator('mu_schedule')
    @classmethod
    def schedule_in_range(cls, v):
        if v is not None:
            if not v:
                raise ValueError("mu_schedule cannot be empty")
            if any(not 0.0 < mu < 1.0 for mu in v):
                raise ValueError("mu_schedule values must lie in (0, 1)")
        return v

    def mu_at(self, step: int) -> float:
        if self.mu_schedule is None:
            return self.mu
        return self.mu_schedule[min(step, len(self.mu_schedule) - 1)]

    @classmethod
    def from_config(cls, config: CampaignConfig) -> "NadamHyper":
        return cls(step_size=config.bid_step_size, mu=config.nadam_mu,
                   nu=config.nadam_nu, epsilon=config.nadam_epsilon)


class BidGradientInput(BaseModel):
    """Everything the bid gradient of one media object depends on"""
    model_config = ConfigDict(frozen=True)

    impressions: float = Field(..., ge=0)
    budget: float = Field(..., ge=0)
    spend: float = Field(..., ge=0)
    clicks: float = Field(..., ge=0)
    bid: float = Field(..., ge=0)
    beta: float = Field(..., gt=0)
    tau: float = Field(..., gt=0, le=1)
    alpha: float = Field(..., gt=0)
    budget_min: float = Field(..., ge=0)

    @model_validator(mode='after')
    def spend_within_budget(self):
        if self.spend > self.budget * (1 + 1e-9) + 1e-12:
            raise ValueError("Spend exceeds the budget")
        return self


class BetaEstimate(NamedTuple):
    beta: float
    clamped: bool


def _check_positive(name: str, value) -> None:
    if np.any(np.asarray(value) <= 0):
        raise ValueError(f"{name} must be positive")


def win_probability(b, beta):
    """Probability b / (b + beta) of winning an auction when bidding b"""
    _check_positive("beta", beta)
    if np.any(np.asarray(b) < 0):
        raise ValueError("Bid cannot be negative")
    return b / (b + beta)


def expected_cpm(b, beta):
    """
    Mean second-price CPM paid when bidding b

    beta * [(1 + beta/b) ln(1 + b/beta) - 1], always below b/2.
    """
    _check_positive("Bid", b)
    _check_positive("beta", beta)
    return beta * ((1.0 + beta / b) * np.log1p(b / beta) - 1.0)


def cpm_derivative(b, beta):
    """dCPM/db = (beta/b) [1 - (beta/b) ln(1 + b/beta)]"""
    _check_positive("Bid", b)
    _check_positive("beta", beta)
    ratio = beta / b
    return ratio * (1.0 - ratio * np.log1p(b / beta))


def spend_model(b, beta, itot):
    """Spend when the whole reachable inventory is bought, (Itot/1000) beta [ln(1 + b/beta) - b/(b + beta)]"""
    _check_positive("beta", beta)
    return itot / 1000.0 * beta * (np.log1p(b / beta) - b / (b + beta))


def spend_derivative(b, beta, impressions):
    """dS/db = (N/1000) beta / (b + beta), with N the impressions bought at bid b"""
    _check_positive("beta", beta)
    return impressions / 1000.0 * beta / (b + beta)


def estimate_beta(observed_cpm: float, b: float) -> BetaEstimate:
    """
    Invert expected_cpm in beta for a fixed bid

    Args:
        observed_cpm: CPM paid during the epoch, positive
        b: bid that produced it, positive

    Returns:
        BetaEstimate; clamped is True when the observed CPM was not below b/2 and had to be
        pulled under it
    """
    if observed_cpm <= 0:
        raise ValueError("Observed CPM must be positive")
    if b <= 0:
        raise ValueError("Bid must be positive")

    target = observed_cpm
    clamped = False
    ceiling = b / 2.0 * CPM_CEILING
    if target >= ceiling:
        logger.warning(f"Observed CPM {observed_cpm:.6g} is not below half the bid {b:.6g}, clamping")
        target = ceiling
        clamped = True

    def gap(beta: float) -> float:
        return beta * ((1.0 + beta / b) * math.log1p(b / beta) - 1.0) - target

    low, high = BETA_BRACKET[0] * b, BETA_BRACKET[1] * b
    if gap(low) >= 0:
        return BetaEstimate(low, clamped)

    beta = bisect(gap, low, high, xtol=1e-300, rtol=1e-12, maxiter=400)
    return BetaEstimate(float(beta), clamped)


def bid_loss_gradient(inputs: BidGradientInput) -> float:
    """
    Gradient of the bid loss for one media object

    Media objects without budget are ignored and media objects that spent nothing are pushed
    up with -1/alpha. Otherwise

        -C N / (1000 S) * {beta/(b + beta) * theta(tau - S/B) - dCPM/db}

    where the step function theta is 1 only for strictly positive arguments, so the spend term
    counts only while the media object under-delivers.
    """
    if inputs.budget < inputs.budget_min:
        return 0.0
    if inputs.spend == 0:
        return -1.0 / inputs.alpha

    b, beta = inputs.bid, inputs.beta
    under_delivering = inputs.tau - inputs.spend / inputs.budget > 0
    spend_term = beta / (b + beta) if under_delivering else 0.0
    scale = -inputs.clicks * inputs.impressions / (1000.0 * inputs.spend)
    return float(scale * (spend_term - cpm_derivative(b, beta)))


def nadam_step(state: MediaObjectAccumulators, grad,
               hyper: NadamHyper) -> Tuple[MediaObjectAccumulators, np.ndarray]:
    """
    One Nadam iteration on the bids

    Args:
        state: accumulators with the moments, step counter and running mu product
        grad: gradient of every media object
        hyper: Nadam hyperparameters

    Returns:
        The updated accumulators (bids untouched) and the proposed bids
    """
    g = as_vector(grad)
    if g.size != state.size:
        raise ValueError("Gradient and bids differ in length")

    step = state.nadam_step
    mu_t, mu_next = hyper.mu_at(step), hyper.mu_at(step + 1)
    product = state.nadam_mu_product * mu_t
    product_next = product * mu_next

    m_hat = mu_next * state.nadam_m / (1.0 - product_next) + (1.0 - mu_t) * g / (1.0 - product)
    m = mu_t * state.nadam_m + (1.0 - mu_t) * g
    n = hyper.nu * state.nadam_n + (1.0 - hyper.nu) * g ** 2
    n_hat = n / (1.0 - hyper.nu ** (step + 1))

    bids = state.bids - hyper.step_size * m_hat / np.sqrt(n_hat + hyper.epsilon)

    updated = state.model_copy(update={
        'nadam_m': m,
        'nadam_n': n,
        'nadam_step': step + 1,
        'nadam_mu_product': product,
    })
    return updated, bids


def clamp_bids(bids, lb: float, ub: float) -> np.ndarray:
    if lb >= ub:
        raise ValueError("Lower bid bound must be below the upper bound")
    return np.clip(as_vector(bids), lb, ub)


def bid_step(acc: MediaObjectAccumulators, obs: EpochObservation, budgets,
             config: CampaignConfig, hyper: Optional[NadamHyper] = None) -> MediaObjectAccumulators:
    """
    One epoch of base bid setting

    beta is estimated from the CPM observed with the current bids, epochs without impressions
    keep the previous estimate. The gradients go through Nadam and the result is clamped.

    Args:
        acc: accumulators, acc.bids are the bids used during the epoch
        obs: preprocessed observation of the epoch
        budgets: budgets allocated to the media objects for the epoch
        config: campaign configuration
        hyper: Nadam hyperparameters, taken from config when omitted

    Returns:
        Accumulators with the new bids, beta estimates and Nadam state
    """
    budgets = as_vector(budgets)
    if not obs.size == budgets.size == acc.size:
        raise ValueError("Observation, budgets and bids differ in length")
    if obs.has_gaps():
        raise ValueError("Preprocess observations before setting bids")
    hyper = hyper or NadamHyper.from_config(config)

    betas = acc.beta.copy()
    gradients = np.zeros(acc.size)
    for i in range(acc.size):
        impressions, clicks = obs.impressions[i], obs.clicks[i]
        # imputed spend can exceed the budget
        spend = min(obs.spend[i], budgets[i])

        if impressions == 0 and spend > 0:
            raise ValueError(f"Media object {i} spent {spend} without impressions")
        if impressions > 0 and spend > 0:
            estimate = estimate_beta(1000.0 * spend / impressions, acc.bids[i])
            betas[i] = estimate.beta

        gradients[i] = bid_loss_gradient(BidGradientInput(
            impressions=impressions, budget=budgets[i], spend=spend, clicks=clicks,
            bid=acc.bids[i], beta=betas[i], tau=config.delivery_threshold,
            alpha=config.learning_rate, budget_min=config.budget_min,
        ))

    acc, proposed = nadam_step(acc, gradients, hyper)
    bids = clamp_bids(proposed, config.bid_lower, config.bid_upper)
    return acc.model_copy(update={'bids': bids, 'beta': betas})
