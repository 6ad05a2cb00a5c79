import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from campaign.discounting import update_discounted
from campaign.models import (
    CampaignConfig,
    EpochObservation,
    MediaObjectAccumulators,
    WeightVector,
    as_vector,
)

logger = logging.getLogger(__name__)

# gradient elements are bounded by CLIP_SCALE / learning_rate
CLIP_SCALE = 10.0


class PartitionerParams(BaseModel):
    """Parameters of the exponentiated gradient budget partitioner"""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(..., gt=0)
    exploration_eta: float = Field(..., gt=0)
    regularization_discount: float = Field(..., gt=0, le=1)
    discount_gamma: float = Field(..., ge=0, le=1)

    @property
    def clip_bound(self) -> float:
        return CLIP_SCALE / self.learning_rate

    @classmethod
    def from_config(cls, config: CampaignConfig) -> "PartitionerParams":
        return cls(
            learning_rate=config.learning_rate,
            exploration_eta=config.exploration_eta,
            regularization_discount=config.regularization_discount,
            discount_gamma=config.discount_gamma,
        )


class QualityVector(BaseModel):
    """Estimated quality of every media object and its max-rescaled version"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    raw: np.ndarray
    rescaled: np.ndarray

    @field_validator('raw', 'rescaled', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @field_validator('raw')
    @classmethod
    def non_negative(cls, v):
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("Quality must be finite and non-negative")
        return v

    @model_validator(mode='after')
    def check_rescaled(self):
        if self.raw.size != self.rescaled.size:
            raise ValueError("Raw and rescaled quality differ in length")
        if np.any(self.rescaled < 0) or np.any(self.rescaled > 1):
            raise ValueError("Rescaled quality must lie in [0, 1]")
        return self


def quality(acc: MediaObjectAccumulators, epoch_budget: float = 1.0) -> QualityVector:
    """
    Quality Q = B * C_hat / B_hat, rescaled so that its largest element is 1

    Media objects without discounted budget have no data yet and get quality 0. When no media
    object has clicks the rescaled vector is all zeros.

    Args:
        acc: accumulators holding the discounted clicks and budgets
        epoch_budget: total budget of the epoch, a positive factor common to every element

    Returns:
        QualityVector with raw and rescaled values
    """
    raw = np.divide(acc.disc_clicks, acc.disc_budgets,
                    out=np.zeros(acc.size), where=acc.disc_budgets > 0) * epoch_budget
    top = raw.max()
    rescaled = raw / top if top > 0 else np.zeros_like(raw)
    return QualityVector(raw=raw, rescaled=rescaled)


def regularization_lambda(eta: float, size: int, gamma_r: float, day: int) -> float:
    """Weight of the pull toward uniform, eta * K * gamma_r ** day"""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if not 0.0 < gamma_r <= 1.0:
        raise ValueError("gamma_r must lie in (0, 1]")
    if day < 0:
        raise ValueError("day cannot be negative")
    return eta * size * gamma_r ** day


def loss_gradient(qtilde, w: WeightVector, lam: float, alpha: float) -> np.ndarray:
    """
    Gradient -Q_tilde + lambda (w - u), clipped to [-10/alpha, 10/alpha]

    Args:
        qtilde: QualityVector or rescaled quality values
        w: current repartition
        lam: regularization weight, non-negative
        alpha: learning rate
    """
    if lam < 0:
        raise ValueError("lambda cannot be negative")
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    rescaled = qtilde.rescaled if isinstance(qtilde, QualityVector) else as_vector(qtilde)
    if rescaled.size != w.size:
        raise ValueError("Quality and weights differ in length")

    uniform = np.full(w.size, 1.0 / w.size)
    gradient = -rescaled + lam * (w.weights - uniform)
    bound = CLIP_SCALE / alpha
    return np.clip(gradient, -bound, bound)


def exponentiated_update(w: WeightVector, grad, alpha: float) -> WeightVector:
    """
    Multiplicative update w_i * exp(-alpha * grad_i), renormalized onto the simplex

    The largest exponent among the live weights is subtracted before exponentiation. Zero
    weights stay zero.
    """
    gradient = as_vector(grad)
    if gradient.size != w.size:
        raise ValueError("Gradient and weights differ in length")
    if not np.all(np.isfinite(gradient)):
        raise ValueError("Gradient must be finite")

    live = w.weights > 0
    if not live.any():
        raise ValueError("All weights are zero")

    exponents = -alpha * gradient
    exponents = np.where(live, exponents - exponents[live].max(), 0.0)
    updated = np.where(live, w.weights * np.exp(exponents), 0.0)

    total = updated.sum()
    if total <= 0:
        raise ValueError("Weights underflowed during the update")
    return WeightVector(weights=updated / total)


def partition_step(acc: MediaObjectAccumulators, obs: EpochObservation, w: WeightVector,
                   params: PartitionerParams, day: int,
                   allocated: Optional[np.ndarray] = None) -> Tuple[WeightVector, MediaObjectAccumulators]:
    """
    One epoch of budget partitioning

    Discounted quantities are updated with the epoch first, then the quality, the regularization
    weight and the clipped gradient are computed and the weights move along it.

    Args:
        acc: accumulators before the epoch
        obs: preprocessed observation of the epoch
        w: repartition used during the epoch
        params: partitioner parameters
        day: days elapsed, drives the decay of the regularization
        allocated: budgets given to each media object during the epoch; the spend is used when
            omitted

    Returns:
        The repartition for the next epoch and the updated accumulators
    """
    if not obs.size == w.size == acc.size:
        raise ValueError("Observation, weights and accumulators differ in length")

    budgets = obs.spend if allocated is None else as_vector(allocated)
    acc = update_discounted(acc, obs, budgets, params.discount_gamma)

    qualities = quality(acc, epoch_budget=float(budgets.sum()) or 1.0)
    lam = regularization_lambda(params.exploration_eta, w.size, params.regularization_discount, day)
    gradient = loss_gradient(qualities, w, lam, params.learning_rate)

    return exponentiated_update(w, gradient, params.learning_rate), acc
