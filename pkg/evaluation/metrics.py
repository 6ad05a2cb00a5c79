import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import rel_entr

from campaign.models import WeightVector, as_vector

SMOOTHING_WINDOW = 5


def kl_divergence_rescaled(w, size: Optional[int] = None) -> float:
    """
    KL divergence from the uniform repartition divided by log(K)

    0 for the uniform split, 1 when the whole budget goes to one media object. A single media
    object has no freedom and gives 0.

    Args:
        w: WeightVector or weights on the simplex
        size: number of media objects, defaults to the length of w
    """
    weights = w.weights if isinstance(w, WeightVector) else as_vector(w)
    size = size or weights.size
    if size != weights.size:
        raise ValueError("Weights and number of media objects differ")
    if size == 1:
        return 0.0

    divergence = rel_entr(weights, np.full(size, 1.0 / size)).sum() / math.log(size)
    return float(min(max(divergence, 0.0), 1.0))


def cumulative_cpc(spend_history, click_history) -> float:
    """Total spend over total clicks, inf when nothing was clicked"""
    spend, clicks = as_vector(spend_history), as_vector(click_history)
    if spend.size != clicks.size:
        raise ValueError("Spend and click histories differ in length")
    total_clicks = clicks.sum()
    if total_clicks == 0:
        return math.inf
    return float(spend.sum() / total_clicks)


def running_cpc(spend_history, click_history) -> np.ndarray:
    """cumulative_cpc after every epoch"""
    spend, clicks = np.cumsum(as_vector(spend_history)), np.cumsum(as_vector(click_history))
    return np.divide(spend, clicks, out=np.full(spend.size, np.inf), where=clicks > 0)


def smooth(series, window: int = SMOOTHING_WINDOW) -> pd.Series:
    """Centered moving average, shorter windows at the edges"""
    return pd.Series(series, dtype=float).rolling(window, center=True, min_periods=1).mean()


class RunMetrics(BaseModel):
    """
    Per epoch results of one algorithm stack in one repetition

    Epochs are in chronological order. Under day parting slot tells which hour-of-day optimizer
    produced every epoch.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    algorithm: str
    repetition: int = Field(..., ge=0)
    campaign_budget: float = Field(..., ge=0)
    spend: np.ndarray
    clicks: np.ndarray
    rescaled_kld: np.ndarray
    impressions: Optional[np.ndarray] = None
    budget: Optional[np.ndarray] = None
    slot: Optional[np.ndarray] = None
    day: Optional[np.ndarray] = None

    @field_validator('spend', 'clicks', 'rescaled_kld', 'impressions', 'budget', 'slot', 'day',
                     mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return None if v is None else as_vector(v)

    @model_validator(mode='after')
    def check_lengths(self):
        length = self.spend.size
        for name in ('clicks', 'rescaled_kld', 'impressions', 'budget', 'slot', 'day'):
            value = getattr(self, name)
            if value is not None and value.size != length:
                raise ValueError(f"{name} has {value.size} epochs, spend has {length}")
        if np.any(self.rescaled_kld < 0) or np.any(self.rescaled_kld > 1):
            raise ValueError("Rescaled KL divergence must lie in [0, 1]")
        return self

    @property
    def epochs(self) -> int:
        return self.spend.size

    @property
    def cumulative_cpc(self) -> np.ndarray:
        return running_cpc(self.spend, self.clicks)

    @property
    def total_spend(self) -> float:
        return float(self.spend.sum())

    @property
    def total_clicks(self) -> float:
        return float(self.clicks.sum())

    @property
    def total_cpc(self) -> float:
        return cumulative_cpc(self.spend, self.clicks)

    @property
    def final_kld(self) -> float:
        """Divergence at the last epoch, averaged over hour slots"""
        if self.epochs == 0:
            return 0.0
        if self.slot is None:
            return float(self.rescaled_kld[-1])
        last = pd.Series(self.rescaled_kld).groupby(self.slot).last()
        return float(last.mean())


def mean_metric(runs: Sequence[RunMetrics], metric: str) -> float:
    return float(np.mean([getattr(run, metric) for run in runs]))
