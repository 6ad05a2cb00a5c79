import hashlib
import json
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from campaign.models import as_vector

TruthField = Literal['ctr', 'itot', 'beta']


def _check_interval(name: str, interval: Tuple[float, float]) -> Tuple[float, float]:
    low, high = interval
    if low > high:
        raise ValueError(f"{name} interval has low {low} above high {high}")
    return interval


class ScheduleEntry(BaseModel):
    """Multiplier applied to one field of one media object from epoch to until_epoch, inclusive"""
    model_config = ConfigDict(frozen=True)

    epoch: int = Field(..., ge=0)
    media_object: int = Field(..., ge=0)
    field: TruthField
    multiplier: float = Field(..., ge=0)
    until_epoch: Optional[int] = Field(None, ge=0)

    @model_validator(mode='after')
    def check_window(self):
        if self.until_epoch is not None and self.until_epoch < self.epoch:
            raise ValueError("until_epoch cannot precede epoch")
        if self.field == 'beta' and self.multiplier <= 0:
            raise ValueError("beta multipliers must be positive")
        return self

    def active(self, epoch: int) -> bool:
        last = self.epoch if self.until_epoch is None else self.until_epoch
        return self.epoch <= epoch <= last


class SimulatorConfig(BaseModel):
    """Sampling intervals and fault modes of the synthetic market"""
    model_config = ConfigDict(frozen=True)

    num_media_objects: int = Field(10, ge=1)
    ctr_interval: Tuple[float, float] = (0.0005, 0.002)
    itot_interval: Tuple[float, float] = (1e4, 1e6)
    beta_interval: Tuple[float, float] = (0.5, 2.0)
    seed: int = 2019
    truth_schedule: List[ScheduleEntry] = Field(default_factory=list)
    daily_itot_amplitude: float = Field(0.0, ge=0, lt=1, description="Depth of the night drop in volume")
    gap_probability: float = Field(0.0, ge=0, lt=1, description="Chance that a reported cell is lost")

    @field_validator('ctr_interval')
    @classmethod
    def ctr_in_unit_interval(cls, v):
        _check_interval("ctr", v)
        if v[0] < 0 or v[1] > 1:
            raise ValueError("ctr interval must lie in [0, 1]")
        return v

    @field_validator('itot_interval')
    @classmethod
    def itot_non_negative(cls, v):
        _check_interval("itot", v)
        if v[0] < 0:
            raise ValueError("itot interval must be non-negative")
        return v

    @field_validator('beta_interval')
    @classmethod
    def beta_positive(cls, v):
        _check_interval("beta", v)
        if v[0] <= 0:
            raise ValueError("beta interval must be positive")
        return v


class MarketTruth(BaseModel):
    """Hidden market parameters of every media object"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ctr: np.ndarray
    itot: np.ndarray
    beta: np.ndarray
    schedule: List[ScheduleEntry] = Field(default_factory=list)
    daily_itot_amplitude: float = Field(0.0, ge=0, lt=1)

    @field_validator('ctr', 'itot', 'beta', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @model_validator(mode='after')
    def check_values(self):
        if not self.ctr.size == self.itot.size == self.beta.size:
            raise ValueError("Truth vectors differ in length")
        if np.any(self.ctr < 0) or np.any(self.ctr > 1):
            raise ValueError("ctr must lie in [0, 1]")
        if np.any(self.itot < 0):
            raise ValueError("itot cannot be negative")
        if np.any(self.beta <= 0):
            raise ValueError("beta must be positive")
        for entry in self.schedule:
            if entry.media_object >= self.ctr.size:
                raise ValueError(f"Schedule names media object {entry.media_object}, "
                                 f"the market has {self.ctr.size}")
        return self

    @property
    def size(self) -> int:
        return self.ctr.size

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ctr': self.ctr.tolist(),
            'itot': self.itot.tolist(),
            'beta': self.beta.tolist(),
            'schedule': [entry.model_dump() for entry in self.schedule],
            'daily_itot_amplitude': self.daily_itot_amplitude,
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, equal for equal truths"""
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()
