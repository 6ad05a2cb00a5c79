import logging
import os

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from campaign.models import as_vector

logger = logging.getLogger(__name__)

PROFILE_TOLERANCE = 1e-9


class SpendProfile(BaseModel):
    """Ideal cumulative spend at the end of every epoch"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ideal_cumulative: np.ndarray

    @field_validator('ideal_cumulative', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @field_validator('ideal_cumulative')
    @classmethod
    def non_decreasing(cls, v):
        if v.size == 0:
            raise ValueError("Spend profile is empty")
        if v[0] < 0 or np.any(np.diff(v) < -PROFILE_TOLERANCE):
            raise ValueError("Spend profile must be non-negative and non-decreasing")
        return v

    @property
    def epochs(self) -> int:
        return self.ideal_cumulative.size

    @property
    def total_budget(self) -> float:
        return float(self.ideal_cumulative[-1])

    @property
    def ideal_epoch_budget(self) -> np.ndarray:
        return np.diff(self.ideal_cumulative, prepend=0.0)

    def scaled(self, total_budget: float) -> "SpendProfile":
        """Same shape, ending at total_budget"""
        if self.total_budget <= 0:
            return SpendProfile.uniform(total_budget, self.epochs)
        return SpendProfile(ideal_cumulative=self.ideal_cumulative * total_budget / self.total_budget)

    @classmethod
    def uniform(cls, total_budget: float, epochs: int) -> "SpendProfile":
        return cls(ideal_cumulative=total_budget * np.arange(1, epochs + 1) / epochs)

    @classmethod
    def from_csv(cls, path: str, total_budget: float, epochs: int) -> "SpendProfile":
        """
        Load a profile CSV with columns epoch and ideal_cumulative

        The last value must match the campaign budget.
        """
        if not os.path.exists(path):
            raise FileNotFoundError(f"Profile file not found at {path}")

        frame = pd.read_csv(path)
        missing_columns = [col for col in ('epoch', 'ideal_cumulative') if col not in frame.columns]
        if missing_columns:
            raise ValueError(f"Profile file lacks columns {missing_columns}")

        frame = frame.sort_values('epoch')
        if len(frame) != epochs:
            raise ValueError(f"Profile has {len(frame)} epochs, the campaign has {epochs}")

        profile = cls(ideal_cumulative=frame['ideal_cumulative'].to_numpy(dtype=float))
        if abs(profile.total_budget - total_budget) > PROFILE_TOLERANCE * max(1.0, total_budget):
            raise ValueError(f"Profile ends at {profile.total_budget}, the budget is {total_budget}")

        logger.info(f"Loaded spend profile over {epochs} epochs from {path}")
        return profile


def pacing_step(ideal_spent: float, actual_spent: float, ideal_next_budget: float,
                eta: float, epochs_left: int) -> float:
    """
    Budget of the next epoch, corrected toward the ideal profile

    B_next = B_ideal_next + eta * (S_ideal - S) / epochs_left, floored at 0. An aggressiveness
    larger than the epochs left is clamped to them.

    Args:
        ideal_spent: ideal cumulative spend so far
        actual_spent: actual cumulative spend so far
        ideal_next_budget: ideal budget of the next epoch
        eta: aggressiveness, at least 1
        epochs_left: epochs still to run, at least 1
    """
    if epochs_left < 1:
        raise ValueError("The campaign is over")
    if eta < 1:
        raise ValueError("Aggressiveness must be at least 1")
    if eta > epochs_left:
        logger.warning(f"Aggressiveness {eta} exceeds the {epochs_left} epochs left, clamping")
        eta = epochs_left

    budget = ideal_next_budget + eta * (ideal_spent - actual_spent) / epochs_left
    return max(0.0, budget)


class Pacer:
    """Keeps the cumulative spend of a campaign on its profile"""

    def __init__(self, profile: SpendProfile, aggressiveness: float):
        if aggressiveness < 1:
            raise ValueError("Aggressiveness must be at least 1")
        self.profile = profile
        self.aggressiveness = aggressiveness
        self._clamp_reported = False

    def next_budget(self, epoch: int, actual_cumulative: float) -> float:
        """Total budget of epoch + 1 given the cumulative spend at the end of epoch"""
        if not 0 <= epoch < self.profile.epochs - 1:
            raise ValueError(f"No epoch follows epoch {epoch}")

        epochs_left = self.profile.epochs - (epoch + 1)
        eta = self.aggressiveness
        if eta > epochs_left:
            if not self._clamp_reported:
                logger.warning(f"Aggressiveness {eta} exceeds the {epochs_left} epochs left, "
                               f"clamping from now on")
                self._clamp_reported = True
            eta = float(epochs_left)

        return pacing_step(
            ideal_spent=float(self.profile.ideal_cumulative[epoch]),
            actual_spent=actual_cumulative,
            ideal_next_budget=float(self.profile.ideal_epoch_budget[epoch + 1]),
            eta=eta,
            epochs_left=epochs_left,
        )
