import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional

HOURS_PER_DAY = 24
SIMPLEX_TOLERANCE = 1e-9
# zero weights are lifted to this value when a vector is first built
WEIGHT_FLOOR = 1e-12


def as_vector(value) -> np.ndarray:
    """Coerce a list or array to a 1-d float array"""
    vector = np.asarray(value, dtype=float)
    if vector.ndim != 1:
        raise ValueError("Expected a one-dimensional vector")
    return vector


class CampaignConfig(BaseModel):
    """Campaign and optimizer parameters, read from the plan file"""

    total_budget: float = Field(576000.0, ge=0, description="Money available for the whole campaign")
    epochs: int = Field(720, ge=1, description="Number of decision epochs T")
    num_media_objects: int = Field(10, ge=1, description="Number of media objects K")
    day_parting: bool = Field(True, description="Run one optimizer per hour of the day")
    cpc_goal: float = Field(0.5, gt=0, description="Target cost per click")
    repetitions: int = Field(20, ge=1, description="Repetitions E averaged per stack")

    learning_rate: float = Field(0.5, gt=0, description="Exponentiated gradient learning rate alpha")
    discount_gamma: float = Field(0.87, ge=0, le=1, description="Discount of past clicks and budgets")
    exploration_eta: float = Field(1.0, gt=0, description="Exploration weight of the regularizer")
    regularization_discount: float = Field(0.95, gt=0, le=1, description="Daily decay of the regularizer")

    delivery_threshold: float = Field(0.95, gt=0, le=1, description="Under-delivery threshold tau")
    aggressiveness: float = Field(5.0, ge=1, description="Pacing aggressiveness")

    bid_lower: float = Field(0.05, ge=0, description="Lowest base bid allowed")
    bid_upper: float = Field(5.0, gt=0, description="Highest base bid allowed")
    initial_bid: float = Field(3.5, gt=0, description="Base bid of every media object at launch")
    budget_min: float = Field(0.01, ge=0, description="Budgets below this are treated as unset")
    rng_seed: int = Field(2019, ge=0, description="Mixed into the seeds of the algorithm-internal random streams")

    nadam_mu: float = Field(0.9, gt=0, lt=1)
    nadam_nu: float = Field(0.999, gt=0, lt=1)
    nadam_epsilon: float = Field(1e-8, gt=0)
    nadam_step_size: Optional[float] = Field(None, gt=0, description="Defaults to 5% of the bid range")

    exp3_gamma: float = Field(0.1, gt=0, le=1)
    exp3_smoothing: float = Field(0.87, ge=0, lt=1)
    lop_alpha_lower: float = Field(0.5, gt=0, lt=1)
    lop_alpha_upper: float = Field(2.0, gt=1)
    pst_down_multiplier: float = Field(0.9, gt=0, lt=1)
    pst_up_multiplier: float = Field(1.05, gt=1)
    pst_underdelivery_ratio: float = Field(0.95, gt=0, lt=1)

    ideal_profile: Optional[List[float]] = Field(None, description="Ideal cumulative spend per epoch")
    profile_file: Optional[str] = Field(None, description="CSV with columns epoch, ideal_cumulative")

    @model_validator(mode='after')
    def check_consistency(self):
        if self.bid_lower >= self.bid_upper:
            raise ValueError("bid_lower must be smaller than bid_upper")
        if not self.bid_lower <= self.initial_bid <= self.bid_upper:
            raise ValueError("initial_bid must lie within [bid_lower, bid_upper]")
        if self.aggressiveness > self.epochs:
            raise ValueError("aggressiveness cannot exceed the number of epochs")
        if self.day_parting and self.epochs % HOURS_PER_DAY != 0:
            raise ValueError("day parting needs a whole number of days of epochs")
        if self.ideal_profile is not None and len(self.ideal_profile) != self.epochs:
            raise ValueError("ideal_profile needs one value per epoch")
        return self

    @property
    def bid_step_size(self) -> float:
        if self.nadam_step_size is not None:
            return self.nadam_step_size
        return 0.05 * (self.bid_upper - self.bid_lower)

    @property
    def epochs_per_slot(self) -> int:
        return self.epochs // HOURS_PER_DAY if self.day_parting else self.epochs


class WeightVector(BaseModel):
    """Budget repartition over the media objects, a point of the simplex"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray

    @field_validator('weights', mode='before')
    @classmethod
    def coerce_weights(cls, v):
        return as_vector(v)

    @field_validator('weights')
    @classmethod
    def on_simplex(cls, v):
        if v.size == 0:
            raise ValueError("Weight vector is empty")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("Weights must be finite and non-negative")
        if abs(v.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"Weights sum to {v.sum()!r}, not 1")
        return v

    @property
    def size(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, size: int) -> "WeightVector":
        return cls(weights=np.full(size, 1.0 / size))

    @classmethod
    def normalized(cls, values, floor: Optional[float] = None) -> "WeightVector":
        """
        Build a weight vector from non-negative values by normalization

        Args:
            values: non-negative values, at least one positive
            floor: when set, values below it are lifted to it before normalizing
        """
        vector = as_vector(values)
        if np.any(vector < 0) or not np.all(np.isfinite(vector)):
            raise ValueError("Cannot normalize negative or non-finite values")
        if floor is not None:
            vector = np.maximum(vector, floor)
        total = vector.sum()
        if total <= 0:
            raise ValueError("Cannot normalize an all-zero vector")
        return cls(weights=vector / total)

    @classmethod
    def initial(cls, values) -> "WeightVector":
        """Starting repartition, zero entries floored so they can still explore"""
        return cls.normalized(values, floor=WEIGHT_FLOOR)

    @classmethod
    def from_budgets(cls, budgets) -> "WeightVector":
        """Repartition implied by a budget vector, uniform when nothing is allocated"""
        vector = np.clip(as_vector(budgets), 0.0, None)
        if vector.sum() <= 0:
            return cls.uniform(vector.size)
        return cls.normalized(vector)


class EpochObservation(BaseModel):
    """What the market reports for one epoch; NaN marks a missing cell"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    impressions: np.ndarray
    clicks: np.ndarray
    spend: np.ndarray

    @field_validator('impressions', 'clicks', 'spend', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @field_validator('impressions', 'clicks', 'spend')
    @classmethod
    def non_negative(cls, v):
        if np.any(v[~np.isnan(v)] < 0):
            raise ValueError("Observations must be non-negative")
        return v

    @model_validator(mode='after')
    def check_shapes(self):
        if not self.impressions.size == self.clicks.size == self.spend.size:
            raise ValueError("Observation vectors differ in length")
        both = ~np.isnan(self.clicks) & ~np.isnan(self.impressions)
        if np.any(self.clicks[both] > self.impressions[both] + 1e-9):
            raise ValueError("More clicks than impressions")
        return self

    @property
    def size(self) -> int:
        return self.impressions.size

    def has_gaps(self) -> bool:
        return bool(np.isnan(self.impressions).any() or np.isnan(self.clicks).any()
                    or np.isnan(self.spend).any())

    def estimated_ctr(self) -> np.ndarray:
        """Clicks over impressions, 0 where nothing was bought"""
        impressions = np.nan_to_num(self.impressions)
        clicks = np.nan_to_num(self.clicks)
        return np.divide(clicks, impressions, out=np.zeros_like(clicks), where=impressions > 0)

    @classmethod
    def zeros(cls, size: int) -> "EpochObservation":
        return cls(impressions=np.zeros(size), clicks=np.zeros(size), spend=np.zeros(size))


class MediaObjectAccumulators(BaseModel):
    """Per media object optimizer state, all vectors indexed in configuration order"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    disc_clicks: np.ndarray
    disc_budgets: np.ndarray
    bids: np.ndarray
    nadam_m: np.ndarray
    nadam_n: np.ndarray
    # last estimated median winning bid, reused for epochs without impressions
    beta: np.ndarray
    nadam_step: int = Field(0, ge=0)
    nadam_mu_product: float = Field(1.0, ge=0, le=1)
    epochs_seen: int = Field(0, ge=0)

    @field_validator('disc_clicks', 'disc_budgets', 'bids', 'nadam_m', 'nadam_n', 'beta', mode='before')
    @classmethod
    def coerce_vector(cls, v):
        return as_vector(v)

    @field_validator('disc_clicks', 'disc_budgets', 'nadam_n')
    @classmethod
    def non_negative(cls, v):
        if np.any(v < 0):
            raise ValueError("Accumulated quantities must be non-negative")
        return v

    @model_validator(mode='after')
    def check_shapes(self):
        sizes = {self.disc_clicks.size, self.disc_budgets.size, self.bids.size,
                 self.nadam_m.size, self.nadam_n.size, self.beta.size}
        if len(sizes) != 1:
            raise ValueError("Accumulator vectors differ in length")
        return self

    @property
    def size(self) -> int:
        return self.bids.size

    @classmethod
    def initial(cls, size: int, initial_bid: float) -> "MediaObjectAccumulators":
        """State at campaign start: no history, zero moments, every bid at initial_bid"""
        return cls(
            disc_clicks=np.zeros(size),
            disc_budgets=np.zeros(size),
            bids=np.full(size, float(initial_bid)),
            nadam_m=np.zeros(size),
            nadam_n=np.zeros(size),
            beta=np.full(size, float(initial_bid)),
        )
