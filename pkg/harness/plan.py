import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from campaign.config import Settings, deep_merge, settings as default_settings
from campaign.models import HOURS_PER_DAY, CampaignConfig
from harness.stacks import parse_stack
from market.models import SimulatorConfig
from optimization.pacer import SpendProfile

logger = logging.getLogger(__name__)

TABLE1_STACKS = ['vnl', 'mab', 'lop', 'skt1']


class ExperimentPlan(BaseModel):
    """Everything one experiment needs: campaign, market, stacks and outputs"""

    campaign: CampaignConfig = Field(default_factory=CampaignConfig)
    simulator: SimulatorConfig = Field(default_factory=SimulatorConfig)
    stacks: List[str] = Field(default_factory=lambda: list(TABLE1_STACKS))
    baseline: Optional[str] = None
    slot: Union[Literal['all'], int] = 'all'
    master_seed: int = Field(2019, ge=0)
    output_dir: str = "results"
    truth_file: Optional[str] = None
    write_trajectories: bool = True

    @model_validator(mode='before')
    @classmethod
    def align_media_objects(cls, data: Any) -> Any:
        if isinstance(data, dict):
            campaign, simulator = data.get('campaign'), data.get('simulator')
            if isinstance(campaign, dict) and 'num_media_objects' in campaign:
                simulator = dict(simulator or {})
                simulator.setdefault('num_media_objects', campaign['num_media_objects'])
                data = {**data, 'simulator': simulator}
        return data

    @field_validator('stacks')
    @classmethod
    def known_stacks(cls, v):
        if not v:
            raise ValueError("At least one stack is needed")
        for name in v:
            parse_stack(name)
        if len(set(v)) != len(v):
            raise ValueError("Stacks must be unique")
        return v

    @model_validator(mode='after')
    def check_consistency(self):
        if self.simulator.num_media_objects != self.campaign.num_media_objects:
            raise ValueError("Simulator and campaign disagree on the number of media objects")
        if self.baseline is None:
            self.baseline = self.stacks[0]
        if self.baseline not in self.stacks:
            raise ValueError(f"Baseline {self.baseline} is not one of the stacks")
        if self.slot != 'all':
            if not self.campaign.day_parting:
                raise ValueError("A single slot needs day parting")
            if not 0 <= self.slot < HOURS_PER_DAY:
                raise ValueError(f"Slot {self.slot} is outside 0..{HOURS_PER_DAY - 1}")
        return self

    @property
    def slots(self) -> List[int]:
        if not self.campaign.day_parting:
            return [0]
        if self.slot == 'all':
            return list(range(HOURS_PER_DAY))
        return [self.slot]


def load_plan(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
              settings: Optional[Settings] = None) -> ExperimentPlan:
    """
    Build an ExperimentPlan from a JSON file, the environment and explicit overrides

    Later sources win: the file, then SKOTT_CAMPAIGN / SKOTT_SIMULATOR settings, then overrides.

    Raises:
        FileNotFoundError: when path or the campaign's profile file does not exist
        pydantic.ValidationError: when the merged plan is invalid
    """
    settings = settings or default_settings
    data: Dict[str, Any] = {'master_seed': settings.MASTER_SEED, 'output_dir': settings.OUTPUT_DIR}

    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"Plan file not found at {path}")
        with open(path, 'r') as f:
            data = deep_merge(data, json.load(f))
        logger.info(f"Loaded plan from {path}")

    data = deep_merge(data, {'campaign': settings.CAMPAIGN, 'simulator': settings.SIMULATOR})
    data = deep_merge(data, overrides or {})
    plan = ExperimentPlan(**data)

    campaign = plan.campaign
    if campaign.profile_file is not None and campaign.ideal_profile is None:
        profile = SpendProfile.from_csv(campaign.profile_file, campaign.total_budget, campaign.epochs)
        campaign = campaign.model_copy(update={'ideal_profile': profile.ideal_cumulative.tolist()})
        plan = plan.model_copy(update={'campaign': campaign})
    return plan
