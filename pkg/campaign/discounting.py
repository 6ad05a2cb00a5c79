import math
import numpy as np

from campaign.models import CampaignConfig, EpochObservation, MediaObjectAccumulators, as_vector


def discount_from_horizon(n_epochs: float, exact: bool = True) -> float:
    """
    Discount factor that forgets data older than n_epochs

    Args:
        n_epochs: time scale, solved from gamma ** n_epochs = 1/e
        exact: False gives the first order approximation 1 - 1/n_epochs

    Returns:
        Discount factor in (0, 1)
    """
    if n_epochs <= 0:
        raise ValueError("The horizon must be positive")
    if exact:
        return math.exp(-1.0 / n_epochs)
    return 1.0 - 1.0 / n_epochs


def budget_per_epoch_per_media_object(config: CampaignConfig) -> float:
    """Average budget per epoch per media object, compared against cpc_goal to judge exploration"""
    return config.total_budget / (config.epochs * config.num_media_objects)


def update_discounted(acc: MediaObjectAccumulators, obs: EpochObservation,
                      allocated, gamma: float) -> MediaObjectAccumulators:
    """
    Fold one epoch into the discounted clicks and budgets

    C_hat_t = C_t + gamma * C_hat_(t-1), same rule for the budgets. The accumulators start at
    zero so the first epoch reduces to C_hat_0 = C_0 and B_hat_0 = B_0.

    Args:
        acc: accumulators before the epoch
        obs: observation of the epoch, without missing cells
        allocated: budgets assigned to the media objects for the epoch
        gamma: discount factor in [0, 1]

    Returns:
        New accumulators, the input is left untouched
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"Discount factor {gamma} is outside [0, 1]")

    budgets = as_vector(allocated)
    clicks = obs.clicks
    if budgets.size != acc.size or clicks.size != acc.size:
        raise ValueError("Observation and accumulators differ in size")
    if np.isnan(clicks).any() or np.isnan(budgets).any():
        raise ValueError("Preprocess observations before discounting")
    if np.any(clicks < 0) or np.any(budgets < 0):
        raise ValueError("Clicks and budgets must be non-negative")

    return acc.model_copy(update={
        'disc_clicks': clicks + gamma * acc.disc_clicks,
        'disc_budgets': budgets + gamma * acc.disc_budgets,
        'epochs_seen': acc.epochs_seen + 1,
    })
