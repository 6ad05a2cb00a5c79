import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel
from rich.console import Console
from rich.table import Table

from evaluation.metrics import RunMetrics, mean_metric, smooth

logger = logging.getLogger(__name__)

PER_EPOCH_COLUMNS = ['repetition', 'epoch', 'algorithm', 'spend', 'clicks', 'cumulative_cpc',
                     'rescaled_kld', 'slot', 'day', 'budget', 'campaign_budget', 'impressions']
SERIES_METRICS = ['spend', 'clicks', 'cumulative_cpc', 'rescaled_kld']


class SummaryRow(BaseModel):
    """One line of a result table, averaged over repetitions"""

    algo: str
    spt: float
    clk: float
    cpc: float
    kld: float
    repetitions: int


def _group_by_algorithm(runs: Sequence[RunMetrics]) -> Dict[str, List[RunMetrics]]:
    groups: Dict[str, List[RunMetrics]] = {}
    for run in runs:
        groups.setdefault(run.algorithm, []).append(run)
    return groups


def summarize(runs: Sequence[RunMetrics], baseline: str) -> List[SummaryRow]:
    """
    Average every algorithm over its repetitions

    spt is the spend in percent of the campaign budget, 0 for campaigns without budget, and clk
    the clicks in percent of the baseline's clicks.

    Raises:
        ValueError: when the baseline has no runs or no clicks
    """
    groups = _group_by_algorithm(runs)
    if baseline not in groups:
        raise ValueError(f"No runs of the baseline {baseline}")

    baseline_clicks = mean_metric(groups[baseline], 'total_clicks')
    if baseline_clicks == 0:
        raise ValueError(f"Baseline {baseline} got no clicks")

    rows = []
    for algorithm, group in groups.items():
        spent = [run.total_spend / run.campaign_budget if run.campaign_budget > 0 else 0.0
                 for run in group]
        rows.append(SummaryRow(
            algo=algorithm,
            spt=100.0 * float(np.mean(spent)),
            clk=100.0 * mean_metric(group, 'total_clicks') / baseline_clicks,
            cpc=mean_metric(group, 'total_cpc'),
            kld=mean_metric(group, 'final_kld'),
            repetitions=len(group),
        ))
    return rows


def summary_frame(rows: Sequence[SummaryRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows])


def per_epoch_frame(runs: Sequence[RunMetrics]) -> pd.DataFrame:
    """Long table with one row per repetition, algorithm and epoch"""
    frames = []
    for run in runs:
        epochs = np.arange(run.epochs)
        frames.append(pd.DataFrame({
            'repetition': run.repetition,
            'epoch': epochs,
            'algorithm': run.algorithm,
            'spend': run.spend,
            'clicks': run.clicks,
            'cumulative_cpc': run.cumulative_cpc,
            'rescaled_kld': run.rescaled_kld,
            'slot': run.slot.astype(int) if run.slot is not None else 0,
            'day': run.day.astype(int) if run.day is not None else epochs,
            'budget': run.budget if run.budget is not None else np.nan,
            'campaign_budget': run.campaign_budget,
            'impressions': run.impressions if run.impressions is not None else np.nan,
        }))
    if not frames:
        return pd.DataFrame(columns=PER_EPOCH_COLUMNS)
    return pd.concat(frames, ignore_index=True)[PER_EPOCH_COLUMNS]


def runs_from_per_epoch(frame: pd.DataFrame) -> List[RunMetrics]:
    """Rebuild RunMetrics from a per epoch table written by per_epoch_frame"""
    required = ['repetition', 'epoch', 'algorithm', 'spend', 'clicks', 'rescaled_kld']
    missing_columns = [col for col in required if col not in frame.columns]
    if missing_columns:
        raise ValueError(f"Per epoch table lacks columns {missing_columns}")

    runs = []
    for (algorithm, repetition), group in frame.groupby(['algorithm', 'repetition'], sort=False):
        group = group.sort_values('epoch')
        if 'campaign_budget' in group.columns:
            campaign_budget = float(group['campaign_budget'].iloc[0])
        else:
            campaign_budget = float(group['budget'].sum())
        runs.append(RunMetrics(
            algorithm=str(algorithm),
            repetition=int(repetition),
            campaign_budget=campaign_budget,
            spend=group['spend'].to_numpy(dtype=float),
            clicks=group['clicks'].to_numpy(dtype=float),
            rescaled_kld=group['rescaled_kld'].to_numpy(dtype=float),
            impressions=group['impressions'].to_numpy(dtype=float) if 'impressions' in group else None,
            budget=group['budget'].to_numpy(dtype=float) if 'budget' in group else None,
            slot=group['slot'].to_numpy(dtype=float) if 'slot' in group else None,
            day=group['day'].to_numpy(dtype=float) if 'day' in group else None,
        ))
    return runs


def series_frame(runs: Sequence[RunMetrics]) -> pd.DataFrame:
    """
    Mean over repetitions of every per epoch metric, with a smoothed copy of each

    Infinite CPCs of epochs before the first click are left out of the mean.
    """
    per_epoch = per_epoch_frame(runs)
    if per_epoch.empty:
        return pd.DataFrame(columns=['algorithm', 'epoch'] + SERIES_METRICS)

    values = per_epoch[['algorithm', 'epoch'] + SERIES_METRICS].replace([np.inf, -np.inf], np.nan)
    series = values.groupby(['algorithm', 'epoch'], sort=False).mean().reset_index()
    for metric in SERIES_METRICS:
        series[f'{metric}_smoothed'] = (
            series.groupby('algorithm', sort=False)[metric]
            .transform(lambda column: smooth(column.to_numpy()).to_numpy())
        )
    return series


def _json_number(value: float) -> Optional[float]:
    return None if math.isinf(value) or math.isnan(value) else value


def write_frame(frame: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")


def write_summary(rows: Sequence[SummaryRow], path: str, baseline: str,
                  failures: Optional[List[Dict[str, Any]]] = None) -> None:
    """Summary JSON with one entry per algorithm; infinite CPCs become null"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    payload = {
        'baseline': baseline,
        'rows': [{key: _json_number(value) if isinstance(value, float) else value
                  for key, value in row.model_dump().items()} for row in rows],
        'failures': failures or [],
    }
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2)
    logger.info(f"Summary saved to {path}")


def print_summary(rows: Sequence[SummaryRow], title: str = "Results",
                  console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title=title)
    for column in ("algo", "spt", "clk", "cpc", "kld", "reps"):
        table.add_column(column, justify="left" if column == "algo" else "right")

    for row in rows:
        table.add_row(row.algo, f"{row.spt:.1f} %", f"{row.clk:.1f} %", f"{row.cpc:.3f}",
                      f"{row.kld:.3f}", str(row.repetitions))
    console.print(table)
