import logging
import os
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from campaign.utils import safe_float_convert, safe_int_convert

logger = logging.getLogger(__name__)

# an ordered series of reals where NaN marks a missing entry
TimeSeries = pd.Series

OBSERVATION_FIELDS = ['impressions', 'clicks', 'spend']
OBSERVATION_COLUMNS = ['epoch', 'media_object_id'] + OBSERVATION_FIELDS


def _as_series(series: Union[TimeSeries, Sequence[float]]) -> TimeSeries:
    if isinstance(series, pd.Series):
        return series.astype(float)
    return pd.Series(series, dtype=float)


def _require_observation(series: TimeSeries) -> None:
    if series.notna().sum() == 0:
        raise ValueError("no valid observation")


def backward_fill(series: Union[TimeSeries, Sequence[float]]) -> TimeSeries:
    """
    Replace leading missing entries with the first valid observation

    Args:
        series: values with NaN for missing entries, at least one valid

    Returns:
        Series where only the leading run of NaN has changed
    """
    series = _as_series(series)
    _require_observation(series)
    return series.bfill(limit_area='outside')


def linear_interpolate(series: Union[TimeSeries, Sequence[float]]) -> TimeSeries:
    """
    Fill interior gaps on the line between the nearest valid neighbors

    Trailing gaps are left for wma_extend.
    """
    series = _as_series(series)
    return series.interpolate(method='linear', limit_area='inside')


def wma_extend(series: Union[TimeSeries, Sequence[float]]) -> TimeSeries:
    """
    Fill the trailing gap with weighted moving averages

    The entry after t valid values is (1*x_1 + ... + t*x_t) / (t(t+1)/2); later gaps reuse
    the values filled before them, so the window grows by one at each step.

    Args:
        series: a complete prefix followed only by missing entries

    Returns:
        Series without missing entries
    """
    series = _as_series(series)
    values = series.to_numpy(dtype=float, copy=True)
    missing = np.isnan(values)

    if not missing.any():
        return series.copy()

    first_gap = int(np.argmax(missing))
    if first_gap == 0:
        raise ValueError("no valid observation before the trailing gap")
    if not missing[first_gap:].all():
        raise ValueError("series has gaps before its trailing run, interpolate first")

    for position in range(first_gap, values.size):
        weights = np.arange(1, position + 1, dtype=float)
        values[position] = weights @ values[:position] / (position * (position + 1) / 2)

    return pd.Series(values, index=series.index, name=series.name)


def preprocess(series: Union[TimeSeries, Sequence[float]]) -> TimeSeries:
    """Backward fill, then linear interpolation, then weighted moving average extension"""
    series = _as_series(series)
    _require_observation(series)
    return wma_extend(linear_interpolate(backward_fill(series)))


def preprocess_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Preprocess every column of an epoch-indexed frame

    Columns without a single observation cannot be filled and are set to zero.
    """
    filled = frame.astype(float).copy()
    for column in filled.columns:
        if filled[column].notna().any():
            filled[column] = preprocess(filled[column])
        else:
            logger.warning(f"Column {column} has no valid observation yet, filling with zeros")
            filled[column] = 0.0
    return filled


class ObservationPreprocessor:
    """
    Fills gaps in exported market observations
    Reads (epoch, media_object_id, impressions, clicks, spend), missing cells allowed
    """

    def __init__(self, input_path: str, output_path: Optional[str] = None):
        """
        Args:
            input_path: CSV with the observation columns
            output_path: where to write the filled CSV, nothing is written when None
        """
        self.input_path = input_path
        self.output_path = output_path

    def load_data(self) -> pd.DataFrame:
        """
        Load the observations, empty cells and "nan" in any case become NaN
        """
        logger.info(f"Loading observations from {self.input_path}...")

        if not os.path.exists(self.input_path):
            raise FileNotFoundError(f"Observation file not found at {self.input_path}")

        header = pd.read_csv(self.input_path, nrows=0).columns
        missing_columns = [col for col in OBSERVATION_COLUMNS if col not in header]
        if missing_columns:
            raise ValueError(f"Observation file lacks columns {missing_columns}")

        converters = {field: safe_float_convert for field in OBSERVATION_FIELDS}
        converters.update({'epoch': safe_int_convert, 'media_object_id': str})
        frame = pd.read_csv(self.input_path, converters=converters, keep_default_na=False)

        return frame[OBSERVATION_COLUMNS]

    def fill(self, frame: pd.DataFrame) -> pd.DataFrame:
        """
        Fill every (media object, field) series over the epochs

        Returns:
            Long frame with the input columns and no missing cells
        """
        logger.info("Handling missing values...")

        # keep media objects in order of first appearance
        order = list(dict.fromkeys(frame['media_object_id']))
        filled_fields = {}
        for field in OBSERVATION_FIELDS:
            table = frame.pivot(index='epoch', columns='media_object_id', values=field)
            table = table.sort_index()[order]
            filled_fields[field] = preprocess_frame(table).stack(future_stack=True)

        filled = pd.DataFrame(filled_fields).reset_index()
        filled.columns = OBSERVATION_COLUMNS

        # imputed clicks cannot exceed imputed impressions
        filled['clicks'] = np.minimum(filled['clicks'], filled['impressions'])

        return filled

    def _save_data(self, frame: pd.DataFrame) -> None:
        """
        Save the filled observations to the CSV file
        """
        logger.info("Saving filled observations...")

        directory = os.path.dirname(self.output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        frame.to_csv(self.output_path, index=False)
        logger.info(f"Filled observations saved to {self.output_path}")

    def run(self) -> pd.DataFrame:
        frame = self.load_data()
        gaps = int(frame[OBSERVATION_FIELDS].isna().sum().sum())
        logger.info(f"Found {gaps} missing cells in {len(frame)} rows")

        filled = self.fill(frame)
        if self.output_path:
            self._save_data(filled)
        return filled
