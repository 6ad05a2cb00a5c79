import math
from typing import Any

MISSING_MARKERS = {'', 'nan', '--', '---'}


def is_missing(value: Any) -> bool:
    """True for None, float NaN, empty cells and the literal "nan" in any case"""
    if value is None:
        return True
    if isinstance(value, float):
        return math.isnan(value)
    if isinstance(value, str):
        return value.strip().lower() in MISSING_MARKERS
    return False


def safe_float_convert(value: Any) -> float:
    """
    Convert a CSV cell to float, NaN when the cell is missing

    Raises ValueError for cells that are neither numbers nor missing markers.
    """
    if is_missing(value):
        return math.nan
    if isinstance(value, str):
        value = value.strip()
    try:
        return float(value)
    except (ValueError, TypeError):
        raise ValueError(f"Not a number: {value!r}")


def safe_int_convert(value: Any) -> int:
    """Convert a CSV cell holding an identifier or index to int"""
    number = safe_float_convert(value)
    if math.isnan(number):
        raise ValueError("Missing integer cell")
    return int(number)
