from pydantic.v1 import BaseSettings
from typing import Any, Dict


class Settings(BaseSettings):
    """Runtime settings, read from SKOTT_* environment variables and .env"""

    PROJECT_NAME: str = "SKOTT campaign optimization"
    VERSION: str = "1.0.0"

    LOG_LEVEL: str = "INFO"
    MAX_WORKERS: int = 4
    OUTPUT_DIR: str = "results"
    MASTER_SEED: int = 2019

    # overrides for any plan key, e.g. SKOTT_CAMPAIGN__EPOCHS=30
    CAMPAIGN: Dict[str, Any] = {}
    SIMULATOR: Dict[str, Any] = {}

    class Config:
        env_prefix = "SKOTT_"
        env_file = ".env"
        env_nested_delimiter = "__"
        case_sensitive = False


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Merge overrides into a copy of base, recursing into nested mappings"""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


settings = Settings()
