"""
Runtime configuration.

Values come from the process environment, optionally seeded from a ``.env``
file next to the working directory:

    DIDM_THREADS          worker cap for pair-parallel work
    DIDM_LOG_LEVEL        logging level name (INFO)
    DIDM_DEPTH            default metric depth L (2)
    DIDM_LIPSCHITZ_NORM   "power" or "exact"
    DIDM_OUTPUT_DIR       default experiment output directory
"""

import logging
import os
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from app.errors import ConfigError

load_dotenv()

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s — %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


class Settings(BaseModel):
    """Environment-derived settings; rebuilt on every ``get_settings()`` call."""

    threads: int | None = Field(None, ge=1, description="Cap on worker processes")
    log_level: str = Field("INFO", description="Logging level name")
    default_depth: int = Field(2, ge=0, description="Default metric depth L")
    lipschitz_norm: Literal["power", "exact"] = Field(
        "power", description="How layer operator norms are bounded"
    )
    output_dir: str = Field("results", description="Default experiment output directory")


_ENV_FIELDS = {
    "DIDM_THREADS": "threads",
    "DIDM_LOG_LEVEL": "log_level",
    "DIDM_DEPTH": "default_depth",
    "DIDM_LIPSCHITZ_NORM": "lipschitz_norm",
    "DIDM_OUTPUT_DIR": "output_dir",
}


def get_settings() -> Settings:
    """
    Read settings from the environment.

    Raises:
        ConfigError: An environment variable holds an invalid value.
    """
    raw = {
        field: os.getenv(env, "").strip()
        for env, field in _ENV_FIELDS.items()
        if os.getenv(env, "").strip()
    }
    try:
        return Settings(**raw)
    except ValidationError as exc:
        field = exc.errors()[0]["loc"][0]
        env = next(k for k, v in _ENV_FIELDS.items() if v == field)
        raise ConfigError(f"Invalid value for {env}: {exc.errors()[0]['msg']}") from exc


def resolve_workers(requested: int | None = None) -> int:
    """Worker count for a parallel job: requested (or CPU count) capped by DIDM_THREADS."""
    workers = requested or os.cpu_count() or 1
    cap = get_settings().threads
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(
        level=(level or get_settings().log_level).upper(),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
    )
