"""
Environment configuration.

Values come from the process environment, optionally seeded from a `.env`
file, and are validated once.
"""
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from pfsgld.exceptions import ConfigError

LOG_LEVELS = {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}


class Settings(BaseModel):
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    log_level: str = "INFO"
    output_dir: Path = Path("./runs")
    record_timing: bool = True
    reference_dir: Path = Path("./runs/reference")

    @field_validator("log_level")
    @classmethod
    def _level(cls, v: str) -> str:
        v = v.upper()
        if v not in LOG_LEVELS:
            raise ValueError(f"unknown log level {v}")
        return v

    @classmethod
    def from_env(cls, env_file: Optional[str] = None) -> "Settings":
        load_dotenv(env_file)
        values = {
            "threads": os.environ.get("PFSGLD_THREADS"),
            "log_level": os.environ.get("PFSGLD_LOG_LEVEL"),
            "output_dir": os.environ.get("PFSGLD_OUTPUT_DIR"),
            "record_timing": os.environ.get("PFSGLD_RECORD_TIMING"),
            "reference_dir": os.environ.get("PFSGLD_REFERENCE_DIR"),
        }
        try:
            return cls(**{k: v for k, v in values.items() if v not in (None, "")})
        except ValidationError as e:
            raise ConfigError(f"Invalid PFSGLD_* environment settings: {e}") from e

