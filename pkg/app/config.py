"""
Runtime configuration using Pydantic Settings.
Loads from environment variables with .env file support.

Experiment parameters live in SimConfig files (see app.simulation.sim_config);
this module only covers process-level knobs.
"""

from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings with validation."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="EDGECODE_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "edgecode"
    APP_VERSION: str = "0.1.0"
    ENVIRONMENT: Literal["development", "staging", "production"] = "development"
    DEBUG: bool = False

    # Data
    DATA_DIR: Path = Path("data")

    # Execution
    WORKERS: int = Field(default=4, ge=1)
    EMBED_CHUNK_ROWS: int = Field(default=4096, ge=1)

    # Monitoring
    METRICS_ENABLED: bool = True

    # Logging
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"


# Global settings instance
settings = Settings()
