"""
Configuration settings for the LookHere toolkit.
Holds numeric defaults, output locations and logging switches that can be
overridden from environment variables or a .env file.
"""

from typing import Literal

import torch
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Toolkit settings loaded from environment variables (LOOKHERE_*) or defaults.
    """
    # Application settings
    APP_NAME: str = "lookhere"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Numerics
    DEFAULT_DTYPE: Literal["float64", "float32"] = "float64"
    DEFAULT_SEED: int = 0

    # Output settings
    OUTPUT_DIR: str = "out"

    # Scalar tuning (candidate evaluations run in a thread pool)
    TUNING_WORKERS: int = 1

    # Synthetic demo
    DEMO_STEPS: int = 1000
    DEMO_BATCH_SIZE: int = 64
    DEMO_LEARNING_RATE: float = 1e-3

    model_config = SettingsConfigDict(
        env_prefix="LOOKHERE_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.DEFAULT_DTYPE == "float64" else torch.float32


# Global settings instance
settings = Settings()
