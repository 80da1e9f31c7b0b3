"""Application configuration management."""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Settings loaded from environment variables and an optional .env file."""

    # Application
    APP_ENV: str = Field(default="development")
    LOG_LEVEL: str = Field(default="INFO")
    LOG_DIR: str = Field(default="logs")
    LOG_TO_FILE: bool = Field(default=True)

    # Execution
    XATTN_THREADS: Optional[int] = Field(default=None, ge=1)
    XATTN_ATTENTION_CHUNK: int = Field(default=1024, ge=1)

    # Selection defaults
    XATTN_BLOCK_SIZE: int = Field(default=128, ge=1)
    XATTN_STRIDE: int = Field(default=8, ge=1)
    XATTN_TAU: float = Field(default=0.9, gt=0.0, le=1.0)
    XATTN_TOPK: int = Field(default=8, ge=1)
    XATTN_TOPRATIO: float = Field(default=0.27, gt=0.0, le=1.0)
    XATTN_SEED: int = Field(default=0)

    # Bench and calibration
    XATTN_BENCH_REPEATS: int = Field(default=5, ge=1)
    XATTN_CALIBRATION_EPSILON: float = Field(default=0.01, ge=0.0)
    XATTN_CALIBRATION_STEPS: int = Field(default=8, ge=1)

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True

    @property
    def threads(self) -> int:
        """Worker count used when --threads is not given."""
        return self.XATTN_THREADS or 1


# Create global settings instance
settings = Settings()
