from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings read from ANCHORSTREAM_* environment variables or .env."""

    APP_NAME: str = "anchorstream"

    # Run defaults
    SEED: Optional[int] = None
    OUT_DIR: str = "runs"

    # Logging and fan-out
    LOG_LEVEL: str = "INFO"
    WORKERS: int = 1

    model_config = SettingsConfigDict(
        env_prefix="ANCHORSTREAM_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()
