from functools import lru_cache
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings, read from PROBE_* environment variables or .env"""

    model_config = SettingsConfigDict(
        env_prefix="PROBE_",
        env_file=".env",
        extra="ignore",
    )

    database_url: Optional[str] = None
    log_level: str = "INFO"
    threads: int = Field(default=1, ge=1)
    out_dir: str = "./out"


@lru_cache
def get_settings() -> Settings:
    """Cached settings instance"""
    return Settings()
