from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"
    JOBS: int = 1
    OUTPUT_DIR: str = "out"
    ENV: str = "dev"
    BELGIAN_DATA: Optional[str] = None

    model_config = SettingsConfigDict(env_file=".env", env_prefix="SEROCONTACT_", extra="ignore")


settings = Settings()
