"""Configuration management for mlio."""

import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict

# Load .env file
load_dotenv()


class Settings(BaseModel):
    """Process-wide settings loaded from environment variables."""

    model_config = ConfigDict(case_sensitive=False)

    # Paths
    cache_dir: Path = Path("./cache")
    results_dir: Path = Path("./results")

    # Runtime
    log_level: str = "INFO"
    jobs: int = 1


# Load settings from environment
settings = Settings(
    cache_dir=Path(os.getenv("MLIO_CACHE_DIR", "./cache")),
    results_dir=Path(os.getenv("MLIO_RESULTS_DIR", "./results")),
    log_level=os.getenv("MLIO_LOG_LEVEL", "INFO"),
    jobs=int(os.getenv("MLIO_JOBS", "1")),
)
