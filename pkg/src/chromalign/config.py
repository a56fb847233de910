from __future__ import annotations

import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


@dataclass(frozen=True)
class Settings:
    log_level: str
    log_format: str
    predict_batch: int
    default_seed: int


def get_settings() -> Settings:
    return Settings(
        log_level=os.getenv("CHROMALIGN_LOG_LEVEL", "INFO").upper(),
        log_format=os.getenv(
            "CHROMALIGN_LOG_FORMAT", "%(asctime)s %(levelname)s %(name)s: %(message)s"
        ),
        predict_batch=int(os.getenv("CHROMALIGN_PREDICT_BATCH", "4096")),
        default_seed=int(os.getenv("CHROMALIGN_DEFAULT_SEED", "0")),
    )
