import os
from dataclasses import dataclass
from typing import List

from dotenv import load_dotenv

load_dotenv()


def _parse_csv_env(value: str, default: List[float]) -> List[float]:
    if not value:
        return default
    parsed = [float(item.strip()) for item in value.split(",") if item.strip()]
    return parsed or default


@dataclass(frozen=True)
class Settings:
    environment: str
    log_level: str
    output_dir: str
    default_k_values: List[float]
    max_workers: int
    # sweeps between cached and recomputed log-joint checks
    check_every: int


settings = Settings(
    environment=os.getenv("ALIGN_ENV", "development"),
    log_level=os.getenv("ALIGN_LOG_LEVEL", "INFO").upper(),
    output_dir=os.getenv("ALIGN_OUTPUT_DIR", "results"),
    default_k_values=_parse_csv_env(os.getenv("ALIGN_K_VALUES", "0.5"), [0.5]),
    max_workers=int(os.getenv("ALIGN_MAX_WORKERS", "1")),
    check_every=int(os.getenv("ALIGN_CHECK_EVERY", "10000")),
)
