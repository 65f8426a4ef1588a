"""Configuration for hjblab."""

import os
import logging
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Where commands write CSV/JSON results unless --out is given
OUTPUT_DIR = Path(os.getenv("HJBLAB_OUTPUT_DIR", "results"))

# Worker threads for chunked Monte Carlo; never changes results, only wall time
WORKERS = int(os.getenv("HJBLAB_WORKERS", "4"))

# Samples per RNG stream. Changing it changes the random numbers drawn.
CHUNK_SIZE = int(os.getenv("HJBLAB_CHUNK_SIZE", "8192"))

# Uniform spatial grid used for sup-of-state evaluation
GRID_POINTS = int(os.getenv("HJBLAB_GRID_POINTS", "512"))

LOG_LEVEL = os.getenv("HJBLAB_LOG_LEVEL", "INFO").upper()

# Sentry Configuration (optional error reporting for long CLI runs)
SENTRY_DSN = os.getenv("SENTRY_DSN")

# Numerical constants shared across modules
CHOLESKY_JITTER = 1e-12  # relative to trace(Q)/N
SERIES_CUTOFF = 1e-8  # |(λ_j+λ_k)t| below this uses the series branch
RIDGE_PENALTY = 1e-8
OPTIMIZER_STARTS = 8
OPTIMIZER_MAX_ITER = 10_000
OPTIMIZER_TOL = 1e-8
MAX_REJECTED_FRACTION = 1e-3


def validate_settings() -> None:
    """Validate that process-level settings are usable.

    Raises RuntimeError listing every problem so a bad environment fails fast
    before any sampling starts. Suspicious but workable values only log warnings.
    """
    logger = logging.getLogger(__name__)
    errors: list[str] = []
    warnings: list[str] = []

    if WORKERS < 1:
        errors.append(f"HJBLAB_WORKERS must be >= 1, got {WORKERS}")
    elif WORKERS > (os.cpu_count() or 1) * 4:
        warnings.append(f"HJBLAB_WORKERS={WORKERS} is far above the CPU count")

    if CHUNK_SIZE < 2:
        errors.append(f"HJBLAB_CHUNK_SIZE must be >= 2, got {CHUNK_SIZE}")
    elif CHUNK_SIZE % 2:
        errors.append("HJBLAB_CHUNK_SIZE must be even so antithetic pairs never straddle streams")

    if GRID_POINTS < 8:
        errors.append(f"HJBLAB_GRID_POINTS must be >= 8, got {GRID_POINTS}")

    if LOG_LEVEL not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        warnings.append(f"Unknown HJBLAB_LOG_LEVEL {LOG_LEVEL!r}, falling back to INFO")

    for warning in warnings:
        logger.warning(warning)

    if errors:
        error_msg = "Configuration errors detected:\n" + "\n".join(f"  - {e}" for e in errors)
        logger.error(error_msg)
        raise RuntimeError(error_msg)
