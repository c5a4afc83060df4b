import logging
import os
from functools import wraps

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'

# Configure logging
logging.basicConfig(
    level=os.getenv("PHOTOSTAT_LOG_LEVEL", "INFO").upper(),
    format=LOG_FORMAT
)
logger = logging.getLogger(__name__)


def set_log_level(level: str) -> None:
    """Apply a log level to the root logger (CLI --log-level)."""
    logging.getLogger().setLevel(level.upper())


def _summarize(result):
    """Short one-line description of a stage result for the exit banner."""
    if isinstance(result, dict):
        keys = ("status", "count", "realizations", "verdict", "figure")
        return {k: result[k] for k in keys if k in result}
    if isinstance(result, tuple):
        return f"tuple of {len(result)}"
    for attr in ("tags", "samples", "counts"):
        values = getattr(result, attr, None)
        if values is not None:
            return f"{type(result).__name__} with {len(values)} {attr}"
    if hasattr(result, "verdict"):
        return f"{type(result).__name__} verdict={result.verdict}"
    return type(result).__name__


# Pipeline stage tracking decorator
def track_step(step_name):
    """Decorator to track pipeline stages with detailed logging"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            stage_logger = logging.getLogger(func.__module__)
            stage_logger.debug(f"{'='*80}")
            stage_logger.info(f"🔧 STEP: {step_name}")

            # Log scalar parameters only; arrays and traces are summarized by type
            params = {k: str(v)[:100] for k, v in kwargs.items()
                      if isinstance(v, (int, float, str, bool)) or v is None}
            if params:
                stage_logger.debug(f"   Parameters: {params}")

            try:
                result = func(*args, **kwargs)
                stage_logger.info(f"✅ STEP SUCCESS: {step_name} -> {_summarize(result)}")
                return result
            except Exception as e:
                stage_logger.error(f"{'='*80}")
                stage_logger.error(f"❌ STEP ERROR: {step_name}")
                stage_logger.error(f"   Error: {str(e)}")
                stage_logger.error(f"{'='*80}")
                raise
        return wrapper
    return decorator
