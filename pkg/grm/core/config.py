"""
Process Settings

This module manages process-level settings using Pydantic Settings.
Environment variables are loaded from .env file (see .env.example for template).

Run-specific knobs (model size, training schedule, ablation grid) live in the
JSON run configuration validated by `grm.schemas.config.RunConfig`; the
settings here only cover what should be controllable from the environment.

Usage:
    from grm.core.config import settings

    seed = settings.resolve_seed(cfg.seed)
"""
from typing import Literal, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process Settings

    Environment Variables:
        GRM_SEED: Overrides every seed found in run configurations
        LOG_LEVEL: Root log level (default: INFO)
        LOG_FORMAT: "text" or "json" (default: text)
        OUTPUT_DIR: Default directory for run artifacts (default: ./runs)
        BENCH_WARMUP_ITERS: Untimed iterations before benchmarking (default: 1)
        GRADCHECK_SAMPLES_PER_PARAM: Entries compared per parameter (default: 16)
    """
    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore"
    )

    # ==================== Reproducibility ====================
    # When set, replaces the seed of every run configuration
    GRM_SEED: Optional[int] = None

    # ==================== Logging ====================
    LOG_LEVEL: str = "INFO"
    # "json" switches the root handler to python-json-logger records
    LOG_FORMAT: Literal["text", "json"] = "text"

    # ==================== Outputs ====================
    OUTPUT_DIR: str = "./runs"

    # ==================== Benchmark / Gradient Check ====================
    BENCH_WARMUP_ITERS: int = 1
    # Finite differences cost two forward passes per entry; larger tensors
    # are checked on a seeded random subset of this many entries
    GRADCHECK_SAMPLES_PER_PARAM: int = 16

    def resolve_seed(self, configured: int) -> int:
        """
        Apply the GRM_SEED override

        Args:
            configured: Seed taken from the run configuration

        Returns:
            GRM_SEED when set, otherwise the configured seed
        """
        if self.GRM_SEED is not None:
            return self.GRM_SEED
        return configured


settings = Settings()
