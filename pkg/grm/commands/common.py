"""
Helpers shared by the subcommands
"""
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Optional, TextIO

from pydantic import BaseModel

from grm.core.config import settings
from grm.schemas.config import RunConfig, apply_overrides, load_run_config


def load_config(path: Path, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    cfg = load_run_config(path)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def resolve_seed(cfg: RunConfig, flag: Optional[int]) -> int:
    """--seed beats GRM_SEED, which beats the configured seed"""
    if flag is not None:
        return flag
    return settings.resolve_seed(cfg.seed)


def print_json(payload: Any, stream: Optional[TextIO] = None) -> None:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    stream = stream or sys.stdout
    stream.write(json.dumps(payload, indent=2) + "\n")
    stream.flush()
