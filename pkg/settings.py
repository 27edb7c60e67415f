import json
import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

from env import load_scene, preset_scene
from errors import ConfigError
from models.config_model import RunConfig
from models.scene_model import Scene

load_dotenv()

LOG_LEVEL = os.getenv("MPD_LOG_LEVEL", "INFO")
OUTPUT_DIR = os.getenv("MPD_OUTPUT_DIR", "runs")
SDF_RESOLUTION = int(os.getenv("MPD_SDF_RESOLUTION", "256"))
WORKERS = int(os.getenv("MPD_WORKERS", "1"))


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return RunConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e


def override(config: RunConfig, section: str, **values) -> RunConfig:
    """Copy of `config` with the given fields of one section replaced; None means keep."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return config
    try:
        part = getattr(config, section).model_validate({**getattr(config, section).model_dump(), **values})
    except ValidationError as e:
        raise ConfigError(f"invalid {section} override: {e}") from e
    return config.model_copy(update={section: part})


def resolve_scene(config: RunConfig, scene_file=None) -> Scene:
    """Scene from an explicit file, the config's scene file, or its preset, in that order."""
    if scene_file is not None:
        return load_scene(scene_file)
    if config.scene_file is not None:
        return load_scene(config.scene_file)
    return preset_scene(config.scene_preset)


def sdf_resolution(config: RunConfig) -> int:
    return config.sdf_resolution or SDF_RESOLUTION


def output_dir(config: RunConfig) -> Path:
    return Path(config.paths.output_dir or OUTPUT_DIR)
