import json
from pathlib import Path
from typing import List

from datagen import read_dataset
from errors import ConfigError
from models.config_model import RunConfig
from models.plan_model import PlanningContext
from nn import load_checkpoint
from planner import PlanningSession
from settings import load_run_config, override


def add_config_argument(parser):
    parser.add_argument("--config", help="RunConfig JSON document (defaults apply when omitted)")


def add_guidance_arguments(parser):
    parser.add_argument("--batch", type=int, help="trajectories per context")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--sampler", choices=["ddim", "ddpm"])
    parser.add_argument("--ddim-steps", type=int)


def config_with_guidance(args) -> RunConfig:
    config = load_run_config(args.config)
    config = override(config, "guidance", sampler=args.sampler, ddim_steps=args.ddim_steps)
    return override(config, "evaluation", batch_size=args.batch, seed=args.seed)


def load_session(path) -> PlanningSession:
    if path is None:
        raise ConfigError("a --checkpoint is required")
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return PlanningSession(load_checkpoint(path))


def read_contexts(path) -> List[PlanningContext]:
    """Contexts from a dataset file, in record order without repeats."""
    dataset = read_dataset(path)
    seen, out = set(), []
    for record in dataset.records:
        h = record.context.context_hash()
        if h not in seen:
            seen.add(h)
            out.append(record.context)
    return out


def read_context(path) -> PlanningContext:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"context file not found: {path}")
    try:
        return PlanningContext.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValueError) as e:
        raise ConfigError(f"invalid context file {path}: {e}") from e
