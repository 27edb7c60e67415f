import csv
import logging
from dataclasses import asdict
from pathlib import Path

from bspline import BsplineSpec
from commands.common import add_config_argument
from datagen import read_dataset
from diffusion import make_schedule, prepare_training_data, train_denoiser
from errors import ConfigError
from nn import Checkpoint, DenoiserArch, Normalizer, load_checkpoint, save_checkpoint
from settings import load_run_config, output_dir, override

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("train", help="fit splines to a dataset and train the denoiser")
    add_config_argument(parser)
    parser.add_argument("--data", help="dataset path (JSONL)")
    parser.add_argument("--out", help="checkpoint path")
    parser.add_argument("--steps", type=int, help="total optimizer steps")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--resume", help="checkpoint to continue from")
    parser.add_argument("--quiet", action="store_true", help="no progress bar")
    parser.set_defaults(handler=train)


def train(args):
    config = load_run_config(args.config)
    config = override(config, "training", steps=args.steps, seed=args.seed)
    data_path = args.data or config.paths.dataset
    if data_path is None:
        raise ConfigError("no dataset given; pass --data or set paths.dataset")
    dataset = read_dataset(data_path)
    if dataset.header.robot != config.robot:
        raise ConfigError("the dataset was generated for a different robot than the config describes")

    b = config.bspline
    spec = BsplineSpec(degree=b.degree, n_b=b.n_b, n_s=b.n_s, parametrization=b.parametrization)
    goal_mode = dataset.header.goal_mode
    data = prepare_training_data(dataset, spec, b.duration, goal_mode,
                                 cache_path=Path(data_path).with_suffix(".fits.npz"))

    arch = DenoiserArch(state_dim=data.states.shape[1], context_dim=data.contexts.shape[1],
                        **config.network.model_dump())
    schedule = make_schedule(config.schedule.kind, config.schedule.n_steps)
    resume = load_checkpoint(args.resume, arch) if args.resume else None
    if resume is not None:
        state_norm, context_norm = resume.state_normalizer, resume.context_normalizer
    else:
        state_norm, context_norm = Normalizer.fit(data.states), Normalizer.fit(data.contexts)

    out = Path(args.out or config.paths.checkpoint or output_dir(config) / "model.ckpt")

    def snapshot(outcome) -> Checkpoint:
        return Checkpoint(
            params=outcome.params, arch=arch, state_normalizer=state_norm, context_normalizer=context_norm,
            schedule=schedule.to_dict(), bspline=asdict(spec), duration=b.duration,
            robot=config.robot.model_dump(), scene_hash=dataset.header.scene_hash, goal_mode=goal_mode,
            task=dataset.header.task, training_contexts=data.context_hashes, adam=outcome.adam,
            rng_state=outcome.rng.bit_generator.state, step=outcome.step,
        )

    outcome = train_denoiser(
        state_norm.normalize(data.states), context_norm.normalize(data.contexts), arch, schedule, config.training,
        params=resume.params if resume else None,
        adam=resume.adam if resume else None,
        rng_state=resume.rng_state if resume else None,
        start_step=resume.step if resume else 0,
        on_checkpoint=lambda o: save_checkpoint(out, snapshot(o)),
        progress=not args.quiet,
    )
    save_checkpoint(out, snapshot(outcome))

    loss_path = out.with_suffix(".loss.csv")
    with loss_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows(outcome.losses)
    last = f"{outcome.losses[-1][1]:.5f}" if outcome.losses else "n/a"
    print(f"trained to step {outcome.step} on {len(data.states)} trajectories, final loss {last} -> {out}")
