import logging

import numpy as np

import settings
from datagen import generate_dataset, generate_gp_demonstrations, path_length, write_dataset
from commands.common import add_config_argument
from settings import load_run_config, override, resolve_scene

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("gen-data", help="generate expert demonstrations")
    add_config_argument(parser)
    parser.add_argument("--out", help="dataset path (JSONL)")
    parser.add_argument("--scene", help="scene JSON file overriding the config")
    parser.add_argument("--n-contexts", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--generator", choices=["rrt-connect", "gp"])
    parser.add_argument("--workers", type=int, default=settings.WORKERS)
    parser.add_argument("--quiet", action="store_true", help="no progress bar")
    parser.set_defaults(handler=gen_data)


def gen_data(args):
    config = load_run_config(args.config)
    config = override(config, "datagen", n_contexts=args.n_contexts, seed=args.seed, generator=args.generator)
    scene = resolve_scene(config, args.scene)
    generate = generate_gp_demonstrations if config.datagen.generator == "gp" else generate_dataset
    dataset = generate(scene, config.robot, config.datagen, config.task, settings.sdf_resolution(config),
                       workers=args.workers, progress=not args.quiet)

    out = args.out or config.paths.dataset or settings.output_dir(config) / "dataset.jsonl"
    write_dataset(out, dataset)
    header = dataset.header
    mean_length = np.mean([path_length(r.path) for r in dataset.records])
    print(f"{header.n_succeeded}/{header.n_contexts} contexts solved, {header.n_records} records, "
          f"mean path length {mean_length:.3f} -> {out}")
