import logging
from pathlib import Path

import settings
from commands.common import add_config_argument, add_guidance_arguments, config_with_guidance, load_session, read_contexts
from experiments import (
    EXTRA_OBJECTS, TRAINING_ENV, extra_objects_study, select_test_contexts, smoothness_study,
    square_obstacle_study, summary_for,
)
from metrics import write_rows_csv
from planner import PLANNERS

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("experiment", help="run one of the comparison studies")
    studies = parser.add_subparsers(dest="study", required=True)

    square = studies.add_parser("square-obstacle", help="MPD vs Dprior+Cost around an unseen square")
    square.add_argument("--seeds", type=int, default=5, help="number of seeds")
    square.set_defaults(handler=run_square)

    smooth = studies.add_parser("smoothness", help="spline vs waypoint trajectory models")
    smooth.add_argument("--waypoint-checkpoint", required=True)
    smooth.add_argument("--contexts", required=True)
    smooth.set_defaults(handler=run_smoothness)

    extra = studies.add_parser("extra-objects", help="all planners with and without extra obstacles")
    extra.add_argument("--contexts", required=True)
    extra.add_argument("--planners", help=f"comma-separated subset of {','.join(PLANNERS)}")
    extra.set_defaults(handler=run_extra_objects)

    for study in (square, smooth, extra):
        add_config_argument(study)
        study.add_argument("--checkpoint", required=True)
        study.add_argument("--scene", help="scene JSON file overriding the config")
        study.add_argument("--n-contexts", type=int)
        add_guidance_arguments(study)
        study.add_argument("--out", help="output directory")
        study.add_argument("--quiet", action="store_true", help="no progress bar")


def _write(report, args, config, name: str):
    out = Path(args.out or settings.output_dir(config) / name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    write_rows_csv(out / "rows.csv", report.rows)
    return out


def run_square(args):
    config = config_with_guidance(args)
    session = load_session(args.checkpoint)
    scene = settings.resolve_scene(config, args.scene)
    ev = config.evaluation
    seeds = [ev.seed + k for k in range(args.seeds)]
    report = square_obstacle_study(session, scene, seeds, ev.batch_size, config.guidance, config.costs,
                                   settings.sdf_resolution(config), session.checkpoint.task,
                                   progress=not args.quiet)
    out = _write(report, args, config, "square-obstacle")
    for name in ("mpd", "dprior-cost"):
        s = summary_for(report, "square", name)
        print(f"{name:>12}: fraction valid {s.fraction_valid:.2f} over {s.n_contexts} seeds")
    print(f"-> {out}")


def run_smoothness(args):
    config = config_with_guidance(args)
    config = settings.override(config, "evaluation", n_contexts=args.n_contexts)
    spline, waypoints = load_session(args.checkpoint), load_session(args.waypoint_checkpoint)
    scene = settings.resolve_scene(config, args.scene)
    ev = config.evaluation
    contexts = select_test_contexts(read_contexts(args.contexts), spline.checkpoint.training_contexts, ev.n_contexts)
    report = smoothness_study(spline, waypoints, scene, contexts, ev.batch_size, config.guidance, config.costs,
                              ev.seed, settings.sdf_resolution(config), spline.checkpoint.task,
                              progress=not args.quiet)
    out = _write(report, args, config, "smoothness")
    for scenario in ("bspline", "waypoints"):
        s = summary_for(report, scenario, "mpd")
        smoothness = "n/a" if s is None or s.smoothness is None else f"{s.smoothness:.4f}"
        print(f"{scenario:>10}: mean smoothness {smoothness}")
    print(f"-> {out}")


def run_extra_objects(args):
    config = config_with_guidance(args)
    planners = args.planners.split(",") if args.planners else None
    config = settings.override(config, "evaluation", n_contexts=args.n_contexts, planners=planners)
    session = load_session(args.checkpoint)
    scene = settings.resolve_scene(config, args.scene)
    ev = config.evaluation
    contexts = select_test_contexts(read_contexts(args.contexts), session.checkpoint.training_contexts,
                                    ev.n_contexts)
    report = extra_objects_study(session, scene, contexts, ev.planners, ev.batch_size, config.guidance,
                                 config.costs, ev.seed, settings.sdf_resolution(config),
                                 session.checkpoint.task, progress=not args.quiet, selection=ev.selection)
    out = _write(report, args, config, "extra-objects")
    for scenario in (TRAINING_ENV, EXTRA_OBJECTS):
        for name in ev.planners:
            s = summary_for(report, scenario, name)
            if s is not None:
                print(f"{scenario:>14} {name:>12}: success {s.success_rate:.2f} fraction valid {s.fraction_valid:.2f}")
    print(f"-> {out}")
