import logging
from pathlib import Path

import settings
from commands.common import add_config_argument, add_guidance_arguments, config_with_guidance, load_session, read_contexts
from experiments import extra_objects_study, select_test_contexts
from metrics import write_rows_csv
from planner import PLANNERS

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("eval", help="evaluate planners on held-out contexts")
    add_config_argument(parser)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--contexts", required=True, help="dataset file whose contexts are used for testing")
    parser.add_argument("--scene", help="scene JSON file; its extra obstacles form the second scenario")
    parser.add_argument("--planners", help=f"comma-separated subset of {','.join(PLANNERS)}")
    parser.add_argument("--n-contexts", type=int)
    add_guidance_arguments(parser)
    parser.add_argument("--out", help="output directory for report.json and rows.csv")
    parser.add_argument("--quiet", action="store_true", help="no progress bar")
    parser.set_defaults(handler=run_eval)


def run_eval(args):
    config = config_with_guidance(args)
    planners = args.planners.split(",") if args.planners else None
    config = settings.override(config, "evaluation", n_contexts=args.n_contexts, planners=planners)
    session = load_session(args.checkpoint)
    scene = settings.resolve_scene(config, args.scene)
    ev = config.evaluation
    contexts = select_test_contexts(read_contexts(args.contexts), session.checkpoint.training_contexts,
                                    ev.n_contexts)

    report = extra_objects_study(session, scene, contexts, ev.planners, ev.batch_size, config.guidance,
                                 config.costs, seed=ev.seed, sdf_resolution=settings.sdf_resolution(config),
                                 task=session.checkpoint.task, progress=not args.quiet,
                                 selection=ev.selection)

    out = Path(args.out or settings.output_dir(config) / "eval")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    write_rows_csv(out / "rows.csv", report.rows)
    for s in report.summaries:
        print(f"{s.scenario:>14} {s.planner:>12}: success {s.success_rate:.2f} "
              f"fraction valid {s.fraction_valid:.2f} over {s.n_contexts} contexts")
