import logging
from pathlib import Path

import settings
from commands.common import add_config_argument, add_guidance_arguments, config_with_guidance, load_session, read_context
from planner import PLANNERS, PlanRequest, plan, result_document
from svg_utils import render_svg

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("plan", help="plan trajectories for one context")
    add_config_argument(parser)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--context", required=True, help="PlanningContext JSON file")
    parser.add_argument("--scene", help="scene JSON file; may add extra obstacles to the training scene")
    parser.add_argument("--planner", choices=PLANNERS, default="mpd")
    add_guidance_arguments(parser)
    parser.add_argument("--out", help="PlanResult JSON path")
    parser.add_argument("--svg", help="also render the result to this SVG path")
    parser.add_argument("--timing", action="store_true", help="include wall-clock timing in the JSON")
    parser.set_defaults(handler=run_plan)


def run_plan(args):
    config = config_with_guidance(args)
    session = load_session(args.checkpoint)
    scene = settings.resolve_scene(config, args.scene)
    req = PlanRequest(
        context=read_context(args.context), scene=scene, planner=args.planner,
        batch_size=config.evaluation.batch_size, guidance=config.guidance, weights=config.costs,
        seed=config.evaluation.seed, sdf_resolution=settings.sdf_resolution(config),
        selection=config.evaluation.selection,
    )
    result = plan(session, req)
    doc = result_document(result, session.checkpoint.task, session.robot_config, session.duration,
                          include_timing=args.timing)

    out = Path(args.out or settings.output_dir(config) / f"plan-{args.planner}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(doc.model_dump_json(indent=2), encoding="utf-8")
    if args.svg:
        Path(args.svg).write_text(render_svg(scene, doc), encoding="utf-8")
    print(f"{args.planner}: {int(result.valid.sum())}/{len(result.valid)} valid, "
          f"selected #{result.selected}{'' if result.selected_valid else ' (invalid)'} -> {out}")
