from pathlib import Path

import settings
from commands.common import add_config_argument
from errors import ConfigError
from models.plan_model import PlanResultDoc
from svg_utils import render_svg


def register(subparsers):
    parser = subparsers.add_parser("render", help="draw a plan result as SVG")
    add_config_argument(parser)
    parser.add_argument("--result", help="PlanResult JSON; omit to draw the scene only")
    parser.add_argument("--scene", help="scene JSON file overriding the config")
    parser.add_argument("--out", required=True, help="SVG path")
    parser.set_defaults(handler=render)


def render(args):
    config = settings.load_run_config(args.config)
    scene = settings.resolve_scene(config, args.scene)
    doc = None
    if args.result:
        path = Path(args.result)
        if not path.is_file():
            raise ConfigError(f"result file not found: {path}")
        try:
            doc = PlanResultDoc.model_validate_json(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise ConfigError(f"invalid result file {path}: {e}") from e
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(scene, doc), encoding="utf-8")
    print(f"wrote {out}")
