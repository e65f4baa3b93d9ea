"""Command-line front end: segment, eval, fixture, bench.

Exit codes: 0 success, 1 validation failure (bad bundles, configs, specs,
or mask mismatches), 2 operating-system I/O failure. Error messages go to
standard error; reports and bench results go to standard output as JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import run_bench
from .bundle import load_bundle, read_mask, write_bundle, write_mask
from .config import HEAD_METRICS, LAYER_METRICS, EngineConfig
from .correlation import run_pipeline
from .errors import AttnsegError, InvalidSpecError, MissingFileError
from .evaluate import compute_miou, load_class_ids
from .fixture import FixtureSpec, generate_fixture


def _parse_grid(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        h, w = (int(p) for p in parts)
    except ValueError:
        raise InvalidSpecError(f"grid must look like 64x64, got {text!r}") from None
    if h < 1 or w < 1:
        raise InvalidSpecError(f"grid dimensions must be positive, got {text!r}")
    return h, w


def _load_config(args: argparse.Namespace) -> EngineConfig:
    config = EngineConfig.load(args.config) if args.config else EngineConfig()
    overrides = {}
    if getattr(args, "head_metric", None) is not None:
        overrides["head_metric"] = args.head_metric
    if getattr(args, "layer_metric", None) is not None:
        overrides["layer_metric"] = args.layer_metric
    if getattr(args, "refinement_steps", None) is not None:
        overrides["refinement_steps"] = args.refinement_steps
    if getattr(args, "bg_threshold", None) is not None:
        overrides["bg_threshold"] = args.bg_threshold
    return config.replace(**overrides) if overrides else config


def cmd_segment(args: argparse.Namespace) -> int:
    config = _load_config(args)
    bundle = load_bundle(args.bundle)
    result = run_pipeline(bundle, config)
    write_mask(result.mask, args.out, bundle.classes)

    if args.dump_stages:
        dump = Path(args.dump_stages)
        dump.mkdir(parents=True, exist_ok=True)
        index = {}
        for stage, m in result.stages.items():
            name = f"{stage}.bin"
            (dump / name).write_bytes(m.scores.tobytes())
            index[stage] = {
                "file": name,
                "height": m.resolution[0],
                "width": m.resolution[1],
                "columns": m.scores.shape[1],
                "class_ids": list(m.class_ids) if m.class_ids else None,
            }
        (dump / "stages.json").write_text(
            json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    names = sorted(p.name for p in pred_dir.glob("*.pgm"))
    if not names:
        raise MissingFileError(f"no .pgm masks found in {pred_dir}")
    pairs = []
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.is_file():
            raise MissingFileError(f"no ground-truth mask {name} in {gt_dir}")
        pairs.append((read_mask(pred_dir / name), read_mask(gt_path)))
    report = compute_miou(pairs, load_class_ids(args.classes))
    print(report.to_json())
    return 0


def cmd_fixture(args: argparse.Namespace) -> int:
    spec = FixtureSpec(
        seed=args.seed,
        grid=_parse_grid(args.grid),
        layers=args.layers,
        heads=args.heads,
        tokens=args.tokens,
        classes=args.classes,
        noise_amplitude=args.noise,
    )
    bundle, gt = generate_fixture(spec)
    out = Path(args.out)
    write_bundle(bundle, out)
    write_mask(gt, out / "ground_truth.pgm", bundle.classes)
    (out / "classes.json").write_text(
        json.dumps(
            [
                {"class_id": c.class_id, "name": c.name}
                for c in bundle.classes
            ],
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    result = run_bench(
        grid=_parse_grid(args.grid),
        layers=args.layers,
        heads=args.heads,
        repeat=args.repeat,
    )
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnseg",
        description=(
            "Segment images from serialized diffusion attention bundles."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="run the pipeline on one bundle")
    seg.add_argument("--bundle", required=True, help="bundle directory")
    seg.add_argument("--config", help="engine config JSON file")
    seg.add_argument("--out", required=True, help="output mask path (.pgm)")
    seg.add_argument(
        "--dump-stages", help="directory for per-stage score tensors"
    )
    seg.add_argument("--head-metric", choices=HEAD_METRICS)
    seg.add_argument("--layer-metric", choices=LAYER_METRICS)
    seg.add_argument("--refinement-steps", type=int)
    seg.add_argument("--bg-threshold", type=float)
    seg.set_defaults(func=cmd_segment)

    ev = sub.add_parser("eval", help="mean IoU of predictions vs ground truth")
    ev.add_argument("--pred", required=True, help="directory of predicted .pgm masks")
    ev.add_argument("--gt", required=True, help="directory of ground-truth .pgm masks")
    ev.add_argument("--classes", required=True, help="JSON file of declared class ids")
    ev.set_defaults(func=cmd_eval)

    fix = sub.add_parser("fixture", help="write a synthetic bundle + ground truth")
    fix.add_argument("--seed", type=int, required=True)
    fix.add_argument("--out", required=True, help="output bundle directory")
    fix.add_argument("--grid", default="8x8")
    fix.add_argument("--layers", type=int, default=2)
    fix.add_argument("--heads", type=int, default=2)
    fix.add_argument("--tokens", type=int, default=4)
    fix.add_argument("--classes", type=int, default=2)
    fix.add_argument("--noise", type=float, default=0.02)
    fix.set_defaults(func=cmd_fixture)

    bench = sub.add_parser("bench", help="uniform vs auto aggregation timings")
    bench.add_argument("--grid", default="64x64")
    bench.add_argument("--layers", type=int, default=16)
    bench.add_argument("--heads", type=int, default=8)
    bench.add_argument("--repeat", type=int, default=1)
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AttnsegError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
