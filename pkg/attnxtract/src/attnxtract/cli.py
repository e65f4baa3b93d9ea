"""Command-line front end for attention extraction.

Mirrors the segmentation CLI's conventions: flag-style arguments, silence
on success, ``error:`` on stderr with exit 1 for validation problems and
``i/o error:`` with exit 2 for operating-system failures.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import AttnxtractError
from .extract import extract
from .profiles import PROFILES
from .tokenizer import ClassAnnotation


def parse_annotation(raw: str, background_ids: frozenset[int]) -> ClassAnnotation:
    """Parse one ``phrase=class_id`` flag value."""
    phrase, sep, tail = raw.rpartition("=")
    if not sep or not phrase.strip():
        raise ValueError(
            f"content annotation {raw!r} must look like 'phrase=class_id'"
        )
    try:
        class_id = int(tail)
    except ValueError:
        raise ValueError(
            f"content annotation {raw!r}: {tail!r} is not an integer class id"
        ) from None
    return ClassAnnotation(
        phrase=phrase.strip(),
        class_id=class_id,
        is_background=class_id in background_ids,
    )


def cmd_extract(args: argparse.Namespace) -> int:
    background_ids = frozenset(args.background or [])
    annotations = [parse_annotation(c, background_ids) for c in args.content]
    declared = {a.class_id for a in annotations}
    stray = sorted(background_ids - declared)
    if stray:
        raise ValueError(
            f"--background ids {stray} match no --content annotation"
        )
    extract(
        args.image,
        args.prompt,
        annotations,
        args.profile,
        args.out,
        seed=args.seed,
    )
    return 0


def cmd_profiles(args: argparse.Namespace) -> int:
    doc = {
        name: {
            "model_family": p.model_family,
            "timestep": p.timestep,
            "image_size": list(p.image_size),
            "prompt_length": p.pad_to_length,
            "cross_attention_layers": len(p.cross_attention_layers),
            "self_attention_layers": len(p.self_attention_layers),
        }
        for name, p in PROFILES.items()
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnxtract",
        description="Capture diffusion-model attention as activation bundles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ext = sub.add_parser("extract", help="capture one bundle for an image+prompt")
    ext.add_argument("--image", required=True, help="input image file")
    ext.add_argument("--prompt", required=True, help="text prompt")
    ext.add_argument(
        "--content",
        action="append",
        required=True,
        metavar="PHRASE=ID",
        help="mark prompt words as a class, e.g. --content 'black cat=1'; repeatable",
    )
    ext.add_argument(
        "--background",
        action="append",
        type=int,
        metavar="ID",
        help="flag a class id as background-like; repeatable",
    )
    ext.add_argument("--profile", default="sd15", help="extraction profile name")
    ext.add_argument("--out", required=True, help="output bundle directory")
    ext.add_argument("--seed", type=int, default=0, help="weight and noise seed")
    ext.set_defaults(func=cmd_extract)

    prof = sub.add_parser("profiles", help="list the documented model profiles")
    prof.set_defaults(func=cmd_profiles)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AttnxtractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
