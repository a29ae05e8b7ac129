"""Command-line surface: generate / augment / separate / verify / stats / preview.

Exit codes are a stable contract for CI: 0 success, 1 runtime or verification
failure, 2 usage/config error. The fully resolved config is echoed to stderr
at startup and written to <output>/config.json; re-running with that file
reproduces the outputs byte-exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

from . import pipeline, render, verify
from .errors import ConfigurationError, ManifestError, OverlayQAError, ParameterError
from .pipeline import PipelineConfig, RenderSettings, config_from_dict, config_to_dict


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def _resolve_config(args: argparse.Namespace, mode: str) -> PipelineConfig:
    """Merge precedence: flags > config file > defaults."""
    data = _load_config_file(getattr(args, "config", None))
    data["mode"] = mode
    flag_map = {
        "seed": "seed",
        "proportion": "proportion",
        "tasks_per_image": "tasks_per_image",
        "workers": "workers",
        "count": "count",
        "templates": "templates_file",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if getattr(args, "no_images", False):
        data["emit_images"] = False
    render_over = {}
    if getattr(args, "canvas", None) is not None:
        render_over["canvas_width"], render_over["canvas_height"] = args.canvas
    if getattr(args, "gray_level", None) is not None:
        render_over["gray_level"] = args.gray_level
    if render_over:
        data["render"] = {**data.get("render", {}), **render_over}
    if "seed" not in data:
        raise ConfigurationError("--seed is required (flag or config file)")
    cfg = config_from_dict(data)
    pipeline.validate_config(cfg)
    return cfg


def _echo_config(cfg: PipelineConfig) -> None:
    print(json.dumps(config_to_dict(cfg), indent=2), file=sys.stderr)


def _print_report(report: dict) -> None:
    print(json.dumps(report, indent=2, ensure_ascii=False))


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "gray")
    if args.count is not None and args.count < 1:
        raise ConfigurationError(f"--count must be >= 1, got {args.count}")
    _echo_config(cfg)
    report = pipeline.generate_gray_dataset(cfg.count, args.output, cfg)
    _print_report(report)
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "overlay")
    _echo_config(cfg)
    report = pipeline.augment_dataset(args.input, args.output, cfg, image_root=args.image_root)
    _print_report(report)
    return 0


def cmd_separate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args, "separate")
    _echo_config(cfg)
    report = pipeline.generate_separate(
        args.input, cfg.count, args.output, cfg, image_root=args.image_root
    )
    _print_report(report)
    return 0


def _dataset_paths(dataset: str) -> tuple[Path, Path]:
    root = Path(dataset)
    manifest = root / "manifest.json" if root.is_dir() else root
    sidecar = manifest.parent / "sidecar.jsonl"
    if not manifest.is_file():
        raise ConfigurationError(f"manifest not found: {manifest}")
    if not sidecar.is_file():
        raise ConfigurationError(f"sidecar not found: {sidecar}")
    return manifest, sidecar


def cmd_verify(args: argparse.Namespace) -> int:
    manifest, sidecar = _dataset_paths(args.dataset)
    report = verify.verify_dataset(
        manifest,
        sidecar,
        pixel_oracle=args.pixel_oracle,
        templates_file=args.templates,
        limit=args.limit,
    )
    _print_report(report.to_dict())
    return 0 if report.ok else 1


def cmd_stats(args: argparse.Namespace) -> int:
    _, sidecar = _dataset_paths(args.dataset)
    _print_report(verify.summarize_sidecar(sidecar))
    return 0


def cmd_preview(args: argparse.Namespace) -> int:
    manifest, sidecar = _dataset_paths(args.dataset)
    rows = {r["id"]: r for r in pipeline.load_manifest(manifest)}
    header, records = pipeline.load_sidecar(sidecar)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    render_cfg = header.get("render", {})
    written = 0
    for record in records[: args.k]:
        row = rows.get(record["id"])
        if row is None:
            continue
        image_path = manifest.parent / row["image"]
        if image_path.is_file():
            canvas = render.load_image(image_path)
        else:
            # Image files absent (stats-only run): re-render from the sidecar.
            size = record.get("canvas_size") or [
                render_cfg.get("canvas_width", 448),
                render_cfg.get("canvas_height", 448),
            ]
            commands = [c for task in record["tasks"] for c in task["overlay"]]
            base = render.gray_canvas(
                int(size[0]), int(size[1]), render_cfg.get("gray_level", 200)
            )
            canvas = render.compose(base, render.spec_from_list(commands))
        render.save_image(canvas, out / f"{record['id']}.png")
        lines = []
        for task in record["tasks"]:
            lines.append(f"[{task['family']}/{task['subtask']} via {task['template_id']}]")
            lines.append(f"Q: {task['question']}")
            lines.append(f"A: {task['answer']}")
            lines.append("")
        (out / f"{record['id']}.txt").write_text("\n".join(lines), encoding="utf-8")
        written += 1
    print(f"wrote {written} previews to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overlayqa",
        description="Deterministic geometric-overlay QA dataset generator and verifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, help="global seed (required unless in --config)")
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        p.add_argument(
            "--tasks-per-image", dest="tasks_per_image", type=int, help="tasks per sample, 1-3"
        )
        p.add_argument("--templates", help="extra template registry JSON file")
        p.add_argument(
            "--no-images",
            dest="no_images",
            action="store_true",
            help="skip image files (manifest/sidecar only; for statistical audits)",
        )

    p = sub.add_parser("generate", help="standalone samples on gray canvases")
    add_common(p)
    p.add_argument("--count", type=int, help="number of samples")
    p.add_argument("--output", required=True, help="output dataset directory")
    p.add_argument("--canvas", type=int, nargs=2, metavar=("W", "H"), help="canvas size")
    p.add_argument("--gray-level", dest="gray_level", type=int, help="background gray 0-255")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("augment", help="overlay tasks onto an existing dataset")
    add_common(p)
    p.add_argument("--input", required=True, help="input manifest JSON")
    p.add_argument("--image-root", dest="image_root", help="root for input image paths")
    p.add_argument("--output", required=True, help="output dataset directory")
    p.add_argument("--proportion", type=float, help="fraction of samples to augment, (0, 1]")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("separate", help="append synthetic samples instead of overlaying")
    add_common(p)
    p.add_argument("--input", required=True, help="input manifest JSON")
    p.add_argument("--image-root", dest="image_root", help="root for input image paths")
    p.add_argument("--output", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, help="number of synthetic samples to append")
    p.set_defaults(fn=cmd_separate)

    p = sub.add_parser("verify", help="re-derive and cross-check every emitted answer")
    p.add_argument("--dataset", required=True, help="dataset directory (or manifest path)")
    p.add_argument("--pixel-oracle", dest="pixel_oracle", action="store_true")
    p.add_argument("--templates", help="registry file the dataset was generated with")
    p.add_argument("--limit", type=int, help="verify only the first N records")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("stats", help="distribution summaries from the sidecar")
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("preview", help="write K sample images with their QA text")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_preview)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, ParameterError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OverlayQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
