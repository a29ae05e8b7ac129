"""Dataset-level orchestration: augment, gray-standalone, and separate modes.

Determinism contract: every output byte is a pure function of (input dataset,
config). Each sample's randomness comes from a generator derived from
(seed, sample id), so worker count and scheduling order never change results;
manifests and sidecars are assembled in input order by the parent process.

Manifest schema (conversation JSON): a list of
``{"id": str, "image": str, "conversations": [{"from": "human"|"gpt",
"value": str}]}`` where the first human turn contains exactly one "<image>"
token. The sidecar is JSON-lines: a header object followed by one record per
augmented sample, carrying everything needed to re-render the overlay and
re-derive every answer without the RNG.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from . import render, tasks, templates
from .errors import (
    ConfigurationError,
    DecodeError,
    ManifestError,
    ParameterError,
    SamplingExhaustedError,
    UnsupportedFormatError,
)
from .render import Canvas, OverlaySpec
from .seeding import derive_rng, randint, shuffled
from .tasks import TaskConfig
from .templates import TemplateRegistry

IMAGE_TOKEN = "<image>"

SIDECAR_SCHEMA = "overlayqa/sidecar"
SIDECAR_VERSION = 1

MODES = ("gray", "overlay", "separate")

MAX_TASKS_PER_IMAGE = 3  # accumulating more tasks per image degrades training value


@dataclass(frozen=True)
class RenderSettings:
    canvas_width: int = 448
    canvas_height: int = 448
    gray_level: int = 200


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    mode: str = "gray"
    proportion: float = 1.0
    tasks_per_image: int = 1
    count: int = 0  # gray: dataset size; separate: extra synthetic samples
    workers: int = 0  # 0 = all available cores
    emit_images: bool = True
    tasks: TaskConfig = field(default_factory=TaskConfig)
    render: RenderSettings = field(default_factory=RenderSettings)
    templates_file: Optional[str] = None


def validate_config(cfg: PipelineConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if not (0 < cfg.proportion <= 1):
        raise ConfigurationError(f"proportion must lie in (0, 1], got {cfg.proportion}")
    if not (1 <= cfg.tasks_per_image <= MAX_TASKS_PER_IMAGE):
        raise ConfigurationError(
            f"tasks_per_image must lie in [1, {MAX_TASKS_PER_IMAGE}], got {cfg.tasks_per_image}"
        )
    if cfg.mode in ("gray", "separate") and cfg.count < 1:
        raise ConfigurationError(f"count must be >= 1 for {cfg.mode} mode, got {cfg.count}")
    if cfg.workers < 0:
        raise ConfigurationError(f"workers must be >= 0, got {cfg.workers}")
    if cfg.render.canvas_width < 1 or cfg.render.canvas_height < 1:
        raise ConfigurationError("canvas dimensions must be positive")
    if not (0 <= cfg.render.gray_level <= 255):
        raise ConfigurationError(f"gray_level must be an 8-bit value, got {cfg.render.gray_level}")
    tasks.validate_task_config(cfg.tasks)
    if cfg.templates_file is not None:
        templates.load_registry(cfg.templates_file)  # raises on problems


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def _dataclass_from_dict(cls, data: dict, context: str):
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - field_names
    if unknown:
        raise ConfigurationError(f"unknown {context} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in ("tasks",):
            value = _dataclass_from_dict(TaskConfig, value, "tasks")
        elif f.name in ("render",):
            value = _dataclass_from_dict(RenderSettings, value, "render")
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[f.name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    if "seed" not in data:
        raise ConfigurationError("config requires a 'seed'")
    return _dataclass_from_dict(PipelineConfig, data, "config")


# --- manifest I/O -------------------------------------------------------------


def validate_sample_row(row: dict, index: int) -> None:
    where = f"sample #{index} (id={row.get('id')!r})"
    if not isinstance(row, dict):
        raise ManifestError(f"{where}: row must be an object")
    if not row.get("id") or not isinstance(row["id"], str):
        raise ManifestError(f"{where}: missing or non-string 'id'")
    conv = row.get("conversations")
    if not isinstance(conv, list) or not conv:
        raise ManifestError(f"{where}: missing or empty 'conversations'")
    for j, turn in enumerate(conv):
        if not isinstance(turn, dict) or set(turn) != {"from", "value"}:
            raise ManifestError(f"{where}: turn {j} must have exactly 'from' and 'value'")
        expected = "human" if j % 2 == 0 else "gpt"
        if turn["from"] != expected:
            raise ManifestError(
                f"{where}: turn {j} role {turn['from']!r}, expected {expected!r} "
                "(roles alternate starting with human)"
            )
        if not isinstance(turn["value"], str):
            raise ManifestError(f"{where}: turn {j} value must be a string")
    if conv[0]["value"].count(IMAGE_TOKEN) != 1:
        raise ManifestError(
            f"{where}: first human turn must contain exactly one {IMAGE_TOKEN!r} token"
        )


def load_manifest(path: Union[str, Path]) -> list[dict]:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ManifestError(f"manifest {p} must be a JSON array of samples")
    seen = set()
    for i, row in enumerate(data):
        validate_sample_row(row, i)
        if row["id"] in seen:
            raise ManifestError(f"duplicate sample id {row['id']!r} in {p}")
        seen.add(row["id"])
    return data


def dump_manifest(rows: list[dict], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(rows, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_sidecar(path: Union[str, Path]) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestError(f"sidecar {path} is empty")
    header = json.loads(lines[0])
    if header.get("schema") != SIDECAR_SCHEMA or header.get("version") != SIDECAR_VERSION:
        raise ManifestError(
            f"sidecar {path} has unrecognized schema/version: "
            f"{header.get('schema')!r} v{header.get('version')!r}"
        )
    return header, [json.loads(line) for line in lines[1:]]


# --- per-sample task building -------------------------------------------------


@functools.lru_cache(maxsize=8)
def _registry_for(templates_file: Optional[str]) -> TemplateRegistry:
    if templates_file is None:
        return templates.builtin_registry()
    return templates.load_registry(templates_file)


def _build_qa_tasks(
    rng, cfg: PipelineConfig, canvas_size: tuple[int, int]
) -> list[tuple[tasks.TaskInstance, templates.PromptTemplate, templates.QAPair]]:
    registry = _registry_for(cfg.templates_file)
    families = tasks.sample_distinct_families(rng, cfg.tasks_per_image)
    built = []
    for family in families:
        instance = tasks.generate_task(rng, family, cfg.tasks, canvas_size)
        template = templates.pick_template(registry, instance.family, instance.subtask, rng)
        qa = templates.instantiate(template, instance, rng, cfg.tasks.count_range)
        built.append((instance, template, qa))
    return built


def _combined_overlay(built) -> OverlaySpec:
    commands = []
    for instance, _, _ in built:
        commands.extend(instance.overlay.commands)
    return OverlaySpec(tuple(commands))


def _qa_turns(built, *, lead_with_token: bool) -> list[dict]:
    turns = []
    for i, (_, _, qa) in enumerate(built):
        text = qa.question
        if lead_with_token and i == 0:
            text = IMAGE_TOKEN + "\n" + text
        turns.append({"from": "human", "value": text})
        turns.append({"from": "gpt", "value": qa.answer})
    return turns


def _task_record(instance: tasks.TaskInstance, qa: templates.QAPair) -> dict:
    return {
        "family": instance.family.value,
        "subtask": instance.subtask.value,
        "template_id": qa.template_id,
        "overlay": render.spec_to_list(instance.overlay),
        "truth": tasks.truth_to_dict(instance.truth),
        "slots": dict(qa.slots or {}),
        "option_order": qa.option_order,
        "question": qa.question,
        "answer": qa.answer,
    }


def _sidecar_record(
    sample_id: str, cfg: PipelineConfig, built, canvas_size: tuple[int, int]
) -> dict:
    return {
        "id": sample_id,
        "seed_inputs": {"global_seed": cfg.seed, "sample_id": sample_id},
        "canvas_size": list(canvas_size),
        "tasks": [_task_record(inst, qa) for inst, _, qa in built],
    }


def augment_sample(
    row: dict,
    canvas: Canvas,
    rng,
    cfg: PipelineConfig,
) -> tuple[dict, Canvas, dict]:
    """Apply tasks_per_image distinct-family tasks to one sample.

    Returns (augmented row, composited canvas, sidecar record). The original
    conversation turns are preserved byte-identically; each task appends one
    human and one gpt turn.
    """
    built = _build_qa_tasks(rng, cfg, (canvas.width, canvas.height))
    composed = render.compose(canvas, _combined_overlay(built))
    conversations = list(row["conversations"]) + _qa_turns(
        built, lead_with_token=not row["conversations"]
    )
    new_row = {"id": row["id"], "image": row.get("image", ""), "conversations": conversations}
    return new_row, composed, _sidecar_record(row["id"], cfg, built, (canvas.width, canvas.height))


# --- worker plumbing ----------------------------------------------------------


@dataclass
class _SampleResult:
    index: int
    row: dict
    sidecar: Optional[dict] = None
    image_rel: Optional[str] = None
    png: Optional[bytes] = None
    copy_from: Optional[str] = None
    error: Optional[str] = None


def _finish_generated(
    result: _SampleResult, built, cfg: PipelineConfig, base: Optional[Canvas]
) -> _SampleResult:
    if cfg.emit_images and base is not None:
        composed = render.compose(base, _combined_overlay(built))
        result.png = render.encode_png(composed)
    return result


def _build_gray_sample(item: tuple[int, str], cfg: PipelineConfig) -> _SampleResult:
    index, sample_id = item
    rng = derive_rng(cfg.seed, sample_id)
    size = (cfg.render.canvas_width, cfg.render.canvas_height)
    built = _build_qa_tasks(rng, cfg, size)
    image_rel = f"images/{sample_id}.png"
    row = {
        "id": sample_id,
        "image": image_rel,
        "conversations": _qa_turns(built, lead_with_token=True),
    }
    result = _SampleResult(
        index, row, sidecar=_sidecar_record(sample_id, cfg, built, size), image_rel=image_rel
    )
    base = render.gray_canvas(*size, cfg.render.gray_level) if cfg.emit_images else None
    return _finish_generated(result, built, cfg, base)


def _passthrough(index: int, row: dict, image_root: Path, error: Optional[str]) -> _SampleResult:
    src = image_root / row["image"] if row.get("image") else None
    return _SampleResult(
        index,
        row,
        copy_from=str(src) if src else None,
        image_rel=row.get("image") or None,
        error=error,
    )


def _build_overlay_sample(
    item: tuple[int, dict, bool], cfg: PipelineConfig, image_root: str
) -> _SampleResult:
    index, row, selected = item
    root = Path(image_root)
    if not selected:
        return _passthrough(index, row, root, None)
    try:
        canvas = render.load_image(root / row["image"])
    except (FileNotFoundError, DecodeError, UnsupportedFormatError) as exc:
        return _passthrough(index, row, root, f"image unavailable: {exc}")
    rng = derive_rng(cfg.seed, row["id"])
    try:
        built = _build_qa_tasks(rng, cfg, (canvas.width, canvas.height))
    except SamplingExhaustedError as exc:
        return _passthrough(index, row, root, f"sampling exhausted: {exc}")
    image_rel = f"overlays/{row['id']}.png"
    conversations = list(row["conversations"]) + _qa_turns(built, lead_with_token=False)
    new_row = {"id": row["id"], "image": image_rel, "conversations": conversations}
    result = _SampleResult(
        index,
        new_row,
        sidecar=_sidecar_record(row["id"], cfg, built, (canvas.width, canvas.height)),
        image_rel=image_rel,
    )
    return _finish_generated(result, built, cfg, canvas if cfg.emit_images else None)


def _build_separate_sample(
    item: tuple[int, str, dict], cfg: PipelineConfig, image_root: str
) -> _SampleResult:
    index, syn_id, source_row = item
    root = Path(image_root)
    try:
        canvas = render.load_image(root / source_row["image"])
    except (FileNotFoundError, DecodeError, UnsupportedFormatError) as exc:
        return _SampleResult(index, {}, error=f"image unavailable: {exc}")
    rng = derive_rng(cfg.seed, syn_id)
    try:
        built = _build_qa_tasks(rng, cfg, (canvas.width, canvas.height))
    except SamplingExhaustedError as exc:
        return _SampleResult(index, {}, error=f"sampling exhausted: {exc}")
    image_rel = f"overlays/{syn_id}.png"
    row = {
        "id": syn_id,
        "image": image_rel,
        "conversations": _qa_turns(built, lead_with_token=True),
    }
    result = _SampleResult(
        index, row, sidecar=_sidecar_record(syn_id, cfg, built, (canvas.width, canvas.height)), image_rel=image_rel
    )
    return _finish_generated(result, built, cfg, canvas if cfg.emit_images else None)


def _resolved_workers(cfg: PipelineConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def _map_samples(fn, items: list, workers: int) -> Iterator[_SampleResult]:
    if workers <= 1 or len(items) <= 1:
        yield from map(fn, items)
        return
    chunksize = max(1, len(items) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, items, chunksize=chunksize)


# --- selection and output assembly ---------------------------------------------


def select_for_augmentation(seed: int, ids: Iterable[str], proportion: float) -> set[str]:
    """floor(proportion*N) ids, chosen by a seeded shuffle of the sorted ids.

    Depends only on (seed, ids); manifest order and worker count are
    irrelevant. The epsilon guards against float error in proportion*N.
    """
    ordered = sorted(ids)
    k = math.floor(proportion * len(ordered) + 1e-9)
    return set(shuffled(derive_rng(seed, "augment-selection"), ordered)[:k])


def sidecar_header(cfg: PipelineConfig) -> dict:
    return {
        "schema": SIDECAR_SCHEMA,
        "version": SIDECAR_VERSION,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "tasks_per_image": cfg.tasks_per_image,
        "generation": dataclasses.asdict(cfg.tasks),
        "render": dataclasses.asdict(cfg.render),
    }


class _OutputWriter:
    """Streams results (in input order) into the output directory."""

    def __init__(self, out_dir: Path, cfg: PipelineConfig):
        self.out_dir = out_dir
        self.cfg = cfg
        self.rows: list[dict] = []
        self.failures: list[dict] = []
        self.counters = {"families": {}, "subtasks": {}, "templates": {}}
        self.augmented = 0
        self.passed_through = 0
        self.seen_paths: set[str] = set()
        out_dir.mkdir(parents=True, exist_ok=True)
        self._sidecar = open(out_dir / "sidecar.jsonl", "w", encoding="utf-8")
        self._sidecar.write(json.dumps(sidecar_header(cfg), ensure_ascii=False) + "\n")

    def _check_collision(self, rel: str) -> None:
        if rel in self.seen_paths:
            raise ParameterError(f"output path collision: {rel!r} emitted twice")
        self.seen_paths.add(rel)

    def add(self, result: _SampleResult) -> None:
        if result.error and not result.row:
            self.failures.append({"id": None, "index": result.index, "reason": result.error})
            return
        self.rows.append(result.row)
        if result.error:
            self.failures.append({"id": result.row["id"], "reason": result.error})
        if result.sidecar is not None:
            self.augmented += 1
            self._sidecar.write(json.dumps(result.sidecar, ensure_ascii=False) + "\n")
            for task in result.sidecar["tasks"]:
                for key, value in (
                    ("families", task["family"]),
                    ("subtasks", task["subtask"]),
                    ("templates", task["template_id"]),
                ):
                    bucket = self.counters[key]
                    bucket[value] = bucket.get(value, 0) + 1
        else:
            self.passed_through += 1
        if result.image_rel:
            self._check_collision(result.image_rel)
        if result.png is not None:
            dest = self.out_dir / result.image_rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(result.png)
        elif result.copy_from and self.cfg.emit_images:
            dest = self.out_dir / result.image_rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            if Path(result.copy_from).is_file():
                shutil.copyfile(result.copy_from, dest)

    def finish(self, started: float, extra: dict) -> dict:
        self._sidecar.close()
        dump_manifest(self.rows, self.out_dir / "manifest.json")
        report = {
            "mode": self.cfg.mode,
            "seed": self.cfg.seed,
            "samples_total": len(self.rows),
            "samples_augmented": self.augmented,
            "samples_passed_through": self.passed_through,
            "failures": self.failures,
            "families": dict(sorted(self.counters["families"].items())),
            "subtasks": dict(sorted(self.counters["subtasks"].items())),
            "templates": dict(sorted(self.counters["templates"].items())),
            "wall_time_s": round(time.monotonic() - started, 3),
            **extra,
        }
        (self.out_dir / "report.json").write_text(
            json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        (self.out_dir / "config.json").write_text(
            json.dumps(config_to_dict(self.cfg), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return report


# --- top-level operations -------------------------------------------------------


def generate_gray_dataset(n: int, out_dir: Union[str, Path], cfg: PipelineConfig) -> dict:
    """Emit n standalone samples on uniform gray canvases (no base dataset)."""
    cfg = dataclasses.replace(cfg, mode="gray", count=n)
    validate_config(cfg)
    if n < 1:
        raise ConfigurationError(f"count must be >= 1, got {n}")
    started = time.monotonic()
    width = max(6, len(str(n - 1)))
    items = [(i, f"{i:0{width}d}") for i in range(n)]
    writer = _OutputWriter(Path(out_dir), cfg)
    fn = functools.partial(_build_gray_sample, cfg=cfg)
    for result in _map_samples(fn, items, _resolved_workers(cfg)):
        writer.add(result)
    return writer.finish(started, {"count": n})


def augment_dataset(
    manifest_path: Union[str, Path],
    out_dir: Union[str, Path],
    cfg: PipelineConfig,
    image_root: Optional[Union[str, Path]] = None,
) -> dict:
    """Overlay mode: augment floor(proportion*N) samples, pass the rest through.

    Output sample count always equals the input count; pass-through samples
    keep their rows and image files byte-identical (files are copied, never
    re-encoded).
    """
    cfg = dataclasses.replace(cfg, mode="overlay")
    validate_config(cfg)
    started = time.monotonic()
    manifest_path = Path(manifest_path)
    root = Path(image_root) if image_root is not None else manifest_path.parent
    rows = load_manifest(manifest_path)
    for row in rows:
        if not row.get("image"):
            raise ManifestError(f"sample {row['id']!r} lacks an 'image' path (required in overlay mode)")
    selected = select_for_augmentation(cfg.seed, (r["id"] for r in rows), cfg.proportion)
    items = [(i, row, row["id"] in selected) for i, row in enumerate(rows)]
    writer = _OutputWriter(Path(out_dir), cfg)
    fn = functools.partial(_build_overlay_sample, cfg=cfg, image_root=str(root))
    for result in _map_samples(fn, items, _resolved_workers(cfg)):
        writer.add(result)
    return writer.finish(
        started, {"input_manifest": str(manifest_path), "proportion": cfg.proportion}
    )


def generate_separate(
    manifest_path: Union[str, Path],
    n_extra: int,
    out_dir: Union[str, Path],
    cfg: PipelineConfig,
    image_root: Optional[Union[str, Path]] = None,
) -> dict:
    """Separate mode: keep originals untouched, append n_extra synthetic samples.

    Synthetic samples overlay tasks on images drawn with replacement from the
    input (original conversations dropped); original rows keep referencing
    their existing image files.
    """
    cfg = dataclasses.replace(cfg, mode="separate", count=n_extra)
    validate_config(cfg)
    started = time.monotonic()
    manifest_path = Path(manifest_path)
    root = Path(image_root) if image_root is not None else manifest_path.parent
    rows = load_manifest(manifest_path)
    for row in rows:
        if not row.get("image"):
            raise ManifestError(f"sample {row['id']!r} lacks an 'image' path (required in separate mode)")
    by_sorted = sorted(rows, key=lambda r: r["id"])
    width = max(6, len(str(n_extra - 1)))
    items = []
    for i in range(n_extra):
        syn_id = f"synthetic-{i:0{width}d}"
        src = by_sorted[randint(derive_rng(cfg.seed, f"separate-source:{syn_id}"), 0, len(by_sorted) - 1)]
        items.append((len(rows) + i, syn_id, src))

    writer = _OutputWriter(Path(out_dir), cfg)
    for i, row in enumerate(rows):
        # Originals stay verbatim: row untouched, image file copied as-is.
        writer.add(
            _SampleResult(i, row, copy_from=str(root / row["image"]), image_rel=row["image"])
        )
    writer.passed_through = 0  # originals are not pass-throughs in this mode
    fn = functools.partial(_build_separate_sample, cfg=cfg, image_root=str(root))
    for result in _map_samples(fn, items, _resolved_workers(cfg)):
        writer.add(result)
    return writer.finish(
        started,
        {"input_manifest": str(manifest_path), "originals": len(rows), "synthetic": n_extra},
    )
