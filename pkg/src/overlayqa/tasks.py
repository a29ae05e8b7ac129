"""Task-instance generation for the three overlay task families.

Each generator samples an overlay layout whose answer is unambiguous at the
configured margins, and returns the machine-readable ground truth alongside
the draw commands. Truth is always recomputable from the overlay alone; the
verifier exploits that to re-derive every answer independently.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import geometry
from .errors import ConfigurationError, ParameterError, SamplingExhaustedError
from .geometry import (
    BOX_COLORS,
    PALETTE,
    NormPoint,
    Relation,
    contrast_glyph_color,
    distance,
)
from .render import BoxOutline, FilledCircle, Label, OverlaySpec, iround
from .seeding import choice, coin, randint, shuffled, uniform


class TaskFamily(enum.Enum):
    SPATIAL_RELATION = "spatial_relation"
    COUNTING = "counting"
    DISTANCE_ANALOGY = "distance_analogy"


class Subtask(enum.Enum):
    RELATIVE_POSITION = "relative_position"
    COORDINATE = "coordinate"
    COUNT_COLOR = "count_color"
    CLOSEST_POINT = "closest_point"
    COLOR_ANALOGY = "color_analogy"


FAMILIES: tuple[TaskFamily, ...] = (
    TaskFamily.SPATIAL_RELATION,
    TaskFamily.COUNTING,
    TaskFamily.DISTANCE_ANALOGY,
)

SUBTASKS_BY_FAMILY: dict[TaskFamily, tuple[Subtask, ...]] = {
    TaskFamily.SPATIAL_RELATION: (Subtask.RELATIVE_POSITION, Subtask.COORDINATE),
    TaskFamily.COUNTING: (Subtask.COUNT_COLOR,),
    TaskFamily.DISTANCE_ANALOGY: (Subtask.CLOSEST_POINT, Subtask.COLOR_ANALOGY),
}


@dataclass(frozen=True)
class RelationTruth:
    a_color: str
    b_color: str
    rel: Relation


@dataclass(frozen=True)
class CenterTruth:
    color: str
    point: NormPoint


@dataclass(frozen=True)
class CountTruth:
    target_color: str
    count: int
    distractor_counts: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if any(c == self.target_color for c, _ in self.distractor_counts):
            raise ParameterError("distractor colors must differ from the target color")


@dataclass(frozen=True)
class ClosestTruth:
    target_label: str
    candidate_labels: tuple[str, ...]
    answer_label: str

    def __post_init__(self) -> None:
        if self.answer_label not in self.candidate_labels:
            raise ParameterError("answer label must be one of the candidates")


@dataclass(frozen=True)
class AnalogyTruth:
    query_label: str
    answer_label: str
    shared_color: str


GroundTruth = Union[RelationTruth, CenterTruth, CountTruth, ClosestTruth, AnalogyTruth]

_TRUTH_FOR_SUBTASK = {
    Subtask.RELATIVE_POSITION: RelationTruth,
    Subtask.COORDINATE: CenterTruth,
    Subtask.COUNT_COLOR: CountTruth,
    Subtask.CLOSEST_POINT: ClosestTruth,
    Subtask.COLOR_ANALOGY: AnalogyTruth,
}


@dataclass(frozen=True)
class TaskInstance:
    family: TaskFamily
    subtask: Subtask
    overlay: OverlaySpec
    truth: GroundTruth

    def __post_init__(self) -> None:
        if self.subtask not in SUBTASKS_BY_FAMILY[self.family]:
            raise ParameterError(f"subtask {self.subtask} is illegal for family {self.family}")
        if not isinstance(self.truth, _TRUTH_FOR_SUBTASK[self.subtask]):
            raise ParameterError(f"truth type {type(self.truth)} mismatches {self.subtask}")


@dataclass(frozen=True)
class TaskConfig:
    """Generation knobs shared by all task families.

    Defaults target visually unambiguous overlays at ~448 px canvases while
    keeping every configuration machine-verifiable.
    """

    box_size_range: tuple[float, float] = (0.08, 0.25)
    margin: float = 0.05
    count_range: tuple[int, int] = (1, 6)
    distractor_colors_range: tuple[int, int] = (1, 2)
    circle_radius_range: tuple[float, float] = (0.04, 0.07)
    circle_alpha: float = 0.55
    n_points: int = 4
    min_separation: float = 0.15
    closest_gap: float = 0.05
    max_attempts: int = 2000
    # Pixel-space guards, converted to normalized units per canvas.
    min_stroke_px: int = 2
    stroke_frac: float = 0.01
    circle_pad: float = 0.01
    min_pixel_pad: float = 3.0
    edge_pixel_pad: float = 2.0


def validate_task_config(cfg: TaskConfig) -> None:
    """Raise ConfigurationError on knob combinations the generators cannot honor."""
    lo, hi = cfg.box_size_range
    if not (0 < lo <= hi < 1):
        raise ConfigurationError(f"box_size_range must satisfy 0 < min <= max < 1, got {cfg.box_size_range}")
    if cfg.margin <= 0:
        raise ConfigurationError(f"margin must be positive, got {cfg.margin}")
    clo, chi = cfg.count_range
    if not (0 <= clo <= chi):
        raise ConfigurationError(f"count_range must satisfy 0 <= min <= max, got {cfg.count_range}")
    if chi - clo + 1 < 3:
        raise ConfigurationError(
            "count_range must contain at least 3 values so multiple-choice "
            f"counting questions have distinct decoys, got {cfg.count_range}"
        )
    dlo, dhi = cfg.distractor_colors_range
    if not (1 <= dlo <= dhi <= len(PALETTE) - 1):
        raise ConfigurationError(
            f"distractor_colors_range must lie within [1, {len(PALETTE) - 1}], "
            f"got {cfg.distractor_colors_range}"
        )
    rlo, rhi = cfg.circle_radius_range
    if not (0 < rlo <= rhi < 0.5):
        raise ConfigurationError(f"circle_radius_range must lie in (0, 0.5), got {cfg.circle_radius_range}")
    if not (0 < cfg.circle_alpha < 1):
        raise ConfigurationError(
            f"circle_alpha must lie strictly in (0, 1) (circles are semi-transparent), "
            f"got {cfg.circle_alpha}"
        )
    if cfg.n_points != 4:
        raise ConfigurationError(
            "the built-in prompt set supports exactly 4 labeled points, "
            f"got n_points={cfg.n_points}"
        )
    if cfg.closest_gap < 0:
        raise ConfigurationError(f"closest_gap must be >= 0, got {cfg.closest_gap}")
    if cfg.min_separation <= 0:
        raise ConfigurationError(f"min_separation must be positive, got {cfg.min_separation}")
    if cfg.max_attempts < 1:
        raise ConfigurationError(f"max_attempts must be >= 1, got {cfg.max_attempts}")
    # The pixel counting oracle identifies circles by their exact blended
    # color over black; every palette color must stay distinguishable.
    blends = [
        tuple(iround(cfg.circle_alpha * c) for c in color.rgb) for color in PALETTE
    ]
    if len(set(blends)) != len(blends) or any(b == (0, 0, 0) for b in blends):
        raise ConfigurationError(
            f"circle_alpha={cfg.circle_alpha} makes palette colors indistinguishable "
            "in the rendered overlay"
        )


def sample_family(rng: np.random.Generator) -> TaskFamily:
    """Uniform draw over the three families. Consumes 1 draw."""
    return FAMILIES[randint(rng, 0, len(FAMILIES) - 1)]


def sample_distinct_families(rng: np.random.Generator, k: int) -> list[TaskFamily]:
    """k pairwise-distinct families; 1 draw for k=1, else len(FAMILIES)-1 draws."""
    if not (1 <= k <= len(FAMILIES)):
        raise ParameterError(f"k must lie in [1, {len(FAMILIES)}], got {k}")
    if k == 1:
        return [sample_family(rng)]
    return shuffled(rng, FAMILIES)[:k]


def _stroke_px(cfg: TaskConfig, canvas_size: tuple[int, int]) -> int:
    return max(cfg.min_stroke_px, iround(cfg.stroke_frac * min(canvas_size)))


def _label_scale(radius_px: float) -> int:
    return max(1, iround(radius_px / 8))


def gen_spatial(
    rng: np.random.Generator, cfg: TaskConfig, canvas_size: tuple[int, int]
) -> TaskInstance:
    """Green/red box pair with an unambiguous relation.

    Draws: 1 (subtask) + 8 per pair attempt + 1 (queried box).
    """
    subtask = Subtask.RELATIVE_POSITION if coin(rng) else Subtask.COORDINATE
    box_green, box_red, rel_green = geometry.sample_unambiguous_box_pair(
        rng, cfg.box_size_range, cfg.margin, cfg.max_attempts
    )
    green, red = BOX_COLORS
    query_green = coin(rng)
    if subtask is Subtask.RELATIVE_POSITION:
        if query_green:
            truth: GroundTruth = RelationTruth(green.name, red.name, rel_green)
        else:
            truth = RelationTruth(red.name, green.name, rel_green.opposite)
    else:
        box = box_green if query_green else box_red
        color = green if query_green else red
        truth = CenterTruth(color.name, box.center)
    stroke = _stroke_px(cfg, canvas_size)
    overlay = OverlaySpec(
        (BoxOutline(box_green, green, stroke), BoxOutline(box_red, red, stroke))
    )
    return TaskInstance(TaskFamily.SPATIAL_RELATION, subtask, overlay, truth)


def _place_disjoint_centers(
    rng: np.random.Generator,
    n: int,
    min_center_dist: float,
    edge_pad: float,
    max_attempts: int,
) -> list[NormPoint]:
    """Dart-throw n centers, pairwise at least min_center_dist apart.

    Draws: 2 per proposal (x then y); proposal count varies with rejections.
    """
    if edge_pad >= 0.5:
        raise SamplingExhaustedError(
            f"canvas too small for the circle radius (edge_pad={edge_pad:.4f})"
        )
    centers: list[NormPoint] = []
    for _ in range(n):
        for _ in range(max_attempts):
            p = NormPoint(
                uniform(rng, edge_pad, 1 - edge_pad), uniform(rng, edge_pad, 1 - edge_pad)
            )
            if all(distance(p, q) >= min_center_dist for q in centers):
                centers.append(p)
                break
        else:
            raise SamplingExhaustedError(
                f"could not place {n} circles at separation {min_center_dist:.4f} "
                f"within {max_attempts} attempts per circle"
            )
    return centers


def gen_counting(
    rng: np.random.Generator, cfg: TaskConfig, canvas_size: tuple[int, int]
) -> TaskInstance:
    """Semi-transparent disks of a target color among distractor colors.

    Disks never overlap or touch (pairwise center separation of at least the
    disk diameter plus a pad of >= min_pixel_pad pixels), which keeps the
    pixel-level counting oracle exact.
    """
    names = [c.name for c in PALETTE]
    target = choice(rng, names)
    n_extra = randint(rng, *cfg.distractor_colors_range)
    others = shuffled(rng, [n for n in names if n != target])
    distractors = others[:n_extra]
    target_count = randint(rng, *cfg.count_range)
    distractor_counts = tuple((d, randint(rng, *cfg.count_range)) for d in distractors)
    radius = uniform(rng, *cfg.circle_radius_range)

    min_dim = min(canvas_size)
    pad = max(cfg.circle_pad, cfg.min_pixel_pad / min_dim)
    edge_pad = radius + cfg.edge_pixel_pad / min_dim
    colors_in_order = [target] * target_count + [
        d for d, c in distractor_counts for _ in range(c)
    ]
    centers = _place_disjoint_centers(
        rng, len(colors_in_order), 2 * radius + pad, edge_pad, cfg.max_attempts
    )
    overlay = OverlaySpec(
        tuple(
            FilledCircle(center, radius, geometry.color_by_name(name), cfg.circle_alpha)
            for center, name in zip(centers, colors_in_order)
        )
    )
    return TaskInstance(
        TaskFamily.COUNTING,
        Subtask.COUNT_COLOR,
        overlay,
        CountTruth(target, target_count, distractor_counts),
    )


def _labeled_circle_commands(
    points: list[NormPoint],
    colors: list[geometry.ColorId],
    radius: float,
    alpha: float,
    canvas_size: tuple[int, int],
) -> tuple[Union[FilledCircle, Label], ...]:
    scale = _label_scale(radius * min(canvas_size))
    commands: list[Union[FilledCircle, Label]] = []
    for i, (pt, color) in enumerate(zip(points, colors)):
        commands.append(FilledCircle(pt, radius, color, alpha))
        commands.append(Label(pt, chr(ord("A") + i), contrast_glyph_color(color), scale))
    return tuple(commands)


def gen_distance_analogy(
    rng: np.random.Generator, cfg: TaskConfig, canvas_size: tuple[int, int]
) -> TaskInstance:
    """Four labeled circles; either a closest-point or a color-analogy question."""
    subtask = Subtask.CLOSEST_POINT if coin(rng) else Subtask.COLOR_ANALOGY
    radius = uniform(rng, *cfg.circle_radius_range)
    min_dim = min(canvas_size)
    pad = max(cfg.circle_pad, cfg.min_pixel_pad / min_dim)
    edge_pad = radius + cfg.edge_pixel_pad / min_dim
    if edge_pad >= 0.5:
        raise SamplingExhaustedError(
            f"canvas too small for the circle radius (edge_pad={edge_pad:.4f})"
        )
    separation = max(cfg.min_separation, 2 * radius + pad)
    names = [c.name for c in PALETTE]
    n = cfg.n_points
    labels = [chr(ord("A") + i) for i in range(n)]

    if subtask is Subtask.CLOSEST_POINT:
        points = geometry.sample_labeled_points(
            rng, n, separation, cfg.closest_gap, cfg.max_attempts, edge_pad=edge_pad
        )
        color_names = shuffled(rng, names)[:n]
        winner = geometry.closest_index(points[-1], points[:-1], cfg.closest_gap)
        truth: GroundTruth = ClosestTruth(
            target_label=labels[-1],
            candidate_labels=tuple(labels[:-1]),
            answer_label=labels[winner],
        )
    else:
        points = geometry.sample_labeled_points(
            rng, n, separation, 0.0, cfg.max_attempts, edge_pad=edge_pad
        )
        shared = choice(rng, names)
        pair = choice(rng, list(itertools.combinations(range(n), 2)))
        rest = [i for i in range(n) if i not in pair]
        other_colors = shuffled(rng, [m for m in names if m != shared])[: len(rest)]
        color_names = [""] * n
        for i in pair:
            color_names[i] = shared
        for i, name in zip(rest, other_colors):
            color_names[i] = name
        query, answer = (pair[0], pair[1]) if coin(rng) else (pair[1], pair[0])
        truth = AnalogyTruth(labels[query], labels[answer], shared)

    colors = [geometry.color_by_name(m) for m in color_names]
    overlay = OverlaySpec(
        _labeled_circle_commands(points, colors, radius, cfg.circle_alpha, canvas_size)
    )
    return TaskInstance(TaskFamily.DISTANCE_ANALOGY, subtask, overlay, truth)


_GENERATORS = {
    TaskFamily.SPATIAL_RELATION: gen_spatial,
    TaskFamily.COUNTING: gen_counting,
    TaskFamily.DISTANCE_ANALOGY: gen_distance_analogy,
}


def generate_task(
    rng: np.random.Generator,
    family: TaskFamily,
    cfg: TaskConfig,
    canvas_size: tuple[int, int],
) -> TaskInstance:
    return _GENERATORS[family](rng, cfg, canvas_size)


# --- truth (de)serialization for sidecar records ------------------------------


def truth_to_dict(truth: GroundTruth) -> dict:
    if isinstance(truth, RelationTruth):
        return {
            "kind": "relation",
            "a_color": truth.a_color,
            "b_color": truth.b_color,
            "rel": truth.rel.word,
        }
    if isinstance(truth, CenterTruth):
        return {"kind": "center", "color": truth.color, "point": [truth.point.x, truth.point.y]}
    if isinstance(truth, CountTruth):
        return {
            "kind": "count",
            "target_color": truth.target_color,
            "count": truth.count,
            "distractor_counts": [[c, n] for c, n in truth.distractor_counts],
        }
    if isinstance(truth, ClosestTruth):
        return {
            "kind": "closest",
            "target_label": truth.target_label,
            "candidate_labels": list(truth.candidate_labels),
            "answer_label": truth.answer_label,
        }
    if isinstance(truth, AnalogyTruth):
        return {
            "kind": "analogy",
            "query_label": truth.query_label,
            "answer_label": truth.answer_label,
            "shared_color": truth.shared_color,
        }
    raise ParameterError(f"unknown truth type: {type(truth)}")


def truth_from_dict(d: dict) -> GroundTruth:
    kind = d.get("kind")
    if kind == "relation":
        return RelationTruth(d["a_color"], d["b_color"], Relation.from_word(d["rel"]))
    if kind == "center":
        return CenterTruth(d["color"], NormPoint(d["point"][0], d["point"][1]))
    if kind == "count":
        return CountTruth(
            d["target_color"], int(d["count"]), tuple((c, int(n)) for c, n in d["distractor_counts"])
        )
    if kind == "closest":
        return ClosestTruth(
            d["target_label"], tuple(d["candidate_labels"]), d["answer_label"]
        )
    if kind == "analogy":
        return AnalogyTruth(d["query_label"], d["answer_label"], d["shared_color"])
    raise ParameterError(f"unknown truth kind: {kind!r}")
