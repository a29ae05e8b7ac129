"""Geometric primitives and samplers over normalized [0,1]^2 coordinates.

Conventions (used everywhere in the package):
  * origin is the top-left corner; x grows right, y grows DOWN, so "above"
    means smaller y;
  * points and box extents are fractions of canvas width/height;
  * every sampler rejects configurations that would make an answer ambiguous
    rather than breaking ties.

All operations are pure given the caller-owned generator from
:mod:`overlayqa.seeding`.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import AmbiguityError, ParameterError, SamplingExhaustedError
from .seeding import uniform

# Slack for float round-off in containment checks; sampled values satisfy the
# bounds mathematically but may land one ulp outside after arithmetic.
_EPS = 1e-9


class Relation(enum.Enum):
    """Direction of one box relative to another along the dominant axis."""

    LEFT = "left"
    RIGHT = "right"
    ABOVE = "above"
    BELOW = "below"

    @property
    def word(self) -> str:
        return self.value

    @property
    def opposite(self) -> "Relation":
        return _OPPOSITE[self]

    @classmethod
    def from_word(cls, word: str) -> "Relation":
        try:
            return cls(word)
        except ValueError:
            raise ParameterError(f"unknown relation word: {word!r}") from None


_OPPOSITE = {
    Relation.LEFT: Relation.RIGHT,
    Relation.RIGHT: Relation.LEFT,
    Relation.ABOVE: Relation.BELOW,
    Relation.BELOW: Relation.ABOVE,
}


class ColorId(NamedTuple):
    """A named color with its fixed RGB value."""

    name: str
    rgb: tuple[int, int, int]


# Sampling palette: 8 colors chosen for pairwise perceptual distinctness.
PALETTE: tuple[ColorId, ...] = (
    ColorId("red", (230, 25, 75)),
    ColorId("green", (60, 180, 75)),
    ColorId("blue", (0, 130, 200)),
    ColorId("orange", (245, 130, 48)),
    ColorId("purple", (145, 30, 180)),
    ColorId("yellow", (255, 225, 25)),
    ColorId("cyan", (70, 240, 240)),
    ColorId("magenta", (240, 50, 230)),
)

PALETTE_BY_NAME = {c.name: c for c in PALETTE}

# Box tasks draw exactly these two.
BOX_COLORS: tuple[ColorId, ColorId] = (PALETTE_BY_NAME["green"], PALETTE_BY_NAME["red"])

# Reserved glyph colors; not part of the sampling palette.
BLACK = ColorId("black", (0, 0, 0))
WHITE = ColorId("white", (255, 255, 255))


def color_by_name(name: str) -> ColorId:
    if name == BLACK.name:
        return BLACK
    if name == WHITE.name:
        return WHITE
    try:
        return PALETTE_BY_NAME[name]
    except KeyError:
        raise ParameterError(f"unknown color name: {name!r}") from None


def contrast_glyph_color(background: ColorId) -> ColorId:
    """Black or white, whichever contrasts with ``background`` (Rec.601 luma)."""
    r, g, b = background.rgb
    luma = 0.299 * r + 0.587 * g + 0.114 * b
    return BLACK if luma > 127.5 else WHITE


@dataclass(frozen=True)
class NormPoint:
    """A point in the unit square (fractions of canvas width/height)."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (-_EPS <= self.x <= 1 + _EPS and -_EPS <= self.y <= 1 + _EPS):
            raise ParameterError(f"point outside unit square: ({self.x}, {self.y})")


@dataclass(frozen=True)
class NormBox:
    """An axis-aligned box, center plus extents, fully inside the unit square."""

    center: NormPoint
    width: float
    height: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ParameterError(f"non-positive box extents: {self.width}x{self.height}")
        if (
            self.left < -_EPS
            or self.top < -_EPS
            or self.right > 1 + _EPS
            or self.bottom > 1 + _EPS
        ):
            raise ParameterError("box extends outside the unit square")

    @property
    def left(self) -> float:
        return self.center.x - self.width / 2

    @property
    def right(self) -> float:
        return self.center.x + self.width / 2

    @property
    def top(self) -> float:
        return self.center.y - self.height / 2

    @property
    def bottom(self) -> float:
        return self.center.y + self.height / 2


def distance(p: NormPoint, q: NormPoint) -> float:
    """Euclidean distance in normalized units; range [0, sqrt(2)]."""
    return math.hypot(p.x - q.x, p.y - q.y)


def boxes_overlap(a: NormBox, b: NormBox) -> bool:
    """True when the boxes share interior area (edge contact is not overlap)."""
    return a.left < b.right and b.left < a.right and a.top < b.bottom and b.top < a.bottom


def relation_between(a: NormBox, b: NormBox, margin: float) -> Optional[Relation]:
    """Relation of ``a`` w.r.t. ``b`` along the dominant center axis, or None.

    The relation holds only when the dominant-axis center separation strictly
    exceeds ``margin`` AND the boxes' projections on that axis are disjoint.
    An exact |dx| == |dy| tie is ambiguous. Pure; consumes no draws.
    """
    if margin <= 0:
        raise ParameterError(f"margin must be positive, got {margin}")
    dx = a.center.x - b.center.x
    dy = a.center.y - b.center.y
    if abs(dx) == abs(dy):
        return None
    if abs(dx) > abs(dy):
        if abs(dx) <= margin:
            return None
        if dx < 0:
            return Relation.LEFT if a.right <= b.left else None
        return Relation.RIGHT if b.right <= a.left else None
    if abs(dy) <= margin:
        return None
    if dy < 0:
        return Relation.ABOVE if a.bottom <= b.top else None
    return Relation.BELOW if b.bottom <= a.top else None


def sample_box(rng: np.random.Generator, size_range: tuple[float, float]) -> NormBox:
    """Box with extents uniform in ``size_range`` and center uniform over the
    positions keeping it inside the unit square. Consumes exactly 4 draws
    (width, height, center x, center y, in that order).
    """
    lo, hi = size_range
    if not (0 < lo <= hi < 1):
        raise ParameterError(f"size_range must satisfy 0 < min <= max < 1, got {size_range}")
    w = uniform(rng, lo, hi)
    h = uniform(rng, lo, hi)
    cx = uniform(rng, w / 2, 1 - w / 2)
    cy = uniform(rng, h / 2, 1 - h / 2)
    return NormBox(NormPoint(cx, cy), w, h)


def sample_unambiguous_box_pair(
    rng: np.random.Generator,
    size_range: tuple[float, float],
    margin: float,
    max_attempts: int,
) -> tuple[NormBox, NormBox, Relation]:
    """Rejection-sample two non-overlapping boxes with a definite relation.

    Returns (a, b, relation_between(a, b, margin)). Consumes 8 draws per
    attempt. Raises SamplingExhaustedError when ``max_attempts`` pairs all
    fail, which signals an infeasible size_range/margin combination.
    """
    if max_attempts < 1:
        raise ParameterError(f"max_attempts must be >= 1, got {max_attempts}")
    for _ in range(max_attempts):
        a = sample_box(rng, size_range)
        b = sample_box(rng, size_range)
        rel = relation_between(a, b, margin)
        if rel is not None and not boxes_overlap(a, b):
            return a, b, rel
    raise SamplingExhaustedError(
        f"no unambiguous box pair in {max_attempts} attempts "
        f"(size_range={size_range}, margin={margin})"
    )


def closest_index(
    target: NormPoint, candidates: Sequence[NormPoint], gap: float
) -> int:
    """Index of the uniquely closest candidate to ``target``.

    The winner must be strictly closest and the runner-up must trail by at
    least ``gap``; otherwise the configuration is ambiguous and samplers
    should reject it. Pure; consumes no draws.
    """
    if not candidates:
        raise ParameterError("closest_index needs at least one candidate")
    if gap < 0:
        raise ParameterError(f"gap must be >= 0, got {gap}")
    dists = [distance(target, c) for c in candidates]
    best = min(range(len(dists)), key=lambda i: dists[i])
    if len(dists) == 1:
        return 0
    runner_up = min(d for i, d in enumerate(dists) if i != best)
    if runner_up <= dists[best] or runner_up - dists[best] < gap:
        raise AmbiguityError(
            f"no unique closest point: best={dists[best]:.6f}, "
            f"runner-up={runner_up:.6f}, gap={gap}"
        )
    return best


def sample_labeled_points(
    rng: np.random.Generator,
    n: int,
    min_separation: float,
    closest_gap: float,
    max_attempts: int,
    edge_pad: float = 0.0,
) -> list[NormPoint]:
    """Sample ``n`` points with pairwise separation and a unique closest point.

    The last point is the designated target: ``closest_index`` over the other
    points must succeed at ``closest_gap``. ``edge_pad`` shrinks the sampling
    domain to [pad, 1-pad]^2 so markers drawn at the points stay on-canvas.
    Consumes 2n draws per attempt (x then y per point, in point order).
    """
    if n < 2:
        raise ParameterError(f"need at least 2 points, got {n}")
    if max_attempts < 1:
        raise ParameterError(f"max_attempts must be >= 1, got {max_attempts}")
    if not (0 <= edge_pad < 0.5):
        raise ParameterError(f"edge_pad must lie in [0, 0.5), got {edge_pad}")
    for _ in range(max_attempts):
        pts = [
            NormPoint(uniform(rng, edge_pad, 1 - edge_pad), uniform(rng, edge_pad, 1 - edge_pad))
            for _ in range(n)
        ]
        if any(
            distance(p, q) < min_separation for p, q in itertools.combinations(pts, 2)
        ):
            continue
        try:
            closest_index(pts[-1], pts[:-1], closest_gap)
        except AmbiguityError:
            continue
        return pts
    raise SamplingExhaustedError(
        f"no valid {n}-point layout in {max_attempts} attempts "
        f"(min_separation={min_separation}, closest_gap={closest_gap}, edge_pad={edge_pad})"
    )
