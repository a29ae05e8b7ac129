"""Rasterization of overlay layers onto RGB canvases.

Pixel conventions, fixed for determinism:
  * canvases are (height, width, 3) uint8 arrays, row-major, top-left origin;
  * a pixel (col, row) has center (col + 0.5, row + 0.5) in continuous pixel
    space; normalized coordinates map via x * width, y * height;
  * a pixel belongs to a disk iff its center is STRICTLY within the radius,
    so two disks whose centers sit one pixel beyond tangency never share or
    touch pixels (keeps the pixel counting oracle exact);
  * alpha blending is round-half-up: floor(a*src + (1-a)*dst + 0.5);
  * no anti-aliasing anywhere.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import font
from .errors import DecodeError, ParameterError, UnsupportedFormatError
from .geometry import ColorId, NormBox, NormPoint, color_by_name


@dataclass(frozen=True)
class Canvas:
    """An owned RGB raster."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ParameterError(f"canvas must be (H, W, 3) uint8, got {p.dtype} {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ParameterError(f"canvas dimensions must be positive, got {p.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BoxOutline:
    """Opaque axis-aligned rectangle outline, stroke drawn inside the box."""

    box: NormBox
    color: ColorId
    stroke: int

    def __post_init__(self) -> None:
        if self.stroke < 1:
            raise ParameterError(f"stroke must be >= 1 px, got {self.stroke}")


@dataclass(frozen=True)
class FilledCircle:
    """Alpha-blended disk; radius is a fraction of min(width, height)."""

    center: NormPoint
    radius: float
    color: ColorId
    alpha: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ParameterError(f"radius must be positive, got {self.radius}")
        if not (0 < self.alpha < 1):
            raise ParameterError(f"circle alpha must lie strictly in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class Label:
    """Opaque capital-letter glyph stamped centered at a point.

    ``scale`` is the integer nearest-neighbor factor: the glyph covers
    5*scale x 7*scale pixels.
    """

    center: NormPoint
    glyph: str
    color: ColorId
    scale: int

    def __post_init__(self) -> None:
        if self.scale < 1:
            raise ParameterError(f"glyph scale must be >= 1, got {self.scale}")
        font.glyph_bitmap(self.glyph)  # validates the glyph


DrawCommand = Union[BoxOutline, FilledCircle, Label]


@dataclass(frozen=True)
class OverlaySpec:
    """Ordered draw commands; order is significant and preserved."""

    commands: tuple[DrawCommand, ...]

    def __post_init__(self) -> None:
        for cmd in self.commands:
            if not isinstance(cmd, (BoxOutline, FilledCircle, Label)):
                raise ParameterError(f"unknown draw command: {cmd!r}")


def iround(v: float) -> int:
    """Round half up (never banker's rounding; pixel math must be stable)."""
    return math.floor(v + 0.5)


def blend_pixel(dst: int, src: int, alpha: float) -> int:
    """One-channel straight-alpha blend, round half up, saturating to [0, 255]."""
    if not (0 <= alpha <= 1):
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    return max(0, min(255, math.floor(alpha * src + (1 - alpha) * dst + 0.5)))


def gray_canvas(width: int, height: int, gray_level: int) -> Canvas:
    """Uniform canvas with every pixel (g, g, g)."""
    if width < 1 or height < 1:
        raise ParameterError(f"canvas dimensions must be positive, got {width}x{height}")
    if not (0 <= gray_level <= 255):
        raise ParameterError(f"gray_level must be an 8-bit value, got {gray_level}")
    return Canvas(np.full((height, width, 3), gray_level, dtype=np.uint8))


def load_image(path: Union[str, Path]) -> Canvas:
    """Decode a PNG or JPEG file into a Canvas."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"image not found: {p}")
    try:
        with Image.open(p) as img:
            fmt = img.format
            if fmt not in ("PNG", "JPEG"):
                raise UnsupportedFormatError(f"unsupported image format {fmt!r} at {p}")
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode image {p}: {exc}") from exc
    return Canvas(arr.copy())


def save_image(canvas: Canvas, path: Union[str, Path]) -> None:
    """Write a canvas as PNG (lossless; save-then-load restores exact pixels)."""
    Image.fromarray(canvas.pixels, mode="RGB").save(Path(path), format="PNG")


def encode_png(canvas: Canvas) -> bytes:
    """PNG bytes for a canvas; identical input yields identical bytes."""
    buf = io.BytesIO()
    Image.fromarray(canvas.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _clip_span(lo: int, hi: int, limit: int) -> tuple[int, int]:
    return max(0, lo), min(limit, hi)


def _apply_box(pixels: np.ndarray, mask: Optional[np.ndarray], idx: int, cmd: BoxOutline) -> None:
    h, w = pixels.shape[:2]
    x0 = iround(cmd.box.left * w)
    x1 = iround(cmd.box.right * w)
    y0 = iround(cmd.box.top * h)
    y1 = iround(cmd.box.bottom * h)
    s = cmd.stroke
    rgb = np.array(cmd.color.rgb, dtype=np.uint8)
    # Four stroke strips, inset into the box so the outline never leaves it.
    strips = (
        (x0, x1, y0, min(y0 + s, y1)),  # top
        (x0, x1, max(y1 - s, y0), y1),  # bottom
        (x0, min(x0 + s, x1), y0, y1),  # left
        (max(x1 - s, x0), x1, y0, y1),  # right
    )
    for sx0, sx1, sy0, sy1 in strips:
        cx0, cx1 = _clip_span(sx0, sx1, w)
        cy0, cy1 = _clip_span(sy0, sy1, h)
        if cx0 >= cx1 or cy0 >= cy1:
            continue
        pixels[cy0:cy1, cx0:cx1] = rgb
        if mask is not None:
            mask[cy0:cy1, cx0:cx1] = idx


def _apply_circle(
    pixels: np.ndarray, mask: Optional[np.ndarray], idx: int, cmd: FilledCircle
) -> None:
    h, w = pixels.shape[:2]
    cx = cmd.center.x * w
    cy = cmd.center.y * h
    r = cmd.radius * min(w, h)
    x0, x1 = _clip_span(math.floor(cx - r) - 1, math.ceil(cx + r) + 1, w)
    y0, y1 = _clip_span(math.floor(cy - r) - 1, math.ceil(cy + r) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1, dtype=np.float64) + 0.5 - cx
    ys = np.arange(y0, y1, dtype=np.float64) + 0.5 - cy
    inside = (ys[:, None] ** 2 + xs[None, :] ** 2) < r * r
    if not inside.any():
        return
    patch = pixels[y0:y1, x0:x1].astype(np.float64)
    src = np.array(cmd.color.rgb, dtype=np.float64)
    blended = np.floor(cmd.alpha * src + (1 - cmd.alpha) * patch + 0.5)
    np.clip(blended, 0, 255, out=blended)
    patch_out = pixels[y0:y1, x0:x1]
    patch_out[inside] = blended[inside].astype(np.uint8)
    if mask is not None:
        mask[y0:y1, x0:x1][inside] = idx


def _apply_label(pixels: np.ndarray, mask: Optional[np.ndarray], idx: int, cmd: Label) -> None:
    h, w = pixels.shape[:2]
    bitmap = font.glyph_bitmap(cmd.glyph)
    s = cmd.scale
    scaled = np.kron(bitmap, np.ones((s, s), dtype=bool))
    gh, gw = scaled.shape
    x0 = iround(cmd.center.x * w - gw / 2)
    y0 = iround(cmd.center.y * h - gh / 2)
    cx0, cx1 = _clip_span(x0, x0 + gw, w)
    cy0, cy1 = _clip_span(y0, y0 + gh, h)
    if cx0 >= cx1 or cy0 >= cy1:
        return
    sub = scaled[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
    pixels[cy0:cy1, cx0:cx1][sub] = np.array(cmd.color.rgb, dtype=np.uint8)
    if mask is not None:
        mask[cy0:cy1, cx0:cx1][sub] = idx


def _apply_command(
    pixels: np.ndarray, mask: Optional[np.ndarray], idx: int, cmd: DrawCommand
) -> None:
    if isinstance(cmd, BoxOutline):
        _apply_box(pixels, mask, idx, cmd)
    elif isinstance(cmd, FilledCircle):
        _apply_circle(pixels, mask, idx, cmd)
    else:
        _apply_label(pixels, mask, idx, cmd)


def compose(canvas: Canvas, spec: OverlaySpec) -> Canvas:
    """New canvas with the overlay applied in command order; input unchanged."""
    out = canvas.pixels.copy()
    for i, cmd in enumerate(spec.commands):
        _apply_command(out, None, i, cmd)
    return Canvas(out)


def rasterize_overlay_only(
    spec: OverlaySpec, width: int, height: int
) -> tuple[Canvas, np.ndarray]:
    """Render the overlay on black and return a per-pixel coverage mask.

    The mask holds, per pixel, the index of the last command that touched it,
    or -1 where no command did.
    """
    if width < 1 or height < 1:
        raise ParameterError(f"canvas dimensions must be positive, got {width}x{height}")
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    mask = np.full((height, width), -1, dtype=np.int32)
    for i, cmd in enumerate(spec.commands):
        _apply_command(pixels, mask, i, cmd)
    return Canvas(pixels), mask


# --- overlay (de)serialization for sidecar records ---------------------------


def command_to_dict(cmd: DrawCommand) -> dict:
    if isinstance(cmd, BoxOutline):
        return {
            "type": "box_outline",
            "center": [cmd.box.center.x, cmd.box.center.y],
            "width": cmd.box.width,
            "height": cmd.box.height,
            "color": cmd.color.name,
            "stroke": cmd.stroke,
        }
    if isinstance(cmd, FilledCircle):
        return {
            "type": "filled_circle",
            "center": [cmd.center.x, cmd.center.y],
            "radius": cmd.radius,
            "color": cmd.color.name,
            "alpha": cmd.alpha,
        }
    return {
        "type": "label",
        "center": [cmd.center.x, cmd.center.y],
        "glyph": cmd.glyph,
        "color": cmd.color.name,
        "scale": cmd.scale,
    }


def command_from_dict(d: dict) -> DrawCommand:
    kind = d.get("type")
    if kind == "box_outline":
        box = NormBox(
            NormPoint(d["center"][0], d["center"][1]), d["width"], d["height"]
        )
        return BoxOutline(box, color_by_name(d["color"]), int(d["stroke"]))
    if kind == "filled_circle":
        return FilledCircle(
            NormPoint(d["center"][0], d["center"][1]),
            d["radius"],
            color_by_name(d["color"]),
            d["alpha"],
        )
    if kind == "label":
        return Label(
            NormPoint(d["center"][0], d["center"][1]),
            d["glyph"],
            color_by_name(d["color"]),
            int(d["scale"]),
        )
    raise ParameterError(f"unknown overlay command type: {kind!r}")


def spec_to_list(spec: OverlaySpec) -> list[dict]:
    return [command_to_dict(c) for c in spec.commands]


def spec_from_list(items: list[dict]) -> OverlaySpec:
    return OverlaySpec(tuple(command_from_dict(d) for d in items))
