"""Independent verification oracle for emitted datasets.

Every answer is re-derived from the sidecar's overlay commands using only
:mod:`overlayqa.geometry` primitives plus the recorded template id, slots, and
option order; no task- or template-generation code path is involved. Counting
answers can additionally be checked at the pixel level by re-rendering the
overlay and counting connected components per color.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from . import geometry, render
from .errors import AmbiguityError, MalformedRecordError, ManifestError
from .geometry import PALETTE, NormPoint
from .pipeline import IMAGE_TOKEN, load_manifest, load_sidecar
from .render import BoxOutline, FilledCircle, Label, OverlaySpec
from .templates import TemplateRegistry, builtin_registry, fill, load_registry

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int32)


# --- overlay introspection -----------------------------------------------------


def _boxes(spec: OverlaySpec) -> list[BoxOutline]:
    return [c for c in spec.commands if isinstance(c, BoxOutline)]


def _circles(spec: OverlaySpec) -> list[FilledCircle]:
    return [c for c in spec.commands if isinstance(c, FilledCircle)]


def _labels(spec: OverlaySpec) -> list[Label]:
    return [c for c in spec.commands if isinstance(c, Label)]


def _box_of_color(spec: OverlaySpec, color: str) -> BoxOutline:
    matches = [b for b in _boxes(spec) if b.color.name == color]
    if len(matches) != 1:
        raise MalformedRecordError(
            f"expected exactly one {color} box in the overlay, found {len(matches)}"
        )
    return matches[0]


def _label_points(spec: OverlaySpec) -> dict[str, NormPoint]:
    points: dict[str, NormPoint] = {}
    for lab in _labels(spec):
        if lab.glyph in points:
            raise MalformedRecordError(f"duplicate label {lab.glyph!r} in overlay")
        points[lab.glyph] = lab.center
    return points


def _circle_color_at(spec: OverlaySpec, point: NormPoint) -> str:
    matches = [c for c in _circles(spec) if c.center == point]
    if len(matches) != 1:
        raise MalformedRecordError(
            f"expected exactly one circle centered at ({point.x}, {point.y}), "
            f"found {len(matches)}"
        )
    return matches[0].color.name


def _recompute_relation(spec: OverlaySpec, truth: dict, margin: float) -> geometry.Relation:
    box_a = _box_of_color(spec, truth["a_color"])
    box_b = _box_of_color(spec, truth["b_color"])
    rel = geometry.relation_between(box_a.box, box_b.box, margin)
    if rel is None:
        raise AmbiguityError(
            f"boxes admit no relation at margin {margin} "
            f"({truth['a_color']} vs {truth['b_color']})"
        )
    return rel


def _tally(spec: OverlaySpec, color: str) -> int:
    return sum(1 for c in _circles(spec) if c.color.name == color)


# --- answer re-derivation --------------------------------------------------------


def rederive_answer(task: dict, margin: float, closest_gap: float) -> str:
    """Recompute a task's answer string from its overlay commands alone.

    Uses the recorded template id, slots, and option order only to FORMAT the
    geometric result (letter/word/True-False), never to obtain it. Raises
    AmbiguityError when the overlay violates the margin or gap (a generator
    bug), MalformedRecordError when the record is structurally unusable.
    """
    spec = render.spec_from_list(task["overlay"])
    truth = task["truth"]
    subtask = task["subtask"]
    template_id = task["template_id"]

    if subtask == "relative_position":
        rel = _recompute_relation(spec, truth, margin)
        if template_id == "spatial-rel-b":
            stated = task["slots"]["rel_A"]
            if stated not in (rel.word, rel.opposite.word):
                raise MalformedRecordError(f"statement relation {stated!r} is off-axis")
            return "True" if stated == rel.word else "False"
        return rel.word

    if subtask == "coordinate":
        center = _box_of_color(spec, truth["color"]).box.center
        # Canonical two-decimal coordinate format (kept in sync by tests).
        return f"({center.x:.2f}, {center.y:.2f})"

    if subtask == "count_color":
        tally = _tally(spec, truth["target_color"])
        if template_id == "count-choice":
            options = (task.get("option_order") or {}).get("options")
            if not options:
                raise MalformedRecordError("count-choice record lacks option_order")
            if tally not in options:
                raise MalformedRecordError(
                    f"recomputed count {tally} is not among the rendered options {options}"
                )
            return "ABC"[options.index(tally)]
        return str(tally)

    if subtask == "closest_point":
        points = _label_points(spec)
        try:
            target = points[truth["target_label"]]
            candidates = [points[lab] for lab in truth["candidate_labels"]]
        except KeyError as exc:
            raise MalformedRecordError(f"label {exc} missing from overlay") from exc
        idx = geometry.closest_index(target, candidates, closest_gap)
        return truth["candidate_labels"][idx]

    if subtask == "color_analogy":
        points = _label_points(spec)
        try:
            query_point = points[truth["query_label"]]
        except KeyError as exc:
            raise MalformedRecordError(f"label {exc} missing from overlay") from exc
        query_color = _circle_color_at(spec, query_point)
        matches = [
            lab
            for lab, pt in points.items()
            if lab != truth["query_label"] and _circle_color_at(spec, pt) == query_color
        ]
        if len(matches) != 1:
            raise AmbiguityError(
                f"{len(matches)} circles share the query color {query_color!r}; expected exactly 1"
            )
        return matches[0]

    raise MalformedRecordError(f"unknown subtask {subtask!r}")


# --- pixel-level counting oracle ---------------------------------------------------


def count_components(mask: np.ndarray) -> int:
    """Number of 4-connected components in a boolean mask."""
    _, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    return int(n)


def pixel_count_oracle(task: dict, width: int, height: int) -> dict[str, int]:
    """Count disks per palette color by re-rendering the overlay.

    Renders on black, builds an exact-color mask per palette color from the
    blended disk values, and counts 4-connected components. Exact because
    rendering is hard-edged and generated disks never overlap or touch.
    """
    spec = render.spec_from_list(task["overlay"])
    canvas, _ = render.rasterize_overlay_only(spec, width, height)
    pixels = canvas.pixels
    alphas_by_color: dict[str, set[float]] = {}
    for c in _circles(spec):
        alphas_by_color.setdefault(c.color.name, set()).add(c.alpha)
    counts: dict[str, int] = {}
    for color in PALETTE:
        total = 0
        for alpha in sorted(alphas_by_color.get(color.name, ())):
            expected = np.array(
                [render.blend_pixel(0, ch, alpha) for ch in color.rgb], dtype=np.uint8
            )
            mask = np.all(pixels == expected, axis=-1)
            total += count_components(mask)
        counts[color.name] = total
    return counts


# --- dataset-level verification -----------------------------------------------------


@dataclass
class VerifyReport:
    samples_checked: int = 0
    tasks_checked: int = 0
    answers_matched: int = 0
    mismatches: list[dict] = field(default_factory=list)
    ambiguity_violations: int = 0
    alpha_violations: int = 0
    distributions: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.ambiguity_violations and not self.alpha_violations

    def to_dict(self) -> dict:
        return {
            "samples_checked": self.samples_checked,
            "tasks_checked": self.tasks_checked,
            "answers_matched": self.answers_matched,
            "mismatches": self.mismatches,
            "ambiguity_violations": self.ambiguity_violations,
            "alpha_violations": self.alpha_violations,
            "ok": self.ok,
            "distributions": self.distributions,
        }


class _Distributions:
    def __init__(self) -> None:
        self.counters: dict[str, dict[str, int]] = {
            "families": {},
            "subtasks": {},
            "templates": {},
            "relation_answers": {},
            "true_false": {},
            "choice_positions": {},
            "count_choice_letters": {},
            "closest_answers": {},
            "analogy_answers": {},
            "count_answers": {},
        }

    def bump(self, counter: str, key: str) -> None:
        bucket = self.counters[counter]
        bucket[key] = bucket.get(key, 0) + 1

    def observe(self, task: dict) -> None:
        self.bump("families", task["family"])
        self.bump("subtasks", task["subtask"])
        self.bump("templates", task["template_id"])
        truth = task["truth"]
        tid = task["template_id"]
        if task["subtask"] == "relative_position":
            self.bump("relation_answers", truth["rel"])
            if tid == "spatial-rel-b":
                self.bump("true_false", task["answer"])
            elif tid == "spatial-rel-c":
                self.bump("choice_positions", "AB"[task["option_order"]["answer_index"]])
        elif task["subtask"] == "count_color":
            self.bump("count_answers", str(truth["count"]))
            if tid == "count-choice":
                self.bump("count_choice_letters", task["answer"])
        elif task["subtask"] == "closest_point":
            self.bump("closest_answers", truth["answer_label"])
        elif task["subtask"] == "color_analogy":
            self.bump("analogy_answers", truth["answer_label"])

    def as_dict(self) -> dict:
        return {k: dict(sorted(v.items())) for k, v in self.counters.items() if v}


def _truth_consistency_issues(task: dict, margin: float, closest_gap: float) -> list[tuple[str, str, str]]:
    """(check, expected, found) triples for recorded-truth vs overlay/slots drift."""
    issues: list[tuple[str, str, str]] = []
    spec = render.spec_from_list(task["overlay"])
    truth = task["truth"]
    slots = task.get("slots") or {}
    option_order = task.get("option_order") or {}
    tid = task["template_id"]
    subtask = task["subtask"]

    def check(name: str, expected, found) -> None:
        if expected != found:
            issues.append((name, repr(expected), repr(found)))

    if subtask == "relative_position":
        rel = _recompute_relation(spec, truth, margin)
        check("truth.rel", rel.word, truth["rel"])
        check("slots.color_A", truth["a_color"], slots.get("color_A"))
        check("slots.color_B", truth["b_color"], slots.get("color_B"))
        if tid in ("spatial-rel-a", "spatial-rel-a-fixed"):
            check("slots.rel_A", rel.word, slots.get("rel_A"))
            check("slots.rel_B", rel.opposite.word, slots.get("rel_B"))
        elif tid == "spatial-rel-b":
            if slots.get("rel_A") not in (rel.word, rel.opposite.word):
                issues.append(
                    ("slots.rel_A", f"one of {rel.word}/{rel.opposite.word}", repr(slots.get("rel_A")))
                )
        elif tid == "spatial-rel-c":
            words = {rel.word, rel.opposite.word}
            check("slots.rel_words", words, {slots.get("rel_A"), slots.get("rel_B")})
            options = option_order.get("options")
            check("option_order.options", [slots.get("rel_A"), slots.get("rel_B")], options)
            if options and option_order.get("answer_index") is not None:
                idx = option_order["answer_index"]
                if not (0 <= idx < len(options)) or options[idx] != rel.word:
                    issues.append(("option_order.answer_index", rel.word, repr(options and idx)))
    elif subtask == "coordinate":
        box = _box_of_color(spec, truth["color"])
        check("truth.point", [box.box.center.x, box.box.center.y], truth["point"])
        check("slots.color", truth["color"], slots.get("color"))
    elif subtask == "count_color":
        check("truth.count", _tally(spec, truth["target_color"]), truth["count"])
        check("slots.color", truth["target_color"], slots.get("color"))
        distractors = {c: n for c, n in truth["distractor_counts"]}
        if truth["target_color"] in distractors:
            issues.append(("truth.distractor_counts", "no target color", truth["target_color"]))
        for color, recorded in sorted(distractors.items()):
            check(f"truth.distractor_counts[{color}]", _tally(spec, color), recorded)
        if tid == "count-choice":
            options = option_order.get("options")
            if not options:
                issues.append(("option_order", "3 options", repr(option_order)))
            else:
                check(
                    "slots.options",
                    [str(v) for v in options],
                    [slots.get("option_A"), slots.get("option_B"), slots.get("option_C")],
                )
                idx = option_order.get("answer_index")
                if idx is None or not (0 <= idx < len(options)) or options[idx] != truth["count"]:
                    issues.append(("option_order.answer_index", str(truth["count"]), repr(idx)))
    elif subtask == "closest_point":
        points = _label_points(spec)
        if truth["target_label"] not in points:
            issues.append(("truth.target_label", "a rendered label", truth["target_label"]))
        else:
            candidates = [points.get(lab) for lab in truth["candidate_labels"]]
            if any(p is None for p in candidates):
                issues.append(("truth.candidate_labels", "rendered labels", str(truth["candidate_labels"])))
            else:
                idx = geometry.closest_index(points[truth["target_label"]], candidates, closest_gap)
                check("truth.answer_label", truth["candidate_labels"][idx], truth["answer_label"])
        check("slots.target_letter", truth["target_label"], slots.get("target_letter"))
        check("option_order.options", list(truth["candidate_labels"]), option_order.get("options"))
    elif subtask == "color_analogy":
        points = _label_points(spec)
        if truth["query_label"] not in points:
            issues.append(("truth.query_label", "a rendered label", truth["query_label"]))
        else:
            query_color = _circle_color_at(spec, points[truth["query_label"]])
            check("truth.shared_color", query_color, truth["shared_color"])
            matches = [
                lab
                for lab, pt in points.items()
                if lab != truth["query_label"] and _circle_color_at(spec, pt) == query_color
            ]
            if len(matches) != 1:
                raise AmbiguityError(f"{len(matches)} circles share the query color")
            check("truth.answer_label", matches[0], truth["answer_label"])
        check("slots.target_letter", truth["query_label"], slots.get("target_letter"))
    return issues


def verify_dataset(
    manifest_path: Union[str, Path],
    sidecar_path: Union[str, Path],
    *,
    pixel_oracle: bool = False,
    templates_file: Optional[Union[str, Path]] = None,
    limit: Optional[int] = None,
) -> VerifyReport:
    """Re-derive and cross-check every recorded task of a dataset.

    Per task: reconstruct the question from the template pattern and recorded
    slots, re-derive the answer from overlay geometry, and compare both against
    the manifest conversation and the sidecar copies; recompute the recorded
    truth fields; enforce the semi-transparency constraint; optionally run the
    pixel-level counting oracle.
    """
    rows = {row["id"]: row for row in load_manifest(manifest_path)}
    header, records = load_sidecar(sidecar_path)
    registry: TemplateRegistry = (
        load_registry(templates_file) if templates_file else builtin_registry()
    )
    gen = header.get("generation", {})
    margin = float(gen.get("margin", 0.05))
    closest_gap = float(gen.get("closest_gap", 0.05))
    render_cfg = header.get("render", {})

    report = VerifyReport()
    dist = _Distributions()

    if limit is not None:
        records = records[:limit]

    for record in records:
        sample_id = record.get("id")
        if sample_id not in rows:
            raise ManifestError(f"sidecar record {sample_id!r} has no manifest sample")
        row = rows[sample_id]
        conversations = row["conversations"]
        record_tasks = record.get("tasks", [])
        k = len(record_tasks)
        if len(conversations) < 2 * k:
            report.mismatches.append(
                {
                    "id": sample_id,
                    "task": None,
                    "check": "conversation_length",
                    "expected": f">= {2 * k} turns",
                    "found": str(len(conversations)),
                }
            )
            continue
        report.samples_checked += 1
        qa_turns = conversations[len(conversations) - 2 * k :]

        for j, task in enumerate(record_tasks):
            report.tasks_checked += 1
            dist.observe(task)
            entry = {"id": sample_id, "task": j}

            def flag(check: str, expected: str, found: str) -> None:
                report.mismatches.append(
                    {**entry, "check": check, "expected": expected, "found": found}
                )

            # Semi-transparency contract on every circle.
            for cmd in task["overlay"]:
                if cmd.get("type") == "filled_circle" and not (0 < cmd.get("alpha", 1) < 1):
                    report.alpha_violations += 1
                    flag("alpha", "alpha strictly in (0, 1)", str(cmd.get("alpha")))

            # Question reconstruction from the template pattern and slots.
            try:
                pattern = registry.by_id(task["template_id"]).user_pattern
                expected_q = fill(pattern, task.get("slots") or {})
            except Exception as exc:
                flag("question_template", "reconstructable question", f"{exc}")
                expected_q = None
            human = qa_turns[2 * j]["value"]
            gpt = qa_turns[2 * j + 1]["value"]
            is_first_turn = len(conversations) == 2 * k and j == 0
            if expected_q is not None:
                expected_turn = (IMAGE_TOKEN + "\n" + expected_q) if is_first_turn else expected_q
                if human != expected_turn:
                    flag("question", expected_turn, human)
                if task.get("question") != expected_q:
                    flag("sidecar_question", expected_q, str(task.get("question")))

            # Answer re-derivation from geometry.
            rederived = None
            try:
                rederived = rederive_answer(task, margin, closest_gap)
            except AmbiguityError as exc:
                report.ambiguity_violations += 1
                flag("ambiguity", "unambiguous configuration", str(exc))
            except MalformedRecordError as exc:
                flag("malformed", "well-formed record", str(exc))

            answer_ok = rederived is not None
            if rederived is not None:
                if task.get("answer") != rederived:
                    flag("answer", rederived, str(task.get("answer")))
                    answer_ok = False
                if gpt != rederived:
                    flag("manifest_answer", rederived, gpt)
                    answer_ok = False
            if answer_ok:
                report.answers_matched += 1

            # Recorded truth and slots must match the overlay exactly.
            try:
                for check, expected, found in _truth_consistency_issues(task, margin, closest_gap):
                    flag(check, expected, found)
            except AmbiguityError as exc:
                report.ambiguity_violations += 1
                flag("ambiguity", "unambiguous configuration", str(exc))
            except MalformedRecordError as exc:
                flag("malformed", "well-formed record", str(exc))

            if pixel_oracle and task["subtask"] == "count_color":
                size = record.get("canvas_size") or [
                    render_cfg.get("canvas_width", 448),
                    render_cfg.get("canvas_height", 448),
                ]
                counts = pixel_count_oracle(task, int(size[0]), int(size[1]))
                truth = task["truth"]
                expected_counts = {truth["target_color"]: truth["count"]}
                expected_counts.update({c: n for c, n in truth["distractor_counts"]})
                for color, expected_n in sorted(expected_counts.items()):
                    if counts.get(color, 0) != expected_n:
                        flag(f"pixel_count[{color}]", str(expected_n), str(counts.get(color, 0)))

    report.mismatches.sort(key=lambda m: (m["id"], m.get("task") or 0, m["check"]))
    report.distributions = dist.as_dict()
    return report


def summarize_sidecar(sidecar_path: Union[str, Path]) -> dict:
    """Distribution summaries only (no cross-checking)."""
    _, records = load_sidecar(sidecar_path)
    dist = _Distributions()
    n = 0
    for record in records:
        for task in record.get("tasks", []):
            n += 1
            dist.observe(task)
    return {"records": len(records), "tasks": n, "distributions": dist.as_dict()}
