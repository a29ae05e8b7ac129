"""Prompt templates and question/answer instantiation.

The built-in template strings are write-protected: golden-file tests pin them
byte-for-byte, including the "closes" spelling, the duplicated [color_A] slot,
and the double spaces in the two-choice spatial template. Do not "fix" them;
they are reproduced exactly as published in the source prompt set.

Slot vocabulary (shared by built-in and user-supplied templates):
  [color_A], [color_B]  color names of the queried box and the other box
  [rel_A], [rel_B]      relation words; semantics depend on the template kind
  [color]               target color (counting, coordinate questions)
  [num]                 free-form count answer
  [target_letter]       label of the target/query circle
  [option_A/B/C]        rendered options (candidate letters or counts)
  [letter]              multiple-choice answer letter
  [answer]              the resolved answer string
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ConfigurationError, ParameterError
from .geometry import NormPoint
from .seeding import choice, coin, shuffled
from .tasks import (
    AnalogyTruth,
    CenterTruth,
    ClosestTruth,
    CountTruth,
    RelationTruth,
    Subtask,
    TaskFamily,
    TaskInstance,
)


class AnswerKind(enum.Enum):
    FREE_FORM = "free_form"
    MULTIPLE_CHOICE = "multiple_choice"
    TRUE_FALSE = "true_false"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    family: TaskFamily
    subtask: Optional[Subtask]
    user_pattern: str
    answer_pattern: str
    answer_kind: AnswerKind
    answer_regex: str
    golden: bool = False
    enabled: bool = True

    def matches(self, family: TaskFamily, subtask: Subtask) -> bool:
        return self.family is family and (self.subtask is None or self.subtask is subtask)


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    template_id: str
    option_order: Optional[dict] = None
    slots: Optional[dict] = None

    def __post_init__(self) -> None:
        if not self.answer:
            raise ParameterError("answer must be non-empty")


_RELATION_WORDS = r"(left|right|above|below)"

BUILTIN_TEMPLATES: tuple[PromptTemplate, ...] = (
    PromptTemplate(
        id="spatial-rel-a",
        family=TaskFamily.SPATIAL_RELATION,
        subtask=Subtask.RELATIVE_POSITION,
        user_pattern="Where is the [color_A] box relative to the [rel_B] box? Answer with [rel_A] or [rel_B].",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.FREE_FORM,
        answer_regex=rf"^{_RELATION_WORDS}$",
        golden=True,
    ),
    PromptTemplate(
        id="spatial-rel-b",
        family=TaskFamily.SPATIAL_RELATION,
        subtask=Subtask.RELATIVE_POSITION,
        user_pattern="Based on the image, is this statement True or False? The [color_A] box is [rel_A] of [color_B] box? Answer with True or False directly.",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.TRUE_FALSE,
        answer_regex=r"^(True|False)$",
        golden=True,
    ),
    PromptTemplate(
        id="spatial-rel-c",
        family=TaskFamily.SPATIAL_RELATION,
        subtask=Subtask.RELATIVE_POSITION,
        user_pattern="Considering the relative positions of the [color_A] box and the [color_B] box in the image provided, where is the [color_A] box  located with respect to the [color_A] box? Select from the following choices. (A) [rel_A]  (B) [rel_B]",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.FREE_FORM,
        answer_regex=rf"^{_RELATION_WORDS}$",
        golden=True,
    ),
    # Cleaned-up variant of spatial-rel-a (distinct-color phrasing); not part
    # of the golden set and disabled unless explicitly enabled via a registry
    # file or config.
    PromptTemplate(
        id="spatial-rel-a-fixed",
        family=TaskFamily.SPATIAL_RELATION,
        subtask=Subtask.RELATIVE_POSITION,
        user_pattern="Where is the [color_A] box relative to the [color_B] box? Answer with [rel_A] or [rel_B].",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.FREE_FORM,
        answer_regex=rf"^{_RELATION_WORDS}$",
        golden=False,
        enabled=False,
    ),
    # No published template exists for the coordinate question; this one is
    # our own and is deliberately not golden.
    PromptTemplate(
        id="spatial-coord",
        family=TaskFamily.SPATIAL_RELATION,
        subtask=Subtask.COORDINATE,
        user_pattern="What are the normalized center coordinates (x, y) of the [color] box? Answer as (x.xx, y.yy).",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.FREE_FORM,
        answer_regex=r"^\(\d+\.\d{2}, \d+\.\d{2}\)$",
        golden=False,
    ),
    PromptTemplate(
        id="count-free",
        family=TaskFamily.COUNTING,
        subtask=Subtask.COUNT_COLOR,
        user_pattern="How many [color] overlay circles are there? Answer with the number directly",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.FREE_FORM,
        answer_regex=r"^\d+$",
        golden=True,
    ),
    PromptTemplate(
        id="count-choice",
        family=TaskFamily.COUNTING,
        subtask=Subtask.COUNT_COLOR,
        user_pattern="How many [color] overlay circles are there? (A) [option_A] (B) [option_B] (C) [option_C] Answer with the option's letter from the given choices directly",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.MULTIPLE_CHOICE,
        answer_regex=r"^[A-C]$",
        golden=True,
    ),
    PromptTemplate(
        id="dist-closest",
        family=TaskFamily.DISTANCE_ANALOGY,
        subtask=Subtask.CLOSEST_POINT,
        user_pattern="There are four colored circles labeled A, B, C, D in this image. Which one is closes to [target_letter] : [option_A], [option_B], or [option_C] ?",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.MULTIPLE_CHOICE,
        answer_regex=r"^[A-Z]$",
        golden=True,
    ),
    PromptTemplate(
        id="dist-analogy",
        family=TaskFamily.DISTANCE_ANALOGY,
        subtask=Subtask.COLOR_ANALOGY,
        user_pattern="What is the letter of the circle that has the same color as the circle with a [target_letter] in it ?",
        answer_pattern="[answer]",
        answer_kind=AnswerKind.FREE_FORM,
        answer_regex=r"^[A-Z]$",
        golden=True,
    ),
)


@dataclass(frozen=True)
class TemplateRegistry:
    templates: tuple[PromptTemplate, ...]

    def by_id(self, template_id: str) -> PromptTemplate:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise ConfigurationError(f"unknown template id: {template_id!r}")

    def eligible(self, family: TaskFamily, subtask: Subtask) -> tuple[PromptTemplate, ...]:
        return tuple(t for t in self.templates if t.enabled and t.matches(family, subtask))


def builtin_registry() -> TemplateRegistry:
    return TemplateRegistry(BUILTIN_TEMPLATES)


def load_registry(path: Union[str, Path]) -> TemplateRegistry:
    """Built-in templates plus user templates from a JSON file.

    File schema: {"templates": [{"id", "family", "subtask" (optional),
    "user_pattern", "answer_pattern", "answer_kind", "answer_regex"
    (optional), "enabled" (optional)}]}. Built-in ids are write-protected:
    a user entry reusing one is rejected.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read template registry {path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("templates"), list):
        raise ConfigurationError(f"template registry {path} must hold a 'templates' list")
    builtin_ids = {t.id for t in BUILTIN_TEMPLATES}
    extra: list[PromptTemplate] = []
    for i, entry in enumerate(data["templates"]):
        try:
            tid = entry["id"]
            if tid in builtin_ids:
                raise ConfigurationError(
                    f"template id {tid!r} is built-in and write-protected"
                )
            extra.append(
                PromptTemplate(
                    id=tid,
                    family=TaskFamily(entry["family"]),
                    subtask=Subtask(entry["subtask"]) if entry.get("subtask") else None,
                    user_pattern=entry["user_pattern"],
                    answer_pattern=entry.get("answer_pattern", "[answer]"),
                    answer_kind=AnswerKind(entry.get("answer_kind", "free_form")),
                    answer_regex=entry.get("answer_regex", r"^.+$"),
                    golden=False,
                    enabled=bool(entry.get("enabled", True)),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(
                f"template registry {path}, entry {i}: {exc}"
            ) from exc
    return TemplateRegistry(BUILTIN_TEMPLATES + tuple(extra))


_SLOT_RE = re.compile(r"\[([A-Za-z_]+)\]")


def fill(pattern: str, slots: dict) -> str:
    """Replace every [slot] token from ``slots``; unknown slots are an error."""

    def _sub(m: "re.Match[str]") -> str:
        key = m.group(1)
        if key not in slots:
            raise ConfigurationError(f"pattern references unknown slot [{key}]")
        return str(slots[key])

    return _SLOT_RE.sub(_sub, pattern)


def format_center(point: NormPoint) -> str:
    """Canonical coordinate answer formatting, two decimals per axis."""
    return f"({point.x:.2f}, {point.y:.2f})"


def pick_template(
    registry: TemplateRegistry,
    family: TaskFamily,
    subtask: Subtask,
    rng: np.random.Generator,
) -> PromptTemplate:
    """Uniform pick over the eligible templates. Consumes 1 draw."""
    pool = registry.eligible(family, subtask)
    if not pool:
        raise ConfigurationError(f"no templates registered for {family.value}/{subtask.value}")
    return choice(rng, pool)


def instantiate(
    template: PromptTemplate,
    instance: TaskInstance,
    rng: np.random.Generator,
    count_range: tuple[int, int] = (1, 6),
) -> QAPair:
    """Fill a template from a task instance.

    Randomized parts (and their draw counts): the True/False statement flips a
    coin (1); the two-choice spatial template places the correct relation at a
    coin-flipped position (1); multiple-choice counting shuffles decoy
    candidates and the rendered options (len(count_range)-2 + 2 draws). All
    other templates consume no draws.
    """
    if not template.matches(instance.family, instance.subtask):
        raise ParameterError(
            f"template {template.id} does not accept {instance.family.value}/{instance.subtask.value}"
        )
    truth = instance.truth
    option_order: Optional[dict] = None

    if isinstance(truth, RelationTruth):
        slots = {
            "color_A": truth.a_color,
            "color_B": truth.b_color,
            "rel_A": truth.rel.word,
            "rel_B": truth.rel.opposite.word,
        }
        answer = truth.rel.word
        if template.answer_kind is AnswerKind.TRUE_FALSE:
            stated_true = coin(rng)
            stated = truth.rel if stated_true else truth.rel.opposite
            slots["rel_A"] = stated.word
            slots["rel_B"] = stated.opposite.word
            answer = "True" if stated_true else "False"
        elif template.id == "spatial-rel-c":
            correct_first = coin(rng)
            words = (
                (truth.rel.word, truth.rel.opposite.word)
                if correct_first
                else (truth.rel.opposite.word, truth.rel.word)
            )
            slots["rel_A"], slots["rel_B"] = words
            option_order = {"options": list(words), "answer_index": 0 if correct_first else 1}
    elif isinstance(truth, CenterTruth):
        slots = {"color": truth.color}
        answer = format_center(truth.point)
    elif isinstance(truth, CountTruth):
        slots = {"color": truth.target_color}
        answer = str(truth.count)
        if template.answer_kind is AnswerKind.MULTIPLE_CHOICE:
            lo, hi = count_range
            decoy_pool = [v for v in range(lo, hi + 1) if v != truth.count]
            if len(decoy_pool) < 2:
                raise ConfigurationError(
                    f"count_range {count_range} leaves fewer than 2 decoys for count {truth.count}"
                )
            decoys = shuffled(rng, decoy_pool)[:2]
            options = shuffled(rng, [truth.count] + decoys)
            index = options.index(truth.count)
            slots.update(
                option_A=str(options[0]), option_B=str(options[1]), option_C=str(options[2])
            )
            answer = "ABC"[index]
            option_order = {"options": options, "answer_index": index}
    elif isinstance(truth, ClosestTruth):
        slots = {"target_letter": truth.target_label}
        for letter, label in zip("ABC", truth.candidate_labels):
            slots[f"option_{letter}"] = label
        answer = truth.answer_label
        option_order = {
            "options": list(truth.candidate_labels),
            "answer_index": truth.candidate_labels.index(truth.answer_label),
        }
    elif isinstance(truth, AnalogyTruth):
        slots = {"target_letter": truth.query_label}
        answer = truth.answer_label
    else:
        raise ParameterError(f"unknown truth type: {type(truth)}")

    slots["answer"] = answer
    question = fill(template.user_pattern, slots)
    answer_str = fill(template.answer_pattern, slots)
    return QAPair(question, answer_str, template.id, option_order, slots)


def validate_answer_format(qa: QAPair, template: PromptTemplate) -> bool:
    """True iff the answer string is well-formed for the template's kind."""
    if template.answer_kind is AnswerKind.TRUE_FALSE:
        return qa.answer in ("True", "False")
    if template.answer_kind is AnswerKind.MULTIPLE_CHOICE:
        if not re.fullmatch(r"[A-Z]", qa.answer):
            return False
        if qa.option_order is None:
            return False
        return ord(qa.answer) - ord("A") < len(qa.option_order["options"])
    return re.fullmatch(template.answer_regex, qa.answer) is not None
