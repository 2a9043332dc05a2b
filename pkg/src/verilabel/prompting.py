"""Prompt rendering and response parsing.

Prompts are pure functions of (template version, codebook, inputs); parsing
is total: any string yields a value, never an exception.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .domain import UNPARSEABLE, Codebook, Decision, normalize_category_name
from .errors import ConfigError, ContractError
from .ingest import AnnotationContext

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Z_]+)\}\}")
# Tolerant of markdown emphasis on either side of the colon ("**LABEL:**",
# "**LABEL**:", "LABEL: **X**") since models decorate headings freely.
_LABEL_LINE_RE = re.compile(
    r"^\s*\**\s*LABEL\s*\**\s*:\s*\**\s*(.*?)\s*\**\s*$", re.IGNORECASE
)
_DECISION_LINE_RE = re.compile(
    r"^\s*\**\s*DECISION\s*\**\s*:\s*\**\s*(.*?)\s*\**\s*$", re.IGNORECASE
)
_JUSTIFICATION_LINE_RE = re.compile(
    r"^\s*\**\s*JUSTIFICATION\s*\**\s*:\s*\**\s*(.*?)\s*\**\s*$", re.IGNORECASE
)


@dataclass(frozen=True)
class TemplatePair:
    """Annotation + verification templates shipped under one version string."""

    version: str
    annotation: str
    verification: str


def load_templates(directory: Optional[str | Path] = None, version: str = "v1") -> TemplatePair:
    """Load template files annotation_<version>.txt / verification_<version>.txt.

    With no directory, the packaged defaults are used.
    """
    if directory is None:
        base = resources.files("verilabel.fixtures").joinpath("templates")
        try:
            annotation = base.joinpath(f"annotation_{version}.txt").read_text("utf-8")
            verification = base.joinpath(f"verification_{version}.txt").read_text("utf-8")
        except FileNotFoundError as exc:
            raise ConfigError(f"no packaged template version {version!r}") from exc
        return TemplatePair(version, annotation, verification)

    directory = Path(directory)
    ann_path = directory / f"annotation_{version}.txt"
    ver_path = directory / f"verification_{version}.txt"
    for p in (ann_path, ver_path):
        if not p.is_file():
            raise ConfigError(f"template file not found: {p}")
    return TemplatePair(version, ann_path.read_text("utf-8"), ver_path.read_text("utf-8"))


@lru_cache(maxsize=16)
def render_rubric(codebook: Codebook) -> str:
    """One rubric entry per category: name, definition, examples, near-misses."""
    lines: list[str] = []
    for cat in codebook.categories:
        definition = " ".join(cat.definition.split())
        lines.append(f"- {cat.name}: {definition}")
        for example in cat.positive_examples:
            lines.append(f"    e.g., {example}")
        for miss in cat.near_misses:
            lines.append(f"    not this move: {miss}")
    return "\n".join(lines)


def _substitute(template: str, values: dict[str, Optional[str]]) -> str:
    """Fill {{NAME}} placeholders. A line whose placeholders are all absent
    (value None) is dropped entirely, leaving no trace in the output."""
    out_lines: list[str] = []
    for line in template.splitlines():
        names = _PLACEHOLDER_RE.findall(line)
        if names:
            present = {n: values.get(n) for n in names}
            if all(v is None for v in present.values()):
                continue
            line = _PLACEHOLDER_RE.sub(
                lambda m: present.get(m.group(1)) or "", line
            )
        out_lines.append(line)
    return "\n".join(out_lines)


def _context_values(context: AnnotationContext) -> dict[str, Optional[str]]:
    return {
        "FOCAL": f"Tutor: {context.focal.text}",
        "PRECEDING_STUDENT": (
            f"Student (preceding): {context.preceding_student.text}"
            if context.preceding_student is not None
            else None
        ),
        "PRIOR_TUTOR": (
            f"Tutor (earlier): {context.prior_tutor.text}"
            if context.prior_tutor is not None
            else None
        ),
    }


def render_annotation_prompt(
    codebook: Codebook, context: AnnotationContext, templates: TemplatePair
) -> str:
    values = _context_values(context)
    values["RUBRIC"] = render_rubric(codebook)
    return _substitute(templates.annotation, values)


def render_verification_prompt(
    codebook: Codebook,
    context: AnnotationContext,
    initial_label: str,
    annotator_justification: str,
    templates: TemplatePair,
) -> str:
    if initial_label not in codebook:
        raise ContractError(
            f"initial label {initial_label!r} is not a codebook category"
        )
    values = _context_values(context)
    values["RUBRIC"] = render_rubric(codebook)
    values["INITIAL_LABEL"] = normalize_category_name(initial_label)
    values["RATIONALE"] = annotator_justification or "(none given)"
    return _substitute(templates.verification, values)


@dataclass(frozen=True)
class ParsedAnnotation:
    label: str  # codebook category or UNPARSEABLE
    justification: str

    @property
    def ok(self) -> bool:
        return self.label != UNPARSEABLE


@dataclass(frozen=True)
class ParsedVerification:
    decision: Decision  # RETAIN or REVISE
    final_label: str
    justification: str
    flagged: bool  # True when the fallback RETAIN rule was applied

    @property
    def ok(self) -> bool:
        return not self.flagged


def _first_match(raw: str, pattern: re.Pattern) -> Optional[str]:
    for line in raw.splitlines():
        m = pattern.match(line)
        if m:
            return m.group(1)
    return None


def parse_annotation_response(raw: str, codebook: Codebook) -> ParsedAnnotation:
    """Extract LABEL/JUSTIFICATION lines; unmatched labels become UNPARSEABLE."""
    justification = _first_match(raw, _JUSTIFICATION_LINE_RE) or ""
    label_text = _first_match(raw, _LABEL_LINE_RE)
    if label_text is None:
        return ParsedAnnotation(UNPARSEABLE, justification)
    category = codebook.get(label_text)
    if category is None:
        return ParsedAnnotation(UNPARSEABLE, justification)
    return ParsedAnnotation(category.name, justification)


def parse_verification_response(
    raw: str, codebook: Codebook, initial_label: str
) -> ParsedVerification:
    """Extract DECISION/LABEL/JUSTIFICATION.

    RETAIN keeps the initial label regardless of any label in the response.
    A REVISE without a usable, different codebook label falls back to a
    flagged RETAIN so every utterance still ends with exactly one label.
    """
    initial = normalize_category_name(initial_label)
    justification = _first_match(raw, _JUSTIFICATION_LINE_RE) or ""
    decision_text = _first_match(raw, _DECISION_LINE_RE)
    decision = None
    if decision_text is not None:
        token = decision_text.strip().upper()
        if token.startswith("RETAIN"):
            decision = Decision.RETAIN
        elif token.startswith("REVISE"):
            decision = Decision.REVISE

    if decision is Decision.RETAIN:
        return ParsedVerification(Decision.RETAIN, initial, justification, flagged=False)

    if decision is Decision.REVISE:
        label_text = _first_match(raw, _LABEL_LINE_RE)
        category = codebook.get(label_text) if label_text is not None else None
        if category is not None and category.name != initial:
            return ParsedVerification(
                Decision.REVISE, category.name, justification, flagged=False
            )

    # No decision, or a REVISE that does not name a usable different label.
    return ParsedVerification(Decision.RETAIN, initial, justification, flagged=True)
