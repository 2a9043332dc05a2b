"""Core domain types: utterances, the tutor-move codebook, the
verifier(annotator) orchestration grammar, and per-utterance audit records.

Everything here is an immutable value after construction and safe to share
across threads.
"""

from __future__ import annotations

import re
from dataclasses import InitVar, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .errors import CodebookError, ContractError, SpecParseError

#: Sentinel label recorded when a response cannot be parsed after re-asks.
#: Kept inside the label space so count conservation survives bad responses.
UNPARSEABLE = "UNPARSEABLE"

_NAME_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*")


class Speaker(str, Enum):
    TUTOR = "TUTOR"
    STUDENT = "STUDENT"


class Condition(str, Enum):
    UNVERIFIED = "UNVERIFIED"
    SELF_VERIFY = "SELF_VERIFY"
    CROSS_VERIFY = "CROSS_VERIFY"


class Decision(str, Enum):
    RETAIN = "RETAIN"
    REVISE = "REVISE"
    NONE = "NONE"  # final-record decision for unverified or unverifiable utterances


def normalize_category_name(name: str) -> str:
    """Canonical form: uppercase with single internal spaces."""
    return " ".join(name.split()).upper()


@dataclass(frozen=True)
class Utterance:
    session_id: str
    turn_index: int
    speaker: Speaker
    text: str

    def __post_init__(self):
        if not self.session_id:
            raise ContractError("utterance requires a session_id")
        if self.turn_index < 0:
            raise ContractError(f"turn_index must be >= 0, got {self.turn_index}")
        if not isinstance(self.speaker, Speaker):
            object.__setattr__(self, "speaker", Speaker(self.speaker))
        if not self.text.strip():
            raise ContractError(
                f"empty text at ({self.session_id!r}, {self.turn_index})"
            )

    @property
    def ref(self) -> tuple[str, int]:
        return (self.session_id, self.turn_index)


@dataclass(frozen=True)
class Transcript:
    """One session's turns, contiguous from turn_index 0."""

    session_id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        for i, utt in enumerate(self.utterances):
            if utt.session_id != self.session_id:
                raise ContractError(
                    f"utterance session {utt.session_id!r} != transcript "
                    f"session {self.session_id!r}"
                )
            if utt.turn_index != i:
                raise ContractError(
                    f"session {self.session_id!r}: expected turn_index {i}, "
                    f"got {utt.turn_index} (turns must be unique and contiguous)"
                )

    def __len__(self) -> int:
        return len(self.utterances)

    def __getitem__(self, index: int) -> Utterance:
        return self.utterances[index]

    def tutor_indices(self) -> list[int]:
        return [u.turn_index for u in self.utterances if u.speaker is Speaker.TUTOR]


@dataclass(frozen=True)
class Category:
    name: str
    definition: str
    positive_examples: tuple[str, ...] = ()
    near_misses: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "name", normalize_category_name(self.name))
        object.__setattr__(self, "positive_examples", tuple(self.positive_examples))
        object.__setattr__(self, "near_misses", tuple(self.near_misses))


@dataclass(frozen=True)
class Codebook:
    """Closed label set. Construction normalizes names but does not reject
    invalid books; run validate_codebook (or require_valid) before use."""

    categories: tuple[Category, ...]
    version: str = "unversioned"
    source_note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def label_space(self) -> frozenset[str]:
        """Valid record labels: every category name plus the UNPARSEABLE sentinel."""
        return frozenset(self.names) | {UNPARSEABLE}

    def get(self, name: str) -> Optional[Category]:
        wanted = normalize_category_name(name)
        for cat in self.categories:
            if cat.name == wanted:
                return cat
        return None

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None

    def require_valid(self) -> "Codebook":
        issues = validate_codebook(self)
        if issues:
            detail = "; ".join(str(i) for i in issues)
            raise CodebookError(f"invalid codebook ({self.version}): {detail}")
        return self


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate_codebook(codebook: Codebook) -> list[ValidationIssue]:
    """Structural check; an empty report means every invariant holds."""
    issues: list[ValidationIssue] = []
    if len(codebook.categories) < 2:
        issues.append(
            ValidationIssue(
                "too-few-categories",
                f"codebook needs at least 2 categories, has {len(codebook.categories)}",
            )
        )
    seen: set[str] = set()
    for cat in codebook.categories:
        if not cat.name:
            issues.append(ValidationIssue("empty-name", "category with empty name"))
            continue
        if cat.name == UNPARSEABLE:
            issues.append(
                ValidationIssue(
                    "reserved-name", f"{UNPARSEABLE} is reserved for the sentinel label"
                )
            )
        if cat.name in seen:
            issues.append(
                ValidationIssue("duplicate-name", f"duplicate category {cat.name}")
            )
        seen.add(cat.name)
        if not cat.definition.strip():
            issues.append(
                ValidationIssue(
                    "missing-definition", f"category {cat.name} has an empty definition"
                )
            )
    return issues


@dataclass(frozen=True)
class OrchestrationSpec:
    """Parsed verifier(annotator) configuration.

    The bare-name form (no parentheses) denotes the unverified condition;
    self-verification is the special case verifier == annotator.
    """

    condition: Condition
    annotator: str
    verifier: Optional[str] = None

    def __post_init__(self):
        if not self.annotator:
            raise ContractError("spec requires an annotator id")
        if self.condition is Condition.UNVERIFIED:
            if self.verifier is not None:
                raise ContractError("UNVERIFIED spec must not name a verifier")
        elif self.condition is Condition.SELF_VERIFY:
            if self.verifier != self.annotator:
                raise ContractError("SELF_VERIFY requires verifier == annotator")
        elif self.condition is Condition.CROSS_VERIFY:
            if self.verifier is None or self.verifier == self.annotator:
                raise ContractError("CROSS_VERIFY requires a distinct verifier")

    @property
    def backend_ids(self) -> tuple[str, ...]:
        if self.verifier is None or self.verifier == self.annotator:
            return (self.annotator,)
        return (self.annotator, self.verifier)


def _valid_name(token: str) -> bool:
    return bool(_NAME_RE.fullmatch(token))


def parse_orchestration_spec(text: str) -> OrchestrationSpec:
    """Parse "Verifier(Annotator)" / "Annotator" notation into a spec.

    Backend names are opaque identifiers ([A-Za-z0-9._-], starting
    alphanumeric); anything else names the offending span in the error.
    """
    raw = text.strip()
    if not raw:
        raise SpecParseError("empty orchestration spec")

    open_idx = raw.find("(")
    if open_idx == -1:
        if ")" in raw:
            raise SpecParseError(
                f"unbalanced ')' in {raw!r} at position {raw.find(')')}"
            )
        if not _valid_name(raw):
            raise SpecParseError(f"invalid backend name {raw!r}")
        return OrchestrationSpec(Condition.UNVERIFIED, annotator=raw)

    if not raw.endswith(")"):
        raise SpecParseError(f"expected {raw!r} to end with ')' after '(' ")
    verifier = raw[:open_idx].strip()
    inner = raw[open_idx + 1 : -1].strip()
    if "(" in inner or ")" in inner:
        bad = inner[max(inner.find("("), inner.find(")"))]
        raise SpecParseError(
            f"nested or unbalanced {bad!r} inside {raw!r}; "
            "only one level of verifier(annotator) is supported"
        )
    if not verifier:
        raise SpecParseError(f"missing verifier name before '(' in {raw!r}")
    if not inner:
        raise SpecParseError(f"missing annotator name inside parentheses in {raw!r}")
    if not _valid_name(verifier):
        raise SpecParseError(f"invalid verifier name {verifier!r}")
    if not _valid_name(inner):
        raise SpecParseError(f"invalid annotator name {inner!r}")

    if verifier == inner:
        return OrchestrationSpec(Condition.SELF_VERIFY, annotator=inner, verifier=verifier)
    return OrchestrationSpec(Condition.CROSS_VERIFY, annotator=inner, verifier=verifier)


def format_orchestration_spec(spec: OrchestrationSpec) -> str:
    if spec.condition is Condition.UNVERIFIED:
        return spec.annotator
    return f"{spec.verifier}({spec.annotator})"


@dataclass(frozen=True)
class AnnotationRecord:
    """One (a)-item of the audit trail: the annotator's initial label."""

    session_id: str
    turn_index: int
    label: str
    justification: str
    backend: str
    run_id: str
    sequence_no: int
    label_space: InitVar[frozenset[str]]

    def __post_init__(self, label_space: frozenset[str]):
        if self.label not in label_space:
            raise ContractError(
                f"label {self.label!r} outside codebook + {UNPARSEABLE}"
            )

    @property
    def ref(self) -> tuple[str, int]:
        return (self.session_id, self.turn_index)


@dataclass(frozen=True)
class VerificationRecord:
    """The (b)-(d) audit items: decision, final label, justification."""

    session_id: str
    turn_index: int
    decision: Decision
    final_label: str
    justification: str
    backend: str
    run_id: str
    sequence_no: int
    label_space: InitVar[frozenset[str]]
    initial_label: InitVar[str]

    def __post_init__(self, label_space: frozenset[str], initial_label: str):
        if self.decision not in (Decision.RETAIN, Decision.REVISE):
            raise ContractError(
                f"verification decision must be RETAIN or REVISE, got {self.decision}"
            )
        if self.decision is Decision.RETAIN:
            if self.final_label != initial_label:
                raise ContractError("RETAIN must keep the initial label")
        else:
            if self.final_label == initial_label:
                raise ContractError("REVISE must change the label")
            if self.final_label not in label_space or self.final_label == UNPARSEABLE:
                raise ContractError(
                    f"REVISE final label {self.final_label!r} not in codebook"
                )

    @property
    def ref(self) -> tuple[str, int]:
        return (self.session_id, self.turn_index)


# --- codebook file format -------------------------------------------------

def load_codebook(path: str | Path) -> Codebook:
    """Read a codebook document (version, source_note, categories[])."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise CodebookError(f"{path}: not a valid codebook document: {exc}") from exc
    return codebook_from_dict(data, source=str(path))


def codebook_from_dict(data: object, source: str = "<dict>") -> Codebook:
    if not isinstance(data, dict):
        raise CodebookError(f"{source}: codebook root must be a mapping")
    raw_cats = data.get("categories")
    if not isinstance(raw_cats, list):
        raise CodebookError(f"{source}: 'categories' must be a list")
    categories = []
    for i, entry in enumerate(raw_cats):
        if not isinstance(entry, dict) or "name" not in entry:
            raise CodebookError(f"{source}: categories[{i}] needs a 'name' field")
        categories.append(
            Category(
                name=str(entry["name"]),
                definition=str(entry.get("definition", "")),
                positive_examples=tuple(str(x) for x in entry.get("positive_examples") or ()),
                near_misses=tuple(str(x) for x in entry.get("near_misses") or ()),
            )
        )
    return Codebook(
        categories=tuple(categories),
        version=str(data.get("version", "unversioned")),
        source_note=str(data.get("source_note", "")),
    )


def codebook_to_dict(codebook: Codebook) -> dict:
    return {
        "version": codebook.version,
        "source_note": codebook.source_note,
        "categories": [
            {
                "name": c.name,
                "definition": c.definition,
                "positive_examples": list(c.positive_examples),
                "near_misses": list(c.near_misses),
            }
            for c in codebook.categories
        ],
    }


def save_codebook(codebook: Codebook, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(codebook_to_dict(codebook), sort_keys=False, allow_unicode=True),
        encoding="utf-8",
    )


def load_default_codebook() -> Codebook:
    """The shipped 11-move tutoring rubric."""
    ref = resources.files("verilabel.fixtures").joinpath("tutor_moves.yaml")
    data = yaml.safe_load(ref.read_text(encoding="utf-8"))
    return codebook_from_dict(data, source="verilabel.fixtures/tutor_moves.yaml")
