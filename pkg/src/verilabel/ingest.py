"""Corpus loading, discourse chunking, and per-utterance context assembly.

A "turn" is one chat message row; consecutive rows by the same speaker are
never merged, so utterance counts match the raw transcript.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .domain import Speaker, Transcript, Utterance
from .errors import ConfigError, ContractError, TranscriptError

TRANSCRIPT_FIELDS = ("session_id", "turn_index", "speaker", "text")

DEFAULT_CHUNK_TARGET = 80
DEFAULT_CHUNK_OVERLAP = 2


@dataclass(frozen=True)
class Chunk:
    """Half-open turn span [start, end) within one session. The first
    overlap_prefix_len turns are shared with the previous chunk."""

    session_id: str
    start: int
    end: int
    overlap_prefix_len: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ContractError(f"bad chunk span [{self.start}, {self.end})")
        if not (0 <= self.overlap_prefix_len <= self.end - self.start):
            raise ContractError("overlap prefix longer than chunk")

    @property
    def new_start(self) -> int:
        """First turn not shared with the previous chunk."""
        return self.start + self.overlap_prefix_len

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class AnnotationContext:
    """Three-part context handed to the model: the focal tutor utterance,
    the nearest preceding student turn, and the tutor's prior turn."""

    focal: Utterance
    preceding_student: Optional[Utterance] = None
    prior_tutor: Optional[Utterance] = None

    def __post_init__(self):
        if self.focal.speaker is not Speaker.TUTOR:
            raise ContractError("focal utterance must be a tutor turn")


def _parse_row(row: dict, where: str) -> Utterance:
    missing = [f for f in TRANSCRIPT_FIELDS if row.get(f) in (None, "")]
    if missing:
        raise TranscriptError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        turn_index = int(row["turn_index"])
    except (TypeError, ValueError):
        raise TranscriptError(f"{where}: turn_index {row['turn_index']!r} is not an integer")
    speaker_raw = str(row["speaker"]).strip().upper()
    try:
        speaker = Speaker(speaker_raw)
    except ValueError:
        raise TranscriptError(
            f"{where}: unknown speaker {row['speaker']!r} (expected TUTOR or STUDENT)"
        )
    try:
        return Utterance(
            session_id=str(row["session_id"]),
            turn_index=turn_index,
            speaker=speaker,
            text=str(row["text"]),
        )
    except ContractError as exc:
        raise TranscriptError(f"{where}: {exc}") from exc


def _iter_jsonl(path: Path) -> Iterable[tuple[str, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TranscriptError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise TranscriptError(f"{where}: each line must be a JSON object")
            yield where, row


def _iter_delimited(path: Path, delimiter: str) -> Iterable[tuple[str, dict]]:
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            return
        unknown = set(reader.fieldnames) - set(TRANSCRIPT_FIELDS)
        if unknown or set(TRANSCRIPT_FIELDS) - set(reader.fieldnames):
            raise TranscriptError(
                f"{path.name}:1: header must be exactly {', '.join(TRANSCRIPT_FIELDS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            yield f"{path.name}:{lineno}", row


def load_transcripts(path: str | Path, format: Optional[str] = None) -> list[Transcript]:
    """Load a corpus file into session transcripts.

    Formats: "jsonl" (one JSON object per line) or "csv"/"tsv" (header row,
    same columns). With format=None the file extension decides. Sessions are
    returned sorted by session_id, turns by turn_index; the result is
    deterministic for a given file.
    """
    path = Path(path)
    if not path.is_file():
        raise TranscriptError(f"corpus file not found: {path}")
    if format is None:
        format = {".jsonl": "jsonl", ".ndjson": "jsonl", ".csv": "csv", ".tsv": "tsv"}.get(
            path.suffix.lower()
        )
        if format is None:
            raise TranscriptError(
                f"cannot infer corpus format from {path.suffix!r}; pass format explicitly"
            )
    if format == "jsonl":
        rows = _iter_jsonl(path)
    elif format == "csv":
        rows = _iter_delimited(path, ",")
    elif format == "tsv":
        rows = _iter_delimited(path, "\t")
    else:
        raise TranscriptError(f"unknown corpus format {format!r}")

    by_session: dict[str, dict[int, Utterance]] = {}
    for where, row in rows:
        utt = _parse_row(row, where)
        session = by_session.setdefault(utt.session_id, {})
        if utt.turn_index in session:
            raise TranscriptError(
                f"{where}: duplicate turn ({utt.session_id!r}, {utt.turn_index})"
            )
        session[utt.turn_index] = utt

    transcripts = []
    for session_id in sorted(by_session):
        turns = by_session[session_id]
        ordered = [turns[i] for i in sorted(turns)]
        try:
            transcripts.append(Transcript(session_id, tuple(ordered)))
        except ContractError as exc:
            raise TranscriptError(f"{path.name}: {exc}") from exc
    return transcripts


def save_transcripts(corpus: list[Transcript], path: str | Path) -> None:
    """Write a corpus as JSONL, the canonical interchange form."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for transcript in corpus:
            for utt in transcript.utterances:
                fh.write(
                    json.dumps(
                        {
                            "session_id": utt.session_id,
                            "turn_index": utt.turn_index,
                            "speaker": utt.speaker.value,
                            "text": utt.text,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )


def corpus_digest(corpus: list[Transcript]) -> str:
    """Order-independent content digest used to bind runs to their corpus."""
    h = hashlib.sha256()
    for transcript in sorted(corpus, key=lambda t: t.session_id):
        for utt in transcript.utterances:
            h.update(
                f"{utt.session_id}\x1f{utt.turn_index}\x1f{utt.speaker.value}\x1f{utt.text}\x1e".encode(
                    "utf-8"
                )
            )
    return h.hexdigest()


def chunk_session(
    transcript: Transcript,
    target_size: int = DEFAULT_CHUNK_TARGET,
    overlap: int = DEFAULT_CHUNK_OVERLAP,
) -> list[Chunk]:
    """Split a session into overlapping chunks at speaker-change boundaries.

    Each chunk carries an overlap-prefix of turns shared with the previous
    chunk plus up to target_size new turns. Interior boundaries snap
    backward to the nearest speaker change within the new-turn window so
    adjacency pairs stay together; a window with no speaker change is cut
    hard at the target. Chunk sizes never exceed target_size + overlap.
    """
    if target_size < 4:
        raise ConfigError(f"chunk target_size must be >= 4, got {target_size}")
    if not (0 <= overlap < target_size):
        raise ConfigError(
            f"chunk overlap must satisfy 0 <= overlap < target_size, got {overlap}"
        )

    n = len(transcript)
    chunks: list[Chunk] = []
    cur = 0  # next new (not-yet-covered) turn
    while cur < n:
        start = max(cur - overlap, 0) if chunks else 0
        remaining = n - cur
        if remaining <= target_size:
            end = n
        else:
            tentative = cur + target_size
            end = tentative
            for i in range(tentative, cur, -1):
                if transcript[i].speaker != transcript[i - 1].speaker:
                    end = i
                    break
        chunks.append(Chunk(transcript.session_id, start, end, cur - start))
        cur = end
    return chunks


def build_context(
    transcript: Transcript, focal_turn_index: int, *, min_index: int = 0
) -> AnnotationContext:
    """Assemble the three-part context for one tutor turn.

    The nearest prior student turn and prior tutor turn are searched
    backward, not below min_index (used to confine the search to the focal
    turn's chunk). Fields are absent when no such turn exists.
    """
    if not (0 <= focal_turn_index < len(transcript)):
        raise ContractError(
            f"turn {focal_turn_index} outside session {transcript.session_id!r}"
        )
    focal = transcript[focal_turn_index]
    if focal.speaker is not Speaker.TUTOR:
        raise ContractError(
            f"turn ({transcript.session_id!r}, {focal_turn_index}) is a student turn"
        )

    preceding_student: Optional[Utterance] = None
    prior_tutor: Optional[Utterance] = None
    for i in range(focal_turn_index - 1, min_index - 1, -1):
        utt = transcript[i]
        if preceding_student is None and utt.speaker is Speaker.STUDENT:
            preceding_student = utt
        if prior_tutor is None and utt.speaker is Speaker.TUTOR:
            prior_tutor = utt
        if preceding_student is not None and prior_tutor is not None:
            break
    return AnnotationContext(focal, preceding_student, prior_tutor)
