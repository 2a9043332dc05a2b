"""Run engine: annotation pass, optional verification pass, audit log.

Determinism contract: final labels are a function of (manifest, backend
responses), never of task completion order. Workers may finish out of
order under parallelism; a reorder buffer holds their audit events and
flushes them in corpus order, assigning sequence numbers at flush time.
Timestamps live in their own field so replayed runs compare byte-equal
once that field is dropped.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, TextIO

from .backends import ANNOTATE as PHASE_ANNOTATE
from .backends import VERIFY as PHASE_VERIFY
from .backends import Backend, CallContext
from .domain import (
    UNPARSEABLE,
    Codebook,
    Condition,
    Decision,
    OrchestrationSpec,
    Speaker,
    Transcript,
    codebook_to_dict,
    format_orchestration_spec,
    parse_orchestration_spec,
)
from .errors import (
    ConfigError,
    ContractError,
    DigestMismatchError,
    RunSuspendedError,
    TransportError,
    UserInputError,
)
from .ingest import (
    DEFAULT_CHUNK_OVERLAP,
    DEFAULT_CHUNK_TARGET,
    AnnotationContext,
    build_context,
    chunk_session,
    corpus_digest,
)
from .metrics import LabelSeries, Ref, save_label_series
from .prompting import (
    TemplatePair,
    load_templates,
    parse_annotation_response,
    parse_verification_response,
    render_annotation_prompt,
    render_verification_prompt,
)

MANIFEST_FILE = "manifest.json"
AUDIT_FILE = "audit.jsonl"
RESULT_FILE = "result.json"
LABELS_FILE = "labels.csv"

EVENT_ANNOTATE = "ANNOTATE"
EVENT_VERIFY = "VERIFY"
EVENT_REASK = "REASK"

DEFAULT_PARALLELISM = 4
DEFAULT_REASK_BUDGET = 2


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def codebook_digest(codebook: Codebook) -> str:
    return _sha256_text(json.dumps(codebook_to_dict(codebook), sort_keys=True))


def template_digest(templates: TemplatePair) -> str:
    return _sha256_text(templates.annotation + "\x00" + templates.verification)


@dataclass(frozen=True)
class RunConfig:
    run_id: Optional[str] = None
    parallelism: int = DEFAULT_PARALLELISM
    reask_budget: int = DEFAULT_REASK_BUDGET
    chunk_target: int = DEFAULT_CHUNK_TARGET
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP
    gold_eligible: bool = False
    cache_dir: Optional[Path] = None
    template_version: str = "v1"

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.reask_budget < 0:
            raise ConfigError(f"reask_budget must be >= 0, got {self.reask_budget}")


@dataclass(frozen=True)
class RunManifest:
    """Immutable description of a run, written before the first model call."""

    run_id: str
    spec: str
    condition: str
    annotator_id: str
    verifier_id: Optional[str]
    codebook_version: str
    codebook_digest: str
    template_version: str
    template_digest: str
    chunk_target: int
    chunk_overlap: int
    reask_budget: int
    parallelism: int
    gold_eligible: bool
    corpus_digest: str
    backends: dict
    seeds: dict
    annotation_cache: dict
    created_at: str

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "spec": self.spec,
            "condition": self.condition,
            "annotator_id": self.annotator_id,
            "verifier_id": self.verifier_id,
            "codebook_version": self.codebook_version,
            "codebook_digest": self.codebook_digest,
            "template_version": self.template_version,
            "template_digest": self.template_digest,
            "chunk_target": self.chunk_target,
            "chunk_overlap": self.chunk_overlap,
            "reask_budget": self.reask_budget,
            "parallelism": self.parallelism,
            "gold_eligible": self.gold_eligible,
            "corpus_digest": self.corpus_digest,
            "backends": self.backends,
            "seeds": self.seeds,
            "annotation_cache": self.annotation_cache,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})  # type: ignore[arg-type]


def save_manifest(manifest: RunManifest, run_dir: Path) -> None:
    path = run_dir / MANIFEST_FILE
    path.write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_manifest(run_dir: Path) -> RunManifest:
    path = Path(run_dir) / MANIFEST_FILE
    if not path.is_file():
        raise UserInputError(f"no {MANIFEST_FILE} in {run_dir}")
    return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class FinalLabelRecord:
    """Outcome for one tutor utterance: items (a)-(d) of the audit contract,
    collapsed to their final values."""

    session_id: str
    turn_index: int
    condition: Condition
    initial_label: str
    decision: Decision
    final_label: str
    annotator_justification: str
    verifier_justification: Optional[str]
    flagged: bool

    def __post_init__(self):
        if self.condition is Condition.UNVERIFIED and self.decision is not Decision.NONE:
            raise ContractError("unverified records must carry decision NONE")
        if self.decision in (Decision.NONE, Decision.RETAIN):
            if self.final_label != self.initial_label:
                raise ContractError(
                    f"{self.decision.value} must keep the initial label at "
                    f"({self.session_id!r}, {self.turn_index})"
                )
        elif self.final_label == self.initial_label:
            raise ContractError(
                f"REVISE must change the label at ({self.session_id!r}, {self.turn_index})"
            )

    @property
    def ref(self) -> Ref:
        return (self.session_id, self.turn_index)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "condition": self.condition.value,
            "initial_label": self.initial_label,
            "decision": self.decision.value,
            "final_label": self.final_label,
            "annotator_justification": self.annotator_justification,
            "verifier_justification": self.verifier_justification,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FinalLabelRecord":
        return cls(
            session_id=data["session_id"],
            turn_index=data["turn_index"],
            condition=Condition(data["condition"]),
            initial_label=data["initial_label"],
            decision=Decision(data["decision"]),
            final_label=data["final_label"],
            annotator_justification=data["annotator_justification"],
            verifier_justification=data["verifier_justification"],
            flagged=data["flagged"],
        )


@dataclass(frozen=True)
class RunResult:
    manifest: RunManifest
    records: tuple[FinalLabelRecord, ...]
    counts: dict
    status: str = "complete"

    def final_series(self) -> LabelSeries:
        return LabelSeries.from_items((r.ref, r.final_label) for r in self.records)

    def initial_series(self) -> LabelSeries:
        return LabelSeries.from_items((r.ref, r.initial_label) for r in self.records)

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest.to_dict(),
            "status": self.status,
            "counts": self.counts,
            "records": [r.to_dict() for r in self.records],
        }


def save_run_result(result: RunResult, run_dir: Path) -> None:
    run_dir = Path(run_dir)
    (run_dir / RESULT_FILE).write_text(
        json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    save_label_series(result.final_series(), run_dir / LABELS_FILE)


def load_run_result(run_dir: Path) -> RunResult:
    path = Path(run_dir) / RESULT_FILE
    if not path.is_file():
        raise UserInputError(f"no {RESULT_FILE} in {run_dir}; run incomplete or not started")
    data = json.loads(path.read_text(encoding="utf-8"))
    return RunResult(
        manifest=RunManifest.from_dict(data["manifest"]),
        records=tuple(FinalLabelRecord.from_dict(r) for r in data["records"]),
        counts=data["counts"],
        status=data["status"],
    )


# --- audit log --------------------------------------------------------------


@dataclass(frozen=True)
class _Event:
    """An audit event waiting for its sequence number."""

    event: str
    session_id: str
    turn_index: int
    backend: str
    payload: dict


class AuditLog:
    """Append-only JSONL writer; one line per event, stable key order."""

    def __init__(self, stream: TextIO, run_id: str, next_seq: int = 1):
        self._stream = stream
        self._run_id = run_id
        self._seq = next_seq
        self._lock = threading.Lock()

    def append(self, event: _Event) -> int:
        with self._lock:
            seq = self._seq
            self._seq += 1
            line = json.dumps(
                {
                    "run_id": self._run_id,
                    "seq": seq,
                    "event": event.event,
                    "session_id": event.session_id,
                    "turn_index": event.turn_index,
                    "backend": event.backend,
                    "payload": event.payload,
                    "ts": datetime.now(timezone.utc).isoformat(timespec="milliseconds"),
                },
                sort_keys=True,
                ensure_ascii=False,
            )
            self._stream.write(line + "\n")
            self._stream.flush()
        return seq


class _ReorderBuffer:
    """Flushes per-utterance event bundles to the audit log in corpus order.

    Positions in `already_logged` were flushed by an interrupted run and are
    stepped over without writing.
    """

    def __init__(self, log: AuditLog, total: int, already_logged: frozenset[int]):
        self._log = log
        self._total = total
        self._already = already_logged
        self._pending: dict[int, list[_Event]] = {}
        self._next = 0
        self._lock = threading.Lock()
        with self._lock:
            self._drain()

    def submit(self, position: int, events: list[_Event]) -> None:
        with self._lock:
            if position in self._already or position in self._pending:
                raise ContractError(f"duplicate audit bundle for position {position}")
            self._pending[position] = events
            self._drain()

    def _drain(self) -> None:
        while self._next < self._total:
            if self._next in self._already:
                self._next += 1
            elif self._next in self._pending:
                for event in self._pending.pop(self._next):
                    self._log.append(event)
                self._next += 1
            else:
                break

    def finish(self) -> None:
        with self._lock:
            if self._next != self._total or self._pending:
                raise ContractError(
                    f"audit buffer incomplete: flushed {self._next}/{self._total}"
                )


def read_audit_events(path: Path) -> list[dict]:
    """Parse an audit log. A truncated final line (crash artifact) is
    dropped; corruption anywhere else is an error."""
    events: list[dict] = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise ContractError(f"{path}: corrupt audit line {i + 1}")
    return events


def audit_canonical_lines(path: Path) -> list[str]:
    """Audit lines re-serialized without the timestamp field, for
    determinism comparisons."""
    out = []
    for event in read_audit_events(path):
        event = {k: v for k, v in event.items() if k != "ts"}
        out.append(json.dumps(event, sort_keys=True, ensure_ascii=False))
    return out


def audit_digest(path: Path) -> str:
    return _sha256_text("\n".join(audit_canonical_lines(path)))


# --- engine ------------------------------------------------------------------


@dataclass(frozen=True)
class _WorkItem:
    position: int
    session_id: str
    turn_index: int
    context: AnnotationContext


def _build_work_items(
    corpus: Sequence[Transcript], chunk_target: int, chunk_overlap: int
) -> list[_WorkItem]:
    """One item per tutor utterance, in corpus order (sessions by id, turns
    by index). Context lookups are confined to the utterance's chunk; the
    chunk overlap exists so early turns of a chunk still see prior context."""
    items: list[_WorkItem] = []
    position = 0
    for transcript in sorted(corpus, key=lambda t: t.session_id):
        for chunk in chunk_session(transcript, chunk_target, chunk_overlap):
            for turn_index in range(chunk.new_start, chunk.end):
                if transcript[turn_index].speaker is not Speaker.TUTOR:
                    continue
                items.append(
                    _WorkItem(
                        position=position,
                        session_id=transcript.session_id,
                        turn_index=turn_index,
                        context=build_context(
                            transcript, turn_index, min_index=chunk.start
                        ),
                    )
                )
                position += 1
    return items


@dataclass
class _AnnOutcome:
    label: str
    justification: str


@dataclass
class _VerOutcome:
    decision: Decision
    final_label: str
    justification: Optional[str]
    flagged: bool


class _Engine:
    def __init__(
        self,
        manifest: RunManifest,
        corpus: Sequence[Transcript],
        codebook: Codebook,
        spec: OrchestrationSpec,
        backends: Mapping[str, Backend],
        templates: TemplatePair,
        audit: AuditLog,
        run_dir: Optional[Path],
        cache_dir: Optional[Path],
        recovered_ann: dict[Ref, _AnnOutcome],
        recovered_ver: dict[Ref, _VerOutcome],
    ):
        self.manifest = manifest
        self.codebook = codebook
        self.spec = spec
        self.backends = backends
        self.templates = templates
        self.audit = audit
        self.run_dir = run_dir
        self.cache_dir = cache_dir
        self.recovered_ann = recovered_ann
        self.recovered_ver = recovered_ver
        self.items = _build_work_items(
            corpus, manifest.chunk_target, manifest.chunk_overlap
        )
        self.label_space = codebook.label_space()

    # - pass plumbing -

    def _run_pass(
        self,
        worker: Callable[[_WorkItem], tuple[list[_Event], object]],
        recovered: dict[int, object],
    ) -> dict[int, object]:
        results: dict[int, object] = dict(recovered)
        buffer = _ReorderBuffer(
            self.audit, len(self.items), frozenset(recovered)
        )
        todo = [item for item in self.items if item.position not in recovered]
        parallelism = self.manifest.parallelism
        try:
            if parallelism <= 1 or len(todo) <= 1:
                for item in todo:
                    events, outcome = worker(item)
                    buffer.submit(item.position, events)
                    results[item.position] = outcome
            else:
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    futures = {pool.submit(worker, item): item.position for item in todo}
                    try:
                        for fut in as_completed(futures):
                            events, outcome = fut.result()
                            buffer.submit(futures[fut], events)
                            results[futures[fut]] = outcome
                    except BaseException:
                        pool.shutdown(cancel_futures=True)
                        raise
        except TransportError as exc:
            # Contiguous prefix is already flushed; the rest is recomputed
            # after resume.
            raise RunSuspendedError(
                f"run {self.manifest.run_id} suspended: {exc}", run_dir=self.run_dir
            ) from exc
        buffer.finish()
        return results

    # - annotation pass -

    def _annotate_item(self, item: _WorkItem) -> tuple[list[_Event], _AnnOutcome]:
        annotator = self.backends[self.spec.annotator]
        prompt = render_annotation_prompt(self.codebook, item.context, self.templates)
        prompt_digest = _sha256_text(prompt)
        ctx = CallContext(item.session_id, item.turn_index, PHASE_ANNOTATE)
        events: list[_Event] = []
        attempts = self.manifest.reask_budget + 1
        parsed = None
        response = ""
        for attempt in range(1, attempts + 1):
            response = annotator.complete(prompt, ctx)
            parsed = parse_annotation_response(response, self.codebook)
            if parsed.ok or attempt == attempts:
                break
            events.append(
                _Event(
                    EVENT_REASK,
                    item.session_id,
                    item.turn_index,
                    annotator.backend_id,
                    {
                        "attempt": attempt,
                        "phase": PHASE_ANNOTATE,
                        "prompt_sha256": prompt_digest,
                        "response": response,
                        "reason": "no codebook label parsed",
                    },
                )
            )
        assert parsed is not None
        events.append(
            _Event(
                EVENT_ANNOTATE,
                item.session_id,
                item.turn_index,
                annotator.backend_id,
                {
                    "prompt_sha256": prompt_digest,
                    "response": response,
                    "label": parsed.label,
                    "justification": parsed.justification,
                    "attempts": min(attempt, attempts),
                },
            )
        )
        return events, _AnnOutcome(parsed.label, parsed.justification)

    # - verification pass -

    def _verify_item(
        self, item: _WorkItem, initial: _AnnOutcome
    ) -> tuple[list[_Event], _VerOutcome]:
        verifier = self.backends[self.spec.verifier]
        if initial.label == UNPARSEABLE:
            # Nothing verifiable: the verification template requires a
            # codebook label. Recorded as an explicit skip, decision NONE.
            payload = {
                "skipped": True,
                "reason": "initial label unparseable",
                "initial_label": UNPARSEABLE,
                "decision": Decision.NONE.value,
                "final_label": UNPARSEABLE,
                "justification": None,
                "flagged": True,
            }
            event = _Event(
                EVENT_VERIFY, item.session_id, item.turn_index,
                verifier.backend_id, payload,
            )
            return [event], _VerOutcome(Decision.NONE, UNPARSEABLE, None, True)

        prompt = render_verification_prompt(
            self.codebook, item.context, initial.label, initial.justification,
            self.templates,
        )
        prompt_digest = _sha256_text(prompt)
        ctx = CallContext(
            item.session_id, item.turn_index, PHASE_VERIFY, initial_label=initial.label
        )
        events: list[_Event] = []
        attempts = self.manifest.reask_budget + 1
        parsed = None
        response = ""
        for attempt in range(1, attempts + 1):
            response = verifier.complete(prompt, ctx)
            parsed = parse_verification_response(response, self.codebook, initial.label)
            if parsed.ok or attempt == attempts:
                break
            events.append(
                _Event(
                    EVENT_REASK,
                    item.session_id,
                    item.turn_index,
                    verifier.backend_id,
                    {
                        "attempt": attempt,
                        "phase": PHASE_VERIFY,
                        "prompt_sha256": prompt_digest,
                        "response": response,
                        "reason": "no usable decision parsed",
                    },
                )
            )
        assert parsed is not None
        events.append(
            _Event(
                EVENT_VERIFY,
                item.session_id,
                item.turn_index,
                verifier.backend_id,
                {
                    "skipped": False,
                    "prompt_sha256": prompt_digest,
                    "response": response,
                    "initial_label": initial.label,
                    "decision": parsed.decision.value,
                    "final_label": parsed.final_label,
                    "justification": parsed.justification,
                    "flagged": parsed.flagged,
                    "attempts": min(attempt, attempts),
                },
            )
        )
        return events, _VerOutcome(
            parsed.decision, parsed.final_label, parsed.justification, parsed.flagged
        )

    # - annotation cache -

    def _cache_path(self) -> Optional[Path]:
        key = self.manifest.annotation_cache.get("key")
        if self.cache_dir is None or not key:
            return None
        return Path(self.cache_dir) / f"{key}.json"

    def _load_cache(self) -> dict[Ref, dict]:
        path = self._cache_path()
        if path is None or not path.is_file():
            return {}
        data = json.loads(path.read_text(encoding="utf-8"))
        entries: dict[Ref, dict] = {}
        for key, entry in data.get("entries", {}).items():
            session_id, _, turn = key.rpartition("\x1f")
            entries[(session_id, int(turn))] = entry
        return entries

    def _save_cache(self, bundles: dict[Ref, tuple[list[_Event], _AnnOutcome]]) -> None:
        path = self._cache_path()
        if path is None or path.exists():
            return
        entries = {}
        for (session_id, turn_index), (events, outcome) in bundles.items():
            entries[f"{session_id}\x1f{turn_index}"] = {
                "events": [
                    {"event": e.event, "backend": e.backend, "payload": e.payload}
                    for e in events
                ],
                "label": outcome.label,
                "justification": outcome.justification,
            }
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {"key": self.manifest.annotation_cache.get("key"), "entries": entries},
                sort_keys=True,
            ),
            encoding="utf-8",
        )
        tmp.replace(path)

    # - execution -

    def execute(self) -> RunResult:
        cache_entries = self._load_cache()
        fresh_bundles: dict[Ref, tuple[list[_Event], _AnnOutcome]] = {}

        def annotate(item: _WorkItem) -> tuple[list[_Event], _AnnOutcome]:
            ref = (item.session_id, item.turn_index)
            cached = cache_entries.get(ref)
            if cached is not None:
                events = [
                    _Event(
                        e["event"], item.session_id, item.turn_index,
                        e["backend"], e["payload"],
                    )
                    for e in cached["events"]
                ]
                return events, _AnnOutcome(cached["label"], cached["justification"])
            result = self._annotate_item(item)
            fresh_bundles[ref] = result
            return result

        recovered_ann_pos = {
            item.position: self.recovered_ann[(item.session_id, item.turn_index)]
            for item in self.items
            if (item.session_id, item.turn_index) in self.recovered_ann
        }
        ann_results = self._run_pass(annotate, recovered_ann_pos)

        # Persist only a pass computed fresh end to end; a partial mix of
        # cache/resume recoveries would store an incomplete pass.
        if len(fresh_bundles) == len(self.items):
            self._save_cache(fresh_bundles)

        ver_results: dict[int, _VerOutcome] = {}
        if self.spec.condition is not Condition.UNVERIFIED:
            recovered_ver_pos = {
                item.position: self.recovered_ver[(item.session_id, item.turn_index)]
                for item in self.items
                if (item.session_id, item.turn_index) in self.recovered_ver
            }

            def verify(item: _WorkItem) -> tuple[list[_Event], _VerOutcome]:
                return self._verify_item(item, ann_results[item.position])

            ver_results = self._run_pass(verify, recovered_ver_pos)

        records = []
        counts = {
            "annotated": len(self.items),
            "verified": 0,
            "retained": 0,
            "revised": 0,
            "skipped_verification": 0,
            "unparseable_initial": 0,
            "unparseable_final": 0,
            "flagged": 0,
        }
        condition = self.spec.condition
        for item in self.items:
            ann = ann_results[item.position]
            if ann.label == UNPARSEABLE:
                counts["unparseable_initial"] += 1
            if condition is Condition.UNVERIFIED:
                record = FinalLabelRecord(
                    session_id=item.session_id,
                    turn_index=item.turn_index,
                    condition=condition,
                    initial_label=ann.label,
                    decision=Decision.NONE,
                    final_label=ann.label,
                    annotator_justification=ann.justification,
                    verifier_justification=None,
                    flagged=False,
                )
            else:
                ver = ver_results[item.position]
                if ver.decision is Decision.NONE:
                    counts["skipped_verification"] += 1
                else:
                    counts["verified"] += 1
                    key = "retained" if ver.decision is Decision.RETAIN else "revised"
                    counts[key] += 1
                record = FinalLabelRecord(
                    session_id=item.session_id,
                    turn_index=item.turn_index,
                    condition=condition,
                    initial_label=ann.label,
                    decision=ver.decision,
                    final_label=ver.final_label,
                    annotator_justification=ann.justification,
                    verifier_justification=ver.justification,
                    flagged=ver.flagged,
                )
            if record.flagged:
                counts["flagged"] += 1
            if record.final_label == UNPARSEABLE:
                counts["unparseable_final"] += 1
            records.append(record)

        result = RunResult(self.manifest, tuple(records), counts)
        if self.run_dir is not None:
            save_run_result(result, self.run_dir)
        return result


def annotation_cache_key(
    corpus_dig: str,
    codebook: Codebook,
    templates: TemplatePair,
    annotator_config: dict,
    config: RunConfig,
) -> str:
    """Cache identity for one annotation pass: same annotator + corpus +
    codebook + template + chunking + re-ask budget reuse the same pass, so
    Eq. 1 baselines stay identical across verifier pairings."""
    blob = json.dumps(
        {
            "corpus": corpus_dig,
            "codebook": codebook_digest(codebook),
            "template": template_digest(templates),
            "annotator": annotator_config,
            "chunk_target": config.chunk_target,
            "chunk_overlap": config.chunk_overlap,
            "reask_budget": config.reask_budget,
        },
        sort_keys=True,
    )
    return _sha256_text(blob)


def _make_manifest(
    corpus: Sequence[Transcript],
    codebook: Codebook,
    spec: OrchestrationSpec,
    backends: Mapping[str, Backend],
    templates: TemplatePair,
    config: RunConfig,
) -> RunManifest:
    used = {bid: backends[bid].describe() for bid in spec.backend_ids}
    seeds = {}
    for bid, desc in used.items():
        parts = {}
        for family in ("annotator", "verifier"):
            if isinstance(desc.get(family), dict) and "seed" in desc[family]:
                parts[family] = desc[family]["seed"]
        seeds[bid] = parts or None
    dig = corpus_digest(list(corpus))
    cache_key = annotation_cache_key(
        dig, codebook, templates, backends[spec.annotator].describe(), config
    )
    return RunManifest(
        run_id=config.run_id or f"run-{uuid.uuid4().hex[:12]}",
        spec=format_orchestration_spec(spec),
        condition=spec.condition.value,
        annotator_id=spec.annotator,
        verifier_id=spec.verifier,
        codebook_version=codebook.version,
        codebook_digest=codebook_digest(codebook),
        template_version=templates.version,
        template_digest=template_digest(templates),
        chunk_target=config.chunk_target,
        chunk_overlap=config.chunk_overlap,
        reask_budget=config.reask_budget,
        parallelism=config.parallelism,
        gold_eligible=config.gold_eligible,
        corpus_digest=dig,
        backends=used,
        seeds=seeds,
        annotation_cache={
            "key": cache_key,
            "policy": "one annotation pass per (annotator, corpus, codebook, template)",
        },
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def _check_spec_backends(
    spec: OrchestrationSpec, backends: Mapping[str, Backend], gold_eligible: bool
) -> None:
    missing = [bid for bid in spec.backend_ids if bid not in backends]
    if missing:
        raise ConfigError(f"spec names unknown backend(s): {', '.join(missing)}")
    if gold_eligible:
        consumers = [
            bid for bid in spec.backend_ids if getattr(backends[bid], "consumes_gold", False)
        ]
        if consumers:
            raise ConfigError(
                "gold-eligible runs cannot use synthetic backends (they consume "
                f"gold labels): {', '.join(consumers)}"
            )


def run(
    corpus: Sequence[Transcript],
    codebook: Codebook,
    spec: OrchestrationSpec | str,
    backends: Mapping[str, Backend],
    run_dir: Optional[Path] = None,
    config: RunConfig = RunConfig(),
    templates: Optional[TemplatePair] = None,
) -> RunResult:
    """Execute a fresh run. With run_dir=None nothing is persisted (used
    for in-memory experiments); otherwise the directory receives the
    manifest, audit log, result document, and final label series."""
    if isinstance(spec, str):
        spec = parse_orchestration_spec(spec)
    codebook.require_valid()
    _check_spec_backends(spec, backends, config.gold_eligible)
    if templates is None:
        templates = load_templates(version=config.template_version)
    manifest = _make_manifest(corpus, codebook, spec, backends, templates, config)

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        if (run_dir / MANIFEST_FILE).exists():
            raise UserInputError(
                f"{run_dir} already holds a run; nothing is overwritten "
                "(resume it or pick a new directory)"
            )
        save_manifest(manifest, run_dir)
        stream: TextIO = (run_dir / AUDIT_FILE).open("a", encoding="utf-8")
    else:
        stream = io.StringIO()

    try:
        engine = _Engine(
            manifest=manifest,
            corpus=corpus,
            codebook=codebook,
            spec=spec,
            backends=backends,
            templates=templates,
            audit=AuditLog(stream, manifest.run_id),
            run_dir=run_dir,
            cache_dir=config.cache_dir,
            recovered_ann={},
            recovered_ver={},
        )
        return engine.execute()
    finally:
        stream.close()


def _recover_from_audit(events: list[dict]) -> tuple[dict[Ref, _AnnOutcome], dict[Ref, _VerOutcome]]:
    ann: dict[Ref, _AnnOutcome] = {}
    ver: dict[Ref, _VerOutcome] = {}
    for event in events:
        ref = (event["session_id"], event["turn_index"])
        payload = event["payload"]
        if event["event"] == EVENT_ANNOTATE:
            ann[ref] = _AnnOutcome(payload["label"], payload["justification"])
        elif event["event"] == EVENT_VERIFY:
            ver[ref] = _VerOutcome(
                Decision(payload["decision"]),
                payload["final_label"],
                payload.get("justification"),
                payload["flagged"],
            )
    return ann, ver


def resume(
    run_dir: Path,
    corpus: Sequence[Transcript],
    codebook: Codebook,
    backends: Mapping[str, Backend],
    templates: Optional[TemplatePair] = None,
) -> RunResult:
    """Continue a suspended run to completion.

    Refuses when the corpus, codebook, or templates no longer match the
    manifest digests. Resuming a completed run returns the stored result.
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    if (run_dir / RESULT_FILE).is_file():
        return load_run_result(run_dir)

    dig = corpus_digest(list(corpus))
    if dig != manifest.corpus_digest:
        raise DigestMismatchError(
            f"corpus digest {dig[:12]}… does not match manifest "
            f"{manifest.corpus_digest[:12]}…; refusing to resume"
        )
    if codebook_digest(codebook) != manifest.codebook_digest:
        raise DigestMismatchError("codebook changed since the run started; refusing to resume")
    if templates is None:
        templates = load_templates(version=manifest.template_version)
    if template_digest(templates) != manifest.template_digest:
        raise DigestMismatchError("templates changed since the run started; refusing to resume")

    spec = parse_orchestration_spec(manifest.spec)
    _check_spec_backends(spec, backends, manifest.gold_eligible)

    audit_path = run_dir / AUDIT_FILE
    events = read_audit_events(audit_path) if audit_path.is_file() else []
    for event in events:
        if event.get("run_id") != manifest.run_id:
            raise DigestMismatchError(
                f"audit log belongs to run {event.get('run_id')!r}, manifest says "
                f"{manifest.run_id!r}"
            )
    next_seq = max((e["seq"] for e in events), default=0) + 1
    recovered_ann, recovered_ver = _recover_from_audit(events)

    stream = audit_path.open("a", encoding="utf-8")
    try:
        engine = _Engine(
            manifest=manifest,
            corpus=corpus,
            codebook=codebook,
            spec=spec,
            backends=backends,
            templates=templates,
            audit=AuditLog(stream, manifest.run_id, next_seq=next_seq),
            run_dir=run_dir,
            cache_dir=None,
            recovered_ann=recovered_ann,
            recovered_ver=recovered_ver,
        )
        return engine.execute()
    finally:
        stream.close()


@dataclass(frozen=True)
class LabelDisagreement:
    session_id: str
    turn_index: int
    label_a: str
    label_b: str

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "label_a": self.label_a,
            "label_b": self.label_b,
        }


def diff_runs(run_a: RunResult, run_b: RunResult) -> list[LabelDisagreement]:
    """Utterances whose final labels differ between two runs over the same
    corpus, in corpus order."""
    if run_a.manifest.corpus_digest != run_b.manifest.corpus_digest:
        raise UserInputError("runs cover different corpora (digest mismatch)")
    series_b = run_b.final_series()
    out = []
    for record in run_a.records:
        other = series_b.get(record.ref)
        if record.final_label != other:
            out.append(
                LabelDisagreement(
                    record.session_id, record.turn_index, record.final_label, other
                )
            )
    return out
