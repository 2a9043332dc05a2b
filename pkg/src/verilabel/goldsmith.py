"""Ground-truth workshop: extract disagreements between two label sources,
blind them for human review, collect adjudications, derive gold labels.

Blinding discipline: the reviewer-facing packet never contains source
identifiers; which source hides behind RATER_1 is decided by a seeded
per-item coin and stored only in the sealed assignment map, a separate
restricted file that is opened again only at gold-derivation time.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .domain import Speaker, Transcript
from .errors import AdjudicationError, ContractError, DigestMismatchError, UserInputError
from .ingest import build_context
from .metrics import LabelSeries, Ref, format_percent, save_label_series

RATER_1 = "RATER_1"
RATER_2 = "RATER_2"
STATE_PENDING = "PENDING"
STATE_DECIDED = "DECIDED"
PROVENANCE_AGREEMENT = "AGREEMENT"
PROVENANCE_ADJUDICATED = "ADJUDICATED"

#: Surrounding turns shown to the reviewer beyond the three-part context.
DEFAULT_SURROUNDING_TURNS = 6


@dataclass(frozen=True)
class ContextTurn:
    turn_index: int
    speaker: str
    text: str
    focal: bool

    def to_dict(self) -> dict:
        return {
            "turn_index": self.turn_index,
            "speaker": self.speaker,
            "text": self.text,
            "focal": self.focal,
        }


@dataclass(frozen=True)
class DisagreementSkeleton:
    """A disagreement before blinding: labels still keyed by source."""

    session_id: str
    turn_index: int
    label_a: str
    label_b: str
    context: tuple[ContextTurn, ...]

    def __post_init__(self):
        if self.label_a == self.label_b:
            raise ContractError("skeleton labels agree; not a disagreement")


@dataclass(frozen=True)
class AdjudicationItem:
    """One blinded disagreement. Which source is RATER_1 is not recoverable
    from this record."""

    item_id: str
    session_id: str
    turn_index: int
    context: tuple[ContextTurn, ...]
    label_rater_1: str
    label_rater_2: str
    state: str = STATE_PENDING
    decision: Optional[str] = None

    def __post_init__(self):
        if self.label_rater_1 == self.label_rater_2:
            raise ContractError(f"{self.item_id}: rater labels must differ")
        if self.state not in (STATE_PENDING, STATE_DECIDED):
            raise ContractError(f"{self.item_id}: unknown state {self.state!r}")
        if (self.decision is None) != (self.state == STATE_PENDING):
            raise ContractError(f"{self.item_id}: state and decision disagree")
        if self.decision is not None and self.decision not in (RATER_1, RATER_2):
            raise ContractError(f"{self.item_id}: unknown decision {self.decision!r}")

    @property
    def ref(self) -> Ref:
        return (self.session_id, self.turn_index)

    def chosen_label(self) -> str:
        if self.decision is None:
            raise ContractError(f"{self.item_id} is still pending")
        return self.label_rater_1 if self.decision == RATER_1 else self.label_rater_2

    def blind_parts(self) -> dict:
        """The immutable, identity-bearing fields (no state, no decision)."""
        return {
            "item_id": self.item_id,
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "context": [t.to_dict() for t in self.context],
            "label_rater_1": self.label_rater_1,
            "label_rater_2": self.label_rater_2,
        }

    def to_dict(self) -> dict:
        out = self.blind_parts()
        out["state"] = self.state
        out["decision"] = self.decision
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AdjudicationItem":
        return cls(
            item_id=data["item_id"],
            session_id=data["session_id"],
            turn_index=data["turn_index"],
            context=tuple(
                ContextTurn(t["turn_index"], t["speaker"], t["text"], t["focal"])
                for t in data["context"]
            ),
            label_rater_1=data["label_rater_1"],
            label_rater_2=data["label_rater_2"],
            state=data["state"],
            decision=data.get("decision"),
        )


@dataclass(frozen=True)
class AdjudicationPacket:
    items: tuple[AdjudicationItem, ...]
    created_at: str
    override_log: tuple[dict, ...] = ()

    def __post_init__(self):
        ids = [i.item_id for i in self.items]
        if len(set(ids)) != len(ids):
            raise ContractError("duplicate item ids in packet")

    def digest(self) -> str:
        """Identity over the blinded parts only; decisions do not change it."""
        blob = json.dumps([i.blind_parts() for i in self.items], sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, item_id: str) -> AdjudicationItem:
        for item in self.items:
            if item.item_id == item_id:
                return item
        raise AdjudicationError(f"unknown item {item_id!r}")

    def progress(self) -> tuple[int, int]:
        decided = sum(1 for i in self.items if i.state == STATE_DECIDED)
        return decided, len(self.items)

    def pending_ids(self) -> list[str]:
        return [i.item_id for i in self.items if i.state == STATE_PENDING]

    def to_dict(self) -> dict:
        decided, total = self.progress()
        return {
            "packet_version": 1,
            "digest": self.digest(),
            "created_at": self.created_at,
            "item_count": total,
            "decided_count": decided,
            "items": [i.to_dict() for i in self.items],
            "override_log": list(self.override_log),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdjudicationPacket":
        packet = cls(
            items=tuple(AdjudicationItem.from_dict(i) for i in data["items"]),
            created_at=data["created_at"],
            override_log=tuple(data.get("override_log", ())),
        )
        stored = data.get("digest")
        if stored and stored != packet.digest():
            raise DigestMismatchError(
                "packet digest does not match its items; file was modified"
            )
        return packet


@dataclass(frozen=True)
class SealedAssignmentMap:
    """item_id -> which source is RATER_1. Lives in its own restricted file
    and is consulted only by derive_gold."""

    blinding_seed: int
    source_a: str
    source_b: str
    assignments: dict[str, str] = field(compare=False)
    packet_digest: str = ""

    def __post_init__(self):
        if self.source_a == self.source_b:
            raise ContractError("sealed map needs two distinct source ids")
        for item_id, who in self.assignments.items():
            if who not in (self.source_a, self.source_b):
                raise ContractError(f"{item_id}: assignment names unknown source {who!r}")

    def rater_1_source(self, item_id: str) -> str:
        try:
            return self.assignments[item_id]
        except KeyError:
            raise ContractError(f"item {item_id!r} missing from sealed map") from None

    def to_dict(self) -> dict:
        return {
            "blinding_seed": self.blinding_seed,
            "source_a": self.source_a,
            "source_b": self.source_b,
            "packet_digest": self.packet_digest,
            "assignments": dict(self.assignments),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SealedAssignmentMap":
        return cls(
            blinding_seed=data["blinding_seed"],
            source_a=data["source_a"],
            source_b=data["source_b"],
            assignments=dict(data["assignments"]),
            packet_digest=data["packet_digest"],
        )


@dataclass(frozen=True)
class GoldSet:
    """Gold labels with provenance: AGREEMENT (sources matched) or
    ADJUDICATED (reviewer chose)."""

    series: LabelSeries
    provenance: dict[Ref, str] = field(compare=False)

    def __post_init__(self):
        if set(self.provenance) != set(self.series.refs):
            raise ContractError("provenance must cover exactly the gold refs")
        bad = {v for v in self.provenance.values()} - {
            PROVENANCE_AGREEMENT,
            PROVENANCE_ADJUDICATED,
        }
        if bad:
            raise ContractError(f"unknown provenance value(s): {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.series)

    def save(self, path: str | Path) -> None:
        save_label_series(self.series, path, provenance=self.provenance)


def _context_window(
    transcript: Transcript, focal_index: int, surrounding: int
) -> tuple[ContextTurn, ...]:
    """Focal turn plus up to `surrounding` neighbors (biased 2:1 toward
    preceding turns), force-including the three-part model context."""
    before = (2 * surrounding) // 3
    after = surrounding - before
    wanted = set(range(max(0, focal_index - before), min(len(transcript), focal_index + after + 1)))
    ctx = build_context(transcript, focal_index)
    for utt in (ctx.preceding_student, ctx.prior_tutor):
        if utt is not None:
            wanted.add(utt.turn_index)
    return tuple(
        ContextTurn(
            turn_index=i,
            speaker=transcript[i].speaker.value,
            text=transcript[i].text,
            focal=(i == focal_index),
        )
        for i in sorted(wanted)
    )


def extract_disagreements(
    source_a: LabelSeries,
    source_b: LabelSeries,
    corpus: Sequence[Transcript],
    surrounding: int = DEFAULT_SURROUNDING_TURNS,
) -> tuple[LabelSeries, list[DisagreementSkeleton]]:
    """Partition shared refs into agreements and disagreement skeletons.

    The partition is exact: every ref lands in exactly one half. Labels are
    carried verbatim, whatever the sources produced. Skeletons follow
    corpus order (sessions by id, turns by index).
    """
    if set(source_a.refs) != set(source_b.refs):
        raise ContractError("sources cover different refs")
    transcripts = {t.session_id: t for t in corpus}

    agreements: list[tuple[Ref, str]] = []
    skeletons: list[DisagreementSkeleton] = []
    for ref in sorted(source_a.refs):
        session_id, turn_index = ref
        label_a = source_a.get(ref)
        label_b = source_b.get(ref)
        if label_a == label_b:
            agreements.append((ref, label_a))
            continue
        transcript = transcripts.get(session_id)
        if transcript is None:
            raise ContractError(f"ref {ref!r} not in the corpus")
        if transcript[turn_index].speaker is not Speaker.TUTOR:
            raise ContractError(f"ref {ref!r} is not a tutor turn")
        skeletons.append(
            DisagreementSkeleton(
                session_id=session_id,
                turn_index=turn_index,
                label_a=label_a,
                label_b=label_b,
                context=_context_window(transcript, turn_index, surrounding),
            )
        )
    return LabelSeries.from_items(agreements), skeletons


def blind_and_randomize(
    skeletons: Sequence[DisagreementSkeleton],
    seed: int,
    source_a: str = "source_a",
    source_b: str = "source_b",
) -> tuple[AdjudicationPacket, SealedAssignmentMap]:
    """Shuffle presentation order and flip a fair coin per item to decide
    which source hides behind RATER_1. (skeletons, seed) fully determine
    both outputs; only the sealed map can undo the blinding."""
    rng = random.Random(seed)
    order = list(skeletons)
    rng.shuffle(order)

    items: list[AdjudicationItem] = []
    assignments: dict[str, str] = {}
    for i, sk in enumerate(order):
        item_id = f"item-{i:04d}"
        a_is_rater_1 = rng.random() < 0.5
        items.append(
            AdjudicationItem(
                item_id=item_id,
                session_id=sk.session_id,
                turn_index=sk.turn_index,
                context=sk.context,
                label_rater_1=sk.label_a if a_is_rater_1 else sk.label_b,
                label_rater_2=sk.label_b if a_is_rater_1 else sk.label_a,
            )
        )
        assignments[item_id] = source_a if a_is_rater_1 else source_b

    packet = AdjudicationPacket(
        items=tuple(items),
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    sealed = SealedAssignmentMap(
        blinding_seed=seed,
        source_a=source_a,
        source_b=source_b,
        assignments=assignments,
        packet_digest=packet.digest(),
    )
    return packet, sealed


def record_adjudication(
    packet: AdjudicationPacket,
    item_id: str,
    choice: str,
    override: bool = False,
) -> AdjudicationPacket:
    """Return a packet with the item decided.

    Re-submitting the same choice is a no-op; changing a decision requires
    override=True and is appended to the packet's override log.
    """
    if choice not in (RATER_1, RATER_2):
        raise AdjudicationError(f"choice must be {RATER_1} or {RATER_2}, got {choice!r}")
    item = packet.get(item_id)
    if item.state == STATE_DECIDED:
        if item.decision == choice:
            return packet
        if not override:
            raise AdjudicationError(
                f"{item_id} already decided {item.decision}; pass override to change it"
            )
    new_item = replace(item, state=STATE_DECIDED, decision=choice)
    items = tuple(new_item if i.item_id == item_id else i for i in packet.items)
    override_log = packet.override_log
    if item.state == STATE_DECIDED:
        override_log = override_log + (
            {
                "item_id": item_id,
                "previous": item.decision,
                "new": choice,
                "ts": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            },
        )
    return AdjudicationPacket(items, packet.created_at, override_log)


@dataclass(frozen=True)
class AlignmentStats:
    """How often the reviewer sided with each source, over all items."""

    total: int
    counts: dict[str, int] = field(compare=False)

    def fraction(self, source: str) -> float:
        return self.counts.get(source, 0) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "items": self.total,
            "counts": dict(self.counts),
            "fractions": {s: self.fraction(s) for s in self.counts},
            "rendered": {
                s: f"{format_percent(self.fraction(s))} of disagreements"
                for s in self.counts
            },
        }


def derive_gold(
    agreements: LabelSeries,
    packet: AdjudicationPacket,
    sealed: SealedAssignmentMap,
) -> tuple[GoldSet, AlignmentStats]:
    """Unseal the assignment map and combine agreements with adjudicated
    choices into a GoldSet.

    Refuses when the sealed map was made for a different packet or when any
    item is still pending. Chosen labels are carried verbatim.
    """
    if sealed.packet_digest != packet.digest():
        raise DigestMismatchError(
            "sealed map and packet digests disagree; refusing to derive gold"
        )
    pending = packet.pending_ids()
    if pending:
        shown = ", ".join(pending[:5])
        more = f" (+{len(pending) - 5} more)" if len(pending) > 5 else ""
        raise AdjudicationError(f"{len(pending)} item(s) still pending: {shown}{more}")

    pairs: list[tuple[Ref, str]] = list(agreements.pairs)
    provenance: dict[Ref, str] = {ref: PROVENANCE_AGREEMENT for ref in agreements.refs}
    counts = {sealed.source_a: 0, sealed.source_b: 0}
    for item in packet.items:
        if item.ref in provenance:
            raise ContractError(f"ref {item.ref!r} appears in both halves of the partition")
        pairs.append((item.ref, item.chosen_label()))
        provenance[item.ref] = PROVENANCE_ADJUDICATED
        rater_1_source = sealed.rater_1_source(item.item_id)
        if item.decision == RATER_1:
            counts[rater_1_source] += 1
        else:
            other = sealed.source_b if rater_1_source == sealed.source_a else sealed.source_a
            counts[other] += 1

    pairs.sort(key=lambda p: p[0])
    gold = GoldSet(LabelSeries.from_items(pairs), provenance)
    if len(gold) != len(agreements) + len(packet.items):
        raise ContractError("gold conservation violated")
    return gold, AlignmentStats(total=len(packet.items), counts=counts)


def scan_for_identifiers(text: str, identifiers: Iterable[str]) -> list[str]:
    """Return the identifiers appearing in reviewer-facing text; the
    blinding invariant requires this to come back empty."""
    return sorted({ident for ident in identifiers if ident and ident in text})


# --- file formats -----------------------------------------------------------


def save_packet(packet: AdjudicationPacket, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(
        json.dumps(packet.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    tmp.replace(path)


def load_packet(path: str | Path) -> AdjudicationPacket:
    path = Path(path)
    if not path.is_file():
        raise UserInputError(f"packet file not found: {path}")
    return AdjudicationPacket.from_dict(json.loads(path.read_text(encoding="utf-8")))


def save_sealed_map(sealed: SealedAssignmentMap, path: str | Path) -> None:
    path = Path(path)
    path.write_text(
        json.dumps(sealed.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    os.chmod(path, 0o600)


def load_sealed_map(path: str | Path) -> SealedAssignmentMap:
    path = Path(path)
    if not path.is_file():
        raise UserInputError(f"sealed map not found: {path}")
    return SealedAssignmentMap.from_dict(json.loads(path.read_text(encoding="utf-8")))
