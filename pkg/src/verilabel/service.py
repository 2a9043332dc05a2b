"""Local HTTP service backing the adjudication UI.

State lives in the packet file: every accepted decision is re-persisted
before the response goes out, so a service restart loses nothing. Writes
are serialized through a single lock; reads serve immutable snapshots.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import AdjudicationError
from .goldsmith import (
    RATER_1,
    RATER_2,
    STATE_DECIDED,
    STATE_PENDING,
    AdjudicationPacket,
    load_packet,
    record_adjudication,
    save_packet,
)

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8321

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>adjudication</title></head>
<body>
<h1>Adjudication service</h1>
<p>No UI bundle is installed. The JSON API is live under <code>/api/</code>;
point the service at a built UI with <code>--ui-dir</code>.</p>
</body></html>
"""


class PacketStore:
    """Single-writer wrapper around one packet file."""

    def __init__(self, packet_path: str | Path):
        self._path = Path(packet_path)
        self._packet = load_packet(self._path)
        self._lock = threading.Lock()

    @property
    def path(self) -> Path:
        return self._path

    def packet(self) -> AdjudicationPacket:
        return self._packet

    def decide(self, item_id: str, choice: str, override: bool) -> AdjudicationPacket:
        with self._lock:
            updated = record_adjudication(self._packet, item_id, choice, override)
            if updated is not self._packet:
                save_packet(updated, self._path)
                self._packet = updated
            return self._packet

    def export(self, export_path: Optional[Path] = None) -> Path:
        with self._lock:
            target = Path(export_path) if export_path else self._path
            save_packet(self._packet, target)
            return target


class DecisionBody(BaseModel):
    choice: str
    override: bool = False


class ExportBody(BaseModel):
    path: Optional[str] = None


def _meta(packet: AdjudicationPacket) -> dict:
    decided, total = packet.progress()
    return {
        "item_count": total,
        "decided_count": decided,
        "pending_count": total - decided,
        "digest": packet.digest(),
        "created_at": packet.created_at,
    }


def create_app(store: PacketStore, ui_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="adjudication service", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request body"})

    @app.get("/api/packet/meta")
    def packet_meta() -> dict:
        return _meta(store.packet())

    @app.get("/api/items")
    def list_items(
        state: Optional[str] = None, offset: int = 0, limit: int = 50
    ) -> dict:
        if state is not None and state not in (STATE_PENDING, STATE_DECIDED):
            raise HTTPException(status_code=400, detail=f"unknown state {state!r}")
        if offset < 0 or limit < 1 or limit > 500:
            raise HTTPException(status_code=400, detail="bad paging parameters")
        items = [
            item
            for item in store.packet().items
            if state is None or item.state == state
        ]
        page = items[offset : offset + limit]
        return {
            "items": [i.to_dict() for i in page],
            "total_matching": len(items),
            "offset": offset,
            "limit": limit,
        }

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str) -> dict:
        try:
            return store.packet().get(item_id).to_dict()
        except AdjudicationError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")

    @app.post("/api/items/{item_id}/decision")
    def post_decision(item_id: str, body: DecisionBody) -> dict:
        if body.choice not in (RATER_1, RATER_2):
            raise HTTPException(
                status_code=400,
                detail=f"choice must be {RATER_1} or {RATER_2}",
            )
        try:
            store.packet().get(item_id)
        except AdjudicationError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")
        try:
            packet = store.decide(item_id, body.choice, body.override)
        except AdjudicationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"item": packet.get(item_id).to_dict(), "meta": _meta(packet)}

    @app.post("/api/export")
    def export(body: Optional[ExportBody] = None) -> dict:
        target = store.export(Path(body.path) if body and body.path else None)
        return {"path": str(target), "meta": _meta(store.packet())}

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return _PLACEHOLDER_PAGE

    return app


def serve(
    packet_path: str | Path,
    host: str = DEFAULT_HOST,
    port: int = DEFAULT_PORT,
    ui_dir: Optional[str | Path] = None,
) -> None:
    """Run the service until interrupted (blocking)."""
    import uvicorn

    app = create_app(PacketStore(packet_path), ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
