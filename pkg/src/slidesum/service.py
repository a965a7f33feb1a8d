"""Interactive summarizing sessions over HTTP: selection, organization, and
integration stages with optimistic versioning and an append-only analytics log.

The core (:class:`SessionService`) is a plain in-process object so property
tests can drive it directly; :func:`create_app` wraps it in FastAPI.  Videos
and sessions live as one JSON document each under the store directory,
written via temp-file-then-atomic-rename, so an interrupted write leaves
either the whole old or the whole new document.  Analytics events append to
a per-session JSONL file.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import os
import threading
import time
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from .ingest import PgmFormatError, parse_pgm
from .summarize import Outline, SummaryManifest

STAGES = ("selection", "organization", "integration")
DECISIONS = ("undecided", "accepted", "rejected")
OUTLINE_OPS = ("add_node", "move_node", "rename_node", "remove_node")

OUTLINE_OP_EVENTS = {
    "add_node": "node_added",
    "move_node": "node_moved",
    "rename_node": "node_renamed",
    "remove_node": "node_removed",
}


class NotFoundError(KeyError):
    """Unknown video or session id."""


class VersionConflictError(ValueError):
    """Stale expected_version; state unchanged."""


class WrongStageError(ValueError):
    """Mutation does not belong to the session's current stage."""


class InvariantError(ValueError):
    """The request would violate a session invariant."""


def atomic_write_json(path: Path, doc: dict) -> None:
    """Write-then-rename so readers never observe a partial document."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    data = json.dumps(doc, indent=1).encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class SessionService:
    """Durable store of videos, sessions, and their analytics event logs."""

    def __init__(self, store_dir) -> None:
        self.store = Path(store_dir)
        (self.store / "videos").mkdir(parents=True, exist_ok=True)
        (self.store / "sessions").mkdir(parents=True, exist_ok=True)
        self._global_lock = threading.Lock()
        self._session_locks: dict[str, threading.RLock] = {}
        self._events: dict[str, list[dict]] = {}

    # ------------------------------------------------------------------ ids

    def _next_id(self, kind: str, prefix: str) -> str:
        root = self.store / kind
        existing = [int(p.name[1:]) for p in root.iterdir() if p.name[1:].isdigit()]
        return f"{prefix}{max(existing, default=0) + 1:04d}"

    def _lock_for(self, session_id: str) -> threading.RLock:
        with self._global_lock:
            if session_id not in self._session_locks:
                self._session_locks[session_id] = threading.RLock()
            return self._session_locks[session_id]

    # --------------------------------------------------------------- videos

    def register_video(
        self,
        manifest: SummaryManifest | dict,
        outline: Outline | dict,
        keyframe_images: list[bytes],
    ) -> str:
        if isinstance(manifest, dict):
            manifest = SummaryManifest.from_dict(manifest)
        if isinstance(outline, dict):
            outline = Outline.from_dict(outline)
        n = len(manifest.keyframes)
        if len(outline.segments) != n:
            raise InvariantError(
                f"outline has {len(outline.segments)} segments, manifest {n} keyframes"
            )
        if len(keyframe_images) != n:
            raise InvariantError(f"need {n} keyframe images, got {len(keyframe_images)}")
        for i, blob in enumerate(keyframe_images):
            try:
                parse_pgm(blob)
            except PgmFormatError as exc:
                raise InvariantError(f"keyframe {i} is not a valid P5 image: {exc}") from exc

        with self._global_lock:
            video_id = self._next_id("videos", "v")
            vdir = self.store / "videos" / video_id
            (vdir / "keyframes").mkdir(parents=True)
            for i, blob in enumerate(keyframe_images):
                (vdir / "keyframes" / f"key_{i:04d}.pgm").write_bytes(blob)
            atomic_write_json(
                vdir / "record.json",
                {
                    "id": video_id,
                    "manifest": manifest.to_dict(),
                    "outline": outline.to_dict(),
                    "keyframe_count": n,
                },
            )
        return video_id

    def _video_dir(self, video_id: str) -> Path:
        vdir = self.store / "videos" / video_id
        if not (vdir / "record.json").exists():
            raise NotFoundError(f"unknown video {video_id}")
        return vdir

    def get_video(self, video_id: str) -> dict:
        return json.loads((self._video_dir(video_id) / "record.json").read_text("utf-8"))

    def keyframe_bytes(self, video_id: str, index: int) -> bytes:
        path = self._video_dir(video_id) / "keyframes" / f"key_{index:04d}.pgm"
        if not path.exists():
            raise NotFoundError(f"video {video_id} has no keyframe {index}")
        return path.read_bytes()

    # -------------------------------------------------------------- sessions

    def create_session(self, video_id: str) -> dict:
        video = self.get_video(video_id)
        with self._global_lock:
            session_id = self._next_id("sessions", "s")
            (self.store / "sessions" / session_id).mkdir(parents=True)
        now = time.time()
        outline_nodes = []
        for i, seg in enumerate(video["outline"]["segments"]):
            outline_nodes.append(
                {
                    "node_id": f"n{i + 1}",
                    "title": seg["title"],
                    "origin": "machine",
                    "keyframe": None,
                    "suggested_keyframe": seg["keyframe"],
                }
            )
        doc = {
            "id": session_id,
            "video_id": video_id,
            "stage": "selection",
            "version": 1,
            "selections": ["undecided"] * video["keyframe_count"],
            "outline": outline_nodes,
            "summary_blocks": {},
            "next_node_id": len(outline_nodes) + 1,
            "created_at": now,
            "updated_at": now,
        }
        with self._lock_for(session_id):
            self._persist(doc)
            self._events[session_id] = []
        return doc

    def _session_path(self, session_id: str) -> Path:
        return self.store / "sessions" / session_id / "session.json"

    def _load(self, session_id: str) -> dict:
        path = self._session_path(session_id)
        if not path.exists():
            raise NotFoundError(f"unknown session {session_id}")
        return json.loads(path.read_text("utf-8"))

    def _persist(self, doc: dict) -> None:
        atomic_write_json(self._session_path(doc["id"]), doc)

    def get_session(self, session_id: str) -> dict:
        with self._lock_for(session_id):
            return self._load(session_id)

    # --------------------------------------------------------------- events

    def _events_path(self, session_id: str) -> Path:
        return self.store / "sessions" / session_id / "events.jsonl"

    def _loaded_events(self, session_id: str) -> list[dict]:
        if session_id in self._events:
            return self._events[session_id]
        path = self._events_path(session_id)
        events: list[dict] = []
        if path.exists():
            for line in path.read_text("utf-8").splitlines():
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError:
                    break  # torn tail line from an interrupted append
        self._events[session_id] = events
        return events

    def _append_event(self, session_id: str, kind: str, payload: dict) -> dict:
        events = self._loaded_events(session_id)
        event = {
            "session_id": session_id,
            "seq": len(events) + 1,
            "timestamp": time.time(),
            "kind": kind,
            "payload": payload,
        }
        events.append(event)
        with open(self._events_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
        return event

    def record_event(self, session_id: str, kind: str, payload: dict | None = None) -> dict:
        with self._lock_for(session_id):
            self._load(session_id)  # existence check
            return self._append_event(session_id, kind, payload or {})

    def list_events(self, session_id: str) -> list[dict]:
        with self._lock_for(session_id):
            self._load(session_id)
            return list(self._loaded_events(session_id))

    def export_events(self, session_id: str, fmt: str = "jsonl") -> str:
        events = self.list_events(session_id)
        if fmt == "jsonl":
            return "".join(json.dumps(e) + "\n" for e in events)
        if fmt == "csv":
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["seq", "session_id", "timestamp", "kind", "payload"])
            for e in events:
                writer.writerow(
                    [e["seq"], e["session_id"], repr(e["timestamp"]), e["kind"], json.dumps(e["payload"])]
                )
            return buf.getvalue()
        raise InvariantError(f"unknown export format {fmt!r}")

    # ------------------------------------------------------------ mutations

    def _begin_mutation(self, session_id: str, expected_version: int) -> dict:
        doc = self._load(session_id)
        if doc["version"] != expected_version:
            raise VersionConflictError(
                f"expected version {expected_version}, session is at {doc['version']}"
            )
        return doc

    def _commit(self, doc: dict, kind: str, payload: dict) -> dict:
        doc["version"] += 1
        doc["updated_at"] = time.time()
        self._persist(doc)
        self._append_event(doc["id"], kind, payload)
        return doc

    @staticmethod
    def _require_stage(doc: dict, stage: str) -> None:
        if doc["stage"] != stage:
            raise WrongStageError(f"operation requires stage {stage}, session is in {doc['stage']}")

    def apply_selection(
        self, session_id: str, keyframe: int, decision: str, expected_version: int
    ) -> dict:
        if decision not in DECISIONS:
            raise InvariantError(f"decision must be one of {DECISIONS}")
        with self._lock_for(session_id):
            doc = self._begin_mutation(session_id, expected_version)
            self._require_stage(doc, "selection")
            if not 0 <= keyframe < len(doc["selections"]):
                raise InvariantError(f"keyframe {keyframe} out of range")
            doc["selections"][keyframe] = decision
            if decision == "accepted":
                # re-link nodes that were suggested or demoted for this keyframe
                for node in doc["outline"]:
                    if node["suggested_keyframe"] == keyframe and node["keyframe"] is None:
                        node["keyframe"] = keyframe
                        node["suggested_keyframe"] = None
            else:
                # references must only point at accepted keyframes; demote to
                # a heading but remember the link for re-acceptance
                for node in doc["outline"]:
                    if node["keyframe"] == keyframe:
                        node["keyframe"] = None
                        node["suggested_keyframe"] = keyframe
            return self._commit(
                doc, f"keyframe_{decision}", {"keyframe": keyframe, "decision": decision}
            )

    def _find_node(self, doc: dict, node_id: str) -> int:
        for i, node in enumerate(doc["outline"]):
            if node["node_id"] == node_id:
                return i
        raise InvariantError(f"unknown outline node {node_id!r}")

    def apply_outline_op(
        self, session_id: str, op: str, args: dict, expected_version: int
    ) -> dict:
        if op not in OUTLINE_OPS:
            raise InvariantError(f"op must be one of {OUTLINE_OPS}")
        with self._lock_for(session_id):
            doc = self._begin_mutation(session_id, expected_version)
            self._require_stage(doc, "organization")
            outline = doc["outline"]
            if op == "add_node":
                position = int(args.get("position", len(outline)))
                if not 0 <= position <= len(outline):
                    raise InvariantError(f"bad position {position}")
                keyframe = args.get("keyframe")
                if keyframe is not None:
                    keyframe = int(keyframe)
                    if not 0 <= keyframe < len(doc["selections"]):
                        raise InvariantError(f"keyframe {keyframe} out of range")
                    if doc["selections"][keyframe] != "accepted":
                        raise InvariantError(
                            f"keyframe {keyframe} is not accepted; outline may only "
                            "reference accepted keyframes"
                        )
                node = {
                    "node_id": f"n{doc['next_node_id']}",
                    "title": str(args.get("title", "")),
                    "origin": "learner",
                    "keyframe": keyframe,
                    "suggested_keyframe": None,
                }
                doc["next_node_id"] += 1
                outline.insert(position, node)
                payload = {"node": node["node_id"], "position": position}
            elif op == "move_node":
                index = self._find_node(doc, str(args.get("node_id")))
                position = int(args.get("position", 0))
                if not 0 <= position < len(outline):
                    raise InvariantError(f"bad position {position}")
                node = outline.pop(index)
                outline.insert(position, node)
                payload = {"node": node["node_id"], "from": index, "to": position}
            elif op == "rename_node":
                index = self._find_node(doc, str(args.get("node_id")))
                if "title" not in args:
                    raise InvariantError("rename_node needs a title")
                outline[index]["title"] = str(args["title"])
                payload = {"node": outline[index]["node_id"]}
            else:  # remove_node
                index = self._find_node(doc, str(args.get("node_id")))
                node = outline.pop(index)
                doc["summary_blocks"].pop(node["node_id"], None)
                payload = {"node": node["node_id"]}
            return self._commit(doc, OUTLINE_OP_EVENTS[op], payload)

    def set_summary_block(
        self, session_id: str, node_id: str, text: str, expected_version: int
    ) -> dict:
        with self._lock_for(session_id):
            doc = self._begin_mutation(session_id, expected_version)
            self._require_stage(doc, "integration")
            self._find_node(doc, node_id)
            if text:
                doc["summary_blocks"][node_id] = text
            else:
                doc["summary_blocks"].pop(node_id, None)  # empty string clears
            return self._commit(
                doc, "text_edited", {"node": node_id, "length": len(text)}
            )

    def set_stage(self, session_id: str, stage: str, expected_version: int) -> dict:
        if stage not in STAGES:
            raise InvariantError(f"stage must be one of {STAGES}")
        with self._lock_for(session_id):
            doc = self._begin_mutation(session_id, expected_version)
            previous = doc["stage"]
            doc["stage"] = stage  # every transition is allowed, iteration included
            return self._commit(doc, "stage_changed", {"from": previous, "to": stage})


def check_session_invariants(doc: dict) -> None:
    """Raise AssertionError if a session document violates its contracts."""
    assert doc["stage"] in STAGES, f"bad stage {doc['stage']}"
    assert doc["version"] >= 1
    assert all(d in DECISIONS for d in doc["selections"])
    seen = set()
    for node in doc["outline"]:
        assert node["node_id"] not in seen, "duplicate node id"
        seen.add(node["node_id"])
        if node["keyframe"] is not None:
            k = node["keyframe"]
            assert 0 <= k < len(doc["selections"]), "reference out of range"
            assert doc["selections"][k] == "accepted", (
                f"outline references keyframe {k} with decision {doc['selections'][k]}"
            )
    for node_id in doc["summary_blocks"]:
        assert node_id in seen, f"summary block for missing node {node_id}"


def check_event_log(events: list[dict]) -> None:
    """Raise AssertionError unless sequence numbers are contiguous from 1."""
    for i, event in enumerate(events, start=1):
        assert event["seq"] == i, f"event {i} has seq {event['seq']}"


class VideoIn(BaseModel):
    manifest: dict
    outline: dict
    keyframes_pgm_base64: list[str]


class SessionIn(BaseModel):
    video_id: str


class SelectionIn(BaseModel):
    keyframe: int
    decision: str
    expected_version: int


class OutlineIn(BaseModel):
    op: str
    args: dict = {}
    expected_version: int


class SummaryBlockIn(BaseModel):
    node: str
    text: str
    expected_version: int


class StageIn(BaseModel):
    stage: str
    expected_version: int


class EventIn(BaseModel):
    kind: str
    payload: dict = {}


def create_app(service: SessionService):
    """FastAPI wrapper exposing the service over HTTP."""
    from fastapi import FastAPI, HTTPException, Query, Response
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="slidesum session service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def run(fn, *args: Any, **kwargs: Any):
        try:
            return fn(*args, **kwargs)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (VersionConflictError, WrongStageError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except InvariantError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/videos")
    def register_video(body: VideoIn):
        images = [base64.b64decode(blob) for blob in body.keyframes_pgm_base64]
        video_id = run(service.register_video, body.manifest, body.outline, images)
        return {"id": video_id}

    @app.get("/videos/{video_id}/summary")
    def video_summary(video_id: str):
        return run(service.get_video, video_id)

    @app.get("/videos/{video_id}/keyframes/{index}")
    def keyframe(video_id: str, index: int):
        blob = run(service.keyframe_bytes, video_id, index)
        return Response(content=blob, media_type="image/x-portable-graymap")

    @app.post("/sessions")
    def create_session(body: SessionIn):
        return run(service.create_session, body.video_id)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return run(service.get_session, session_id)

    @app.post("/sessions/{session_id}/selection")
    def selection(session_id: str, body: SelectionIn):
        return run(
            service.apply_selection, session_id, body.keyframe, body.decision, body.expected_version
        )

    @app.post("/sessions/{session_id}/outline")
    def outline(session_id: str, body: OutlineIn):
        return run(
            service.apply_outline_op, session_id, body.op, body.args, body.expected_version
        )

    @app.post("/sessions/{session_id}/summary-block")
    def summary_block(session_id: str, body: SummaryBlockIn):
        return run(
            service.set_summary_block, session_id, body.node, body.text, body.expected_version
        )

    @app.post("/sessions/{session_id}/stage")
    def stage(session_id: str, body: StageIn):
        return run(service.set_stage, session_id, body.stage, body.expected_version)

    @app.post("/sessions/{session_id}/events")
    def record_event(session_id: str, body: EventIn):
        return run(service.record_event, session_id, body.kind, body.payload)

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, format: str = Query(default="jsonl")):
        text = run(service.export_events, session_id, format)
        media = "application/x-ndjson" if format == "jsonl" else "text/csv"
        return Response(content=text, media_type=media)

    return app
