"""HTTP backend for the emotion-confidence listening test.

Serves per-listener survey sessions (one section per emotion, optionally
shuffled within a section), streams stimulus audio, and collects 0-5
ratings into an append-only JSON-lines store. Sessions and acknowledged
ratings survive a restart: both are replayed from the store at startup.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel

from .errors import (
    DuplicateRating,
    EmptySurvey,
    InvalidScore,
    UnknownSession,
    UnknownStimulus,
)
from .evalkit import RatingRecord, mos_report, validate_score


@dataclass(frozen=True)
class Stimulus:
    utterance_id: str
    wav_path: str
    emotion: str
    kind: str  # original | synthesized


@dataclass
class SurveyDefinition:
    """Ordered sections, one per emotion, each with its stimulus list."""

    sections: list[tuple[str, list[Stimulus]]]
    shuffle_within_section: bool = True

    def __post_init__(self):
        if not self.sections:
            raise EmptySurvey("survey needs at least one section")
        seen = set()
        for _, stimuli in self.sections:
            for stim in stimuli:
                if stim.utterance_id in seen:
                    raise ValueError(f"duplicate stimulus id {stim.utterance_id!r}")
                seen.add(stim.utterance_id)

    @property
    def total(self) -> int:
        return sum(len(stimuli) for _, stimuli in self.sections)

    def stimulus_by_id(self, utterance_id: str) -> Stimulus | None:
        for _, stimuli in self.sections:
            for stim in stimuli:
                if stim.utterance_id == utterance_id:
                    return stim
        return None

    def session_order(self, seed: int) -> list[Stimulus]:
        """Presentation order for one session: sections in order, seeded shuffles inside."""
        rng = np.random.default_rng(seed)
        order = []
        for _, stimuli in self.sections:
            idx = rng.permutation(len(stimuli)) if self.shuffle_within_section \
                else np.arange(len(stimuli))
            order.extend(stimuli[i] for i in idx)
        return order

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SurveyDefinition":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        sections = []
        for section in data["sections"]:
            stimuli = [Stimulus(s["utterance_id"], s["wav_path"], section["emotion"],
                                s.get("kind", "synthesized"))
                       for s in section["stimuli"]]
            sections.append((section["emotion"], stimuli))
        return cls(sections, bool(data.get("shuffle_within_section", True)))


@dataclass
class Session:
    session_id: str
    listener_id: str
    seed: int
    order: list[Stimulus]
    rated: set[str] = field(default_factory=set)

    def next_pending(self) -> tuple[int, Stimulus] | None:
        for i, stim in enumerate(self.order):
            if stim.utterance_id not in self.rated:
                return i, stim
        return None


class RatingStore:
    """Append-only JSON-lines persistence with atomic, fsynced appends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, separators=(",", ":")) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def replay(self) -> list[dict]:
        if not self.path.exists():
            return []
        records = []
        with self._lock:
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    records.append(json.loads(line))
        return records


class MosService:
    """Session and rating logic, independent of the HTTP layer."""

    def __init__(self, survey: SurveyDefinition, store: RatingStore, allow_half: bool = False):
        self.survey = survey
        self.store = store
        self.allow_half = allow_half
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._recover()

    def _recover(self) -> None:
        for record in self.store.replay():
            if record.get("type") == "session":
                self.sessions[record["session_id"]] = Session(
                    session_id=record["session_id"],
                    listener_id=record["listener_id"],
                    seed=record["seed"],
                    order=self.survey.session_order(record["seed"]),
                )
            elif record.get("type") == "rating":
                session = self.sessions.get(record["session_id"])
                if session is not None:
                    session.rated.add(record["utterance_id"])

    def create_session(self, listener_id: str, seed: int | None = None) -> Session:
        if seed is None:
            seed = int.from_bytes(os.urandom(4), "little")
        session = Session(
            session_id=uuid.uuid4().hex,
            listener_id=listener_id,
            seed=seed,
            order=self.survey.session_order(seed),
        )
        self.store.append({"type": "session", "session_id": session.session_id,
                           "listener_id": listener_id, "seed": seed,
                           "timestamp": time.time()})
        with self._lock:
            self.sessions[session.session_id] = session
        return session

    def get_session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def next_stimulus(self, session_id: str) -> dict:
        session = self.get_session(session_id)
        pending = session.next_pending()
        if pending is None:
            return {"done": True, "total": len(session.order)}
        index, stim = pending
        return {
            "utterance_id": stim.utterance_id,
            "emotion": stim.emotion,
            "kind": stim.kind,
            "audio_url": f"/audio/{stim.utterance_id}",
            "index": index,
            "total": len(session.order),
        }

    def submit_rating(self, session_id: str, utterance_id: str, score) -> dict:
        session = self.get_session(session_id)
        value = validate_score(score, self.allow_half)
        stim = next((s for s in session.order if s.utterance_id == utterance_id), None)
        if stim is None:
            raise UnknownStimulus(utterance_id)
        with self._lock:
            if utterance_id in session.rated:
                raise DuplicateRating(f"{session_id}/{utterance_id}")
            self.store.append({
                "type": "rating",
                "session_id": session_id,
                "listener_id": session.listener_id,
                "utterance_id": utterance_id,
                "emotion": stim.emotion,
                "kind": stim.kind,
                "score": value,
                "timestamp": time.time(),
            })
            session.rated.add(utterance_id)
        remaining = len(session.order) - len(session.rated)
        return {"ok": True, "remaining": remaining}

    def ratings(self, kind: str | None = None) -> list[RatingRecord]:
        records = []
        for rec in self.store.replay():
            if rec.get("type") != "rating":
                continue
            if kind and rec["kind"] != kind:
                continue
            records.append(RatingRecord(
                session_id=rec["session_id"],
                listener_id=rec["listener_id"],
                utterance_id=rec["utterance_id"],
                emotion=rec["emotion"],
                kind=rec["kind"],
                score=rec["score"],
                timestamp=rec["timestamp"],
            ))
        records.sort(key=lambda r: (r.timestamp, r.session_id, r.utterance_id))
        return records

    def export_csv(self, kind: str | None = None) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["timestamp", "session_id", "listener_id", "utterance_id",
                         "emotion", "kind", "score"])
        for r in self.ratings(kind):
            writer.writerow([f"{r.timestamp:.6f}", r.session_id, r.listener_id,
                             r.utterance_id, r.emotion, r.kind,
                             int(r.score) if r.score == int(r.score) else r.score])
        return out.getvalue()


class CreateSessionBody(BaseModel):
    listener_id: str
    seed: int | None = None


class RatingBody(BaseModel):
    utterance_id: str
    score: float | int


def create_app(service: MosService) -> FastAPI:
    app = FastAPI(title="emotion MOS survey")
    app.state.service = service

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        session = service.create_session(body.listener_id, body.seed)
        return {"session_id": session.session_id, "total": len(session.order)}

    @app.get("/sessions/{session_id}/next")
    def next_stimulus(session_id: str):
        try:
            return service.next_stimulus(session_id)
        except UnknownSession:
            raise HTTPException(404, "unknown session")

    @app.post("/sessions/{session_id}/ratings")
    def submit_rating(session_id: str, body: RatingBody):
        try:
            return service.submit_rating(session_id, body.utterance_id, body.score)
        except UnknownSession:
            raise HTTPException(404, "unknown session")
        except UnknownStimulus:
            raise HTTPException(404, "stimulus not in session")
        except InvalidScore as exc:
            raise HTTPException(400, f"invalid score: {exc}")
        except DuplicateRating:
            raise HTTPException(409, "already rated")

    @app.get("/export.csv")
    def export(kind: str | None = None):
        return PlainTextResponse(service.export_csv(kind), media_type="text/csv")

    @app.get("/report")
    def report(kind: str | None = None):
        records = service.ratings(kind)
        if not records:
            return {}
        return mos_report(records, service.allow_half).to_dict()

    @app.get("/audio/{utterance_id}")
    def audio(utterance_id: str):
        stim = service.survey.stimulus_by_id(utterance_id)
        if stim is None or not Path(stim.wav_path).exists():
            raise HTTPException(404, "unknown stimulus audio")
        return FileResponse(stim.wav_path, media_type="audio/wav")

    return app


def serve(survey_path: str | Path, store_path: str | Path,
          host: str = "127.0.0.1", port: int = 8765, allow_half: bool = False) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn
    survey = SurveyDefinition.from_json_file(survey_path)
    service = MosService(survey, RatingStore(store_path), allow_half)
    uvicorn.run(create_app(service), host=host, port=port, log_level="warning")
