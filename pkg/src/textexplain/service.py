"""Question-serving service for rater studies.

Serves questions to registered raters (least-answered first, never the
same question twice to one rater, never more than ``raters_per_question``
answers per question), persists answers to an append-only JSONL log with
an fsync before each acknowledgment, and exposes a live aggregate that
matches the offline scorer on the same log.

Issued questions expire back into the pool after 30 minutes. Issue is
optimistic: two raters may hold the last open slot at once, and the
second to submit is turned away by a commit-time recheck.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass

from .study import (
    Answer,
    AggregateReport,
    StudyError,
    TaskQuestion,
    aggregate,
    answer_from_record,
    answer_record,
    public_view,
    read_jsonl,
    validate_answer,
)

DEFAULT_EXPIRY_SECONDS = 30 * 60


class ServiceError(Exception):
    """Rejected request; ``code`` mirrors the HTTP status."""

    def __init__(self, message: str, code: int = 400):
        super().__init__(message)
        self.code = code


@dataclass
class Assignment:
    question_id: str
    rater_id: str
    issued_at: float
    state: str = "issued"  # issued | answered | expired


def report_record(rep: AggregateReport) -> dict:
    """JSON-safe form of an aggregate report (empty cells become null)."""
    cells = {}
    for method in rep.methods:
        row = {}
        for stratum in ("All", "Correct", "Misclassified"):
            cell = rep.cells[(method, stratum)]
            row[stratum] = None if cell.n == 0 else {
                "mean": cell.mean, "n": cell.n,
                "on_par_with_best": cell.on_par_with_best}
        cells[method] = row
    return {"methods": list(rep.methods), "alpha": rep.alpha,
            "cells": cells, "text": rep.to_text()}


class StudyService:
    """In-process core: the HTTP layer is a thin wrapper around this."""

    def __init__(self, questions: list[TaskQuestion], log_path,
                 raters_per_question: int = 3,
                 expiry_seconds: float = DEFAULT_EXPIRY_SECONDS,
                 class_names=(), clock=time.time):
        ids = [q.id for q in questions]
        if len(set(ids)) != len(ids):
            raise ServiceError("duplicate question ids in bank", 500)
        self._bank = list(questions)
        self._by_id = {q.id: q for q in questions}
        self._raters_per_question = raters_per_question
        self._expiry = expiry_seconds
        self._class_names = list(class_names)
        self._clock = clock
        self._lock = threading.Lock()
        self._log_path = str(log_path)
        self._answers: list[Answer] = []
        self._answered: dict[str, set] = {q.id: set() for q in questions}
        self._open: dict[tuple, Assignment] = {}
        self._raters: set = set()
        if os.path.exists(self._log_path):
            for rec in read_jsonl(self._log_path):
                self._replay(answer_from_record(rec))
        self._fh = open(self._log_path, "a", encoding="utf-8")

    def _replay(self, ans: Answer) -> None:
        if ans.question_id not in self._by_id:
            raise ServiceError(
                f"log references unknown question {ans.question_id!r}", 500)
        self._answers.append(ans)
        self._answered[ans.question_id].add(ans.rater_id)
        self._raters.add(ans.rater_id)

    # -- session ---------------------------------------------------------

    def register_rater(self) -> str:
        token = uuid.uuid4().hex
        with self._lock:
            self._raters.add(token)
        return token

    def session_info(self, rater_id: str) -> dict:
        return {"rater_id": rater_id,
                "classes": self._class_names,
                "tasks": sorted({q.task for q in self._bank}),
                "bank_size": len(self._bank),
                "raters_per_question": self._raters_per_question}

    # -- question issue --------------------------------------------------

    def _expire_stale(self, now: float) -> None:
        stale = [k for k, a in self._open.items()
                 if now - a.issued_at > self._expiry]
        for k in stale:
            self._open[k].state = "expired"
            del self._open[k]

    def next_question(self, rater_id: str, task=None):
        """The rater's current open question if any, else the
        least-answered question they have not answered yet; None when the
        bank is exhausted for them."""
        with self._lock:
            if rater_id not in self._raters:
                raise ServiceError("unregistered rater", 401)
            now = self._clock()
            self._expire_stale(now)
            for (r, qid), a in self._open.items():
                if r == rater_id:
                    q = self._by_id[qid]
                    if task is None or q.task == task:
                        return public_view(q)
            candidates = []
            open_counts: dict[str, int] = {}
            for (_, qid) in self._open:
                open_counts[qid] = open_counts.get(qid, 0) + 1
            for pos, q in enumerate(self._bank):
                if task is not None and q.task != task:
                    continue
                answered = self._answered[q.id]
                if rater_id in answered:
                    continue
                if len(answered) >= self._raters_per_question:
                    continue
                candidates.append((len(answered),
                                   open_counts.get(q.id, 0), pos, q))
            if not candidates:
                return None
            q = min(candidates)[3]
            self._open[(rater_id, q.id)] = Assignment(q.id, rater_id, now)
            return public_view(q)

    # -- answer commit ---------------------------------------------------

    def submit_answer(self, ans: Answer) -> dict:
        with self._lock:
            q = self._by_id.get(ans.question_id)
            if q is None:
                raise ServiceError(
                    f"unknown question {ans.question_id!r}", 404)
            if ans.rater_id in self._answered[q.id]:
                raise ServiceError("duplicate submission", 409)
            now = self._clock()
            self._expire_stale(now)
            assignment = self._open.get((ans.rater_id, ans.question_id))
            if assignment is None:
                raise ServiceError("no open assignment for this question",
                                   409)
            try:
                validate_answer(q, ans,
                                n_classes=len(self._class_names) or None)
            except StudyError as exc:
                raise ServiceError(str(exc), 400)
            if len(self._answered[q.id]) >= self._raters_per_question:
                del self._open[(ans.rater_id, ans.question_id)]
                raise ServiceError("question already fully answered", 409)
            stored = Answer(ans.question_id, ans.rater_id, ans.choice,
                            ans.confident, timestamp=now)
            self._fh.write(json.dumps(answer_record(stored)) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._answers.append(stored)
            self._answered[q.id].add(ans.rater_id)
            assignment.state = "answered"
            del self._open[(ans.rater_id, ans.question_id)]
            mine = sum(1 for a in self._answers
                       if a.rater_id == ans.rater_id)
            return {"status": "ok", "answered": mine,
                    "bank_size": len(self._bank)}

    # -- export ----------------------------------------------------------

    def export_results(self) -> dict:
        with self._lock:
            answers = list(self._answers)
        rep = aggregate(self._bank, answers)
        return {"answers": [answer_record(a) for a in answers],
                "aggregate": report_record(rep)}

    def close(self) -> None:
        self._fh.close()


# ----------------------------------------------------------------------
# HTTP layer
# ----------------------------------------------------------------------

def create_app(service: StudyService):
    """FastAPI wrapper exposing /session, /questions/next, /answers,
    /results."""
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="rater study service")

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.code,
                            content={"status": "error",
                                     "reason": str(exc)})

    @app.get("/session")
    def session():
        return service.session_info(service.register_rater())

    @app.get("/questions/next")
    def next_question(rater: str, task: int | None = None):
        q = service.next_question(rater, task=task)
        if q is None:
            return {"status": "done"}
        return {"status": "ok", "question": q}

    @app.post("/answers")
    def post_answer(body: dict):
        try:
            ans = Answer(question_id=body["question_id"],
                         rater_id=body["rater_id"],
                         choice=body["choice"],
                         confident=bool(body["confident"]))
        except KeyError as exc:
            raise ServiceError(f"missing field {exc.args[0]!r}", 400)
        return service.submit_answer(ans)

    @app.get("/results")
    def results():
        return service.export_results()

    return app
