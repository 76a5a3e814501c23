"""Chat sessions: per-session history with serialized request handling.

Sessions live in-process; requests within one session are serialized through
a per-session lock while different sessions proceed in parallel.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

from ..engine import Engine
from ..gateway import ChatTurn
from ..orchestrator import Mode, PipelineRun


class SessionNotFound(KeyError):
    pass


@dataclass
class Session:
    session_id: str
    mode_default: Mode
    created_at: str
    history: list[ChatTurn] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class SessionManager:
    def __init__(self, engine: Engine):
        self.engine = engine
        self._sessions: dict[str, Session] = {}
        self._create_lock = threading.Lock()

    def create(self, mode_default: Mode = "arag") -> Session:
        session = Session(
            session_id=uuid.uuid4().hex,
            mode_default=mode_default,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        with self._create_lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise SessionNotFound(session_id) from None

    def ask(self, session_id: str, question: str, mode: Mode | None = None) -> PipelineRun:
        """Run the question with the session's history, then append the
        user turn and the assistant answer. Serialized per session."""
        session = self.get(session_id)
        with session.lock:
            run = self.engine.ask(
                question,
                history=list(session.history),
                mode=mode or session.mode_default,
            )
            session.history.append(ChatTurn("user", question))
            answer_text = run.final_answer.text if run.final_answer else "(no answer)"
            session.history.append(ChatTurn("assistant", answer_text))
            return run
