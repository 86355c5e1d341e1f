"""Core data model: users, events, sessions, delivery messages, engagement labels.

Everything here is an immutable value type plus pure functions over them, so
the whole module is safe to use from any number of threads.

Time conventions (fixed for determinism):
  * timestamps are integer seconds since the Unix epoch, UTC
  * a "day" is a UTC calendar day; a session belongs to the day its
    ``context.start_time`` falls in, even if it spans midnight
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

SECONDS_PER_DAY = 86400

# Gap between page views beyond which a new session starts, when sessionizing
# a raw event stream.  30 minutes is the usual web-analytics default.
DEFAULT_SESSION_GAP_S = 1800

CLIENTS = ("desktop-web", "mobile-web", "app")
DELIVERY_CHANNELS = ("email", "sms", "in-app-push")
DELIVERY_CONTENTS = ("feed", "jobs", "pymk", "message", "other")


class EmptySession(ValueError):
    """Raised when an operation needs at least one event in the session."""


class InvalidWindow(ValueError):
    """Raised when a window length is not a positive number of days."""


class EventType(IntEnum):
    """The ten tracked event types. Ids are stable and start at 1."""

    FEED = 1
    SEARCH = 2
    VIEW_PROFILE = 3
    JOBS = 4
    PYMK = 5
    NOTIFICATION = 6
    MESSAGE = 7
    EDIT_PROFILE = 8
    SHARE_CONTENT = 9
    FOLLOW = 10


N_EVENT_TYPES = len(EventType)


@dataclass(frozen=True, slots=True)
class UserEvent:
    user_id: str
    event_type: EventType
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True, slots=True)
class SessionContext:
    """Session-level context: when it started, how long it ran, which client."""

    start_time: int
    duration: float
    client: str

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"negative duration {self.duration}")
        if self.client not in CLIENTS:
            raise ValueError(f"unknown client {self.client!r}")


@dataclass(frozen=True, slots=True)
class Session:
    """One browsing session. A session with zero events may exist but is not
    *valid*; only valid sessions count toward engagement metrics."""

    user_id: str
    context: SessionContext
    events: tuple[UserEvent, ...]

    def __post_init__(self):
        for a, b in zip(self.events, self.events[1:]):
            if a.timestamp > b.timestamp:
                raise ValueError("session events must be ordered by timestamp")
        for e in self.events:
            if e.user_id != self.user_id:
                raise ValueError("all events in a session must share its user_id")

    @property
    def is_valid(self) -> bool:
        return len(self.events) > 0

    @property
    def start_day(self) -> int:
        """UTC day index of the session start."""
        return self.context.start_time // SECONDS_PER_DAY


@dataclass(frozen=True, slots=True)
class DeliveryMessage:
    user_id: str
    channel: str
    content: str
    timestamp: int

    def __post_init__(self):
        if self.channel not in DELIVERY_CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.content not in DELIVERY_CONTENTS:
            raise ValueError(f"unknown content {self.content!r}")


@dataclass(frozen=True, slots=True)
class MacroFeatures:
    """Slow-moving per-user features. Counts are stored raw; log scaling
    happens in :func:`featurize`."""

    connection_count: float
    avg_sessions_per_day_past: float
    avg_active_day_rate_past: float
    account_age_days: float

    def __post_init__(self):
        vals = (
            self.connection_count,
            self.avg_sessions_per_day_past,
            self.avg_active_day_rate_past,
            self.account_age_days,
        )
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("macro features must be finite")
        if not 0.0 <= self.avg_active_day_rate_past <= 1.0:
            raise ValueError("avg_active_day_rate_past must lie in [0, 1]")


@dataclass(frozen=True, slots=True)
class EngagementLabel:
    day_level: int       # -1 decrease, 0 same, 1 increase
    session_level: int   # 0 decrease, 1 not decrease

    def __post_init__(self):
        if self.day_level not in (-1, 0, 1):
            raise ValueError(f"day_level must be -1/0/1, got {self.day_level}")
        if self.session_level not in (0, 1):
            raise ValueError(f"session_level must be 0/1, got {self.session_level}")


@dataclass(frozen=True, slots=True)
class UserRecord:
    """One labeled example: the observation-window sessions plus the label
    derived from comparing the observation window against the following one."""

    user_id: str
    macro: MacroFeatures
    sessions: tuple[Session, ...]
    latest_delivery: Optional[DeliveryMessage]
    label: EngagementLabel

    def __post_init__(self):
        if len(self.sessions) < 1:
            raise ValueError("a user record needs at least one session")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def event_frequency(session: Session) -> np.ndarray:
    """Relative frequency of each event type within one session.

    Returns a length-10 vector that sums to 1. Index ``i`` holds the share of
    events with ``EventType`` id ``i + 1``.
    """
    if not session.events:
        raise EmptySession("cannot compute event frequency of an empty session")
    counts = np.zeros(N_EVENT_TYPES, dtype=np.float64)
    for e in session.events:
        counts[int(e.event_type) - 1] += 1.0
    return counts / counts.sum()


def _check_window(window_days: int) -> None:
    if window_days < 1:
        raise InvalidWindow(f"window_days must be >= 1, got {window_days}")


def count_active_days(sessions: Iterable[Session]) -> int:
    """Number of distinct UTC days holding at least one valid session."""
    return len({s.start_day for s in sessions if s.is_valid})


def count_valid_sessions(sessions: Iterable[Session]) -> int:
    return sum(1 for s in sessions if s.is_valid)


def average_active_days(sessions: Sequence[Session], window_days: int) -> float:
    """Fraction of the window's days on which the user had a valid session."""
    _check_window(window_days)
    return count_active_days(sessions) / window_days


def average_session_numbers(sessions: Sequence[Session], window_days: int) -> float:
    """Valid sessions per day over the window. Empty sessions do not count."""
    _check_window(window_days)
    return count_valid_sessions(sessions) / window_days


def compute_label(
    history_sessions: Sequence[Session],
    future_sessions: Sequence[Session],
    window_days: int,
) -> EngagementLabel:
    """Trend label from two adjacent windows of equal length.

    Both metrics are counts divided by the same ``window_days``, so the
    comparisons are done on the integer counts directly; equality is exact.
    """
    _check_window(window_days)
    d_h = count_active_days(history_sessions)
    d_f = count_active_days(future_sessions)
    s_h = count_valid_sessions(history_sessions)
    s_f = count_valid_sessions(future_sessions)
    if d_h > d_f:
        day_level = -1
    elif d_h == d_f:
        day_level = 0
    else:
        day_level = 1
    session_level = 0 if s_h > s_f else 1
    return EngagementLabel(day_level=day_level, session_level=session_level)


def sessionize(
    events: Sequence[UserEvent],
    gap_s: int = DEFAULT_SESSION_GAP_S,
    client: str = "desktop-web",
) -> list[Session]:
    """Split a timestamp-ordered event stream into sessions at gaps > gap_s."""
    if not events:
        return []
    groups: list[list[UserEvent]] = [[events[0]]]
    for e in events[1:]:
        if e.timestamp - groups[-1][-1].timestamp > gap_s:
            groups.append([e])
        else:
            groups[-1].append(e)
    out = []
    for g in groups:
        ctx = SessionContext(
            start_time=g[0].timestamp,
            duration=float(g[-1].timestamp - g[0].timestamp),
            client=client,
        )
        out.append(Session(user_id=g[0].user_id, context=ctx, events=tuple(g)))
    return out


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------
#
# Vector layouts are part of the artifact contract (checkpoints depend on
# them); keep the orders below stable.
#
# macro_vec (4):    [log1p(connection_count),
#                    avg_sessions_per_day_past,
#                    avg_active_day_rate_past,
#                    log1p(account_age_days)]
# delivery_vec (9): [presence,
#                    channel one-hot (email, sms, in-app-push),
#                    content one-hot (feed, jobs, pymk, message, other)]
#                   all zeros when there is no delivery message
# session input (16): [event frequency (10),
#                      hour-of-day / 24,
#                      day-of-week / 7 (Monday = 0),
#                      log(1 + duration) / log(1 + 86400),
#                      client one-hot (desktop-web, mobile-web, app)]

MACRO_DIM = 4
DELIVERY_DIM = 1 + len(DELIVERY_CHANNELS) + len(DELIVERY_CONTENTS)
CONTEXT_DIM = 3 + len(CLIENTS)
SESSION_INPUT_DIM = N_EVENT_TYPES + CONTEXT_DIM

_LOG_DAY = float(np.log1p(SECONDS_PER_DAY))


def encode_context(context: SessionContext) -> np.ndarray:
    vec = np.zeros(CONTEXT_DIM, dtype=np.float64)
    seconds_into_day = context.start_time % SECONDS_PER_DAY
    vec[0] = (seconds_into_day / 3600.0) / 24.0
    # epoch day 0 was a Thursday; weekday() convention, Monday = 0
    vec[1] = ((context.start_time // SECONDS_PER_DAY + 3) % 7) / 7.0
    vec[2] = float(np.log1p(context.duration)) / _LOG_DAY
    vec[3 + CLIENTS.index(context.client)] = 1.0
    return vec


def encode_macro(macro: MacroFeatures) -> np.ndarray:
    return np.array(
        [
            np.log1p(macro.connection_count),
            macro.avg_sessions_per_day_past,
            macro.avg_active_day_rate_past,
            np.log1p(macro.account_age_days),
        ],
        dtype=np.float64,
    )


def encode_delivery(delivery: Optional[DeliveryMessage]) -> np.ndarray:
    vec = np.zeros(DELIVERY_DIM, dtype=np.float64)
    if delivery is None:
        return vec
    vec[0] = 1.0
    vec[1 + DELIVERY_CHANNELS.index(delivery.channel)] = 1.0
    vec[1 + len(DELIVERY_CHANNELS) + DELIVERY_CONTENTS.index(delivery.content)] = 1.0
    return vec


def featurize(record: UserRecord) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Deterministic numeric encoding of a record.

    Returns ``(macro_vec, delivery_vec, session_inputs)`` where
    ``session_inputs[t]`` concatenates the event frequency of session ``t``
    with its encoded context.
    """
    macro_vec = encode_macro(record.macro)
    delivery_vec = encode_delivery(record.latest_delivery)
    session_inputs = [
        np.concatenate([event_frequency(s), encode_context(s.context)])
        for s in record.sessions
    ]
    return macro_vec, delivery_vec, session_inputs


# ---------------------------------------------------------------------------
# corpus wire format: JSON Lines, one UserRecord per line
# ---------------------------------------------------------------------------

def session_to_dict(session: Session) -> dict:
    return {
        "user_id": session.user_id,
        "context": {
            "start_time": int(session.context.start_time),
            "duration": session.context.duration,
            "client": session.context.client,
        },
        "events": [
            {
                "user_id": e.user_id,
                "event_type": int(e.event_type),
                "timestamp": int(e.timestamp),
            }
            for e in session.events
        ],
    }


def session_from_dict(d: dict) -> Session:
    ctx = SessionContext(
        start_time=int(d["context"]["start_time"]),
        duration=float(d["context"]["duration"]),
        client=d["context"]["client"],
    )
    events = tuple(
        UserEvent(
            user_id=e["user_id"],
            event_type=EventType(int(e["event_type"])),
            timestamp=int(e["timestamp"]),
        )
        for e in d["events"]
    )
    return Session(user_id=d["user_id"], context=ctx, events=events)


def user_record_to_dict(record: UserRecord) -> dict:
    delivery = None
    if record.latest_delivery is not None:
        m = record.latest_delivery
        delivery = {
            "user_id": m.user_id,
            "channel": m.channel,
            "content": m.content,
            "timestamp": int(m.timestamp),
        }
    return {
        "user_id": record.user_id,
        "macro": {
            "connection_count": record.macro.connection_count,
            "avg_sessions_per_day_past": record.macro.avg_sessions_per_day_past,
            "avg_active_day_rate_past": record.macro.avg_active_day_rate_past,
            "account_age_days": record.macro.account_age_days,
        },
        "sessions": [session_to_dict(s) for s in record.sessions],
        "latest_delivery": delivery,
        "label": {
            "day_level": record.label.day_level,
            "session_level": record.label.session_level,
        },
    }


def user_record_from_dict(d: dict) -> UserRecord:
    delivery = None
    if d.get("latest_delivery") is not None:
        m = d["latest_delivery"]
        delivery = DeliveryMessage(
            user_id=m["user_id"],
            channel=m["channel"],
            content=m["content"],
            timestamp=int(m["timestamp"]),
        )
    macro = MacroFeatures(
        connection_count=float(d["macro"]["connection_count"]),
        avg_sessions_per_day_past=float(d["macro"]["avg_sessions_per_day_past"]),
        avg_active_day_rate_past=float(d["macro"]["avg_active_day_rate_past"]),
        account_age_days=float(d["macro"]["account_age_days"]),
    )
    return UserRecord(
        user_id=d["user_id"],
        macro=macro,
        sessions=tuple(session_from_dict(s) for s in d["sessions"]),
        latest_delivery=delivery,
        label=EngagementLabel(
            day_level=int(d["label"]["day_level"]),
            session_level=int(d["label"]["session_level"]),
        ),
    )


def write_corpus(records: Iterable[UserRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(user_record_to_dict(r), separators=(",", ":")))
            fh.write("\n")


def read_corpus(path) -> list[UserRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return [user_record_from_dict(json.loads(line)) for line in fh if line.strip()]


def iter_corpus(path) -> Iterator[UserRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield user_record_from_dict(json.loads(line))
