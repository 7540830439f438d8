"""Telemetry events, the per-leg session join, and log ingestion.

Every estimator downstream reads these structures. An event belongs to a
*leg*: one endpoint's participation in one session, keyed by
``(session_id, endpoint_id)``. Client and server components upload their
events independently, so the same leg may surface in either log, both,
or neither; joining is an outer join over leg keys.

File formats (see ``parse_event_log`` / ``write_event_log``):

* JSONL - one object per line:
  ``{"session_id": str, "endpoint_id": str, "source": "client"|"server",
  "event_type": str, "variant": str|null, "seq": int|null, "ts": int,
  "measures": {str: number|str}}``
* CSV - the same fields as columns, measures flattened into ``m_<name>``
  columns. Numeric-looking measure values are coerced back to numbers on
  read, so a measure holding the *string* ``"3"`` does not round-trip
  through CSV (it does through JSONL).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Literal

from .errors import BadRowRatioExceeded, UnreadableStream

Source = Literal["client", "server"]
LegId = tuple[str, str]

CLIENT: Source = "client"
SERVER: Source = "server"

_FIELDS = ("session_id", "endpoint_id", "source", "event_type", "variant", "seq", "ts")


@dataclass(slots=True, frozen=True)
class Event:
    """One telemetry row as emitted by a client or server component.

    ``seq`` is the per-(endpoint, event_type) upload counter; it starts
    at 1 and increments per generated event, so a value below 1 is
    malformed. ``measures`` holds the event's payload details.
    """

    session_id: str
    endpoint_id: str
    source: Source
    event_type: str
    variant: str | None = None
    seq: int | None = None
    ts: int = 0
    measures: dict[str, float | int | str] = field(default_factory=dict)

    @property
    def leg_id(self) -> LegId:
        return (self.session_id, self.endpoint_id)

    @property
    def joinable(self) -> bool:
        """Both leg-key components present; events failing this drop in the join."""
        return bool(self.session_id) and bool(self.endpoint_id)


@dataclass(slots=True)
class SessionRecord:
    """The joined per-leg row that powers metrics and scorecards.

    Presence flags are per event type and per source; a flag is true iff
    at least one event of that type joined. ``measures`` merges every
    joined event's payload (events applied in a deterministic order;
    later writers win on key collisions).
    """

    leg_id: LegId
    variant: str | None
    present_client: frozenset[str]
    present_server: frozenset[str]
    measures: dict[str, float | int | str]

    @property
    def present(self) -> frozenset[str]:
        return self.present_client | self.present_server

    @property
    def has_client(self) -> bool:
        return bool(self.present_client)

    @property
    def has_server(self) -> bool:
        return bool(self.present_server)


@dataclass(slots=True)
class EventLog:
    """An ordered, de-duplicated collection of events plus parse bookkeeping."""

    events: list[Event]
    source_desc: str = ""
    bad_rows: int = 0

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


def _dedup_key(e: Event):
    # Retransmission duplicates share (source, leg, type, seq). Without a
    # seq there is nothing to key on, so fall back to full-row equality.
    if e.seq is not None:
        return (e.source, e.leg_id, e.event_type, e.seq)
    return (
        e.source,
        e.leg_id,
        e.event_type,
        None,
        e.variant,
        e.ts,
        tuple(sorted(e.measures.items(), key=lambda kv: kv[0])),
    )


def deduplicate(events: Iterable[Event]) -> list[Event]:
    """Collapse duplicate events, keeping the first occurrence in stream order."""
    seen: set = set()
    out: list[Event] = []
    for e in events:
        k = _dedup_key(e)
        if k in seen:
            continue
        seen.add(k)
        out.append(e)
    return out


def _coerce_measure(raw: str) -> float | int | str:
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _event_from_obj(obj: dict) -> Event:
    session_id = obj["session_id"]
    endpoint_id = obj["endpoint_id"]
    source = obj["source"]
    event_type = obj["event_type"]
    if not isinstance(session_id, str) or not isinstance(endpoint_id, str):
        raise ValueError("leg key components must be strings")
    if source not in (CLIENT, SERVER):
        raise ValueError(f"bad source {source!r}")
    if not isinstance(event_type, str) or not event_type:
        raise ValueError("event_type required")
    variant = obj.get("variant")
    if variant is not None and not isinstance(variant, str):
        raise ValueError("variant must be a string or null")
    seq = obj.get("seq")
    if seq is not None:
        if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
            raise ValueError("seq must be an integer >= 1")
    ts = obj.get("ts", 0)
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ValueError("ts must be an integer")
    measures = obj.get("measures") or {}
    if not isinstance(measures, dict):
        raise ValueError("measures must be an object")
    for k, v in measures.items():
        if not isinstance(k, str) or not isinstance(v, (int, float, str)) or isinstance(v, bool):
            raise ValueError("measures must map strings to numbers or strings")
    return Event(session_id, endpoint_id, source, event_type, variant, seq, ts, dict(measures))


def _event_from_csv_row(row: dict) -> Event:
    obj: dict = {k: row.get(k, "") for k in _FIELDS}
    if obj["variant"] == "" or obj["variant"] is None:
        obj["variant"] = None
    raw_seq = obj["seq"]
    obj["seq"] = int(raw_seq) if raw_seq not in ("", None) else None
    obj["ts"] = int(obj["ts"]) if obj["ts"] not in ("", None) else 0
    measures = {}
    for k, v in row.items():
        if k is not None and k.startswith("m_") and v not in ("", None):
            measures[k[2:]] = _coerce_measure(v)
    obj["measures"] = measures
    return _event_from_obj(obj)


def parse_event_log(
    stream: IO | str,
    format: Literal["jsonl", "csv"] = "jsonl",
    bad_row_ratio: float = 0.01,
    source_desc: str = "",
) -> EventLog:
    """Read, validate, and de-duplicate an event log.

    ``stream`` may be a path, a text stream, or a binary stream.
    Malformed rows are counted and skipped; if they exceed
    ``bad_row_ratio`` of all rows the input is considered corrupt and
    :class:`BadRowRatioExceeded` is raised instead.
    """
    close = False
    if isinstance(stream, str):
        source_desc = source_desc or stream
        try:
            stream = open(stream, "r", encoding="utf-8")
        except OSError as exc:
            raise UnreadableStream(str(exc)) from exc
        close = True
    try:
        try:
            raw = stream.read()
        except (OSError, UnicodeDecodeError) as exc:
            raise UnreadableStream(str(exc)) from exc
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise UnreadableStream(str(exc)) from exc
    finally:
        if close:
            stream.close()

    events: list[Event] = []
    bad = 0
    total = 0
    if format == "jsonl":
        for line in raw.splitlines():
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                events.append(_event_from_obj(json.loads(line)))
            except (ValueError, KeyError, TypeError):
                bad += 1
    elif format == "csv":
        reader = csv.DictReader(io.StringIO(raw))
        for row in reader:
            total += 1
            try:
                events.append(_event_from_csv_row(row))
            except (ValueError, KeyError, TypeError):
                bad += 1
    else:
        raise ValueError(f"unknown format {format!r}")

    if total and bad / total > bad_row_ratio:
        raise BadRowRatioExceeded(bad, total, bad_row_ratio)
    return EventLog(deduplicate(events), source_desc=source_desc, bad_rows=bad)


def _event_to_obj(e: Event) -> dict:
    return {
        "session_id": e.session_id,
        "endpoint_id": e.endpoint_id,
        "source": e.source,
        "event_type": e.event_type,
        "variant": e.variant,
        "seq": e.seq,
        "ts": e.ts,
        "measures": dict(sorted(e.measures.items())),
    }


def write_event_log(log: EventLog, stream: IO | str, format: Literal["jsonl", "csv"] = "jsonl") -> None:
    """Serialize a log deterministically (stable field and column order)."""
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8", newline="") as fh:
            write_event_log(log, fh, format)
        return
    if format == "jsonl":
        for e in log:
            stream.write(json.dumps(_event_to_obj(e), sort_keys=False, separators=(",", ":")))
            stream.write("\n")
    elif format == "csv":
        measure_keys = sorted({k for e in log for k in e.measures})
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(list(_FIELDS) + [f"m_{k}" for k in measure_keys])
        for e in log:
            row = [
                e.session_id,
                e.endpoint_id,
                e.source,
                e.event_type,
                e.variant if e.variant is not None else "",
                e.seq if e.seq is not None else "",
                e.ts,
            ]
            row += [e.measures.get(k, "") for k in measure_keys]
            writer.writerow(row)
    else:
        raise ValueError(f"unknown format {format!r}")


def split_by_source(log: EventLog) -> tuple[EventLog, EventLog]:
    """Split a mixed log into (client, server) logs, preserving order."""
    client = [e for e in log if e.source == CLIENT]
    server = [e for e in log if e.source == SERVER]
    return (
        EventLog(client, source_desc=log.source_desc, bad_rows=log.bad_rows),
        EventLog(server, source_desc=log.source_desc),
    )


@dataclass(slots=True)
class JoinResult:
    """Outcome of the session join: records plus the count of dropped events."""

    records: list[SessionRecord]
    join_dropped: int

    def by_leg(self) -> dict[LegId, SessionRecord]:
        return {r.leg_id: r for r in self.records}


def join_sessions(client_events: EventLog | Iterable[Event], server_events: EventLog | Iterable[Event]) -> JoinResult:
    """Outer-join client and server events into one record per leg.

    Events with an empty session_id or endpoint_id cannot be keyed and
    are excluded, counted in ``join_dropped`` rather than raised: the
    downstream pipeline reports such drops, it does not fail on them.
    The outer join keeps server-only legs because the anchor estimator
    counts exactly those.
    """
    dropped = 0
    groups: dict[LegId, list[Event]] = {}
    for e in list(client_events) + list(server_events):
        if not e.joinable:
            dropped += 1
            continue
        groups.setdefault(e.leg_id, []).append(e)

    records = []
    for leg in sorted(groups):
        evs = sorted(
            groups[leg],
            key=lambda e: (e.ts, e.source, e.event_type, e.seq if e.seq is not None else -1),
        )
        present_client = frozenset(e.event_type for e in evs if e.source == CLIENT)
        present_server = frozenset(e.event_type for e in evs if e.source == SERVER)
        variant = next((e.variant for e in evs if e.variant is not None), None)
        measures: dict[str, float | int | str] = {}
        for e in evs:
            measures.update(e.measures)
        records.append(SessionRecord(leg, variant, present_client, present_server, measures))
    return JoinResult(records, dropped)


def record_to_events(record: SessionRecord) -> list[Event]:
    """Project a session record back to one event per present type.

    Used for the join idempotence property: re-joining the projection
    reproduces the records.
    """
    out = []
    for et in sorted(record.present_client):
        out.append(
            Event(record.leg_id[0], record.leg_id[1], CLIENT, et, record.variant, None, 0, dict(record.measures))
        )
    for et in sorted(record.present_server):
        out.append(
            Event(record.leg_id[0], record.leg_id[1], SERVER, et, record.variant, None, 0, dict(record.measures))
        )
    return out


__all__ = [
    "CLIENT",
    "SERVER",
    "Event",
    "EventLog",
    "JoinResult",
    "LegId",
    "SessionRecord",
    "Source",
    "deduplicate",
    "join_sessions",
    "parse_event_log",
    "record_to_events",
    "split_by_source",
    "write_event_log",
]
