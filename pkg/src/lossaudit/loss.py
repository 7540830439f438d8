"""Absolute telemetry-loss measurement: anchor and sequence methods.

The anchor method pairs unreliable client events with near-lossless
server events per leg; every server leg without a matching client event
counts as one lost event. The sequence method reads gaps out of the
per-(endpoint, event_type) upload counter: a de-duplicated, sorted
counter sequence spanning ``max - min + 1`` slots but holding fewer
values has lost the difference.

Both methods produce :class:`LossEstimate` values that merge by summing
counts, so logs can be processed shard-by-shard and the shards reduced.
The sequence method also comes in an incremental form
(:class:`SequenceState` / :func:`update_sequence_state`) for live
pipelines that cannot hold a batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Literal, Mapping

from .errors import MethodMismatch, NoExpectedEvents
from .events import CLIENT, SERVER, Event, EventLog, LegId

Method = Literal["anchor", "sequence"]

DEFAULT_MIN_SEQUENCE_SIZE = 5


@dataclass(slots=True, frozen=True)
class LossEstimate:
    """Lost and expected event counts for one method, with merge support.

    ``units_contributing`` / ``units_total`` track how many input legs or
    sequences fed the estimate, so ``coverage`` stays exact when
    estimates from different shards are merged.
    """

    events_lost: int
    expected_events: int
    method: Method
    units_contributing: int = 0
    units_total: int = 0

    def __post_init__(self):
        if self.events_lost < 0 or self.expected_events < 0:
            raise ValueError("counts must be non-negative")
        if self.events_lost > self.expected_events:
            raise ValueError("events_lost cannot exceed expected_events")

    @property
    def rate(self) -> float:
        """Loss fraction; only defined when expected_events > 0."""
        if self.expected_events == 0:
            raise NoExpectedEvents("loss rate undefined with zero expected events")
        return self.events_lost / self.expected_events

    @property
    def coverage(self) -> float | None:
        """Fraction of input units (legs or sequences) that contributed."""
        if self.units_total == 0:
            return None
        return self.units_contributing / self.units_total


def merge_loss_estimates(a: LossEstimate, b: LossEstimate) -> LossEstimate:
    """Sum two same-method estimates; the rate re-derives from the sums."""
    if a.method != b.method:
        raise MethodMismatch(f"cannot merge {a.method!r} with {b.method!r}")
    return LossEstimate(
        a.events_lost + b.events_lost,
        a.expected_events + b.expected_events,
        a.method,
        a.units_contributing + b.units_contributing,
        a.units_total + b.units_total,
    )


# ---------------------------------------------------------------------------
# Anchor method
# ---------------------------------------------------------------------------


def anchor_loss(server_legs: Iterable[LegId], client_legs: Iterable[LegId]) -> LossEstimate:
    """Estimate loss from the set of server legs missing a client event.

    The server side is the ground truth, so ``expected_events`` is the
    server leg count and client legs without a server record are ignored
    (they cannot make loss negative). Raises :class:`NoExpectedEvents`
    when there is no anchor at all, e.g. unestablished calls never
    reached the server.
    """
    server = set(server_legs)
    client = set(client_legs)
    if not server:
        raise NoExpectedEvents("no server legs to anchor against")
    lost = len(server - client)
    total_units = len(server | client)
    return LossEstimate(lost, len(server), "anchor", len(server), total_units)


def server_leg_keys(log: EventLog | Iterable[Event]) -> set[LegId]:
    """Leg keys that have at least one joinable server event."""
    return {e.leg_id for e in log if e.source == SERVER and e.joinable}


def client_leg_keys(log: EventLog | Iterable[Event], event_type: str | None = None) -> set[LegId]:
    """Leg keys with at least one joinable client event (optionally of one type)."""
    return {
        e.leg_id
        for e in log
        if e.source == CLIENT and e.joinable and (event_type is None or e.event_type == event_type)
    }


# ---------------------------------------------------------------------------
# Sequence method (batch)
# ---------------------------------------------------------------------------


@dataclass(slots=True, frozen=True)
class Sequence:
    """Sorted distinct upload-counter values for one (endpoint, event_type)."""

    endpoint_id: str
    event_type: str
    numbers: tuple[int, ...]

    def __post_init__(self):
        nums = tuple(sorted(set(self.numbers)))
        if nums and nums[0] < 0:
            raise ValueError("sequence numbers must be non-negative")
        object.__setattr__(self, "numbers", nums)

    @property
    def span(self) -> int:
        if not self.numbers:
            return 0
        return self.numbers[-1] - self.numbers[0] + 1


def sequence_loss(sequence: Sequence, min_sequence_size: int = DEFAULT_MIN_SEQUENCE_SIZE) -> tuple[int, int]:
    """Per-sequence (gap, expected size); (0, 0) when the span is below the minimum.

    Short sequences are excluded rather than estimated: their endpoint
    losses dominate and the estimate would be unreliable.
    """
    expected = sequence.span
    if expected < min_sequence_size:
        return (0, 0)
    return (expected - len(sequence.numbers), expected)


def sequence_loss_rate(
    sequences: Iterable[Sequence], min_sequence_size: int = DEFAULT_MIN_SEQUENCE_SIZE
) -> LossEstimate:
    """Aggregate per-sequence gaps and spans into one estimate.

    Coverage is the fraction of sequences long enough to be included.
    Raises :class:`NoExpectedEvents` when every sequence is excluded.
    """
    lost = 0
    expected = 0
    included = 0
    total = 0
    for seq in sequences:
        total += 1
        gap, size = sequence_loss(seq, min_sequence_size)
        if size == 0:
            continue
        included += 1
        lost += gap
        expected += size
    if expected == 0:
        raise NoExpectedEvents("no sequences meet minimum size")
    return LossEstimate(lost, expected, "sequence", included, total)


def sequences_from_log(log: EventLog | Iterable[Event]) -> list[Sequence]:
    """Group client events carrying a seq into per-(endpoint, event_type) sequences."""
    groups: dict[tuple[str, str], list[int]] = {}
    for e in log:
        if e.source == CLIENT and e.seq is not None:
            groups.setdefault((e.endpoint_id, e.event_type), []).append(e.seq)
    return [Sequence(ep, et, tuple(nums)) for (ep, et), nums in sorted(groups.items())]


# ---------------------------------------------------------------------------
# Sequence method (incremental)
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class SequenceEntry:
    """Lookup-table row for one (endpoint, event_type) counter."""

    prev_sn: int
    sequence_gap: int = 0
    expected_sequence_size: int = 1


@dataclass(slots=True)
class SequenceState:
    """Incremental lookup table of sequence information.

    Keys partition by (endpoint_id, event_type); updates to one key must
    arrive in order, distinct keys are independent. ``backstep_fraction``
    controls reset detection: a new sn at or below
    ``prev_sn * (1 - backstep_fraction)`` is treated as a counter reset
    (reinstall) and opens a fresh sub-sequence without charging a gap;
    smaller backsteps are out-of-order arrivals and are ignored.
    """

    entries: dict[tuple[str, str], SequenceEntry] = field(default_factory=dict)
    backstep_fraction: float = 0.5


def update_sequence_state(state: SequenceState, endpoint_id: str, event_type: str, sn: int) -> SequenceState:
    """Fold one event's sequence number into the lookup table (in place).

    A forward jump of k charges k-1 to the gap and grows the expected
    size by k. Duplicates and out-of-order arrivals leave the entry
    untouched; a detected reset re-bases ``prev_sn`` and grows the
    expected size by one for the new sub-sequence's first event.
    """
    if sn < 1:
        raise ValueError("sequence numbers start at 1")
    key = (endpoint_id, event_type)
    entry = state.entries.get(key)
    if entry is None:
        state.entries[key] = SequenceEntry(prev_sn=sn)
        return state
    if sn > entry.prev_sn:
        entry.sequence_gap += sn - entry.prev_sn - 1
        entry.expected_sequence_size += sn - entry.prev_sn
        entry.prev_sn = sn
    elif sn < entry.prev_sn and sn <= entry.prev_sn * (1.0 - state.backstep_fraction):
        entry.prev_sn = sn
        entry.expected_sequence_size += 1
    return state


def aggregate_sequence_state(
    state: SequenceState, min_sequence_size: int = DEFAULT_MIN_SEQUENCE_SIZE
) -> LossEstimate:
    """Reduce the lookup table to a LossEstimate, applying the size guard now.

    The minimum-size exclusion happens at aggregation time so that state
    kept for a short sequence still counts once the sequence grows.
    """
    lost = 0
    expected = 0
    included = 0
    total = 0
    for entry in state.entries.values():
        total += 1
        if entry.expected_sequence_size < min_sequence_size:
            continue
        included += 1
        lost += entry.sequence_gap
        expected += entry.expected_sequence_size
    if expected == 0:
        raise NoExpectedEvents("no sequences meet minimum size")
    return LossEstimate(lost, expected, "sequence", included, total)


def save_sequence_state(state: SequenceState, stream: IO | str) -> None:
    """Checkpoint the lookup table as CSV for later resumption."""
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8", newline="") as fh:
            save_sequence_state(state, fh)
        return
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["endpoint_id", "event_type", "prev_sn", "sequence_gap", "expected_sequence_size"])
    for (ep, et), entry in sorted(state.entries.items()):
        writer.writerow([ep, et, entry.prev_sn, entry.sequence_gap, entry.expected_sequence_size])


def load_sequence_state(stream: IO | str, backstep_fraction: float = 0.5) -> SequenceState:
    """Resume incremental processing from a checkpoint written by save_sequence_state."""
    if isinstance(stream, str):
        with open(stream, "r", encoding="utf-8", newline="") as fh:
            return load_sequence_state(fh, backstep_fraction)
    state = SequenceState(backstep_fraction=backstep_fraction)
    for row in csv.DictReader(stream):
        state.entries[(row["endpoint_id"], row["event_type"])] = SequenceEntry(
            prev_sn=int(row["prev_sn"]),
            sequence_gap=int(row["sequence_gap"]),
            expected_sequence_size=int(row["expected_sequence_size"]),
        )
    return state


# ---------------------------------------------------------------------------
# Per-event-type reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("method", "event_type", "variant", "events_lost", "expected_events", "rate", "coverage")


@dataclass(slots=True, frozen=True)
class LossReportRow:
    """One loss report line: an estimate scoped to (event_type, variant)."""

    method: Method
    event_type: str
    variant: str | None
    estimate: LossEstimate


def _endpoint_variants(log: EventLog | Iterable[Event]) -> dict[str, str]:
    variants: dict[str, str] = {}
    for e in log:
        if e.variant is not None and e.endpoint_id not in variants:
            variants[e.endpoint_id] = e.variant
    return variants


def _leg_variants(log: EventLog | Iterable[Event]) -> dict[LegId, str]:
    variants: dict[LegId, str] = {}
    for e in log:
        if e.variant is not None and e.leg_id not in variants:
            variants[e.leg_id] = e.variant
    return variants


def anchor_report(log: EventLog, server_log: EventLog | None = None) -> list[LossReportRow]:
    """Anchor estimates per client event type, overall and per variant.

    ``log`` supplies the client events; server events come from the same
    log unless a separate ``server_log`` is given. The overall row uses
    ``variant=None``; per-variant rows follow when variant labels exist.
    """
    server = server_log if server_log is not None else log
    server_legs = server_leg_keys(server)
    leg_variant = _leg_variants(server)
    if not leg_variant:
        leg_variant = _leg_variants(log)
    event_types = sorted({e.event_type for e in log if e.source == CLIENT})
    rows: list[LossReportRow] = []
    for et in event_types:
        clients = client_leg_keys(log, et)
        rows.append(LossReportRow("anchor", et, None, anchor_loss(server_legs, clients)))
        variants = sorted({v for v in leg_variant.values()})
        for v in variants:
            sv = {leg for leg in server_legs if leg_variant.get(leg) == v}
            cv = {leg for leg in clients if leg_variant.get(leg) == v}
            if sv:
                rows.append(LossReportRow("anchor", et, v, anchor_loss(sv, cv)))
    return rows


def sequence_report(log: EventLog, min_sequence_size: int = DEFAULT_MIN_SEQUENCE_SIZE) -> list[LossReportRow]:
    """Sequence estimates per client event type, overall and per variant.

    Event types where every sequence falls below the minimum size are
    skipped (no denominator); if that leaves no rows the caller sees the
    same NoExpectedEvents the aggregate would raise.
    """
    seqs = sequences_from_log(log)
    ep_variant = _endpoint_variants(log)
    event_types = sorted({s.event_type for s in seqs})
    rows: list[LossReportRow] = []
    for et in event_types:
        of_type = [s for s in seqs if s.event_type == et]
        try:
            rows.append(LossReportRow("sequence", et, None, sequence_loss_rate(of_type, min_sequence_size)))
        except NoExpectedEvents:
            continue
        for v in sorted({ep_variant.get(s.endpoint_id) for s in of_type} - {None}):
            ours = [s for s in of_type if ep_variant.get(s.endpoint_id) == v]
            try:
                rows.append(LossReportRow("sequence", et, v, sequence_loss_rate(ours, min_sequence_size)))
            except NoExpectedEvents:
                continue
    if not rows:
        raise NoExpectedEvents("no sequences meet minimum size")
    return rows


def write_loss_report(rows: Iterable[LossReportRow], stream: IO | str, params: Mapping | None = None) -> None:
    """Write report rows as CSV; ``params`` are echoed as '#' comment lines."""
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8", newline="") as fh:
            write_loss_report(rows, fh, params)
        return
    for k in sorted(params or {}):
        stream.write(f"# {k}={params[k]}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        est = row.estimate
        cov = est.coverage
        writer.writerow(
            [
                row.method,
                row.event_type,
                row.variant if row.variant is not None else "",
                est.events_lost,
                est.expected_events,
                repr(est.rate),
                repr(cov) if cov is not None else "",
            ]
        )


def read_loss_report(stream: IO | str) -> list[LossReportRow]:
    """Parse a loss report CSV back into rows (comment lines skipped)."""
    if isinstance(stream, str):
        with open(stream, "r", encoding="utf-8", newline="") as fh:
            return read_loss_report(fh)
    lines = [ln for ln in stream.read().splitlines() if ln and not ln.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        lost = int(row["events_lost"])
        expected = int(row["expected_events"])
        rows.append(
            LossReportRow(
                row["method"],  # type: ignore[arg-type]
                row["event_type"],
                row["variant"] or None,
                LossEstimate(lost, expected, row["method"]),  # type: ignore[arg-type]
            )
        )
    return rows


__all__ = [
    "DEFAULT_MIN_SEQUENCE_SIZE",
    "LossEstimate",
    "LossReportRow",
    "Method",
    "REPORT_COLUMNS",
    "Sequence",
    "SequenceEntry",
    "SequenceState",
    "aggregate_sequence_state",
    "anchor_loss",
    "anchor_report",
    "client_leg_keys",
    "load_sequence_state",
    "merge_loss_estimates",
    "read_loss_report",
    "save_sequence_state",
    "sequence_loss",
    "sequence_loss_rate",
    "sequence_report",
    "sequences_from_log",
    "server_leg_keys",
    "update_sequence_state",
    "write_loss_report",
]
