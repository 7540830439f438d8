"""Seeded synthetic client/server telemetry with known ground truth.

Every estimator and flag in this package is validated against logs where
the truth is known by construction: each session emits one server event
(never lost) plus one client event per configured type, with correct
per-(endpoint, event_type) upload counters, and loss mechanisms then
drop client events while recording exactly what was dropped.

Randomness is organized as one pseudo-random stream per (endpoint,
purpose), all derived from the master seed, so adding a loss mechanism
or changing one never perturbs structure or outcome draws, and repeated
runs are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, Literal

import numpy as np

from .errors import InvalidSpec, UnknownEventType
from .events import CLIENT, SERVER, Event, EventLog, LegId

CONTROL = "control"
TREATMENT = "treatment"

_PURPOSE_STRUCTURE = 1
_PURPOSE_OUTCOMES = 2
_PURPOSE_LOSS_BASE = 1000

_TS_BASE = 1_700_000_000_000


@dataclass(slots=True, frozen=True)
class SessionCountModel:
    """How many sessions an endpoint runs: fixed(k), geometric(p), or zipf(s)."""

    kind: Literal["fixed", "geometric", "zipf"]
    param: float
    max_sessions: int = 10_000

    def validate(self) -> None:
        if self.kind == "fixed" and (self.param < 1 or self.param != int(self.param)):
            raise InvalidSpec("fixed session count must be a positive integer")
        if self.kind == "geometric" and not (0.0 < self.param <= 1.0):
            raise InvalidSpec("geometric parameter must lie in (0, 1]")
        if self.kind == "zipf" and self.param <= 1.0:
            raise InvalidSpec("zipf exponent must exceed 1")
        if self.max_sessions < 1:
            raise InvalidSpec("max_sessions must be positive")

    def draw(self, rng: np.random.Generator) -> int:
        if self.kind == "fixed":
            return int(self.param)
        if self.kind == "geometric":
            return min(int(rng.geometric(self.param)), self.max_sessions)
        return min(int(rng.zipf(self.param)), self.max_sessions)


@dataclass(slots=True, frozen=True)
class EventTypeSpec:
    """One client event type; the tier records its upload priority."""

    name: str
    tier: int = 1


@dataclass(slots=True, frozen=True)
class OutcomeModel:
    """Per-session metric written as a measure on one client event type.

    ``normal`` draws mean + beta_t * is_treatment with the given sd;
    ``bernoulli`` treats mean as a success probability shifted by beta_t
    in the treatment arm (sd ignored).
    """

    name: str
    event_type: str
    mean: float
    sd: float
    beta_t: float = 0.0
    kind: Literal["normal", "bernoulli"] = "normal"


@dataclass(slots=True, frozen=True)
class SynthSpec:
    """Complete recipe for one synthetic population."""

    n_endpoints: int
    sessions: SessionCountModel = field(default_factory=lambda: SessionCountModel("fixed", 1))
    allocation_ratio: float = 1.0
    event_types: tuple[EventTypeSpec, ...] = (EventTypeSpec("CST"),)
    outcomes: tuple[OutcomeModel, ...] = ()
    server_event_type: str = "ServerRecord"
    seed: int = 0

    def validate(self) -> None:
        if self.n_endpoints < 1:
            raise InvalidSpec("n_endpoints must be positive")
        if self.allocation_ratio <= 0:
            raise InvalidSpec("allocation_ratio must be positive")
        if self.seed < 0:
            raise InvalidSpec("seed must be non-negative")
        if not self.event_types:
            raise InvalidSpec("at least one client event type is required")
        names = [et.name for et in self.event_types]
        if len(set(names)) != len(names) or any(not n for n in names):
            raise InvalidSpec("event type names must be unique and non-empty")
        self.sessions.validate()
        known = set(names)
        for o in self.outcomes:
            if o.event_type not in known:
                raise InvalidSpec(f"outcome {o.name!r} references unknown event type {o.event_type!r}")
            if o.sd < 0:
                raise InvalidSpec("outcome sd must be non-negative")
            if o.kind == "bernoulli" and not (0.0 <= o.mean <= 1.0 and 0.0 <= o.mean + o.beta_t <= 1.0):
                raise InvalidSpec("bernoulli outcome probabilities must lie in [0, 1]")


@dataclass(slots=True, frozen=True)
class LossMechanism:
    """One way client telemetry goes missing for a target event type.

    kinds:
      mar(p)                        - uniform random drop at rate p
      treatment_correlated(p_ctrl, p_trt) - drop rate depends on the arm
      outcome_correlated(p_low, p_high, percentile_cut) - p_high at or
          below the population percentile of ``measure``, p_low above
      crash_strata                  - 100% loss where ``predicate`` holds
          (or at/below the percentile cut when given instead)
    """

    kind: Literal["mar", "outcome_correlated", "treatment_correlated", "crash_strata"]
    event_type: str
    p: float = 0.0
    p_ctrl: float = 0.0
    p_trt: float = 0.0
    p_low: float = 0.0
    p_high: float = 0.0
    percentile_cut: float = 10.0
    measure: str | None = None
    predicate: Callable[[Event], bool] | None = None

    def validate(self) -> None:
        rates = [self.p, self.p_ctrl, self.p_trt, self.p_low, self.p_high]
        if any(not (0.0 <= r <= 1.0) for r in rates):
            raise InvalidSpec("loss rates must lie in [0, 1]")
        if not (0.0 <= self.percentile_cut <= 100.0):
            raise InvalidSpec("percentile_cut must lie in [0, 100]")
        if self.kind == "crash_strata" and self.predicate is None and self.measure is None:
            raise InvalidSpec("crash_strata needs a predicate or a measure + percentile cut")


@dataclass(slots=True, frozen=True)
class TruthRate:
    """Realized lost/total counts for one (event_type, variant) slice."""

    lost: int
    total: int

    @property
    def rate(self) -> float:
        return self.lost / self.total if self.total else 0.0


@dataclass(slots=True)
class GroundTruth:
    """What actually happened: configured effects and realized loss.

    ``lost_legs`` names every (session_id, endpoint_id) leg whose client
    event of a given type was dropped, which is what anchor-method
    exactness is checked against.
    """

    seed: int
    true_effects: dict[str, float] = field(default_factory=dict)
    loss_rates: dict[tuple[str, str | None], TruthRate] = field(default_factory=dict)
    lost_legs: dict[str, frozenset[LegId]] = field(default_factory=dict)


def _stream(seed: int, purpose: int, endpoint_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, endpoint_index]))


def generate_population(spec: SynthSpec) -> tuple[EventLog, GroundTruth]:
    """Emit the complete (pre-loss) log for a spec, plus its ground truth.

    Each endpoint draws a variant and a session count; each session
    emits the server event first, then one client event per type with
    the per-(endpoint, event_type) counter equal to the session index
    plus one. Outcome measures are attached to their event type.
    """
    spec.validate()
    events: list[Event] = []
    truth = GroundTruth(seed=spec.seed, true_effects={o.name: o.beta_t for o in spec.outcomes})
    p_control = spec.allocation_ratio / (1.0 + spec.allocation_ratio)
    outcomes_by_type: dict[str, list[OutcomeModel]] = {}
    for o in spec.outcomes:
        outcomes_by_type.setdefault(o.event_type, []).append(o)

    ts = _TS_BASE
    for i in range(spec.n_endpoints):
        rng = _stream(spec.seed, _PURPOSE_STRUCTURE, i)
        variant = CONTROL if rng.uniform() < p_control else TREATMENT
        n_sessions = spec.sessions.draw(rng)
        endpoint_id = f"e{i:07d}"
        is_trt = variant == TREATMENT

        columns: list[np.ndarray] = []
        if spec.outcomes:
            z = _stream(spec.seed, _PURPOSE_OUTCOMES, i)
            for o in spec.outcomes:
                shift = o.beta_t if is_trt else 0.0
                if o.kind == "bernoulli":
                    columns.append((z.random(n_sessions) < o.mean + shift).astype(float))
                else:
                    columns.append(o.mean + shift + o.sd * z.standard_normal(n_sessions))

        for j in range(n_sessions):
            session_id = f"s{i:07d}x{j:05d}"
            values: dict[str, float] = {}
            for k, o in enumerate(spec.outcomes):
                values[o.name] = float(columns[k][j])
            events.append(Event(session_id, endpoint_id, SERVER, spec.server_event_type, variant, None, ts, {}))
            for et in spec.event_types:
                measures = {
                    o.name: values[o.name] for o in outcomes_by_type.get(et.name, [])
                }
                events.append(Event(session_id, endpoint_id, CLIENT, et.name, variant, j + 1, ts, measures))
            ts += 1000

    log = EventLog(events, source_desc=f"synth(seed={spec.seed})")
    for et in spec.event_types:
        truth.lost_legs[et.name] = frozenset()
    _count_rates(truth, log, set())
    return log, truth


def _count_rates(truth: GroundTruth, full_log: EventLog, dropped_ids: set[int]) -> None:
    counts: dict[tuple[str, str | None], list[int]] = {}
    for idx, e in enumerate(full_log):
        if e.source != CLIENT:
            continue
        lost = 1 if idx in dropped_ids else 0
        for key in ((e.event_type, None), (e.event_type, e.variant)):
            c = counts.setdefault(key, [0, 0])
            c[0] += lost
            c[1] += 1
    truth.loss_rates = {k: TruthRate(v[0], v[1]) for k, v in sorted(counts.items(), key=lambda kv: (kv[0][0], kv[0][1] or ""))}


def apply_loss(
    full_log: EventLog,
    mechanisms: Iterable[LossMechanism],
    seed: int,
    truth: GroundTruth | None = None,
) -> tuple[EventLog, GroundTruth]:
    """Drop client events per mechanism and record the realized truth.

    Server events are never dropped. Each mechanism draws from its own
    per-endpoint stream; an event survives only if every mechanism
    keeps it. Returns the observed log and a ground truth whose counts
    recount exactly against (full minus observed).
    """
    mechanisms = list(mechanisms)
    client_types = {e.event_type for e in full_log if e.source == CLIENT}
    for m in mechanisms:
        m.validate()
        if m.event_type not in client_types:
            raise UnknownEventType(f"mechanism targets {m.event_type!r}, not present among client events")

    endpoint_index: dict[str, int] = {}
    for e in full_log:
        if e.endpoint_id not in endpoint_index:
            endpoint_index[e.endpoint_id] = len(endpoint_index)

    # percentile cuts are population-level properties of the full log
    cuts: dict[int, tuple[str, float]] = {}
    for mi, m in enumerate(mechanisms):
        if m.kind == "outcome_correlated" or (m.kind == "crash_strata" and m.predicate is None):
            values: list[float] = []
            measure = m.measure
            for e in full_log:
                if e.source == CLIENT and e.event_type == m.event_type:
                    if measure is None:
                        if not e.measures:
                            raise InvalidSpec(f"mechanism on {m.event_type!r} needs a measure but events carry none")
                        measure = sorted(e.measures)[0]
                    v = e.measures.get(measure)
                    if isinstance(v, (int, float)):
                        values.append(float(v))
            if not values:
                raise InvalidSpec(f"no numeric values for measure {measure!r} on {m.event_type!r}")
            cuts[mi] = (measure, float(np.percentile(np.asarray(values), m.percentile_cut)))  # type: ignore[arg-type]

    dropped: set[int] = set()
    for mi, m in enumerate(mechanisms):
        streams: dict[str, np.random.Generator] = {}
        for idx, e in enumerate(full_log):
            if e.source != CLIENT or e.event_type != m.event_type:
                continue
            rng = streams.get(e.endpoint_id)
            if rng is None:
                rng = _stream(seed, _PURPOSE_LOSS_BASE + mi, endpoint_index[e.endpoint_id])
                streams[e.endpoint_id] = rng
            if m.kind == "crash_strata":
                if m.predicate is not None:
                    if m.predicate(e):
                        dropped.add(idx)
                    continue
                measure, cut = cuts[mi]
                v = e.measures.get(measure)
                if isinstance(v, (int, float)) and float(v) <= cut:
                    dropped.add(idx)
                continue
            u = rng.uniform()
            if m.kind == "mar":
                rate = m.p
            elif m.kind == "treatment_correlated":
                rate = m.p_trt if e.variant == TREATMENT else m.p_ctrl
            else:  # outcome_correlated
                measure, cut = cuts[mi]
                v = e.measures.get(measure)
                below = isinstance(v, (int, float)) and float(v) <= cut
                rate = m.p_high if below else m.p_low
            if u < rate:
                dropped.add(idx)

    observed = EventLog(
        [e for idx, e in enumerate(full_log) if idx not in dropped],
        source_desc=full_log.source_desc,
        bad_rows=full_log.bad_rows,
    )
    out = GroundTruth(seed=seed, true_effects=dict(truth.true_effects) if truth else {})
    lost_by_type: dict[str, set[LegId]] = {et: set() for et in client_types}
    for idx in dropped:
        e = full_log.events[idx]
        lost_by_type[e.event_type].add(e.leg_id)
    out.lost_legs = {et: frozenset(legs) for et, legs in sorted(lost_by_type.items())}
    _count_rates(out, full_log, dropped)
    return observed, out


def spec_from_dict(doc: dict) -> tuple[SynthSpec, list[LossMechanism]]:
    """Build a spec and its loss mechanisms from a plain JSON-style dict.

    Shape:
      {"n_endpoints": 1000, "seed": 7, "allocation_ratio": 1.0,
       "sessions": {"kind": "geometric", "param": 0.2},
       "event_types": [{"name": "CST", "tier": 0}],
       "outcomes": [{"name": "duration", "event_type": "CST",
                     "mean": 10, "sd": 2, "beta_t": 0.0}],
       "mechanisms": [{"kind": "mar", "event_type": "CST", "p": 0.05}]}
    """
    try:
        sessions_doc = doc.get("sessions", {"kind": "fixed", "param": 1})
        spec = SynthSpec(
            n_endpoints=int(doc["n_endpoints"]),
            sessions=SessionCountModel(
                kind=sessions_doc["kind"],
                param=float(sessions_doc["param"]),
                max_sessions=int(sessions_doc.get("max_sessions", 10_000)),
            ),
            allocation_ratio=float(doc.get("allocation_ratio", 1.0)),
            event_types=tuple(
                EventTypeSpec(et["name"], int(et.get("tier", 1))) for et in doc.get("event_types", [{"name": "CST"}])
            ),
            outcomes=tuple(
                OutcomeModel(
                    name=o["name"],
                    event_type=o["event_type"],
                    mean=float(o["mean"]),
                    sd=float(o["sd"]),
                    beta_t=float(o.get("beta_t", 0.0)),
                    kind=o.get("kind", "normal"),
                )
                for o in doc.get("outcomes", ())
            ),
            server_event_type=doc.get("server_event_type", "ServerRecord"),
            seed=int(doc.get("seed", 0)),
        )
        mechanisms = [
            LossMechanism(
                kind=m["kind"],
                event_type=m["event_type"],
                p=float(m.get("p", 0.0)),
                p_ctrl=float(m.get("p_ctrl", 0.0)),
                p_trt=float(m.get("p_trt", 0.0)),
                p_low=float(m.get("p_low", 0.0)),
                p_high=float(m.get("p_high", 0.0)),
                percentile_cut=float(m.get("percentile_cut", 10.0)),
                measure=m.get("measure"),
            )
            for m in doc.get("mechanisms", ())
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad synth spec: {exc}") from exc
    spec.validate()
    for m in mechanisms:
        m.validate()
    return spec, mechanisms


def write_ground_truth(truth: GroundTruth, stream: IO | str, params: dict | None = None) -> None:
    """Write the sidecar JSON: realized rates and true effects (not per-leg labels)."""
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8") as fh:
            write_ground_truth(truth, fh, params)
        return
    doc = {
        "seed": truth.seed,
        "true_effects": dict(sorted(truth.true_effects.items())),
        "loss_rates": [
            {
                "event_type": et,
                "variant": variant,
                "lost": tr.lost,
                "total": tr.total,
                "rate": tr.rate,
            }
            for (et, variant), tr in sorted(truth.loss_rates.items(), key=lambda kv: (kv[0][0], kv[0][1] or ""))
        ],
        "params": dict(sorted((params or {}).items())),
    }
    json.dump(doc, stream, indent=2, sort_keys=True)
    stream.write("\n")


__all__ = [
    "CONTROL",
    "TREATMENT",
    "EventTypeSpec",
    "GroundTruth",
    "LossMechanism",
    "OutcomeModel",
    "SessionCountModel",
    "SynthSpec",
    "TruthRate",
    "apply_loss",
    "generate_population",
    "spec_from_dict",
    "write_ground_truth",
]
