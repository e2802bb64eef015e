"""Monitoring center: dedup, gap detection, reconstruction, restoration.

The center is the only stateful listener.  Per meter it keeps a session
ledger; because session numbers are gapless at the source, the set of lost
messages is known exactly, and because every frame carries the meter's
lifetime quantum count, the amount lost inside any bounded gap is known
exactly too.  Only the *times* of lost events need estimating.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .domain import (
    ConcentratorReport,
    MessageType,
    Registry,
    SESSION_MOD,
    encode_frame,
    session_delta,
)

#: mass assigned to an empty hour when a profile is normalized, so that
#: estimated timestamps can never collapse onto a zero-measure interval
PROFILE_SMOOTHING_EPS = 1e-3

#: an hour of wall clock, in milliseconds
_HOUR = 3_600_000
_DAY = 24 * _HOUR


class NoData(ValueError):
    """Raised when a query needs at least one accepted report and has none."""


class InsufficientData(ValueError):
    """Raised when an estimator's minimum input requirements are not met."""


class IngestOutcome(Enum):
    ACCEPTED = "accepted"        # new session
    DUPLICATE = "duplicate"      # same session from another path
    STALE = "stale"              # byte-for-byte replay of a seen report
    CONFLICT = "conflict"        # same session, different payload: tamper signal


@dataclass
class AcceptedSession:
    """One deduplicated session as the center remembers it."""

    abs_session: int
    rx_time_ms: int
    rx_concentrator: int
    message_type: MessageType
    cumulative_quanta: int
    frame: bytes
    seen: set  # (concentrator_id, rx_time_ms) pairs observed for this session

    @property
    def report_count(self) -> int:
        return len(self.seen)


@dataclass(frozen=True)
class ReconstructionResult:
    meter_id: int
    window: tuple[int, int]
    quanta_received: int
    quanta_recovered: int
    amount_du: int
    trailing_uncertainty_du: int

    def __post_init__(self) -> None:
        if self.amount_du < 0 or self.trailing_uncertainty_du < 0:
            raise ValueError("reconstruction amounts must be nonnegative")


@dataclass(frozen=True)
class ConsumerProfile:
    """Hour-of-day consumption weights learned from accepted events."""

    meter_id: int
    hourly_weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.hourly_weights) != 24:
            raise ValueError("profile needs exactly 24 hourly weights")
        if any(w <= 0 for w in self.hourly_weights):
            raise ValueError("profile weights must be positive after smoothing")
        if abs(sum(self.hourly_weights) - 1.0) > 1e-9:
            raise ValueError("profile weights must sum to 1")


class SessionLedger:
    """Wrap-aware per-meter session bookkeeping.

    Sessions are unrolled onto an unbounded internal axis, so a 32-bit
    counter wrap is invisible to gap accounting.  When ``initial_session``
    is given the center knows where the meter's numbering began (normal for
    a registered installation) and messages lost before first contact are
    tracked as gaps; without it the ledger anchors at the first session it
    happens to see.
    """

    def __init__(self, meter_id: int, *, initial_session: int | None = None,
                 modulus: int = SESSION_MOD) -> None:
        self.meter_id = meter_id
        self.modulus = modulus
        self.initial_session = initial_session
        self._accepted: dict[int, AcceptedSession] = {}
        self._gaps: set[int] = set()
        self._min_abs: int | None = None
        self._max_abs: int | None = None
        self.stale_replays = 0
        self.conflict_sessions: set[int] = set()

    # -- accessors ---------------------------------------------------------

    @property
    def is_empty(self) -> bool:
        return not self._accepted

    @property
    def highest_session(self) -> int | None:
        return None if self._max_abs is None else self._max_abs % self.modulus

    @property
    def first_covered(self) -> int | None:
        return None if self._min_abs is None else self._min_abs % self.modulus

    def accepted_sessions(self) -> list[AcceptedSession]:
        return [self._accepted[a] for a in sorted(self._accepted)]

    def accepted_count(self) -> int:
        return len(self._accepted)

    def _unroll(self, session: int) -> int:
        """Map a wire counter value onto the unbounded internal axis."""
        if self._max_abs is None:
            anchor = self.initial_session if self.initial_session is not None else session
            return anchor + session_delta(anchor % self.modulus, session, self.modulus)
        return self._max_abs + session_delta(
            self._max_abs % self.modulus, session, self.modulus
        )

    # -- ingestion ---------------------------------------------------------

    def ingest(self, report: ConcentratorReport) -> IngestOutcome:
        """Fold one concentrator report into the ledger.

        Duplicates from different paths keep the earliest reception time
        (ties broken by lowest concentrator id); an exact replay is a
        counted no-op; a payload mismatch for an already-accepted session is
        flagged as tamper evidence and the first payload is kept.
        """
        msg = report.message
        if msg.meter_id != self.meter_id:
            raise ValueError(
                f"report for meter {msg.meter_id:#x} fed to ledger of {self.meter_id:#x}"
            )
        abs_session = self._unroll(msg.session)
        record = self._accepted.get(abs_session)
        if record is not None:
            frame = encode_frame(msg)
            if frame != record.frame:
                self.conflict_sessions.add(abs_session)
                return IngestOutcome.CONFLICT
            key = (report.concentrator_id, report.rx_time_ms)
            if key in record.seen:
                self.stale_replays += 1
                return IngestOutcome.STALE
            record.seen.add(key)
            if (report.rx_time_ms, report.concentrator_id) < (
                record.rx_time_ms,
                record.rx_concentrator,
            ):
                record.rx_time_ms = report.rx_time_ms
                record.rx_concentrator = report.concentrator_id
            return IngestOutcome.DUPLICATE
        self._accepted[abs_session] = AcceptedSession(
            abs_session=abs_session,
            rx_time_ms=report.rx_time_ms,
            rx_concentrator=report.concentrator_id,
            message_type=msg.message_type,
            cumulative_quanta=msg.state.cumulative_quanta,
            frame=encode_frame(msg),
            seen={(report.concentrator_id, report.rx_time_ms)},
        )
        self._gaps.discard(abs_session)
        if self._max_abs is None:
            if self.initial_session is not None:
                start = self.initial_session
                self._gaps.update(range(start, abs_session))
                self._min_abs = min(start, abs_session)
            else:
                self._min_abs = abs_session
            self._max_abs = abs_session
        else:
            if abs_session > self._max_abs:
                self._gaps.update(
                    a for a in range(self._max_abs + 1, abs_session)
                )
                self._max_abs = abs_session
            elif abs_session < self._min_abs:
                self._gaps.update(
                    a for a in range(abs_session + 1, self._min_abs)
                )
                self._min_abs = abs_session
        return IngestOutcome.ACCEPTED

    # -- gaps --------------------------------------------------------------

    def detect_gaps(self) -> list[int]:
        """Known-lost sessions as wire numbers, in emission order."""
        return [a % self.modulus for a in sorted(self._gaps)]

    def gap_runs(self) -> list[list[int]]:
        """Maximal runs of consecutive lost sessions, as wire numbers."""
        runs: list[list[int]] = []
        prev = None
        for a in sorted(self._gaps):
            if prev is not None and a == prev + 1:
                runs[-1].append(a % self.modulus)
            else:
                runs.append([a % self.modulus])
            prev = a
        return runs

    def _neighbors(self, run_abs: list[int]):
        """Bounding accepted sessions of a contiguous lost run.

        A None lower bound means the run starts at the installation boundary
        (time zero, zero lifetime quanta); a None upper bound marks a
        trailing run that nothing has closed yet.
        """
        return (
            self._accepted.get(run_abs[0] - 1),
            self._accepted.get(run_abs[-1] + 1),
        )

    def _runs_abs(self) -> list[list[int]]:
        runs: list[list[int]] = []
        prev = None
        for a in sorted(self._gaps):
            if prev is not None and a == prev + 1:
                runs[-1].append(a)
            else:
                runs.append([a])
            prev = a
        return runs

    # -- reconstruction ----------------------------------------------------

    def reconstruct(self, quantum_du: int, window: tuple[int, int]) -> ReconstructionResult:
        """Consumption over a reception-time window, losses recovered.

        Received quanta are accepted quantum events inside the window.  For
        each lost run bounded by accepted sessions the exact number of lost
        quantum events is the difference of the bounding lifetime counters;
        those count as recovered when both bounds lie inside the window, and
        as trailing uncertainty when the run straddles the window's end.
        Losses before first contact are recovered the same way against the
        installation point when the initial session is known.
        """
        t0, t1 = window
        if t0 > t1:
            raise ValueError(f"window is not ordered: {window}")
        if not self._accepted:
            raise NoData(f"ledger for meter {self.meter_id:#x} is empty")
        if quantum_du <= 0:
            raise ValueError("quantum must be positive")
        received = sum(
            1
            for rec in self._accepted.values()
            if rec.message_type is MessageType.QUANTUM_EVENT
            and t0 <= rec.rx_time_ms <= t1
        )
        recovered = 0
        trailing = 0
        for lo, hi, quanta in self.bounded_runs():
            lo_time = lo.rx_time_ms if lo is not None else 0
            if quanta <= 0 or lo_time < t0:
                continue
            if hi.rx_time_ms <= t1:
                recovered += quanta
            elif lo_time <= t1:
                trailing += quanta
        return ReconstructionResult(
            meter_id=self.meter_id,
            window=(t0, t1),
            quanta_received=received,
            quanta_recovered=recovered,
            amount_du=(received + recovered) * quantum_du,
            trailing_uncertainty_du=trailing * quantum_du,
        )

    def bounded_runs(self):
        """(lower, upper, lost_quantum_events) per gap run with an upper bound.

        ``lower`` is None for a pre-first-contact run, which is measured from
        the installation origin instead of an accepted session.
        """
        out = []
        for run in self._runs_abs():
            lower, upper = self._neighbors(run)
            if upper is None:
                continue  # trailing run: nothing bounds it yet
            if lower is None:
                before_ok = (
                    self.initial_session is not None
                    and run[0] == self.initial_session
                )
                if not before_ok:
                    continue
                base_quanta = 0
            else:
                base_quanta = lower.cumulative_quanta
            lost = upper.cumulative_quanta - base_quanta
            if upper.message_type is MessageType.QUANTUM_EVENT:
                lost -= 1
            out.append((lower, upper, lost))
        return out

    # -- lost-time restoration --------------------------------------------

    def interpolate_lost_times(self, gap_run: list[int],
                               profile: ConsumerProfile | None = None,
                               ) -> list[tuple[int, float]]:
        """Estimate emission times for one contiguous run of lost sessions.

        Uniform spacing between the bounding reception times by default;
        with a profile, spacing proportional to the profile's hour-of-day
        mass.  Estimates are strictly inside the bounding timestamps and
        strictly increasing.  A run nothing has closed yet (no upper bound)
        cannot be placed and yields an empty list; retry once a later
        session arrives.
        """
        if not gap_run:
            return []
        run_abs = [self._unroll(s) for s in gap_run]
        if any(b - a != 1 for a, b in zip(run_abs, run_abs[1:])):
            raise ValueError("gap run must be contiguous sessions")
        if any(a not in self._gaps for a in run_abs):
            raise ValueError("gap run contains sessions not known to be lost")
        lower, upper = self._neighbors(run_abs)
        if upper is None:
            return []
        if lower is None:
            if self.initial_session is None or run_abs[0] != self.initial_session:
                return []
            t_lo = 0
        else:
            t_lo = lower.rx_time_ms
        t_hi = upper.rx_time_ms
        k = len(run_abs)
        if t_hi <= t_lo:
            # degenerate zero-width bracket; pin everything at the boundary
            return [(s % self.modulus, float(t_lo)) for s in run_abs]
        if profile is None:
            times = [
                t_lo + (t_hi - t_lo) * Fraction(i, k + 1) for i in range(1, k + 1)
            ]
        else:
            times = _profile_quantiles(profile, t_lo, t_hi, k)
        return [(s % self.modulus, float(t)) for s, t in zip(run_abs, times)]

    # -- profile learning --------------------------------------------------

    def build_profile(self) -> ConsumerProfile:
        """Learn hour-of-day weights from accepted quantum events.

        Requires at least a full day's span of accepted events so every
        wall-clock hour had a chance to be observed.
        """
        events = [
            rec
            for rec in self._accepted.values()
            if rec.message_type is MessageType.QUANTUM_EVENT
        ]
        if not events:
            raise InsufficientData("no accepted quantum events to learn from")
        span = max(r.rx_time_ms for r in events) - min(r.rx_time_ms for r in events)
        if span < _DAY:
            raise InsufficientData(
                f"profile needs a full day of history, have {span} ms"
            )
        counts = [0] * 24
        for rec in events:
            counts[(rec.rx_time_ms // _HOUR) % 24] += 1
        masses = [c if c > 0 else PROFILE_SMOOTHING_EPS for c in counts]
        total = sum(masses)
        return ConsumerProfile(self.meter_id, tuple(m / total for m in masses))

    # -- drift correction --------------------------------------------------

    def correct_drift(self, quantum_du: int,
                      checkpoints: list[tuple[int, int]]) -> float:
        """Least-squares scale aligning reconstructed amounts to references.

        ``checkpoints`` are (time_ms, true_cumulative_du) pairs from an
        out-of-band reading.  Returns the scalar s minimizing the squared
        error of s * reconstructed(t) against the references.  Requires two
        or more checkpoints spanning at least 1000 quanta.
        """
        if len(checkpoints) < 2:
            raise InsufficientData("drift correction needs at least two checkpoints")
        pairs = []
        for t, true_du in sorted(checkpoints):
            result = self.reconstruct(quantum_du, (0, t))
            pairs.append((result.quanta_received + result.quanta_recovered, true_du))
        if pairs[-1][0] - pairs[0][0] < 1000:
            raise InsufficientData(
                "drift correction needs checkpoints spanning at least 1000 quanta"
            )
        num = sum(q * quantum_du * c for q, c in pairs)
        den = sum((q * quantum_du) ** 2 for q, _ in pairs)
        if den == 0:
            raise InsufficientData("no reconstructed consumption at any checkpoint")
        return num / den

    # -- snapshots ---------------------------------------------------------

    def snapshot(self, include_reception_stats: bool = True) -> dict:
        """Canonical JSON-safe view; two equal ledgers give equal snapshots."""
        sessions = []
        for rec in self.accepted_sessions():
            row = {
                "session": rec.abs_session % self.modulus,
                "rx_time_ms": rec.rx_time_ms,
                "rx_concentrator": rec.rx_concentrator,
                "type": rec.message_type.value,
                "cumulative_quanta": rec.cumulative_quanta,
            }
            if include_reception_stats:
                row["report_count"] = rec.report_count
            sessions.append(row)
        snap = {
            "meter_id": self.meter_id,
            "initial_session": self.initial_session,
            "first_covered": self.first_covered,
            "highest_session": self.highest_session,
            "sessions": sessions,
            "gaps": self.detect_gaps(),
            "conflicts": sorted(a % self.modulus for a in self.conflict_sessions),
        }
        return snap


class MonitoringCenter:
    """All per-meter ledgers plus the registry that scopes them."""

    def __init__(self, registry: Registry, *, initial_session: int | None = 0) -> None:
        self.registry = registry
        self._initial = initial_session
        self._ledgers: dict[int, SessionLedger] = {}

    def ledger(self, meter_id: int) -> SessionLedger:
        if meter_id not in self._ledgers:
            if not self.registry.has_meter(meter_id):
                raise KeyError(f"meter not registered: {meter_id:#x}")
            self._ledgers[meter_id] = SessionLedger(
                meter_id, initial_session=self._initial
            )
        return self._ledgers[meter_id]

    def ingest(self, report: ConcentratorReport) -> IngestOutcome:
        return self.ledger(report.message.meter_id).ingest(report)

    def ledgers(self) -> dict[int, SessionLedger]:
        return dict(sorted(self._ledgers.items()))

    def reconstruct_all(self, window: tuple[int, int]) -> list[ReconstructionResult]:
        out = []
        for mid in self.registry.meter_ids():
            ledger = self._ledgers.get(mid)
            if ledger is None or ledger.is_empty:
                out.append(ReconstructionResult(mid, window, 0, 0, 0, 0))
                continue
            out.append(ledger.reconstruct(self.registry.meter(mid).quantum_du, window))
        return out

    def snapshots(self, include_reception_stats: bool = True) -> list[dict]:
        return [
            self._ledgers[mid].snapshot(include_reception_stats)
            for mid in sorted(self._ledgers)
        ]


def _profile_quantiles(profile: ConsumerProfile, t_lo: int, t_hi: int,
                       k: int) -> list[Fraction]:
    """k interior quantile times of the profile's mass over (t_lo, t_hi).

    The profile is a piecewise-constant density over wall-clock hours,
    repeating daily; its cumulative mass is piecewise linear and strictly
    increasing (weights are positive), so quantiles are unique and strictly
    interior.
    """
    weights = [Fraction(w).limit_denominator(10**12) for w in profile.hourly_weights]

    def mass_to(t: Fraction) -> Fraction:
        """Profile mass accumulated from t_lo to t."""
        total = Fraction(0)
        # whole days first, then the partial day hour by hour
        lo = Fraction(t_lo)
        span = t - lo
        day_mass = sum(weights)
        full_days, rem = divmod(span, _DAY)
        total += day_mass * full_days
        cursor = lo + full_days * _DAY
        while rem > 0:
            hour_idx = int((cursor // _HOUR) % 24)
            hour_end = (cursor // _HOUR + 1) * _HOUR
            step = min(rem, hour_end - cursor)
            total += weights[hour_idx] * step / _HOUR
            cursor += step
            rem -= step
        return total

    total_mass = mass_to(Fraction(t_hi))
    out = []
    for i in range(1, k + 1):
        target = total_mass * Fraction(i, k + 1)
        out.append(_invert_mass(weights, t_lo, t_hi, target))
    return out


def _invert_mass(weights: list[Fraction], t_lo: int, t_hi: int,
                 target: Fraction) -> Fraction:
    """Earliest time t in (t_lo, t_hi) with mass(t_lo .. t) == target."""
    acc = Fraction(0)
    cursor = Fraction(t_lo)
    end = Fraction(t_hi)
    while cursor < end:
        hour_idx = int((cursor // _HOUR) % 24)
        hour_end = (cursor // _HOUR + 1) * _HOUR
        step = min(end, hour_end) - cursor
        gain = weights[hour_idx] * step / _HOUR
        if acc + gain >= target:
            # linear inside the hour; weights are positive so gain > 0 here
            return cursor + (target - acc) * _HOUR / weights[hour_idx]
        acc += gain
        cursor += step
    return end
