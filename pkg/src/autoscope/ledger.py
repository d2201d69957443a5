"""Simulated-time accounting shared by the scope and the campaign loop."""

from __future__ import annotations

from dataclasses import dataclass, field

KINDS = ("dwell", "travel", "flyback", "spectro", "decision", "modify")


@dataclass(frozen=True)
class LedgerEntry:
    kind: str
    duration: float
    t_start: float


@dataclass
class LatencyLedger:
    """Append-only list of timed charges; the running sum is the simulated clock.

    The clock is accumulated in entry order, so ``sum of durations in entry
    order == clock`` holds bit-for-bit.
    """

    entries: list[LedgerEntry] = field(default_factory=list)
    clock: float = 0.0

    def charge(self, kind: str, duration: float) -> float:
        """Record ``duration`` seconds of ``kind``; returns the start time of the charge."""
        if kind not in KINDS:
            raise ValueError(f"unknown ledger kind {kind!r}")
        if not duration >= 0:
            raise ValueError(f"duration must be non-negative, got {duration}")
        start = self.clock
        self.entries.append(LedgerEntry(kind, float(duration), start))
        self.clock = start + float(duration)
        return start

    def totals(self) -> dict[str, float]:
        out = dict.fromkeys(KINDS, 0.0)
        for e in self.entries:
            out[e.kind] += e.duration
        return out

    def total(self) -> float:
        t = 0.0
        for e in self.entries:
            t += e.duration
        return t

    def fractions(self) -> dict[str, float]:
        """Share of simulated time per kind, plus the decision/acquisition ratio."""
        tot = self.totals()
        clock = self.clock or 1.0
        out = {k: v / clock for k, v in tot.items()}
        acquisition = tot["dwell"] + tot["travel"] + tot["flyback"] + tot["spectro"]
        out["decision_over_acquisition"] = tot["decision"] / acquisition if acquisition else 0.0
        return out

    def to_rows(self) -> list[dict]:
        return [{"kind": e.kind, "duration": e.duration, "t_start": e.t_start} for e in self.entries]

    @classmethod
    def from_rows(cls, rows) -> "LatencyLedger":
        ledger = cls()
        for row in rows:
            ledger.charge(row["kind"], row["duration"])
        return ledger
