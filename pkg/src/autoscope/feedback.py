"""Line-by-line feedback: detect signal crossings in the scan stream and answer
each with a predefined pulse waveform."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .sample import Sample, apply_pulse
from .scope import Observation, ScanPath, ScopeSession


@dataclass(frozen=True)
class SchmittTrigger:
    """Dual-threshold detector.

    ``state`` is ``"below"`` (armed), ``"above"`` (fired, waiting to re-arm), or
    ``None`` before the first value outside the band has been seen.  A trigger
    starting in ``None`` never fires on the first sample, so a line that is
    already high does not count as a crossing.
    """

    high: float
    low: float
    state: str | None = None

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"low ({self.low}) must be below high ({self.high})")
        if self.state not in (None, "below", "above"):
            raise ValueError(f"invalid trigger state {self.state!r}")


def _advance(state, value, trig):
    """One detector step; returns (new_state, fired)."""
    if value >= trig.high:
        return "above", state == "below"
    if value <= trig.low:
        return "below", False
    return state, False


def detect_crossings(line, trig: SchmittTrigger) -> tuple[list[int], SchmittTrigger]:
    """Indices where the signal rises through ``high`` after having been at or below ``low``.

    ``line`` holds Observations or plain values.  Returns the indices and the
    trigger carrying its final state into the next line.
    """
    values = [o.value if isinstance(o, Observation) else float(o) for o in line]
    if not values:
        raise ValueError("empty line")
    state = trig.state
    hits = []
    for i, v in enumerate(values):
        state, fired = _advance(state, v, trig)
        if fired:
            hits.append(i)
    return hits, replace(trig, state=state)


@dataclass(frozen=True)
class FeedbackPlan:
    trigger: SchmittTrigger
    waveform: tuple[tuple[float, float], ...]  # (bias V, dose) per pulse
    per_line_limit: int = 1
    radius: float = 0.0  # pixels
    pulse_time: float = 1e-3  # s of simulated time per pulse

    def __post_init__(self):
        if self.per_line_limit < 1:
            raise ValueError("per_line_limit must be at least 1")
        if not self.waveform:
            raise ValueError("waveform must contain at least one pulse")
        object.__setattr__(self, "waveform", tuple((float(b), float(d)) for b, d in self.waveform))


@dataclass
class FeedbackEvent:
    t_sim: float
    line: int
    index: int
    pos: tuple[float, float]
    pulse: list[tuple[float, float]]
    flips: list[tuple[int, int]]

    def to_dict(self) -> dict:
        return {
            "t_sim": self.t_sim,
            "line": self.line,
            "index": self.index,
            "pos": list(self.pos),
            "pulse": [list(p) for p in self.pulse],
            "flips": [list(f) for f in self.flips],
        }

    @classmethod
    def from_dict(cls, d) -> "FeedbackEvent":
        return cls(d["t_sim"], d["line"], d["index"], tuple(d["pos"]),
                   [tuple(p) for p in d["pulse"]], [tuple(f) for f in d["flips"]])


def events_to_jsonl(events) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in events)


def run_ferrobot(session: ScopeSession, sample: Sample | None, plan: FeedbackPlan, path: ScanPath, *,
                 noise_sigma: float = 0.0, channel: str = "polarization", seed: int = 0):
    """Scan ``path`` and fire ``plan.waveform`` at every detected crossing.

    Detection runs point by point.  A pulse is applied right after the point
    that triggered it and before the next observation, at the pixel under the
    probe's true position.  Each trigger charges the session's decision latency
    plus ``pulse_time`` per pulse.  Returns ``(events, observations)``.
    """
    if path.kind not in ("raster", "serpentine"):
        raise ValueError(f"feedback needs a line-structured path, got {path.kind!r}")
    sample = session.sample if sample is None else sample
    if sample is not session.sample:
        raise ValueError("the session must be scanning the sample being modified")
    rng = np.random.default_rng(seed)
    trig = plan.trigger
    state = trig.state
    events: list[FeedbackEvent] = []
    observations: list[Observation] = []
    line_hits: dict[int, int] = {}
    for obs in session.iter_points(path, noise_sigma, channel):
        observations.append(obs)
        state, fired = _advance(state, obs.value, trig)
        if not fired or line_hits.get(obs.line, 0) >= plan.per_line_limit:
            continue
        line_hits[obs.line] = line_hits.get(obs.line, 0) + 1
        session.charge("decision", session.latency.decision_charge)
        pixel = sample.grid.to_pixel(obs.pos_true)
        t_fire = session.clock
        flips = []
        for bias, dose in plan.waveform:
            seed_i = int(rng.integers(2**63))
            session.charge("modify", plan.pulse_time)
            flips += apply_pulse(sample, pixel, bias, dose, plan.radius, seed_i)
        events.append(FeedbackEvent(t_fire, obs.line, obs.index, obs.pos_true, list(plan.waveform), flips))
    return events, observations


def wall_positions(values: np.ndarray, trig: SchmittTrigger) -> list[list[int]]:
    """Rising-crossing columns of every row of an image, each row detected independently."""
    return [detect_crossings(row, trig)[0] for row in np.asarray(values)]
