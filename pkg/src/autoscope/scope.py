"""Virtual scanning microscope.

A :class:`ScopeSession` executes scan paths and spectroscopy against a
:class:`~autoscope.sample.Sample` in simulated time.  Measurements pick up
Gaussian noise, the probe drifts (linear plus random walk), and every
microsecond of dwell, travel, flyback and spectroscopy is booked in a
:class:`~autoscope.ledger.LatencyLedger`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .fields import Grid, ScalarField2D
from .ledger import LatencyLedger
from .sample import Sample, SiteLoopParams, curve_area, loop_response

PATH_KINDS = ("raster", "serpentine", "spiral", "lissajous", "freeform")
CHANNELS = ("topography", "polarization", "piezoresponse", "custom")
DEFAULT_MAX_POINTS = 1 << 20


@dataclass(frozen=True)
class ScanPath:
    kind: str
    waypoints: np.ndarray
    dwell: float
    line_breaks: tuple[int, ...]
    window: tuple[float, float, float, float]

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}")
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "line_breaks", tuple(int(b) for b in self.line_breaks))
        if len(wp) == 0:
            raise ValueError("scan path needs at least one waypoint")
        x0, y0, x1, y1 = self.window
        tol = 1e-9 * max(abs(x1), abs(y1), 1.0)
        if (wp[:, 0].min() < x0 - tol or wp[:, 0].max() > x1 + tol
                or wp[:, 1].min() < y0 - tol or wp[:, 1].max() > y1 + tol):
            raise ValueError("waypoints leave the scan window")
        lb = self.line_breaks
        if any(b <= a for a, b in zip(lb, lb[1:])) or (lb and (lb[0] < 1 or lb[-1] > len(wp))):
            raise ValueError(f"line_breaks {lb} must increase strictly within 1..{len(wp)}")
        if self.dwell < 0:
            raise ValueError("dwell must be non-negative")

    def __len__(self):
        return len(self.waypoints)

    def lines(self) -> list[range]:
        """Index ranges of the logical lines; points after the last break form a final line."""
        bounds = list(self.line_breaks)
        if not bounds or bounds[-1] < len(self):
            bounds.append(len(self))
        starts = [0] + bounds[:-1]
        return [range(a, b) for a, b in zip(starts, bounds)]

    @classmethod
    def from_points(cls, points, dwell: float, window, kind: str = "freeform") -> "ScanPath":
        """Visit ``points`` exactly, as one logical line."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(kind, points, dwell, (len(points),), tuple(window))


@dataclass
class Observation:
    pos_nominal: tuple[float, float]
    pos_true: tuple[float, float]
    channel: str
    value: float
    t_sim: float
    line: int = 0
    index: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pos_nominal"] = list(self.pos_nominal)
        d["pos_true"] = list(self.pos_true)
        return d

    @classmethod
    def from_dict(cls, d) -> "Observation":
        return cls(
            tuple(d["pos_nominal"]), tuple(d["pos_true"]), d["channel"],
            d["value"], d["t_sim"], d.get("line", 0), d.get("index", 0),
        )


def observations_to_jsonl(observations) -> str:
    return "".join(json.dumps(o.to_dict(), sort_keys=True) + "\n" for o in observations)


def observations_from_jsonl(text: str) -> list[Observation]:
    return [Observation.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class DriftModel:
    velocity: tuple[float, float] = (0.0, 0.0)
    random_walk_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.random_walk_sigma < 0:
            raise ValueError("random_walk_sigma must be non-negative")


@dataclass(frozen=True)
class LatencyModel:
    dwell_default: float = 1e-3
    slew_rate: float = 1e4
    flyback: float = 0.0
    decision_charge: float = 0.1

    def __post_init__(self):
        if min(self.dwell_default, self.flyback, self.decision_charge) < 0:
            raise ValueError("latency terms must be non-negative")
        if not self.slew_rate > 0:
            raise ValueError("slew_rate must be positive")


def _check_window(window):
    x0, y0, x1, y1 = (float(v) for v in window)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate scan window {window}")
    return x0, y0, x1, y1


def plan_path(kind: str, window, *, dwell: float = 1e-3, max_points: int = DEFAULT_MAX_POINTS,
              **params) -> ScanPath:
    """Build a scan trajectory inside ``window`` = (x0, y0, x1, y1) in nm.

    raster / serpentine : ``nx``, ``ny`` pixel-centre grid, one line per row
    spiral              : ``pitch`` between turns, arc-length ``step`` (default pitch),
                          optional ``center`` and ``r_max``; one line per turn
    lissajous           : ``n_points``, frequencies ``a``, ``b``, phase ``delta``,
                          amplitudes ``A``, ``B`` (default: half the window)
    freeform            : polyline ``vertices`` resampled every ``step`` nm
    """
    x0, y0, x1, y1 = window = _check_window(window)
    w, h = x1 - x0, y1 - y0

    def check_count(n):
        if n > max_points:
            raise ValueError(f"{kind} path would have {n} points, above max_points={max_points}")

    if kind in ("raster", "serpentine"):
        nx, ny = int(params.pop("nx")), int(params.pop("ny"))
        if nx < 1 or ny < 1:
            raise ValueError("raster resolution must be positive")
        check_count(nx * ny)
        xs = x0 + (np.arange(nx) + 0.5) * w / nx
        ys = y0 + (np.arange(ny) + 0.5) * h / ny
        rows = []
        for i, y in enumerate(ys):
            row_x = xs[::-1] if (kind == "serpentine" and i % 2) else xs
            rows.append(np.column_stack([row_x, np.full(nx, y)]))
        pts = np.vstack(rows)
        breaks = [nx * (i + 1) for i in range(ny)]
    elif kind == "spiral":
        pitch = float(params.pop("pitch"))
        step = float(params.pop("step", pitch))
        if not (pitch > 0 and step > 0):
            raise ValueError("spiral pitch and step must be positive")
        cx, cy = params.pop("center", (x0 + w / 2, y0 + h / 2))
        r_max = float(params.pop("r_max", min(cx - x0, x1 - cx, cy - y0, y1 - cy)))
        c = pitch / (2 * np.pi)
        theta_max = r_max / c
        arc = lambda th: 0.5 * c * (th * np.sqrt(1 + th**2) + np.arcsinh(th))  # noqa: E731
        n = int(arc(theta_max) // step) + 1
        check_count(n)
        dense = np.linspace(0.0, theta_max, max(64 * n, 4096))
        theta = np.interp(np.arange(n) * step, arc(dense), dense)
        r = c * theta
        pts = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
        turn = np.floor(theta / (2 * np.pi)).astype(int)
        breaks = [int(i) for i in np.flatnonzero(np.diff(turn)) + 1] + [n]
    elif kind == "lissajous":
        n = int(params.pop("n_points"))
        if n < 1:
            raise ValueError("n_points must be positive")
        check_count(n)
        a, b = float(params.pop("a", 3.0)), float(params.pop("b", 2.0))
        delta = float(params.pop("delta", np.pi / 2))
        A = float(params.pop("A", w / 2))
        B = float(params.pop("B", h / 2))
        if A > w / 2 or B > h / 2:
            raise ValueError("lissajous amplitudes exceed the window")
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        pts = np.column_stack([x0 + w / 2 + A * np.sin(a * t), y0 + h / 2 + B * np.sin(b * t + delta)])
        breaks = [n]
    elif kind == "freeform":
        verts = np.asarray(params.pop("vertices"), dtype=float).reshape(-1, 2)
        step = float(params.pop("step"))
        if not step > 0:
            raise ValueError("freeform step must be positive")
        seg = np.hypot(*np.diff(verts, axis=0).T)
        s_cum = np.concatenate([[0.0], np.cumsum(seg)])
        n = int(s_cum[-1] // step) + 1
        check_count(n)
        s = np.arange(n) * step
        pts = np.column_stack([np.interp(s, s_cum, verts[:, 0]), np.interp(s, s_cum, verts[:, 1])])
        breaks = [n]
    else:
        raise ValueError(f"unknown path kind {kind!r}")
    if params:
        raise TypeError(f"unexpected parameters for {kind} path: {sorted(params)}")
    return ScanPath(kind, pts, dwell, tuple(breaks), window)


@dataclass
class SpectroCurve:
    bias: np.ndarray
    response: np.ndarray
    ascending: np.ndarray  # bool per point: True on the up sweep
    stopped_early: bool
    elapsed: float
    pos: tuple[float, float] = (0.0, 0.0)
    pos_true: tuple[float, float] = (0.0, 0.0)
    t_start: float = 0.0

    def __len__(self):
        return len(self.bias)

    def area(self) -> float:
        """Loop area from the measured branches; NaN for an interrupted sweep."""
        if self.stopped_early:
            return float("nan")
        up = self.ascending
        down_bias = self.bias[~up][::-1]
        if not np.allclose(down_bias, self.bias[up]):
            raise ValueError("up and down sweeps are not on a common bias ramp")
        return curve_area(self.bias[up], self.response[up], self.response[~up][::-1])


@dataclass
class ScopeSession:
    """One exclusive acquisition session over a sample.

    The sample is read lazily while a path streams, so modifications applied
    between observations (see the feedback module) are seen by later points.
    """

    sample: Sample
    drift: DriftModel = field(default_factory=DriftModel)
    latency: LatencyModel = field(default_factory=LatencyModel)
    seed: int = 0
    ledger: LatencyLedger = field(default_factory=LatencyLedger)

    def __post_init__(self):
        self._noise_rng = np.random.default_rng(self.seed)
        self._drift_rng = np.random.default_rng(self.drift.seed)
        self._walk = np.zeros(2)
        self._walk_t = 0.0
        self.probe: np.ndarray | None = None
        self._line_counter = 0

    @property
    def clock(self) -> float:
        return self.ledger.clock

    def charge(self, kind: str, duration: float) -> float:
        return self.ledger.charge(kind, duration)

    def drift_offset(self, t: float) -> np.ndarray:
        """Sample-probe displacement at simulated time ``t`` (must not go backwards)."""
        dt = t - self._walk_t
        if dt < 0:
            raise ValueError("drift queried backwards in time")
        if self.drift.random_walk_sigma > 0 and dt > 0:
            self._walk = self._walk + self._drift_rng.normal(0.0, self.drift.random_walk_sigma * math.sqrt(dt), 2)
        self._walk_t = t
        return np.asarray(self.drift.velocity, dtype=float) * t + self._walk

    def _move_to(self, pos):
        pos = np.asarray(pos, dtype=float)
        if self.probe is not None:
            dist = float(np.hypot(*(pos - self.probe)))
            if dist > 0:
                self.charge("travel", dist / self.latency.slew_rate)
        self.probe = pos

    def _check_path(self, path: ScanPath):
        ex, ey = self.sample.grid.extent
        wp = path.waypoints
        if wp.min() < 0 or wp[:, 0].max() > ex or wp[:, 1].max() > ey:
            raise ValueError("scan path leaves the sample extent")

    def iter_points(self, path: ScanPath, noise_sigma: float = 0.0, channel: str = "polarization",
                    custom: ScalarField2D | None = None) -> Iterator[Observation]:
        """Yield one observation per waypoint in path order, advancing the clock."""
        self._check_path(path)
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel {channel!r}")
        if channel == "custom" and custom is None:
            raise ValueError("custom channel needs a field")
        dwell = path.dwell if path.dwell > 0 else self.latency.dwell_default
        for li, line in enumerate(path.lines()):
            line_id = self._line_counter
            self._line_counter += 1
            for i in line:
                nominal = path.waypoints[i]
                self._move_to(nominal)
                t = self.clock
                true = nominal + self.drift_offset(t)
                truth = custom if channel == "custom" else self.sample.channel(channel)
                value = float(truth.sample(true)[0])
                if noise_sigma > 0:
                    value += float(self._noise_rng.normal(0.0, noise_sigma))
                self.charge("dwell", dwell)
                yield Observation((float(nominal[0]), float(nominal[1])), (float(true[0]), float(true[1])),
                                  channel, value, t, line_id, i)
            if li < len(path.line_breaks):
                self.charge("flyback", self.latency.flyback)

    def stream(self, path: ScanPath, noise_sigma: float = 0.0, channel: str = "polarization",
               custom: ScalarField2D | None = None) -> Iterator[list[Observation]]:
        """Line-granular stream: each item is the complete list of one logical line."""
        buf: list[Observation] = []
        current = None
        for obs in self.iter_points(path, noise_sigma, channel, custom):
            if current is not None and obs.line != current:
                yield buf
                buf = []
            current = obs.line
            buf.append(obs)
        if buf:
            yield buf

    def execute(self, path: ScanPath, noise_sigma: float = 0.0, channel: str = "polarization",
                custom: ScalarField2D | None = None) -> tuple[list[Observation], float]:
        start = self.clock
        obs = list(self.iter_points(path, noise_sigma, channel, custom))
        return obs, self.clock - start

    def survey(self, window, resolution, noise_sigma: float = 0.0, channel: str = "polarization",
               dwell: float | None = None) -> tuple[ScalarField2D, float]:
        nx, ny = resolution
        path = plan_path("raster", window, nx=nx, ny=ny,
                         dwell=self.latency.dwell_default if dwell is None else dwell)
        obs, elapsed = self.execute(path, noise_sigma, channel)
        x0, y0, x1, y1 = path.window
        img = ScalarField2D(nx, ny, (x1 - x0, y1 - y0), np.array([o.value for o in obs]))
        return img, elapsed

    def _spectro_tick(self) -> float:
        self.charge("spectro", self.latency.dwell_default)
        return self.latency.dwell_default

    def ramp_spectroscopy(self, pos, ramp, stop_threshold: float | None = None,
                          noise_sigma: float = 0.0, params: SiteLoopParams | None = None) -> SpectroCurve:
        """Bias sweep up then down at ``pos``, charging ``dwell_default`` per step."""
        v_start, v_end, n_steps = ramp
        if n_steps < 2:
            raise ValueError(f"ramp needs at least 2 steps, got {n_steps}")
        self._move_to(pos)
        t_start = self.clock
        true = np.asarray(pos, dtype=float) + self.drift_offset(t_start)
        if params is None:
            params = self.sample.params_at_position(true)
        curve = _sweep(params, v_start, v_end, int(n_steps), stop_threshold, noise_sigma, self._noise_rng,
                       self._spectro_tick)
        curve.pos = (float(pos[0]), float(pos[1]))
        curve.pos_true = (float(true[0]), float(true[1]))
        curve.t_start = t_start
        return curve


def _sweep(params, v_start, v_end, n_steps, stop_threshold, noise_sigma, rng, tick) -> SpectroCurve:
    up = np.linspace(v_start, v_end, n_steps)
    schedule = [(v, True) for v in up] + [(v, False) for v in up[::-1]]
    bias, resp, asc = [], [], []
    stopped = False
    elapsed = 0.0
    for v, is_up in schedule:
        r = float(loop_response(params, v, "ascending" if is_up else "descending"))
        if noise_sigma > 0:
            r += float(rng.normal(0.0, noise_sigma))
        elapsed += tick()
        bias.append(float(v))
        resp.append(r)
        asc.append(is_up)
        if stop_threshold is not None and abs(r) >= stop_threshold:
            stopped = True
            break
    return SpectroCurve(np.array(bias), np.array(resp), np.array(asc, dtype=bool), stopped, elapsed)


def execute(path: ScanPath, sample: Sample, drift: DriftModel | None = None, lat: LatencyModel | None = None,
            noise_sigma: float = 0.0, channel: str = "polarization", seed: int = 0):
    """Run ``path`` in a fresh session; returns (observations, total_time, ledger)."""
    session = ScopeSession(sample, drift or DriftModel(), lat or LatencyModel(), seed)
    obs, total = session.execute(path, noise_sigma, channel)
    return obs, total, session.ledger


def ramp_spectroscopy(pos, params: SiteLoopParams, ramp, stop_threshold: float | None = None,
                      noise_sigma: float = 0.0, seed: int = 0, step_time: float = 1e-3) -> SpectroCurve:
    """Stand-alone sweep on a given loop; ``elapsed`` is ``step_time`` per recorded step."""
    v_start, v_end, n_steps = ramp
    if n_steps < 2:
        raise ValueError(f"ramp needs at least 2 steps, got {n_steps}")
    curve = _sweep(params, v_start, v_end, int(n_steps), stop_threshold, noise_sigma,
                   np.random.default_rng(seed), lambda: step_time)
    curve.pos = (float(pos[0]), float(pos[1]))
    return curve


def survey(sample: Sample, window=None, resolution=None, drift: DriftModel | None = None,
           lat: LatencyModel | None = None, noise_sigma: float = 0.0, channel: str = "polarization",
           seed: int = 0) -> tuple[ScalarField2D, float]:
    """Raster quicklook; defaults to the full sample at native resolution."""
    g = sample.grid
    window = window or (0.0, 0.0, g.extent[0], g.extent[1])
    resolution = resolution or (g.width, g.height)
    session = ScopeSession(sample, drift or DriftModel(), lat or LatencyModel(), seed)
    return session.survey(window, resolution, noise_sigma, channel)


def estimate_drift(img_a: ScalarField2D, img_b: ScalarField2D, max_shift: int) -> tuple[int, int]:
    """Integer shift (dx, dy) such that ``img_b[y+dy, x+dx] ~ img_a[y, x]``.

    Exhaustive normalized cross-correlation over the overlap of each candidate
    shift; near-ties (1e-12) go to the smallest |dx|+|dy|, then lexicographic.
    """
    a, b = img_a.values, img_b.values
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if not 0 <= max_shift < min(h, w) / 2:
        raise ValueError(f"max_shift must be below half the smaller dimension ({min(h, w) / 2})")
    scores = []
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            pa = a[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
            pb = b[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)]
            pa = pa - pa.mean()
            pb = pb - pb.mean()
            denom = math.sqrt(float((pa * pa).sum()) * float((pb * pb).sum()))
            ncc = float((pa * pb).sum()) / denom if denom > 0 else 0.0
            scores.append((ncc, dx, dy))
    best = max(s[0] for s in scores)
    tied = [(abs(dx) + abs(dy), dx, dy) for ncc, dx, dy in scores if ncc >= best - 1e-12]
    _, dx, dy = min(tied)
    return dx, dy


def shift_image(values: np.ndarray, dx: int, dy: int, fill: float | None = None) -> np.ndarray:
    """Translate so that ``out[y+dy, x+dx] = values[y, x]``; uncovered pixels take ``fill`` (default mean)."""
    h, w = values.shape
    out = np.full_like(values, values.mean() if fill is None else fill, dtype=float)
    out[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)] = \
        values[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    return out


def grid_of(window, resolution) -> Grid:
    x0, y0, x1, y1 = _check_window(window)
    return Grid(int(resolution[0]), int(resolution[1]), (x1 - x0, y1 - y0))
