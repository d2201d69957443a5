"""Synthetic ferroelectric samples: domain phantoms, per-site hysteresis loops and
stochastic tip-induced switching."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .fields import Grid, ScalarField2D, raw_bytes, to_pgm_bytes

LOOP_PLANES = ("amplitude", "v_plus", "v_minus", "width", "offset")


@dataclass(frozen=True)
class SiteLoopParams:
    """Two-branch shifted-tanh hysteresis loop of a single site.

    The ascending branch switches at ``v_plus`` and the descending branch at
    ``v_minus``; ``width`` sets how sharp each branch is.
    """

    amplitude: float = 1.0
    v_plus: float = 1.0
    v_minus: float = -1.0
    width: float = 0.5
    offset: float = 0.0

    def __post_init__(self):
        if not self.v_minus <= self.v_plus:
            raise ValueError(f"v_minus ({self.v_minus}) must not exceed v_plus ({self.v_plus})")
        if not self.width > 0:
            raise ValueError(f"loop width must be positive, got {self.width}")
        if not self.amplitude >= 0:
            raise ValueError(f"amplitude must be non-negative, got {self.amplitude}")


@dataclass
class Sample:
    polarization: ScalarField2D
    loop_params: dict[str, np.ndarray]
    coercive_bias: float = 2.0
    flip_sharpness: float = 4.0
    topography: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pol = self.polarization.values
        if not np.all(np.abs(pol) == 1.0):
            raise ValueError("polarization values must be exactly +1 or -1")
        missing = set(LOOP_PLANES) - set(self.loop_params)
        if missing:
            raise ValueError(f"loop_params missing planes: {sorted(missing)}")
        for name in LOOP_PLANES:
            plane = np.asarray(self.loop_params[name], dtype=float)
            if plane.shape != pol.shape:
                raise ValueError(f"loop plane {name!r} has shape {plane.shape}, expected {pol.shape}")
            self.loop_params[name] = plane
        if self.topography is None:
            self.topography = np.zeros(pol.shape)

    @property
    def grid(self) -> Grid:
        return self.polarization.grid

    def params_at(self, pixel) -> SiteLoopParams:
        r, c = pixel
        return SiteLoopParams(**{k: float(self.loop_params[k][r, c]) for k in LOOP_PLANES})

    def params_at_position(self, pos) -> SiteLoopParams:
        return self.params_at(self.grid.to_pixel(pos))

    def channel(self, name: str) -> ScalarField2D:
        """Ground-truth field observed on a measurement channel."""
        if name == "polarization":
            return self.polarization
        if name == "piezoresponse":
            values = self.loop_params["amplitude"] * self.polarization.values
        elif name == "topography":
            values = self.topography
        else:
            raise ValueError(f"sample has no built-in channel {name!r}")
        return ScalarField2D.on(self.grid, values)

    def copy(self) -> "Sample":
        return Sample(
            self.polarization.copy(),
            {k: v.copy() for k, v in self.loop_params.items()},
            self.coercive_bias,
            self.flip_sharpness,
            self.topography.copy(),
        )

    def equals(self, other: "Sample") -> bool:
        return (
            self.polarization.extent == other.polarization.extent
            and np.array_equal(self.polarization.values, other.polarization.values)
            and all(np.array_equal(self.loop_params[k], other.loop_params[k]) for k in LOOP_PLANES)
            and np.array_equal(self.topography, other.topography)
            and self.coercive_bias == other.coercive_bias
            and self.flip_sharpness == other.flip_sharpness
        )


def _smooth_noise(rng, shape, sigma):
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return noise / (noise.std() or 1.0)


def gen_domain_phantom(
    width: int,
    height: int,
    extent=(100.0, 100.0),
    style: str = "stripes",
    seed: int = 0,
    *,
    period: int = 8,
    bubble_scale: float = 4.0,
    coercive_bias: float = 2.0,
    flip_sharpness: float = 4.0,
    wall_dip: float = 0.5,
) -> Sample:
    """Generate a synthetic domain pattern with per-pixel hysteresis loop parameters.

    ``period`` is the stripe band width in pixels (the sign pattern repeats every
    ``2*period`` columns).  ``bubble_scale`` is the low-pass filter width in pixels
    used for the bubble texture.
    """
    if width < 8 or height < 8:
        raise ValueError(f"phantom needs at least 8x8 pixels, got {width}x{height}")
    if period < 1:
        raise ValueError("stripe period must be at least one pixel")
    if isinstance(extent, (int, float)):
        extent = (float(extent), float(extent))
    grid = Grid(width, height, extent)
    rng = np.random.default_rng(seed)
    shape = grid.shape
    cols = np.arange(width) + 0.5

    stripes = np.where(np.sin(np.pi * cols / period) >= 0, 1.0, -1.0)
    stripes = np.broadcast_to(stripes, shape)
    if style == "stripes":
        pol = stripes.copy()
    elif style == "bubbles":
        texture = _smooth_noise(rng, shape, bubble_scale)
        pol = np.where(texture >= 0, 1.0, -1.0)
    elif style == "mixed":
        # stripe colonies whose phase flips across coarse bubble-like regions
        texture = _smooth_noise(rng, shape, 3 * bubble_scale)
        pol = stripes * np.where(texture >= 0, 1.0, -1.0)
    else:
        raise ValueError(f"unknown phantom style {style!r}")

    walls = np.zeros(shape, dtype=bool)
    walls[:, 1:] |= pol[:, 1:] != pol[:, :-1]
    walls[:, :-1] |= pol[:, 1:] != pol[:, :-1]
    walls[1:, :] |= pol[1:, :] != pol[:-1, :]
    walls[:-1, :] |= pol[1:, :] != pol[:-1, :]

    smooth = lambda: _smooth_noise(rng, shape, max(width, height) / 6)  # noqa: E731
    amplitude = (1.0 + 0.1 * smooth()) * np.where(walls, 1.0 - wall_dip, 1.0)
    half_gap = np.clip(1.0 + 0.2 * smooth(), 0.2, None)
    centre = 0.2 * smooth()
    loop = {
        "amplitude": np.clip(amplitude, 0.0, None),
        "v_plus": centre + half_gap,
        "v_minus": centre - half_gap,
        "width": 0.4 * np.exp(0.1 * smooth()),
        "offset": 0.05 * smooth(),
    }
    topography = ndimage.gaussian_filter(rng.standard_normal(shape), 2.0, mode="wrap")
    return Sample(
        ScalarField2D.on(grid, pol),
        loop,
        coercive_bias=coercive_bias,
        flip_sharpness=flip_sharpness,
        topography=topography,
    )


def loop_response(params: SiteLoopParams, bias, branch: str = "ascending"):
    """Response on one branch of the loop at ``bias`` (scalar or array)."""
    if branch == "ascending":
        vc = params.v_plus
    elif branch == "descending":
        vc = params.v_minus
    else:
        raise ValueError(f"branch must be 'ascending' or 'descending', got {branch!r}")
    return params.offset + params.amplitude * np.tanh((np.asarray(bias, dtype=float) - vc) / params.width)


def loop_area(params: SiteLoopParams, v_max: float, n_steps: int = 201) -> float:
    """Area enclosed by the loop over a symmetric ramp, by the trapezoid rule."""
    if not v_max > 0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    if n_steps < 4:
        raise ValueError(f"n_steps must be at least 4, got {n_steps}")
    ramp = np.linspace(-v_max, v_max, n_steps)
    gap = loop_response(params, ramp, "descending") - loop_response(params, ramp, "ascending")
    return float(np.trapezoid(gap, ramp))


def loop_area_map(sample: Sample, v_max: float, n_steps: int = 201) -> ScalarField2D:
    """:func:`loop_area` evaluated at every pixel of ``sample`` at once."""
    if not v_max > 0 or n_steps < 4:
        raise ValueError("need v_max > 0 and n_steps >= 4")
    lp = sample.loop_params
    ramp = np.linspace(-v_max, v_max, n_steps)[:, None, None]
    amp, width = lp["amplitude"][None], lp["width"][None]
    gap = amp * (np.tanh((ramp - lp["v_minus"][None]) / width) - np.tanh((ramp - lp["v_plus"][None]) / width))
    return ScalarField2D.on(sample.grid, np.trapezoid(gap, ramp[:, 0, 0], axis=0))


def curve_area(bias, ascending, descending) -> float:
    """Trapezoid area between measured branches sampled on a common bias ramp."""
    return float(np.trapezoid(np.asarray(descending) - np.asarray(ascending), np.asarray(bias)))


def flip_probability(sample: Sample, bias: float, dose: float) -> float:
    return float(expit(sample.flip_sharpness * (abs(bias) * dose - sample.coercive_bias)))


def apply_pulse(sample: Sample, pos, bias: float, dose: float, radius: float = 0.0, rng_seed: int = 0):
    """Apply a tip pulse at pixel ``pos`` = (row, col), mutating ``sample`` in place.

    Each pixel within ``radius`` (pixels, Euclidean) independently switches to
    ``sign(bias)`` with the logistic probability of :func:`flip_probability`.
    Returns the list of (row, col) pixels that changed sign.
    """
    h, w = sample.polarization.values.shape
    r0, c0 = pos
    if not (0 <= r0 < h and 0 <= c0 < w):
        raise ValueError(f"pulse position {pos} outside {h}x{w} grid")
    if dose < 0:
        raise ValueError(f"dose must be non-negative, got {dose}")
    target = float(np.sign(bias))
    if dose == 0 or target == 0:
        return []

    rows, cols = np.mgrid[0:h, 0:w]
    inside = (rows - r0) ** 2 + (cols - c0) ** 2 <= radius**2
    idx = np.flatnonzero(inside)  # row-major, fixed draw order
    rng = np.random.default_rng(rng_seed)
    draws = rng.random(idx.size)
    p = flip_probability(sample, bias, dose)
    pol = sample.polarization.values.reshape(-1)
    flipped = []
    for k, u in zip(idx, draws):
        if u < p and pol[k] != target:
            pol[k] = target
            flipped.append((int(k // w), int(k % w)))
    return flipped


# --- serialization --------------------------------------------------------

_PLANES = ("polarization",) + LOOP_PLANES + ("topography",)


def _planes(sample: Sample):
    yield sample.polarization.values
    for k in LOOP_PLANES:
        yield sample.loop_params[k]
    yield sample.topography


def save_sample(sample: Sample, stem) -> list[Path]:
    """Write ``stem.json`` header, ``stem.raw`` float32 planes and ``stem.pgm`` quicklook."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "width": sample.grid.width,
        "height": sample.grid.height,
        "extent": list(sample.grid.extent),
        "coercive_bias": sample.coercive_bias,
        "flip_sharpness": sample.flip_sharpness,
        "dtype": "<f4",
        "planes": list(_PLANES),
    }
    paths = [stem.with_suffix(".json"), stem.with_suffix(".raw"), stem.with_suffix(".pgm")]
    paths[0].write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    paths[1].write_bytes(b"".join(raw_bytes(p) for p in _planes(sample)))
    paths[2].write_bytes(to_pgm_bytes(sample.polarization.values))
    return paths


def load_sample(stem) -> Sample:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    w, h = header["width"], header["height"]
    data = np.frombuffer(stem.with_suffix(".raw").read_bytes(), dtype="<f4").astype(float)
    planes = dict(zip(header["planes"], data.reshape(len(header["planes"]), h, w)))
    grid = Grid(w, h, tuple(header["extent"]))
    return Sample(
        ScalarField2D.on(grid, planes["polarization"]),
        {k: planes[k].copy() for k in LOOP_PLANES},
        coercive_bias=header["coercive_bias"],
        flip_sharpness=header["flip_sharpness"],
        topography=planes.get("topography"),
    )
