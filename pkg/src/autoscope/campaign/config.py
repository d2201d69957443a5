"""Campaign specifications, loaded from TOML.

Every table maps onto a dataclass below; keys that do not name a field are
rejected with their dotted path, so typos fail before anything runs.  A
minimal file::

    kind = "bo_explore"
    seed = 3

    [sample]
    width = 64
    height = 64
    style = "stripes"

    [engine]
    max_measurements = 410

    [engine.acquisition]
    kind = "max_variance"
"""

from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

KINDS = ("bo_explore", "bo_spectro", "bench_recon", "rl_tip", "rl_write", "ferrobot")
GP_TRAINING_CAP = 512


class ConfigError(ValueError):
    """The campaign specification is malformed or inconsistent."""


@dataclass
class SampleConfig:
    width: int = 64
    height: int = 64
    extent: tuple[float, float] = (100.0, 100.0)
    style: str = "stripes"
    period: int = 8
    bubble_scale: float = 4.0
    seed: int = 0
    coercive_bias: float = 2.0
    flip_sharpness: float = 4.0


@dataclass
class DriftConfig:
    velocity: tuple[float, float] = (0.0, 0.0)
    random_walk_sigma: float = 0.0
    seed: int = 0


@dataclass
class LatencyConfig:
    dwell_default: float = 1e-3
    slew_rate: float = 1e4
    flyback: float = 0.0
    decision_charge: float = 0.1


@dataclass
class ScopeConfig:
    noise_sigma: float = 0.0
    channel: str = "polarization"
    drift: DriftConfig = field(default_factory=DriftConfig)
    latency: LatencyConfig = field(default_factory=LatencyConfig)


@dataclass
class AcquisitionConfig:
    kind: str = "max_variance"
    beta: float = 2.0
    xi: float = 0.0


@dataclass
class PathfinderConfig:
    mode: str = "nearest"
    min_sep: float = 2.0
    preferred_dir: tuple[float, float] = (1.0, 0.0)
    dir_penalty: float = 0.0


@dataclass
class SpectroConfig:
    v_max: float = 4.0
    n_steps: int = 32
    noise_sigma: float = 0.0


@dataclass
class BenchConfig:
    arms: tuple[str, ...] = ("grid", "random", "bo")
    budgets: tuple[float, ...] = (0.02, 0.05, 0.10)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass
class RLConfig:
    algorithm: str = "double_q"
    gamma: float = 0.95
    lr: float = 0.1
    n_episodes: int = 3000
    n_batches: int = 200
    batch_size: int = 32
    baseline: str = "value"
    eval_episodes: int = 1000


@dataclass
class WriteConfig:
    goal: list = field(default_factory=lambda: [[1, 0, 1], [0, 1, 0], [1, 0, 1]])
    initial: list | None = None
    bias: float = 5.0
    dose: float = 1.0
    max_steps: int = 100


@dataclass
class FerrobotConfig:
    high: float = 0.5
    low: float = -0.5
    waveform: list = field(default_factory=lambda: [[6.0, 1.0]])
    per_line_limit: int = 4
    radius: float = 1.5
    pulse_time: float = 1e-3


@dataclass
class EngineConfig:
    kernel: str = "matern52"
    n_seed_points: int = 40
    batch: int = 8
    max_measurements: int = 410
    refit_until: int = 64
    refit_period: int = 5
    mask_taper: int = 2
    recon_method: str = "gp"
    gp_cap: int = GP_TRAINING_CAP
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    pathfinder: PathfinderConfig = field(default_factory=PathfinderConfig)
    spectro: SpectroConfig = field(default_factory=SpectroConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    write: WriteConfig = field(default_factory=WriteConfig)
    ferrobot: FerrobotConfig = field(default_factory=FerrobotConfig)


@dataclass
class CampaignSpec:
    kind: str = "bo_explore"
    seed: int = 0
    output_dir: str = "runs/latest"
    sample: SampleConfig = field(default_factory=SampleConfig)
    scope: ScopeConfig = field(default_factory=ScopeConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)

    def validate(self) -> "CampaignSpec":
        e = self.engine
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if min(e.n_seed_points, e.batch, e.max_measurements) < 1:
            raise ConfigError("budgets (n_seed_points, batch, max_measurements) must be positive")
        if e.n_seed_points > e.max_measurements:
            raise ConfigError("n_seed_points exceeds max_measurements")
        if e.gp_cap > GP_TRAINING_CAP:
            raise ConfigError(f"gp_cap may not exceed {GP_TRAINING_CAP}")
        if e.max_measurements > e.gp_cap:
            raise ConfigError(f"max_measurements {e.max_measurements} exceeds GP training cap {e.gp_cap}")
        n_pix = self.sample.width * self.sample.height
        if self.kind == "bench_recon" and max(e.bench.budgets) * n_pix > e.gp_cap:
            raise ConfigError("a bench budget exceeds the GP training cap")
        if any(not 0 < b <= 1 for b in e.bench.budgets):
            raise ConfigError("bench budgets are fractions in (0, 1]")
        if e.recon_method not in ("gp", "idw", "nearest"):
            raise ConfigError(f"unknown recon_method {e.recon_method!r}")
        if e.rl.algorithm not in ("double_q", "reinforce"):
            raise ConfigError(f"unknown rl.algorithm {e.rl.algorithm!r}")
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'spec'} must be a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        key = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        else:
            kwargs[name] = _coerce(hint, value, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'spec'}: {exc}") from exc


def _coerce(hint, value, key):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{key} may not be null")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be an array")
        inner = args[0]
        return tuple(_coerce(inner, v, key) for v in value)
    if origin in (list,) or hint is list or (type(None) in args and list in args):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be an array")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


def spec_from_dict(data: dict) -> CampaignSpec:
    return _build(CampaignSpec, data, "").validate()


def load_spec(path) -> CampaignSpec:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec_from_dict(data)
