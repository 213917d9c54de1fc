"""Experiment configuration: one JSON file, versioned by ``schema_version``.

Defaults reproduce the two-inclusion localization experiment on a
165.1 x 215.9 mm phantom. Every section maps onto a dataclass; unknown keys
and wrongly typed values raise :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .env import EnvConfig
from .errors import ConfigError
from .interrogation import DetectConfig, FineConfig, RoiSpec
from .mechprops import RiskWeights
from .phantom import InclusionSpec, PhantomSpec, RoiTransform, SensorConfig
from .sac import SACConfig

SCHEMA_VERSION = 1


@dataclass
class InclusionCfg:
    center: list[float]
    diameter: float
    elasticity: float
    label: str = ""

    def spec(self) -> InclusionSpec:
        return InclusionSpec(tuple(float(v) for v in self.center), float(self.diameter), float(self.elasticity))


def _default_inclusions() -> list[InclusionCfg]:
    return [InclusionCfg([44.5, 51.5, -6.0], 18.9, 628.0, "hard"),
            InclusionCfg([40.0, 118.5, -6.0], 15.3, 94.4, "soft")]


@dataclass
class PhantomCfg:
    extent: list[float] = field(default_factory=lambda: [165.1, 215.9])
    surface_z: float = 0.0
    inclusion_layer_depth: float = 12.0
    background_stiffness: float = 25.0
    inclusions: list[InclusionCfg] = field(default_factory=_default_inclusions)

    def spec(self, inclusions: Optional[list] = None, layer: Optional[float] = None) -> PhantomSpec:
        incs = [i.spec() for i in self.inclusions] if inclusions is None else inclusions
        return PhantomSpec(tuple(self.extent), self.surface_z,
                           self.inclusion_layer_depth if layer is None else layer,
                           tuple(incs), self.background_stiffness)


@dataclass
class SensorCfg:
    force_noise_sd: float = 0.05
    intensity_noise_sd: float = 2.0
    pos_noise_bound: float = 5.0
    pos_noise_jitter: float = 1.0
    max_force: float = 50.0


@dataclass
class RoiCfg:
    start: list[float] = field(default_factory=lambda: [38.25, 38.25, 25.0])
    origin_base: list[float] = field(default_factory=lambda: [0.6762, -0.1431, 0.1729])


@dataclass
class GridCfg:
    dx: float = 15.0
    dy: float = 15.0


@dataclass
class CoarseCfg:
    press_force: float = 5.0
    min_diameter_full_px: float = 100.0
    threshold: Optional[float] = None


@dataclass
class FineCfg:
    constant_force: float = 5.0
    offset_threshold_full_px: float = 70.0
    max_iters: int = 10
    merge_threshold: float = 6.0


@dataclass
class EnvCfg:
    z_start: float = 25.0
    step_size: float = 1.0
    max_force: float = 10.0
    max_steps: int = 100
    plateau_steps: int = 5
    z_bounds: list[float] = field(default_factory=lambda: [-15.0, 30.0])
    train_z_start_range: list[float] = field(default_factory=lambda: [-8.0, 25.0])
    xy_margin: float = 30.0
    # (diameter, elasticity) pairs placed under the probe during training
    training_inclusions: list[list[float]] = field(default_factory=lambda: [[15.3, 94.4], [18.9, 628.0]])


@dataclass
class AgentCfg:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 50_000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    alpha_lr: float = 1e-3
    init_alpha: float = 0.2
    target_entropy: float = 0.34657359027997264
    reward_scale: float = 1.0
    episodes: int = 1000
    warmup_steps: int = 500
    updates_per_step: int = 1


@dataclass
class CalibrationCfg:
    diameters: list[float] = field(default_factory=lambda: [13.0, 14.0, 17.0, 20.0, 21.0])
    elasticities: list[float] = field(default_factory=lambda: [94.4, 628.0])
    layer_depth: float = 6.0
    z: float = -6.0
    press_step: float = 0.25


@dataclass
class RiskCfg:
    W1: float = 0.5
    W2: float = -0.5
    D_max: Optional[float] = None
    DI_max: Optional[float] = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    profile: str = "reduced"
    output_dir: str = "runs"
    force_window: list[float] = field(default_factory=lambda: [1.0, 10.0])
    persist_coarse_frames: bool = True
    phantom: PhantomCfg = field(default_factory=PhantomCfg)
    sensor: SensorCfg = field(default_factory=SensorCfg)
    roi: RoiCfg = field(default_factory=RoiCfg)
    grid: GridCfg = field(default_factory=GridCfg)
    coarse: CoarseCfg = field(default_factory=CoarseCfg)
    fine: FineCfg = field(default_factory=FineCfg)
    env: EnvCfg = field(default_factory=EnvCfg)
    agent: AgentCfg = field(default_factory=AgentCfg)
    calibration: CalibrationCfg = field(default_factory=CalibrationCfg)
    risk: RiskCfg = field(default_factory=RiskCfg)

    # --- validation -------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        try:
            self._validate()
        except (ValueError, TypeError, IndexError) as e:
            raise ConfigError(str(e)) from e
        return self

    def _validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        if self.profile not in ("full", "reduced"):
            raise ConfigError(f"profile must be 'full' or 'reduced', got {self.profile!r}")
        lo, hi = self.force_window
        if not 0 <= lo < hi:
            raise ConfigError(f"force_window must satisfy 0 <= lo < hi, got {self.force_window}")
        positive = {
            "grid.dx": self.grid.dx, "grid.dy": self.grid.dy,
            "coarse.press_force": self.coarse.press_force,
            "coarse.min_diameter_full_px": self.coarse.min_diameter_full_px,
            "fine.constant_force": self.fine.constant_force,
            "fine.offset_threshold_full_px": self.fine.offset_threshold_full_px,
            "fine.merge_threshold": self.fine.merge_threshold,
            "fine.max_iters": self.fine.max_iters,
            "env.step_size": self.env.step_size, "env.max_force": self.env.max_force,
            "env.max_steps": self.env.max_steps, "env.plateau_steps": self.env.plateau_steps,
            "calibration.press_step": self.calibration.press_step,
        }
        for k, v in positive.items():
            if not v > 0:
                raise ConfigError(f"{k} must be positive, got {v}")
        if self.agent.episodes < 0:
            raise ConfigError("agent.episodes must be >= 0")
        if len(self.calibration.diameters) == 0:
            raise ConfigError("calibration.diameters must not be empty")
        # building the domain objects runs their own invariant checks
        self.phantom_spec()
        self.sensor_config()
        self.roi_spec()
        self.sac_config()
        self.env_config(training=True)
        self.risk_weights(d_max=1.0, di_max=1.0)

    # --- domain objects ---------------------------------------------------

    def phantom_spec(self) -> PhantomSpec:
        return self.phantom.spec()

    def sensor_config(self, positional_noise: bool = True, profile: Optional[str] = None) -> SensorConfig:
        s = self.sensor
        return SensorConfig.profile(profile or self.profile, force_noise_sd=s.force_noise_sd,
                                    intensity_noise_sd=s.intensity_noise_sd,
                                    pos_noise_bound=s.pos_noise_bound if positional_noise else 0.0,
                                    pos_noise_jitter=s.pos_noise_jitter, max_force=s.max_force,
                                    rng_seed=self.seed)

    def roi_spec(self) -> RoiSpec:
        return RoiSpec(tuple(self.phantom.extent), tuple(self.roi.start),
                       RoiTransform(tuple(self.roi.origin_base)))

    def detect_config(self) -> DetectConfig:
        return DetectConfig(self.coarse.min_diameter_full_px, self.coarse.threshold)

    def fine_config(self) -> FineConfig:
        f = self.fine
        return FineConfig(f.constant_force, f.offset_threshold_full_px, f.max_iters)

    def sac_config(self) -> SACConfig:
        a = self.agent
        return SACConfig(tuple(a.hidden), a.gamma, a.tau, a.batch_size, a.buffer_capacity, a.actor_lr,
                         a.critic_lr, a.alpha_lr, a.init_alpha, a.target_entropy, a.reward_scale,
                         a.episodes, a.warmup_steps, a.updates_per_step, self.seed)

    def env_config(self, training: bool = False) -> EnvConfig:
        e = self.env
        kw = dict(z_start=e.z_start, step_size=e.step_size, max_force=e.max_force,
                  window=tuple(self.force_window), max_steps=e.max_steps, plateau_steps=e.plateau_steps,
                  z_bounds=tuple(e.z_bounds))
        if training:
            z = self.calibration.z
            kw.update(z_start_range=tuple(e.train_z_start_range), randomize_xy=True, xy_margin=e.xy_margin,
                      training_inclusions=tuple(InclusionSpec((0.0, 0.0, z), d, el)
                                                for d, el in e.training_inclusions))
        return EnvConfig(**kw)

    def risk_weights(self, d_max: Optional[float] = None, di_max: Optional[float] = None) -> RiskWeights:
        r = self.risk
        dm = r.D_max if r.D_max is not None else d_max
        dim = r.DI_max if r.DI_max is not None else di_max
        if dm is None or dim is None:
            raise ConfigError("risk normalizers unresolved: set risk.D_max/DI_max or supply a calibration")
        return RiskWeights(r.W1, r.W2, dm, dim)

    # --- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "seed" not in d:
            raise ConfigError("seed is mandatory")
        return _build(cls, d, "").validate()

    @classmethod
    def load(cls, path: Path | str) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"{p}: cannot read config ({e.strerror})") from e
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}:{e.lineno}:{e.colno}: {e.msg}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a JSON object")
        try:
            return cls.from_dict(raw)
        except ConfigError as e:
            raise ConfigError(f"{p}: {e}") from e


def _build(tp, raw: Any, where: str):
    """Recursively turn a plain dict into the dataclass ``tp``."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(tp)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    hints = {f.name: f.type for f in dataclasses.fields(tp)}
    for name, value in raw.items():
        key = f"{where}.{name}" if where else name
        sub = _SECTIONS.get(hints[name])
        if sub is not None:
            kw[name] = _build(sub, value, key)
        elif hints[name] == "list[InclusionCfg]":
            if not isinstance(value, list):
                raise ConfigError(f"{key}: expected a list")
            kw[name] = [_build(InclusionCfg, v, f"{key}[{i}]") for i, v in enumerate(value)]
        else:
            kw[name] = _check_scalar(hints[name], value, key)
    return tp(**kw)


def _check_scalar(hint: str, value: Any, key: str):
    number = (int, float)
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, number) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "Optional[float]": lambda v: v is None or (isinstance(v, number) and not isinstance(v, bool)),
        "list[float]": lambda v: isinstance(v, list) and all(isinstance(x, number) and not isinstance(x, bool) for x in v),
        "list[int]": lambda v: isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
        "list[list[float]]": lambda v: isinstance(v, list) and all(
            isinstance(x, list) and len(x) == 2 and all(isinstance(y, number) for y in x) for x in v),
    }
    check = ok.get(hint)
    if check is None or not check(value):
        raise ConfigError(f"{key}: expected {hint}, got {type(value).__name__} {value!r}")
    if hint == "float":
        return float(value)
    return value


_SECTIONS = {
    "PhantomCfg": PhantomCfg, "SensorCfg": SensorCfg, "RoiCfg": RoiCfg, "GridCfg": GridCfg,
    "CoarseCfg": CoarseCfg, "FineCfg": FineCfg, "EnvCfg": EnvCfg, "AgentCfg": AgentCfg,
    "CalibrationCfg": CalibrationCfg, "RiskCfg": RiskCfg,
}
