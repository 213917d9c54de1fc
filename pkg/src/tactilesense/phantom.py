"""Forward model of an optical tactile probe pressing into a silicone phantom.

The simulator turns a probe pose into two readings: a normal force from a
linear spring contact model, and an 8-bit intensity image in which every
inclusion under the sensing window appears as a radially decaying bump.
All randomness comes from a single seeded ``numpy.random.Generator``.
"""
from __future__ import annotations

import csv
from functools import lru_cache
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import OutOfRoi

Vec3 = tuple[float, float, float]

FULL_MM_PER_PIXEL = 0.03


@dataclass(frozen=True)
class InclusionSpec:
    center_roi: Vec3
    diameter: float
    elasticity: float

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError(f"inclusion diameter must be positive, got {self.diameter}")
        if not self.elasticity > 0:
            raise ValueError(f"inclusion elasticity must be positive, got {self.elasticity}")
        if self.center_roi[2] > 0:
            raise ValueError("inclusions lie below the phantom surface (z <= 0)")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter


@dataclass(frozen=True)
class PhantomSpec:
    extent: tuple[float, float]
    surface_z: float = 0.0
    inclusion_layer_depth: float = 6.0
    inclusions: tuple[InclusionSpec, ...] = ()
    background_stiffness: float = 25.0

    def __post_init__(self):
        rx, ry = self.extent
        if not (rx > 0 and ry > 0):
            raise ValueError(f"phantom extent must be positive, got {self.extent}")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        for inc in self.inclusions:
            x, y, _ = inc.center_roi
            if not (0.0 <= x <= rx and 0.0 <= y <= ry):
                raise ValueError(f"inclusion center {inc.center_roi} outside phantom extent")
        for i, a in enumerate(self.inclusions):
            for b in self.inclusions[i + 1:]:
                d = math.dist(a.center_roi, b.center_roi)
                if d < a.radius + b.radius:
                    raise ValueError("inclusions overlap")

    def inclusion_depth(self, inc: InclusionSpec) -> float:
        """Material thickness attenuating an inclusion's signal (mm).

        Distance of the inclusion center below the surface plus the extra
        cover added by a thicker inclusion layer.
        """
        return (self.surface_z - inc.center_roi[2]) + self.inclusion_layer_depth

    def with_inclusions(self, inclusions: Iterable[InclusionSpec]) -> "PhantomSpec":
        return replace(self, inclusions=tuple(inclusions))


@dataclass(frozen=True)
class RoiTransform:
    """Axis-aligned map between the ROI frame (mm) and the robot base frame (m)."""

    origin_base: Vec3 = (0.6762, -0.1431, 0.1729)
    axes: Vec3 = (1.0, 1.0, 1.0)
    base_units_per_mm: float = 1e-3

    def roi_to_base(self, p: Sequence[float]) -> Vec3:
        s = self.base_units_per_mm
        return tuple(o + a * v * s for o, a, v in zip(self.origin_base, self.axes, p))

    def base_to_roi(self, q: Sequence[float]) -> Vec3:
        s = self.base_units_per_mm
        return tuple((v - o) / (a * s) for o, a, v in zip(self.origin_base, self.axes, q))


@dataclass(frozen=True)
class ContactModel:
    """Constants of the intensity and force forward model.

    Amplitude of an inclusion's bump::

        A = gain * F * (E / ref_elasticity) ** stiffness_exponent
                 * (D / ref_diameter) ** 2 * exp(-depth / attenuation_length)

    with Gaussian width ``width_factor * D`` tapered to zero at the inclusion
    rim. The spring constant grows with the footprint-weighted inclusion
    stiffness: ``k = spring_constant * (1 + sum(coupling * overlap * E / E_bg
    * exp(-depth / attenuation_length)))``.
    """

    gain: float = 18.9
    stiffness_exponent: float = 0.1
    ref_elasticity: float = 94.4
    ref_diameter: float = 15.3
    width_factor: float = 0.25
    attenuation_length: float = 14.0
    spring_constant: float = 1.5
    coupling: float = 0.155


@dataclass(frozen=True)
class SensorConfig:
    width: int = 1280
    height: int = 1024
    mm_per_pixel: float = FULL_MM_PER_PIXEL
    force_noise_sd: float = 0.05
    intensity_noise_sd: float = 2.0
    pos_noise_bound: float = 0.0
    pos_noise_jitter: float = 1.0
    max_force: float = 50.0
    rng_seed: int = 0
    model: ContactModel = field(default_factory=ContactModel)

    def __post_init__(self):
        if not self.mm_per_pixel > 0:
            raise ValueError("mm_per_pixel must be positive")
        if not 0 < self.max_force <= 50.0:
            raise ValueError("max_force must lie in (0, 50] N (force sensor range)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.pos_noise_bound < 0 or self.pos_noise_jitter < 0:
            raise ValueError("positional noise magnitudes must be non-negative")

    @classmethod
    def full(cls, **kw) -> "SensorConfig":
        return cls(width=1280, height=1024, mm_per_pixel=0.03, **kw)

    @classmethod
    def reduced(cls, **kw) -> "SensorConfig":
        return cls(width=320, height=256, mm_per_pixel=0.12, **kw)

    @classmethod
    def profile(cls, name: str, **kw) -> "SensorConfig":
        if name == "full":
            return cls.full(**kw)
        if name == "reduced":
            return cls.reduced(**kw)
        raise ValueError(f"unknown sensor profile {name!r}")

    @property
    def window_mm(self) -> tuple[float, float]:
        return self.width * self.mm_per_pixel, self.height * self.mm_per_pixel

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def px_from_full(self, px: float) -> float:
        """Convert a pixel length quoted at full resolution to this profile."""
        return px * FULL_MM_PER_PIXEL / self.mm_per_pixel

    @property
    def jitter_radius(self) -> float:
        return min(self.pos_noise_jitter, self.pos_noise_bound)

    @property
    def offset_radius(self) -> float:
        return self.pos_noise_bound - self.jitter_radius


@dataclass(frozen=True)
class ProbeState:
    commanded_pose: Vec3
    actual_pose: Vec3
    contact_depth: float = 0.0
    registration_offset: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class TactileFrame:
    pixels: np.ndarray
    applied_force: float
    probe_pose: Vec3
    frame_index: int = 0

    @property
    def pixel_sum(self) -> int:
        return int(self.pixels.sum(dtype=np.int64))


def contact_depth(z: float, phantom: PhantomSpec) -> float:
    return max(0.0, phantom.surface_z - z)


def make_probe(xyz: Sequence[float], phantom: PhantomSpec, cfg: SensorConfig,
               rng: Optional[np.random.Generator] = None) -> ProbeState:
    """Place the probe at ``xyz``; draws the persistent registration offset."""
    offset = (0.0, 0.0)
    if rng is not None and cfg.offset_radius > 0:
        offset = _uniform_disk(rng, cfg.offset_radius)
    jitter = (0.0, 0.0)
    if rng is not None and cfg.jitter_radius > 0:
        jitter = _uniform_disk(rng, cfg.jitter_radius)
    x, y, z = (float(v) for v in xyz)
    actual = (x + offset[0] + jitter[0], y + offset[1] + jitter[1], z)
    return ProbeState((x, y, z), actual, contact_depth(z, phantom), offset)


def _uniform_disk(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    r = radius * math.sqrt(rng.random())
    t = 2.0 * math.pi * rng.random()
    return r * math.cos(t), r * math.sin(t)


def step_probe(state: ProbeState, command: Sequence[float], cfg: SensorConfig,
               rng: Optional[np.random.Generator], phantom: PhantomSpec) -> ProbeState:
    """Apply a relative ``(dx, dy, dz)`` command.

    Lateral commands draw fresh jitter on top of the persistent registration
    offset; pure Z commands keep the current lateral error. Z is exact.
    """
    dx, dy, dz = (float(v) for v in command)
    cx, cy, cz = state.commanded_pose
    tx, ty, tz = cx + dx, cy + dy, cz + dz
    rx, ry = phantom.extent
    if not (0.0 <= tx <= rx and 0.0 <= ty <= ry):
        raise OutOfRoi(f"target ({tx:.2f}, {ty:.2f}) outside ROI [0, {rx}] x [0, {ry}]")
    ax, ay, _ = state.actual_pose
    if dx != 0.0 or dy != 0.0:
        jx, jy = (0.0, 0.0)
        if rng is not None and cfg.jitter_radius > 0:
            jx, jy = _uniform_disk(rng, cfg.jitter_radius)
        ox, oy = state.registration_offset
        ax, ay = tx + ox + jx, ty + oy + jy
    return ProbeState((tx, ty, tz), (ax, ay, tz), contact_depth(tz, phantom),
                      state.registration_offset)


def window_overlap(inc: InclusionSpec, center_xy: Sequence[float], window: Sequence[float],
                   n: int = 256) -> float:
    """Fraction of the sensing window area covered by the inclusion's XY disk."""
    w, h = window
    x0, x1 = center_xy[0] - w / 2, center_xy[0] + w / 2
    y0, y1 = center_xy[1] - h / 2, center_xy[1] + h / 2
    cx, cy, _ = inc.center_roi
    r = inc.radius
    lo, hi = max(x0, cx - r), min(x1, cx + r)
    if hi <= lo or cy + r <= y0 or cy - r >= y1:
        return 0.0
    dx = (hi - lo) / n
    xs = lo + (np.arange(n) + 0.5) * dx
    half = np.sqrt(np.maximum(r * r - (xs - cx) ** 2, 0.0))
    seg = np.clip(np.minimum(y1, cy + half) - np.maximum(y0, cy - half), 0.0, None)
    return float(seg.sum() * dx / (w * h))


def spring_constant(probe: ProbeState, phantom: PhantomSpec, cfg: SensorConfig) -> float:
    m = cfg.model
    window = cfg.window_mm
    boost = 0.0
    for inc in phantom.inclusions:
        w = window_overlap(inc, probe.actual_pose[:2], window)
        if w > 0:
            boost += (m.coupling * w * inc.elasticity / phantom.background_stiffness
                      * math.exp(-phantom.inclusion_depth(inc) / m.attenuation_length))
    return m.spring_constant * (1.0 + boost)


def true_force(probe: ProbeState, phantom: PhantomSpec, cfg: SensorConfig) -> float:
    if probe.contact_depth <= 0:
        return 0.0
    return spring_constant(probe, phantom, cfg) * probe.contact_depth


def applied_force(probe: ProbeState, phantom: PhantomSpec, cfg: SensorConfig,
                  rng: Optional[np.random.Generator] = None) -> float:
    """Force-sensor reading (N): spring force plus Gaussian noise, clamped to range."""
    f = true_force(probe, phantom, cfg)
    if rng is not None and cfg.force_noise_sd > 0:
        f += rng.normal(0.0, cfg.force_noise_sd)
    return float(min(max(f, 0.0), cfg.max_force))


def bump_amplitude(inc: InclusionSpec, force: float, phantom: PhantomSpec,
                   cfg: SensorConfig) -> float:
    m = cfg.model
    return (m.gain * force
            * (inc.elasticity / m.ref_elasticity) ** m.stiffness_exponent
            * (inc.diameter / m.ref_diameter) ** 2
            * math.exp(-phantom.inclusion_depth(inc) / m.attenuation_length))


def intensity_field(pose_xy: Sequence[float], force: float, phantom: PhantomSpec,
                    cfg: SensorConfig) -> np.ndarray:
    """Noise-free, unquantized intensity image (height x width)."""
    img = np.zeros((cfg.height, cfg.width))
    if force <= 0:
        return img
    s = cfg.mm_per_pixel
    half_w = 0.5 * (cfg.width - 1) * s
    half_h = 0.5 * (cfg.height - 1) * s
    xs = pose_xy[0] + np.arange(cfg.width) * s - half_w
    ys = pose_xy[1] + np.arange(cfg.height) * s - half_h
    for inc in phantom.inclusions:
        cx, cy, _ = inc.center_roi
        r = inc.radius
        # support of the bump is the inclusion disk
        u = np.nonzero(np.abs(xs - cx) < r)[0]
        v = np.nonzero(np.abs(ys - cy) < r)[0]
        if u.size == 0 or v.size == 0:
            continue
        dx2 = (xs[u] - cx) ** 2
        dy2 = (ys[v] - cy) ** 2
        r2 = dy2[:, None] + dx2[None, :]
        sigma = cfg.model.width_factor * inc.diameter
        bump = np.exp(-r2 / (2 * sigma * sigma)) * np.clip(1.0 - r2 / (r * r), 0.0, None)
        img[v[0]:v[-1] + 1, u[0]:u[-1] + 1] += bump_amplitude(inc, force, phantom, cfg) * bump
    return img


def render_frame(probe: ProbeState, phantom: PhantomSpec, cfg: SensorConfig,
                 rng: Optional[np.random.Generator] = None, frame_index: int = 0) -> TactileFrame:
    """Capture one tactile frame at the probe's actual pose."""
    force = applied_force(probe, phantom, cfg, rng)
    img = intensity_field(probe.actual_pose[:2], true_force(probe, phantom, cfg), phantom, cfg)
    img = np.clip(img, 0.0, 255.0)
    if rng is not None and cfg.intensity_noise_sd > 0:
        img += rng.normal(0.0, cfg.intensity_noise_sd, size=img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return TactileFrame(pixels, force, probe.commanded_pose, frame_index)


def intensity_centroid(pixels: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted (u, v) centroid in pixel coordinates."""
    w = pixels.astype(np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("empty image has no intensity centroid")
    v, u = np.indices(w.shape)
    return float((u * w).sum() / total), float((v * w).sum() / total)


class TactileSimulator:
    """Stateful probe + phantom, owning the only random generator.

    Confined to one thread at a time. ``capture`` numbers frames in order.
    """

    def __init__(self, phantom: PhantomSpec, cfg: SensorConfig, seed: Optional[int] = None,
                 start: Vec3 = (0.0, 0.0, 25.0)):
        self.phantom = phantom
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
        self.frame_counter = 0
        self.state = make_probe(start, phantom, cfg, self.rng)

    @property
    def pose(self) -> Vec3:
        return self.state.commanded_pose

    def step(self, command: Sequence[float]) -> ProbeState:
        self.state = step_probe(self.state, command, self.cfg, self.rng, self.phantom)
        return self.state

    def move_to(self, x: float, y: float, z: Optional[float] = None) -> ProbeState:
        cx, cy, cz = self.state.commanded_pose
        if z is not None and z != cz:
            self.step((0.0, 0.0, z - cz))
        return self.step((x - cx, y - cy, 0.0))

    def retract(self, z: float) -> ProbeState:
        cz = self.state.commanded_pose[2]
        if z > cz:
            self.step((0.0, 0.0, z - cz))
        return self.state

    def read_force(self) -> float:
        return applied_force(self.state, self.phantom, self.cfg, self.rng)

    def capture(self) -> TactileFrame:
        frame = render_frame(self.state, self.phantom, self.cfg, self.rng, self.frame_counter)
        self.frame_counter += 1
        return frame

    def press_to_force(self, target: float, step: float = 0.25, max_depth: float = 30.0) -> float:
        """Lower the probe in ``step`` increments until the force reading reaches ``target``."""
        z = self.state.commanded_pose[2]
        # free travel down to the surface needs no force readings
        surface = self.phantom.surface_z
        if z > surface:
            n = math.floor((z - surface) / step)
            if n > 0:
                self.step((0.0, 0.0, -n * step))
        force = self.read_force()
        while force < target:
            if self.state.contact_depth + step > max_depth:
                break
            self.step((0.0, 0.0, -step))
            force = self.read_force()
        return force


@lru_cache(maxsize=32)
def background_threshold(cfg: SensorConfig, seed: int = 0, k: float = 3.0) -> float:
    """Binarization threshold: mean + k * sd of an out-of-contact frame."""
    empty = PhantomSpec(extent=(1.0, 1.0))
    probe = make_probe((0.5, 0.5, 10.0), empty, cfg)
    frame = render_frame(probe, empty, cfg, np.random.default_rng(seed))
    px = frame.pixels.astype(np.float64)
    return float(px.mean() + k * px.std())


# --- persistence -----------------------------------------------------------

def write_pgm(path: Path | str, pixels: np.ndarray) -> None:
    """8-bit binary PGM (P5)."""
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(px.tobytes())


def read_pgm(path: Path | str) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()


SEQUENCE_COLUMNS = ("frame_index", "force_N", "x_mm", "y_mm", "z_mm", "pixel_sum")


def write_sequence(directory: Path | str, frames: Sequence[TactileFrame], stem: str = "frame") -> Path:
    """Write frames as PGM files plus a ``frames.csv`` sidecar; returns the CSV path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    csv_path = d / "frames.csv"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SEQUENCE_COLUMNS)
        for fr in frames:
            write_pgm(d / f"{stem}_{fr.frame_index:05d}.pgm", fr.pixels)
            x, y, z = fr.probe_pose
            wr.writerow([fr.frame_index, f"{fr.applied_force:.6f}", f"{x:.6f}", f"{y:.6f}",
                         f"{z:.6f}", fr.pixel_sum])
    return csv_path


def read_sequence(directory: Path | str, stem: str = "frame") -> list[TactileFrame]:
    d = Path(directory)
    frames = []
    with open(d / "frames.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["frame_index"])
            px = read_pgm(d / f"{stem}_{idx:05d}.pgm")
            pose = (float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"]))
            frames.append(TactileFrame(px, float(row["force_N"]), pose, idx))
    return frames
