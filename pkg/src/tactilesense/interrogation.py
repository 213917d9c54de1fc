"""Dynamic interrogation: coarse raster scan plus fine centroid recentering.

Coarse interrogation presses at every grid waypoint and flags those whose
frame contains a large enough bright region. Fine interrogation then moves
the probe toward the region centroid until the pixel offset from the image
center is small, and nearby refined locations are merged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateGrid, LostTarget, NonConvergent
from .phantom import RoiTransform, SensorConfig, TactileFrame, TactileSimulator, Vec3, background_threshold

COARSE, REFINED = "COARSE", "REFINED"


@dataclass(frozen=True)
class RoiSpec:
    extent: tuple[float, float]
    start: Vec3
    transform: RoiTransform = field(default_factory=RoiTransform)

    def __post_init__(self):
        rx, ry = self.extent
        x, y, _ = self.start
        if not (rx > 0 and ry > 0):
            raise ValueError("ROI extent must be positive")
        if not (0 < x < rx and 0 < y < ry):
            raise ValueError(f"start {self.start[:2]} must lie strictly inside the ROI")

    def contains(self, xy: Sequence[float]) -> bool:
        return 0.0 <= xy[0] <= self.extent[0] and 0.0 <= xy[1] <= self.extent[1]


@dataclass(frozen=True)
class GridPlan:
    dx: float
    dy: float
    waypoints: tuple[tuple[float, float], ...]

    def __len__(self) -> int:
        return len(self.waypoints)


def plan_grid(roi: RoiSpec, dx: float, dy: float) -> GridPlan:
    """Raster waypoints: rows at ``x_s + k*dx``, each scanned in +Y from ``y_s``.

    Waypoints stay strictly below the far ROI edges so the probe never sits on
    the boundary.
    """
    rx, ry = roi.extent
    if not (0 < dx < rx and 0 < dy < ry):
        raise DegenerateGrid(f"grid spacing ({dx}, {dy}) must lie in (0, extent)")
    x0, y0, _ = roi.start
    pts = []
    i = 0
    while (x := x0 + i * dx) < rx:
        j = 0
        while (y := y0 + j * dy) < ry:
            pts.append((x, y))
            j += 1
        i += 1
    if not pts:
        raise DegenerateGrid("no waypoint fits inside the ROI")
    return GridPlan(dx, dy, tuple(pts))


@dataclass(frozen=True)
class DetectedRegion:
    centroid_px: tuple[float, float]
    equivalent_diameter_px: float
    pixel_count: int
    centroid_roi: tuple[float, float]


@dataclass(frozen=True)
class DetectConfig:
    """Region-detection settings.

    ``min_diameter_full_px`` is quoted at full sensor resolution and scaled to
    the active profile. ``threshold`` of ``None`` uses the background frame
    statistic (mean + 3 sd).
    """

    min_diameter_full_px: float = 100.0
    threshold: Optional[float] = None

    def resolve(self, cfg: SensorConfig) -> tuple[float, float]:
        thr = background_threshold(cfg) if self.threshold is None else self.threshold
        return cfg.px_from_full(self.min_diameter_full_px), thr


_EIGHT = np.ones((3, 3), dtype=bool)


def detect_regions(frame: TactileFrame | np.ndarray, min_diameter_px: float, binarize_threshold: float,
                   mm_per_pixel: float = 0.03) -> list[DetectedRegion]:
    """Median filter, threshold, 8-connected labeling and a size cut.

    Regions are sorted by pixel count (descending), then centroid row, then
    column. ROI centroids assume the image center sits at the frame's pose.
    """
    if isinstance(frame, TactileFrame):
        pixels, pose = frame.pixels, frame.probe_pose
    else:
        pixels, pose = np.asarray(frame), (0.0, 0.0, 0.0)
    smooth = ndimage.median_filter(pixels, size=3, mode="nearest")
    mask = smooth > binarize_threshold
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    counts = ndimage.sum_labels(np.ones_like(labels), labels, idx).astype(np.int64)
    h, w = pixels.shape
    cu0, cv0 = (w - 1) / 2, (h - 1) / 2
    regions = []
    for k, count in zip(idx, counts):
        diam = 2.0 * math.sqrt(count / math.pi)
        if diam < min_diameter_px:
            continue
        v, u = ndimage.center_of_mass(labels == k)
        xy = (pose[0] + (u - cu0) * mm_per_pixel, pose[1] + (v - cv0) * mm_per_pixel)
        regions.append(DetectedRegion((float(u), float(v)), diam, int(count), xy))
    regions.sort(key=lambda r: (-r.pixel_count, r.centroid_px[1], r.centroid_px[0]))
    return regions


@dataclass(frozen=True)
class FineIteration:
    xy: tuple[float, float]
    force: float
    offset_px: tuple[float, float]
    offset_norm_px: float


@dataclass(frozen=True)
class CandidateLocation:
    xy_roi: tuple[float, float]
    source: str = COARSE
    iterations: int = 0
    trace: tuple[FineIteration, ...] = ()


@dataclass
class WaypointVisit:
    xy: tuple[float, float]
    force: float
    frame_index: int
    pixel_sum: int
    regions: list[DetectedRegion]


@dataclass
class CoarseResult:
    visits: list[WaypointVisit]
    candidates: list[CandidateLocation]
    frames: list[TactileFrame] = field(default_factory=list)


def _press_and_capture(sim: TactileSimulator, xy, force: float, z_safe: float) -> TactileFrame:
    sim.retract(z_safe)
    sim.move_to(*xy)
    sim.press_to_force(force)
    frame = sim.capture()
    sim.retract(z_safe)
    return frame


def coarse_interrogate(sim: TactileSimulator, plan: GridPlan, press_force: float = 5.0,
                       detect: DetectConfig = DetectConfig(), z_safe: Optional[float] = None,
                       keep_frames: bool = False) -> CoarseResult:
    """Visit every waypoint, press, capture and flag waypoints showing a region."""
    if len(plan) == 0:
        raise DegenerateGrid("empty grid plan")
    z_safe = sim.pose[2] if z_safe is None else z_safe
    min_d, thr = detect.resolve(sim.cfg)
    visits, cands, frames = [], [], []
    for xy in plan.waypoints:
        frame = _press_and_capture(sim, xy, press_force, z_safe)
        regions = detect_regions(frame, min_d, thr, sim.cfg.mm_per_pixel)
        visits.append(WaypointVisit(tuple(xy), frame.applied_force, frame.frame_index,
                                    frame.pixel_sum, regions))
        if keep_frames:
            frames.append(frame)
        if regions:
            cands.append(CandidateLocation(tuple(xy), COARSE))
    return CoarseResult(visits, cands, frames)


@dataclass(frozen=True)
class FineConfig:
    constant_force: float = 5.0
    offset_threshold_full_px: float = 70.0
    max_iters: int = 10

    def __post_init__(self):
        if not (self.constant_force > 0 and self.offset_threshold_full_px > 0 and self.max_iters >= 1):
            raise ValueError("fine interrogation settings must be positive")


def refine_location(sim: TactileSimulator, candidate: CandidateLocation, fine: FineConfig = FineConfig(),
                    detect: DetectConfig = DetectConfig(), z_safe: Optional[float] = None) -> CandidateLocation:
    """Recenter the probe on the largest region until its pixel offset is small."""
    z_safe = sim.pose[2] if z_safe is None else z_safe
    cfg = sim.cfg
    min_d, thr = detect.resolve(cfg)
    limit = cfg.px_from_full(fine.offset_threshold_full_px)
    cu, cv = (cfg.width - 1) / 2, (cfg.height - 1) / 2
    xy = tuple(candidate.xy_roi)
    trace = []
    for it in range(1, fine.max_iters + 1):
        frame = _press_and_capture(sim, xy, fine.constant_force, z_safe)
        regions = detect_regions(frame, min_d, thr, cfg.mm_per_pixel)
        if not regions:
            raise LostTarget(f"no region at ({xy[0]:.2f}, {xy[1]:.2f}) on iteration {it}")
        u, v = regions[0].centroid_px
        du, dv = u - cu, v - cv
        norm = math.hypot(du, dv)
        trace.append(FineIteration(xy, frame.applied_force, (du, dv), norm))
        if norm < limit:
            return CandidateLocation(xy, REFINED, it, tuple(trace))
        xy = (xy[0] + du * cfg.mm_per_pixel, xy[1] + dv * cfg.mm_per_pixel)
    raise NonConvergent(f"offset still {trace[-1].offset_norm_px:.1f} px after {fine.max_iters} iterations")


def merge_candidates(refined: Sequence[CandidateLocation], merge_threshold: float = 6.0) -> list[CandidateLocation]:
    """Single-linkage clustering (distance strictly below the threshold).

    Each cluster is represented by its last member in input order; clusters
    are returned in order of their first member.
    """
    n = len(refined)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(refined[i].xy_roi, refined[j].xy_roi) < merge_threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    last: dict[int, int] = {}
    for i in range(n):
        last[find(i)] = i
    return [refined[last[root]] for root in sorted(last)]


def localization_error(refined: Sequence[float], truth: Sequence[float]) -> float:
    """Euclidean XY distance (mm)."""
    return math.hypot(refined[0] - truth[0], refined[1] - truth[1])
