"""Calibration, training, interrogation and characterization pipelines.

Each ``run_*`` function writes its artifacts into a fresh timestamped
directory and returns that directory. Reports are JSON with sorted keys and
floats rounded to a fixed number of decimals, so a given (config, seed) always
yields the same bytes; wall-clock timings live in a separate ``timings.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .env import ProbeEnv
from .errors import TactileError, TargetFailure
from .interrogation import (coarse_interrogate, localization_error, merge_candidates,
                            plan_grid, refine_location)
from .mechprops import (CalibrationSurface, FrameSequence, RiskWeights, di_ratio, estimate_di,
                        estimate_size, fit_size_surface, risk_score, size_error)
from .phantom import InclusionSpec, PhantomSpec, TactileSimulator, write_sequence
from .sac import AgentModel, TrainResult, acquire_sequence, save_checkpoint, train

log = logging.getLogger(__name__)

DECIMALS = 6
# independent random streams per phase
STREAM_CALIBRATE, STREAM_INTERROGATE, STREAM_CHARACTERIZE, STREAM_TRAIN = 1, 2, 3, 4


def rounded(obj):
    """Round every float in a nested structure for stable serialization."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        v = round(obj, DECIMALS)
        return 0.0 if v == 0 else v
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, np.generic):
        return rounded(obj.item())
    return obj


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(rounded(obj), indent=2, sort_keys=True) + "\n")


def make_run_dir(base: Path | str, phase: str) -> Path:
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    d = base / f"{phase}-{stamp}"
    k = 1
    while d.exists():
        d = base / f"{phase}-{stamp}-{k}"
        k += 1
    d.mkdir()
    return d


def _simulator(cfg: ExperimentConfig, phantom: PhantomSpec, stream: int, index: int = 0,
               positional_noise: bool = True, start=None) -> TactileSimulator:
    sensor = cfg.sensor_config(positional_noise=positional_noise)
    start = tuple(cfg.roi.start) if start is None else start
    return TactileSimulator(phantom, sensor, seed=[cfg.seed, stream, index], start=start)


# --- calibration ---------------------------------------------------------------

def calibration_sweep(sim: TactileSimulator, xy, window: tuple[float, float], step: float,
                      z_start: float) -> list:
    """Scripted press: descend in ``step`` increments, keep frames inside the force window."""
    lo, hi = window
    sim.retract(z_start)
    sim.move_to(*xy)
    surface = sim.phantom.surface_z
    if sim.pose[2] > surface:
        sim.step((0.0, 0.0, surface - sim.pose[2]))
    frames = []
    for _ in range(100_000):
        sim.step((0.0, 0.0, -step))
        frame = sim.capture()
        if frame.applied_force > hi:
            break
        if frame.applied_force >= lo:
            frames.append(frame)
    sim.retract(z_start)
    return frames


def calibrate(cfg: ExperimentConfig) -> tuple[CalibrationSurface, list[tuple[float, float, float]]]:
    """Sweep every calibration inclusion and fit the size surface.

    The largest calibration diameter and the largest per-sweep DI become the
    default risk normalizers and are stored in the surface provenance.
    """
    cal = cfg.calibration
    rx, ry = cfg.phantom.extent
    xy = (rx / 2, ry / 2)
    window = tuple(cfg.force_window)
    samples, dis = [], []
    k = 0
    for d in cal.diameters:
        for e in cal.elasticities:
            inc = InclusionSpec((xy[0], xy[1], cal.z), d, e)
            phantom = cfg.phantom.spec(inclusions=[inc], layer=cal.layer_depth)
            sim = _simulator(cfg, phantom, STREAM_CALIBRATE, k, positional_noise=False,
                             start=(xy[0], xy[1], cfg.env.z_start))
            frames = calibration_sweep(sim, xy, window, cal.press_step, cfg.env.z_start)
            samples.extend((f.applied_force, float(f.pixel_sum), float(d)) for f in frames)
            if len(frames) >= 2:
                try:
                    dis.append(estimate_di(FrameSequence(frames)).DI)
                except TactileError:
                    pass
            k += 1
    provenance = {
        "diameters": [float(v) for v in cal.diameters],
        "elasticities": [float(v) for v in cal.elasticities],
        "layer_depth": cal.layer_depth, "z": cal.z, "press_step": cal.press_step,
        "force_window": list(window), "profile": cfg.profile, "seed": cfg.seed,
        "n_samples": len(samples),
        "D_max": float(max(cal.diameters)),
        "DI_max": float(max(dis)) if dis else None,
    }
    surface = fit_size_surface(samples, provenance=provenance)
    return surface, samples


def run_calibrate(cfg: ExperimentConfig, out: Optional[Path | str] = None) -> Path:
    d = make_run_dir(out or cfg.output_dir, "calibrate")
    t0 = time.perf_counter()
    surface, samples = calibrate(cfg)
    surface.save(d / "surface.json")
    with open(d / "calibration_samples.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["force_N", "pixel_sum", "true_D_mm"])
        for f, i, dd in samples:
            wr.writerow([f"{f:.6f}", int(i), f"{dd:.3f}"])
    (d / "config.json").write_text(cfg.dumps())
    dump_json(d / "timings.json", {"calibrate_s": time.perf_counter() - t0})
    return d


# --- training -----------------------------------------------------------------

def training_env(cfg: ExperimentConfig) -> ProbeEnv:
    phantom = PhantomSpec(tuple(cfg.phantom.extent), cfg.phantom.surface_z, cfg.calibration.layer_depth,
                          (), cfg.phantom.background_stiffness)
    rx, ry = phantom.extent
    sim = _simulator(cfg, phantom, STREAM_TRAIN, positional_noise=False,
                     start=(rx / 2, ry / 2, cfg.env.z_start))
    return ProbeEnv(sim, cfg.env_config(training=True))


def train_agent(cfg: ExperimentConfig) -> TrainResult:
    return train(training_env(cfg), cfg.sac_config())


def write_trace(path: Path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["episode", "steps", "cumulative_reward"])
        for r in result.trace:
            wr.writerow([r.episode, r.steps, f"{r.cumulative_reward:.6f}"])


def run_train(cfg: ExperimentConfig, out: Optional[Path | str] = None) -> Path:
    d = make_run_dir(out or cfg.output_dir, "train")
    t0 = time.perf_counter()
    result = train_agent(cfg)
    save_checkpoint(result.model, d / "checkpoint.bin")
    write_trace(d / "reward_trace.csv", result)
    (d / "config.json").write_text(cfg.dumps())
    dump_json(d / "timings.json", {"train_s": time.perf_counter() - t0})
    return d


# --- measurement helpers --------------------------------------------------------

def risk_weights_for(cfg: ExperimentConfig, surface: CalibrationSurface) -> RiskWeights:
    prov = surface.provenance
    return cfg.risk_weights(d_max=prov.get("D_max"), di_max=prov.get("DI_max"))


def measure(env: ProbeEnv, model: AgentModel, surface: CalibrationSurface, weights: RiskWeights,
            xy, window, seq_dir: Path, run_dir: Path) -> dict:
    """Acquire a sequence at ``xy`` and derive size, DI and risk score."""
    seq = acquire_sequence(env, model, window, xy=xy)
    write_sequence(seq_dir, seq.frames)
    out = {
        "sequence": {
            "dir": seq_dir.relative_to(run_dir).as_posix(),
            "digest": seq.digest(),
            "frames": [{"file": f"frame_{f.frame_index:05d}.pgm", "frame_index": f.frame_index,
                        "force_N": f.applied_force, "pixel_sum": f.pixel_sum,
                        "pose": list(f.probe_pose)} for f in seq.frames],
        },
    }
    size = estimate_size(seq, surface, window)
    out["size"] = {"D_mm": size.D, "per_frame": size.per_frame, "aggregation": size.aggregation,
                   "valid": size.valid}
    try:
        di = estimate_di(seq, window)
        out["DI"] = {"DI": di.DI, "DI_e3": di.DI_e3, "residual": di.residual, "n_points": di.n_points,
                     "reference_frame": seq.frames[di.reference_index].frame_index,
                     "per_image": di.per_image}
        out["risk_score"] = risk_score(size.D, di, weights)
    except TactileError as e:
        out["DI"] = None
        out["risk_score"] = None
        out["DI_error"] = f"{type(e).__name__}: {e}"
    return out


def _truth(cfg: ExperimentConfig) -> list[dict]:
    return [{"label": inc.label or f"inclusion{i}", "xy": inc.center[:2], "z": inc.center[2],
             "diameter_mm": inc.diameter, "elasticity_kPa": inc.elasticity}
            for i, inc in enumerate(cfg.phantom.inclusions)]


def _acquisition_env(sim: TactileSimulator, cfg: ExperimentConfig) -> ProbeEnv:
    return ProbeEnv(sim, cfg.env_config())


# --- interrogation --------------------------------------------------------------

def interrogate(cfg: ExperimentConfig, model: AgentModel, surface: CalibrationSurface,
                run_dir: Path) -> tuple[dict, int, dict]:
    """Coarse scan, fine refinement, merging and per-inclusion characterization.

    Returns ``(report, status, timings)``. Status is 4 when a merged
    inclusion could not be measured or when no candidate could be refined,
    else 0. Per-candidate failures are recorded and do not stop the run.
    """
    timings = {}
    t0 = time.perf_counter()
    roi = cfg.roi_spec()
    phantom = cfg.phantom_spec()
    sim = _simulator(cfg, phantom, STREAM_INTERROGATE)
    z_safe = roi.start[2]
    plan = plan_grid(roi, cfg.grid.dx, cfg.grid.dy)
    detect = cfg.detect_config()
    coarse = coarse_interrogate(sim, plan, cfg.coarse.press_force, detect, z_safe,
                                keep_frames=cfg.persist_coarse_frames)
    if cfg.persist_coarse_frames:
        write_sequence(run_dir / "coarse", coarse.frames)
    timings["coarse_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    fine_cfg = cfg.fine_config()
    fine_entries, refined = [], []
    status = 0
    for cand in coarse.candidates:
        entry = {"candidate_xy": list(cand.xy_roi)}
        try:
            r = refine_location(sim, cand, fine_cfg, detect, z_safe)
            refined.append(r)
            entry.update(status="ok", refined_xy=list(r.xy_roi), iterations=r.iterations,
                         trace=[{"xy": list(it.xy), "force_N": it.force, "offset_px": list(it.offset_px),
                                 "offset_norm_px": it.offset_norm_px} for it in r.trace])
        except TargetFailure as e:
            entry.update(status=type(e).__name__, message=str(e))
        fine_entries.append(entry)
    # a lost candidate is usually a marginal coarse detection; only a scan
    # whose every candidate failed counts as a target failure
    if coarse.candidates and not refined:
        status = 4
    merged = merge_candidates(refined, cfg.fine.merge_threshold)
    timings["fine_s"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    truth = _truth(cfg)
    weights = risk_weights_for(cfg, surface)
    window = tuple(cfg.force_window)
    env = _acquisition_env(sim, cfg)
    inclusions = []
    for k, m in enumerate(merged):
        row: dict = {"id": k, "xy": list(m.xy_roi), "iterations": m.iterations}
        if truth:
            errs = [localization_error(m.xy_roi, t["xy"]) for t in truth]
            j = int(np.argmin(errs))
            row.update(matched_truth=truth[j]["label"], true_xy=truth[j]["xy"],
                       true_size_mm=truth[j]["diameter_mm"], localization_error_mm=errs[j])
        try:
            row.update(measure(env, model, surface, weights, m.xy_roi, window,
                               run_dir / "inclusions" / f"{k:02d}", run_dir))
            if "true_size_mm" in row:
                row["size_error_pct"] = size_error(row["true_size_mm"], row["size"]["D_mm"])
            row["status"] = "ok"
        except TactileError as e:
            if isinstance(e, TargetFailure):
                status = 4
            row["status"] = type(e).__name__
            row["message"] = str(e)
        inclusions.append(row)
    timings["characterize_s"] = time.perf_counter() - t2

    report = {
        "kind": "interrogation",
        "schema_version": cfg.schema_version,
        "seed": cfg.seed,
        "profile": cfg.profile,
        "config_digest": cfg.digest(),
        "surface_digest": _surface_digest(surface),
        "grid": {"dx": plan.dx, "dy": plan.dy, "n_waypoints": len(plan)},
        "coarse": {
            "frames_dir": "coarse" if cfg.persist_coarse_frames else None,
            "visits": [{"xy": list(v.xy), "force_N": v.force, "frame_index": v.frame_index,
                        "pixel_sum": v.pixel_sum,
                        "regions": [{"centroid_px": list(r.centroid_px),
                                     "equivalent_diameter_px": r.equivalent_diameter_px,
                                     "pixel_count": r.pixel_count, "centroid_roi": list(r.centroid_roi)}
                                    for r in v.regions]} for v in coarse.visits],
            "candidates": [list(c.xy_roi) for c in coarse.candidates],
        },
        "fine": fine_entries,
        "merged": [list(m.xy_roi) for m in merged],
        "inclusions": inclusions,
        "truth": truth,
        "risk_weights": asdict(weights),
        "manual_operator_arm": "not reproducible",
    }
    return report, status, timings


def _surface_digest(surface: CalibrationSurface) -> str:
    return hashlib.sha256(json.dumps(surface.to_dict(), sort_keys=True).encode()).hexdigest()


def run_interrogate(cfg: ExperimentConfig, model: AgentModel, surface: CalibrationSurface,
                    out: Optional[Path | str] = None) -> tuple[Path, int]:
    d = make_run_dir(out or cfg.output_dir, "interrogate")
    (d / "config.json").write_text(cfg.dumps())
    report, status, timings = interrogate(cfg, model, surface, d)
    dump_json(d / "report.json", report)
    dump_json(d / "timings.json", timings)
    return d, status


# --- characterization -------------------------------------------------------------

def characterize(cfg: ExperimentConfig, model: AgentModel, surface: CalibrationSurface,
                 run_dir: Path) -> tuple[dict, int]:
    """Measure every configured inclusion at its true XY (no interrogation)."""
    phantom = cfg.phantom_spec()
    sim = _simulator(cfg, phantom, STREAM_CHARACTERIZE)
    env = _acquisition_env(sim, cfg)
    weights = risk_weights_for(cfg, surface)
    window = tuple(cfg.force_window)
    rows, status = [], 0
    dis = {}
    for k, t in enumerate(_truth(cfg)):
        row = {"id": k, "label": t["label"], "xy": t["xy"], "true_size_mm": t["diameter_mm"],
               "elasticity_kPa": t["elasticity_kPa"]}
        try:
            row.update(measure(env, model, surface, weights, t["xy"], window,
                               run_dir / "inclusions" / f"{k:02d}", run_dir))
            row["size_error_pct"] = size_error(t["diameter_mm"], row["size"]["D_mm"])
            row["status"] = "ok"
            if row["DI"] is not None:
                dis[k] = (t["elasticity_kPa"], row["DI"]["DI"])
        except TactileError as e:
            if isinstance(e, TargetFailure):
                status = 4
            row["status"] = type(e).__name__
            row["message"] = str(e)
        rows.append(row)
    ratio = None
    if len(dis) >= 2:
        stiff = max(dis.values(), key=lambda v: v[0])
        soft = min(dis.values(), key=lambda v: v[0])
        if stiff[0] != soft[0]:
            try:
                ratio = di_ratio(stiff[1], soft[1])
            except TactileError:
                ratio = None
    report = {
        "kind": "characterization",
        "schema_version": cfg.schema_version,
        "seed": cfg.seed,
        "profile": cfg.profile,
        "config_digest": cfg.digest(),
        "surface_digest": _surface_digest(surface),
        "inclusions": rows,
        "di_ratio_stiff_over_soft": ratio,
        "risk_weights": asdict(weights),
        "manual_operator_arm": "not reproducible",
    }
    return report, status


def run_characterize(cfg: ExperimentConfig, model: AgentModel, surface: CalibrationSurface,
                     out: Optional[Path | str] = None) -> tuple[Path, int]:
    d = make_run_dir(out or cfg.output_dir, "characterize")
    (d / "config.json").write_text(cfg.dumps())
    t0 = time.perf_counter()
    report, status = characterize(cfg, model, surface, d)
    dump_json(d / "report.json", report)
    dump_json(d / "timings.json", {"characterize_s": time.perf_counter() - t0})
    return d, status
