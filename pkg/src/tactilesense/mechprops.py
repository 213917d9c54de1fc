"""Mechanical property estimation from a pressed frame sequence.

Size comes from a polynomial surface in applied force ``F`` and pixel-sum
``I``, ``D(F, I) = sum_ij p[i, j] F**i I**j`` with ``i <= 2`` and ``j <= 1``.
The Deformation Index is the slope of the change in pixel sum against the
change in force, and the risk score combines both.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateForceRange, DivisionByZeroDI, EmptyWindow, RankDeficient
from .phantom import TactileFrame

N_FORCE = 2
N_INTENSITY = 1
MONOMIALS = tuple((i, j) for i in range(N_FORCE + 1) for j in range(N_INTENSITY + 1))


@dataclass
class FrameSequence:
    frames: list[TactileFrame]
    reference_index: Optional[int] = None

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def forces(self) -> np.ndarray:
        return np.array([f.applied_force for f in self.frames], dtype=np.float64)

    @property
    def pixel_sums(self) -> np.ndarray:
        return np.array([f.pixel_sum for f in self.frames], dtype=np.float64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for f in self.frames:
            h.update(f.pixels.tobytes())
            h.update(f"{f.applied_force:.9f}".encode())
        return h.hexdigest()


@dataclass
class CalibrationSurface:
    """Size surface ``D(F, I)``.

    ``scaled_coefficients`` act on ``F / force_scale`` and ``I / intensity_scale``;
    ``coefficients`` holds the equivalent unscaled ``p[i, j]`` as an (3, 2) array.
    """

    scaled_coefficients: np.ndarray
    force_scale: float = 1.0
    intensity_scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        p = np.zeros((N_FORCE + 1, N_INTENSITY + 1))
        for q, (i, j) in zip(self.scaled_coefficients, MONOMIALS):
            p[i, j] = q / (self.force_scale ** i * self.intensity_scale ** j)
        return p

    def __call__(self, force, intensity) -> np.ndarray:
        F = np.asarray(force, dtype=np.float64) / self.force_scale
        I = np.asarray(intensity, dtype=np.float64) / self.intensity_scale
        return sum(q * F ** i * I ** j for q, (i, j) in zip(self.scaled_coefficients, MONOMIALS))

    @classmethod
    def constant(cls, value: float) -> "CalibrationSurface":
        q = np.zeros(len(MONOMIALS))
        q[0] = value
        return cls(q)

    def to_dict(self) -> dict:
        return {
            "form": "D(F, I) = sum_{i<=2, j<=1} p[i][j] F^i I^j",
            "scaled_coefficients": [float(v) for v in self.scaled_coefficients],
            "force_scale": float(self.force_scale),
            "intensity_scale": float(self.intensity_scale),
            "coefficients": [[float(v) for v in row] for row in self.coefficients],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSurface":
        return cls(np.array(d["scaled_coefficients"], dtype=np.float64),
                   float(d["force_scale"]), float(d["intensity_scale"]),
                   dict(d.get("provenance", {})))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "CalibrationSurface":
        return cls.from_dict(json.loads(Path(path).read_text()))


def design_matrix(F: np.ndarray, I: np.ndarray) -> np.ndarray:
    return np.stack([F ** i * I ** j for i, j in MONOMIALS], axis=1)


def fit_size_surface(samples: Sequence[Sequence[float]], min_unexplained: float = 1e-2,
                     provenance: Optional[dict] = None) -> CalibrationSurface:
    """Least-squares fit of the six surface coefficients.

    ``samples`` are ``(F, I, true_D)`` triples. Inputs are divided by their
    largest magnitude before fitting. Raises :class:`RankDeficient` when the
    design has rank below 6 or when the intensities carry (almost) no
    information beyond what the force already explains.
    """
    S = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    n_coef = len(MONOMIALS)
    if len(S) < n_coef:
        raise RankDeficient(f"need at least {n_coef} samples, got {len(S)}")
    if not np.all(np.isfinite(S)):
        raise RankDeficient("non-finite calibration samples")
    F, I, D = S[:, 0], S[:, 1], S[:, 2]
    fs = float(np.max(np.abs(F))) or 1.0
    is_ = float(np.max(np.abs(I))) or 1.0
    X = design_matrix(F / fs, I / is_)
    rank = np.linalg.matrix_rank(X)
    if rank < n_coef:
        raise RankDeficient(f"design matrix rank {rank} < {n_coef}")
    # intensity span independent of force: residual of I regressed on 1, F, F^2
    Fx = np.stack([np.ones_like(F), F / fs, (F / fs) ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(Fx, I / is_, rcond=None)
    resid = I / is_ - Fx @ coef
    spread = np.var(I / is_)
    if spread == 0 or np.mean(resid ** 2) / spread < min_unexplained:
        raise RankDeficient("insufficient intensity span: pixel sums are explained by force alone")
    q, *_ = np.linalg.lstsq(X, D, rcond=None)
    return CalibrationSurface(q, fs, is_, dict(provenance or {}))


@dataclass
class SizeEstimate:
    D: float
    per_frame: list[float]
    aggregation: str = "median"
    valid: bool = True


def _in_window(seq: FrameSequence, window: Optional[tuple[float, float]]) -> np.ndarray:
    F = seq.forces
    if window is None:
        return np.ones(len(F), dtype=bool)
    lo, hi = window
    return (F >= lo) & (F <= hi)


def estimate_size(seq: FrameSequence, surface: CalibrationSurface,
                  window: Optional[tuple[float, float]] = (1.0, 10.0)) -> SizeEstimate:
    """Median of per-frame surface evaluations over frames inside ``window``."""
    if len(seq) == 0:
        raise EmptyWindow("empty frame sequence")
    mask = _in_window(seq, window)
    if not mask.any():
        raise EmptyWindow(f"no frame with force inside {window}")
    per_frame = surface(seq.forces[mask], seq.pixel_sums[mask])
    D = float(np.median(per_frame))
    return SizeEstimate(D, [float(v) for v in per_frame], "median", bool(np.isfinite(D) and D > 0))


def size_error(true_D: float, est_D: float) -> float:
    """Percent size error."""
    if not true_D > 0:
        raise ValueError("true size must be positive")
    return 100.0 * abs(est_D - true_D) / true_D


@dataclass
class DeformationIndex:
    DI: float
    residual: float
    n_points: int
    reference_index: int
    per_image: list[float] = field(default_factory=list)

    @property
    def DI_e3(self) -> float:
        return self.DI / 1e3


def estimate_di(seq: FrameSequence, window: Optional[tuple[float, float]] = None,
                min_force_span: float = 0.1) -> DeformationIndex:
    """Slope through the origin of pixel-sum change against force change.

    Changes are taken relative to the lowest-force frame. Per-image ratios
    are kept for diagnostics.
    """
    mask = _in_window(seq, window)
    idx = np.nonzero(mask)[0]
    if idx.size < 2:
        raise DegenerateForceRange(f"need >= 2 frames for the DI, got {idx.size}")
    F = seq.forces[idx]
    I = seq.pixel_sums[idx]
    ref = int(np.argmin(F))
    dF = np.delete(F - F[ref], ref)
    dI = np.delete(I - I[ref], ref)
    if np.max(np.abs(dF)) < min_force_span:
        raise DegenerateForceRange(f"force span {np.max(np.abs(dF)):.3g} N below {min_force_span} N")
    DI = float(np.dot(dF, dI) / np.dot(dF, dF))
    residual = float(np.sqrt(np.mean((dI - DI * dF) ** 2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        per_image = [float(v) for v in np.where(dF != 0, dI / dF, np.nan)]
    return DeformationIndex(DI, residual, int(dF.size), int(idx[ref]), per_image)


@dataclass(frozen=True)
class RiskWeights:
    """Risk score weights and normalizers.

    Weights may be negative. With the default ``W2 = -0.5`` the DI term adds
    to the score, so stiffer inclusions score higher.
    """

    W1: float = 0.5
    W2: float = -0.5
    D_max: float = 21.0
    DI_max: float = 1.0

    def __post_init__(self):
        if not (self.D_max > 0 and self.DI_max > 0):
            raise ValueError("D_max and DI_max must be positive")


def risk_score(D: float, DI: float | DeformationIndex, w: RiskWeights) -> float:
    """``W1 * D / D_max - W2 * DI / DI_max`` clamped to [0, 1]."""
    di = DI.DI if isinstance(DI, DeformationIndex) else float(DI)
    raw = w.W1 * D / w.D_max - w.W2 * di / w.DI_max
    return float(min(1.0, max(0.0, raw)))


def di_ratio(hard: DeformationIndex | float, soft: DeformationIndex | float) -> float:
    h = hard.DI if isinstance(hard, DeformationIndex) else float(hard)
    s = soft.DI if isinstance(soft, DeformationIndex) else float(soft)
    if s == 0 or not math.isfinite(s):
        raise DivisionByZeroDI("soft DI is zero")
    return h / s
