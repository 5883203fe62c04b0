"""Observation models: sector scouting sensors (FLS/FLC) and the down-looking camera."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import GridSpec, GroundTruth

FLS, FLC, DLC = "FLS", "FLC", "DLC"

# Detection rates are kept inside [RATE_LO, RATE_HI] before any log is taken.
RATE_LO, RATE_HI = 0.01, 0.99
_CLIP_WIDTH = 0.005


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if np.ndim(out) == 0 else out


def soft_clip(p, lo: float = RATE_LO, hi: float = RATE_HI, width: float = _CLIP_WIDTH):
    """C1 clamp of ``p`` to [lo, hi] with quadratic blends of half-width ``width``.

    Identical to a hard clamp outside the blend bands.  Returns (value, dvalue/dp).
    """
    p = np.asarray(p, dtype=float)
    w2 = 2.0 * width
    t_hi = np.clip(p - (hi - width), 0.0, w2)
    t_lo = np.clip((lo + width) - p, 0.0, w2)
    val = np.clip(p, lo - width, hi + width) + (t_lo * t_lo - t_hi * t_hi) / (2.0 * w2)
    inside = (p > lo - width) & (p < hi + width)
    der = inside * (1.0 - (t_hi + t_lo) / w2)
    return val, der


@dataclass
class RobotState:
    x: float
    y: float
    theta: float = 0.0

    @property
    def p(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> RobotState:
        return cls(float(a[0]), float(a[1]), wrap_angle(float(a[2])))


@dataclass(frozen=True)
class ScoutSensorSpec:
    """Sector sensor with linear range-dependent TP/FP profiles.

    ``P_TP(d) = 1 - tp_slope * d / r_max`` and ``P_FP(d) = fp_slope * d / r_max``.
    """

    name: str
    r_max: float
    fov_deg: float
    tp_slope: float
    fp_slope: float
    target_layer: str  # "substrate" or "coral"

    def __post_init__(self):
        if not (0 < self.tp_slope < 1 and 0 < self.fp_slope < 1):
            raise ValueError("tp_slope and fp_slope must lie in (0, 1)")
        if self.tp_slope + self.fp_slope > 1:
            raise ValueError("sensor must discriminate: need P_TP(d) > P_FP(d) on [0, r_max)")
        if self.target_layer not in ("substrate", "coral"):
            raise ValueError(f"unknown target layer {self.target_layer!r}")
        if self.r_max <= 0 or not 0 < self.fov_deg <= 360:
            raise ValueError("bad range or field of view")

    @property
    def half_fov(self) -> float:
        return math.radians(self.fov_deg) / 2

    def p_tp(self, d):
        return 1.0 - self.tp_slope * np.asarray(d, dtype=float) / self.r_max

    def p_fp(self, d):
        return self.fp_slope * np.asarray(d, dtype=float) / self.r_max

    def rates(self, d):
        """Clipped (P_TP, P_FP) used wherever log-likelihood ratios are formed."""
        return soft_clip(self.p_tp(d))[0], soft_clip(self.p_fp(d))[0]


FLS_DEFAULT = ScoutSensorSpec(FLS, 6.0, 90.0, 0.1, 0.1, "substrate")
FLC_DEFAULT = ScoutSensorSpec(FLC, 2.5, 60.0, 0.15, 0.15, "coral")


@dataclass(frozen=True)
class DlcSpec:
    side_len: float = 1.0

    def __post_init__(self):
        if self.side_len <= 0:
            raise ValueError("side_len must be positive")


@dataclass(frozen=True)
class Observation:
    cell: int
    z: int
    distance: float
    sensor: str


def _window(grid: GridSpec, x: float, y: float, radius: float):
    cs = grid.cell_size
    c0 = max(int(math.floor((x - radius) / cs)), 0)
    c1 = min(int(math.floor((x + radius) / cs)) + 1, grid.cols)
    r0 = max(int(math.floor((y - radius) / cs)), 0)
    r1 = min(int(math.floor((y + radius) / cs)) + 1, grid.rows)
    if c1 <= c0 or r1 <= r0:
        e = np.empty(0)
        return np.empty(0, dtype=np.int64), e, e
    rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    return rows * grid.cols + cols, (cols + 0.5) * cs, (rows + 0.5) * cs


def scan_sector(state: RobotState, spec: ScoutSensorSpec, grid: GridSpec):
    """Visible cells and their distances, as two arrays."""
    idx, cx, cy = _window(grid, state.x, state.y, spec.r_max)
    dx, dy = cx - state.x, cy - state.y
    d = np.hypot(dx, dy)
    # |bearing| <= half_fov  <=>  cos(bearing) >= cos(half_fov); d == 0 counts as visible
    along = dx * math.cos(state.theta) + dy * math.sin(state.theta)
    ok = (d <= spec.r_max) & ((along >= d * math.cos(spec.half_fov) - 1e-12) | (d < 1e-12))
    return idx[ok], d[ok]


def visible_cells_sector(state: RobotState, spec: ScoutSensorSpec, grid: GridSpec) -> np.ndarray:
    return scan_sector(state, spec, grid)[0]


def footprint_cells(state: RobotState, spec: DlcSpec, grid: GridSpec) -> np.ndarray:
    """Cells under the heading-aligned square footprint centred on the robot."""
    half = spec.side_len / 2
    idx, cx, cy = _window(grid, state.x, state.y, half * math.sqrt(2))
    dx, dy = cx - state.x, cy - state.y
    c, s = math.cos(state.theta), math.sin(state.theta)
    lon = c * dx + s * dy
    lat = -s * dx + c * dy
    ok = (np.abs(lon) <= half + 1e-12) & (np.abs(lat) <= half + 1e-12)
    return idx[ok]


def _layer(gt: GroundTruth, spec: ScoutSensorSpec) -> np.ndarray:
    return (gt.substrate if spec.target_layer == "substrate" else gt.coral).ravel()


def sample_scout_arrays(gt: GroundTruth, state: RobotState, spec: ScoutSensorSpec,
                        rng: np.random.Generator):
    """Vectorised scouting draw: (cells, z, distances)."""
    idx, d = scan_sector(state, spec, gt.spec)
    truth = _layer(gt, spec)[idx]
    p1 = np.where(truth == 1, spec.p_tp(d), spec.p_fp(d))
    z = (rng.random(idx.size) < p1).astype(np.uint8)
    return idx, z, d


def sample_scout(gt: GroundTruth, state: RobotState, spec: ScoutSensorSpec,
                 rng: np.random.Generator) -> list[Observation]:
    idx, z, d = sample_scout_arrays(gt, state, spec, rng)
    return [Observation(int(i), int(zi), float(di), spec.name) for i, zi, di in zip(idx, z, d)]


def sample_dlc_arrays(gt: GroundTruth, state: RobotState, spec: DlcSpec):
    idx = footprint_cells(state, spec, gt.spec)
    return idx, gt.coral.ravel()[idx].astype(np.uint8)


def sample_dlc(gt: GroundTruth, state: RobotState, spec: DlcSpec) -> list[Observation]:
    idx, z = sample_dlc_arrays(gt, state, spec)
    ctr = gt.spec.center_of(idx)
    d = np.hypot(ctr[:, 0] - state.x, ctr[:, 1] - state.y) if idx.size else np.empty(0)
    return [Observation(int(i), int(zi), float(di), DLC) for i, zi, di in zip(idx, z, d)]
