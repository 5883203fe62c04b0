"""Log-odds belief grids for substrate and coral, plus the DLC history mask."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .sensors import DLC, Observation, ScoutSensorSpec
from .world import GridSpec

ELL_MIN, ELL_MAX = -10.0, 10.0
LN2 = float(np.log(2.0))


class SensorMismatchError(ValueError):
    """Observation inconsistent with the sensor it is being fused for."""


def scout_increment(z, d, spec: ScoutSensorSpec):
    """Log-odds increment for binary scouting measurement(s) ``z`` taken at distance ``d``."""
    ptp, pfp = spec.rates(d)
    z = np.asarray(z)
    return np.where(z == 1, np.log(ptp / pfp), np.log((1.0 - ptp) / (1.0 - pfp)))


def binary_entropy_logodds(ell):
    """H(sigmoid(ell)) in nats, stable for large |ell|."""
    ell = np.abs(np.asarray(ell, dtype=float))
    # H = log(1 + e^-|l|) + |l| * sigmoid(-|l|)
    return np.log1p(np.exp(-ell)) + ell * expit(-ell)


@dataclass
class BeliefState:
    spec: GridSpec
    ell_s: np.ndarray = None  # flat (N,) log-odds of hard substrate
    ell_c: np.ndarray = None  # flat (N,) log-odds of coral presence
    xi: np.ndarray = None  # flat (N,) DLC history mask
    clamp: tuple[float, float] = (ELL_MIN, ELL_MAX)
    sampled: int = field(default=0)

    def __post_init__(self):
        n = self.spec.n_cells
        if self.ell_s is None:
            self.ell_s = np.zeros(n)
        if self.ell_c is None:
            self.ell_c = np.zeros(n)
        if self.xi is None:
            self.xi = np.zeros(n, dtype=bool)

    def copy(self) -> BeliefState:
        return BeliefState(self.spec, self.ell_s.copy(), self.ell_c.copy(), self.xi.copy(),
                           self.clamp, self.sampled)

    def layer(self, name: str) -> np.ndarray:
        if name in ("substrate", "s", "S"):
            return self.ell_s
        if name in ("coral", "c", "C"):
            return self.ell_c
        raise ValueError(f"unknown layer {name!r}")

    def prob(self, name: str) -> np.ndarray:
        return expit(self.layer(name))


def update_scout(belief: BeliefState, obs: Observation, spec: ScoutSensorSpec) -> None:
    if obs.sensor != spec.name:
        raise SensorMismatchError(f"{obs.sensor} observation fused with {spec.name} model")
    if obs.distance > spec.r_max + 1e-9:
        raise SensorMismatchError(
            f"observation at {obs.distance:.3f} m beyond {spec.name} range {spec.r_max} m")
    update_scout_arrays(belief, np.array([obs.cell]), np.array([obs.z]),
                        np.array([obs.distance]), spec)


def update_scout_arrays(belief: BeliefState, cells, z, d, spec: ScoutSensorSpec) -> None:
    """Batch Bayesian update; each cell may appear at most once per call."""
    if np.any(np.asarray(d) > spec.r_max + 1e-9):
        raise SensorMismatchError(f"observation beyond {spec.name} range {spec.r_max} m")
    ell = belief.layer(spec.target_layer)
    lo, hi = belief.clamp
    ell[cells] = np.clip(ell[cells] + scout_increment(z, d, spec), lo, hi)


def update_dlc(belief: BeliefState, obs: Observation) -> int:
    if obs.sensor != DLC:
        raise SensorMismatchError(f"expected DLC observation, got {obs.sensor}")
    return update_dlc_arrays(belief, np.array([obs.cell]), np.array([obs.z]))


def update_dlc_arrays(belief: BeliefState, cells, z) -> int:
    """Deterministic verification; returns the number of newly sampled corals."""
    cells = np.asarray(cells, dtype=np.int64)
    z = np.asarray(z)
    lo, hi = belief.clamp
    new = int(np.count_nonzero((z == 1) & ~belief.xi[cells]))
    belief.ell_c[cells] = np.where(z == 1, hi, lo)
    belief.xi[cells] = True
    belief.sampled += new
    return new


def entropy_map(belief: BeliefState, layer: str) -> np.ndarray:
    return binary_entropy_logodds(belief.layer(layer))


@dataclass
class CandidateMap:
    flags: np.ndarray  # flat bool

    @property
    def cells(self) -> np.ndarray:
        return np.flatnonzero(self.flags)

    def __len__(self):
        return int(self.flags.sum())


def extract_candidates(belief: BeliefState, delta: float = 0.8) -> CandidateMap:
    if not 0.5 < delta < 1.0:
        raise ValueError("delta must lie in (0.5, 1)")
    # sigmoid(l) > delta  <=>  l > logit(delta)
    thresh = np.log(delta / (1 - delta))
    return CandidateMap((belief.ell_c > thresh) & ~belief.xi)


def region_stats(belief: BeliefState, cells) -> tuple[float, float]:
    """Mean substrate probability and mean Bernoulli variance over ``cells``."""
    cells = np.asarray(cells)
    if cells.size == 0:
        raise ValueError("region_stats needs a non-empty cell set")
    b = expit(belief.ell_s[cells])
    return float(b.mean()), float((b * (1 - b)).mean())


def export_snapshot(belief: BeliefState, path_prefix: str | os.PathLike, t: float | None = None) -> None:
    """Write ``<prefix>.bin`` (float32 ell_s, float32 ell_c, uint8 xi; row-major) and ``<prefix>.json``."""
    prefix = os.fspath(path_prefix)
    rows, cols = belief.spec.shape
    with open(prefix + ".bin", "wb") as fh:
        fh.write(belief.ell_s.astype("<f4").tobytes())
        fh.write(belief.ell_c.astype("<f4").tobytes())
        fh.write(belief.xi.astype("u1").tobytes())
    header = {
        "format": "himos-belief-v1",
        "rows": rows,
        "cols": cols,
        "cell_size": belief.spec.cell_size,
        "width_m": belief.spec.width_m,
        "height_m": belief.spec.height_m,
        "clamp": list(belief.clamp),
        "layers": [
            {"name": "ell_s", "dtype": "<f4", "offset": 0},
            {"name": "ell_c", "dtype": "<f4", "offset": 4 * rows * cols},
            {"name": "xi", "dtype": "u1", "offset": 8 * rows * cols},
        ],
        "t": t,
        "sampled": belief.sampled,
    }
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)


def load_snapshot(path_prefix: str | os.PathLike) -> BeliefState:
    prefix = os.fspath(path_prefix)
    with open(prefix + ".json", encoding="utf-8") as fh:
        header = json.load(fh)
    spec = GridSpec(header["width_m"], header["height_m"], header["cell_size"])
    n = spec.n_cells
    raw = np.fromfile(prefix + ".bin", dtype=np.uint8)
    if raw.size != 9 * n:
        raise ValueError(f"snapshot payload has {raw.size} bytes, expected {9 * n}")
    ell_s = raw[: 4 * n].view("<f4").astype(float)
    ell_c = raw[4 * n: 8 * n].view("<f4").astype(float)
    xi = raw[8 * n:].astype(bool)
    return BeliefState(spec, ell_s, ell_c, xi, tuple(header["clamp"]), header.get("sampled", 0))
