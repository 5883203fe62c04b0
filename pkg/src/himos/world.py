"""Grid environment, synthetic benthic ground truth and map file I/O.

Cells are stored row-major: row index runs along +y, column index along +x,
and flat index ``i = row * cols + col``.  Cell ``i`` is centred at
``((col + 0.5) * cell_size, (row + 0.5) * cell_size)``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

MAP_MAGIC = "# himos-map v1"


class MapFormatError(ValueError):
    """Raised when a map file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if offset is not None:
                loc += f", offset {offset}"
            loc += ": "
        super().__init__(loc + message)
        self.line = line
        self.offset = offset


class MapValidationError(ValueError):
    """Raised when a map violates the coral-on-hard-substrate constraint."""


class InfeasibleMapConfig(ValueError):
    """Raised when the generator cannot hit the requested substrate fill."""


@dataclass(frozen=True)
class GridSpec:
    width_m: float
    height_m: float
    cell_size: float

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        for name in ("width_m", "height_m"):
            ratio = getattr(self, name) / self.cell_size
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name}/cell_size must be a positive integer, got {ratio}")

    @property
    def cols(self) -> int:
        return int(round(self.width_m / self.cell_size))

    @property
    def rows(self) -> int:
        return int(round(self.height_m / self.cell_size))

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def centers(self) -> np.ndarray:
        """(N, 2) array of cell-centre coordinates in flat-index order."""
        cs = self.cell_size
        xs = (np.arange(self.cols) + 0.5) * cs
        ys = (np.arange(self.rows) + 0.5) * cs
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def center_of(self, index) -> np.ndarray:
        index = np.asarray(index)
        row, col = np.divmod(index, self.cols)
        return np.stack([(col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size], axis=-1)

    def index_of(self, x: float, y: float) -> int:
        """Flat index of the cell containing point (x, y), clipped to the grid."""
        col = min(max(int(np.floor(x / self.cell_size)), 0), self.cols - 1)
        row = min(max(int(np.floor(y / self.cell_size)), 0), self.rows - 1)
        return row * self.cols + col

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.height_m


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[xmin, xmax) x [ymin, ymax)`` in meters."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def area(self) -> float:
        return max(self.xmax - self.xmin, 0.0) * max(self.ymax - self.ymin, 0.0)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x < self.xmax and self.ymin <= y < self.ymax

    def clip(self, spec: GridSpec) -> Rect:
        return Rect(max(self.xmin, 0.0), max(self.ymin, 0.0),
                    min(self.xmax, spec.width_m), min(self.ymax, spec.height_m))


def cells_in_region(spec: GridSpec, region: Rect) -> np.ndarray:
    """Flat indices of the cells whose centres lie in the half-open rectangle."""
    cs = spec.cell_size
    # centre (k + 0.5) * cs in [lo, hi)  <=>  k in [lo/cs - 0.5, hi/cs - 0.5)
    c0 = max(int(np.ceil(region.xmin / cs - 0.5 - 1e-12)), 0)
    c1 = min(int(np.ceil(region.xmax / cs - 0.5 - 1e-12)), spec.cols)
    r0 = max(int(np.ceil(region.ymin / cs - 0.5 - 1e-12)), 0)
    r1 = min(int(np.ceil(region.ymax / cs - 0.5 - 1e-12)), spec.rows)
    if c1 <= c0 or r1 <= r0:
        return np.empty(0, dtype=np.int64)
    rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    return (rows * spec.cols + cols).ravel().astype(np.int64)


@dataclass(frozen=True)
class GroundTruth:
    spec: GridSpec
    substrate: np.ndarray  # (rows, cols) uint8, 1 = hard substrate
    coral: np.ndarray  # (rows, cols) uint8, 1 = coral present
    seed: int | None = None

    def __post_init__(self):
        for name in ("substrate", "coral"):
            arr = getattr(self, name)
            if arr.shape != self.spec.shape:
                raise MapValidationError(f"{name} layer has shape {arr.shape}, expected {self.spec.shape}")
        if np.any((self.coral > 0) & (self.substrate == 0)):
            raise MapValidationError("coral present on a non-hard-substrate cell")
        self.substrate.setflags(write=False)
        self.coral.setflags(write=False)

    @property
    def n_coral(self) -> int:
        return int(self.coral.sum())

    @property
    def substrate_fill(self) -> float:
        return float(self.substrate.mean())

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (self.spec == other.spec and self.seed == other.seed
                and np.array_equal(self.substrate, other.substrate)
                and np.array_equal(self.coral, other.coral))

    __hash__ = None


# (fill, n_blobs range, blob radius mean/std in m, coral density)
DIFFICULTY_PRESETS = {
    "easy": dict(substrate_fill_target=0.4, n_blobs=(2, 3), blob_radius_mean=8.0,
                 blob_radius_std=2.0, coral_density=0.08),
    "medium": dict(substrate_fill_target=0.3, n_blobs=(4, 6), blob_radius_mean=5.0,
                   blob_radius_std=1.5, coral_density=0.05),
    "hard": dict(substrate_fill_target=0.2, n_blobs=(8, 12), blob_radius_mean=3.0,
                 blob_radius_std=1.0, coral_density=0.03),
}


@dataclass
class MapGenConfig:
    seed: int = 0
    difficulty: str = "medium"
    width_m: float = 50.0
    height_m: float = 50.0
    cell_size: float = 0.25
    n_blobs: int | None = None
    blob_radius_mean: float | None = None
    blob_radius_std: float | None = None
    substrate_fill_target: float | None = None
    coral_density: float | None = None
    max_retries: int = 20

    def __post_init__(self):
        if self.difficulty not in DIFFICULTY_PRESETS:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")
        preset = DIFFICULTY_PRESETS[self.difficulty]
        if self.n_blobs is None:
            lo, hi = preset["n_blobs"]
            self.n_blobs = int(np.random.default_rng(self.seed).integers(lo, hi + 1))
        for key in ("blob_radius_mean", "blob_radius_std", "substrate_fill_target", "coral_density"):
            if getattr(self, key) is None:
                setattr(self, key, preset[key])
        if not 0.0 <= self.coral_density <= 1.0:
            raise ValueError("coral_density must lie in [0, 1]")
        if not 0.0 < self.substrate_fill_target < 1.0:
            raise ValueError("substrate_fill_target must lie in (0, 1)")
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be >= 1")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.width_m, self.height_m, self.cell_size)


def _blob_field(cfg: MapGenConfig, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    rows, cols = grid.shape
    cs = grid.cell_size
    ys = (np.arange(rows) + 0.5) * cs
    xs = (np.arange(cols) + 0.5) * cs
    field_ = np.zeros((rows, cols))
    for _ in range(cfg.n_blobs):
        cx = rng.uniform(0, grid.width_m)
        cy = rng.uniform(0, grid.height_m)
        r = max(rng.normal(cfg.blob_radius_mean, cfg.blob_radius_std), 0.5 * cfg.blob_radius_mean)
        # anisotropic, rotated blob
        aspect = rng.uniform(0.6, 1.6)
        ang = rng.uniform(0, np.pi)
        dx = xs[None, :] - cx
        dy = ys[:, None] - cy
        u = np.cos(ang) * dx + np.sin(ang) * dy
        v = -np.sin(ang) * dx + np.cos(ang) * dy
        field_ += np.exp(-0.5 * ((u / (r * aspect)) ** 2 + (v * aspect / r) ** 2))
    # ragged edges
    noise = ndimage.gaussian_filter(rng.standard_normal((rows, cols)), sigma=1.0 / cs)
    noise /= max(noise.std(), 1e-12)
    return field_ + 0.08 * noise * (field_ > 0.05)


def generate_map(config: MapGenConfig) -> GroundTruth:
    """Clustered hard-substrate blobs with corals sprinkled on hard cells.

    The same seed always yields a bit-identical map.
    """
    grid = config.grid
    rng = np.random.default_rng(config.seed)
    target = config.substrate_fill_target
    for _ in range(config.max_retries):
        f = _blob_field(config, grid, rng)
        thresh = np.quantile(f, 1.0 - target)
        if thresh <= 0.05:
            # too little blob mass to reach the target without flooding the background
            continue
        substrate = (f > thresh).astype(np.uint8)
        if abs(substrate.mean() - target) <= 0.10:
            break
    else:
        raise InfeasibleMapConfig(
            f"could not reach substrate fill {target:.2f} with {config.n_blobs} blobs "
            f"after {config.max_retries} attempts")
    coral = ((rng.random(grid.shape) < config.coral_density) & (substrate == 1)).astype(np.uint8)
    return GroundTruth(grid, substrate, coral, seed=config.seed)


def _rle_encode(layer: np.ndarray) -> str:
    flat = layer.ravel()
    if flat.size == 0:
        return ""
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return " ".join(f"{int(flat[s])}x{int(n)}" for s, n in zip(starts, lengths))


def _rle_decode(text: str, n: int, lineno: int, col0: int) -> np.ndarray:
    out = np.empty(n, dtype=np.uint8)
    pos = 0
    offset = col0
    for tok in text.split(" "):
        if not tok:
            offset += 1
            continue
        try:
            val_s, cnt_s = tok.split("x")
            val, cnt = int(val_s), int(cnt_s)
        except ValueError:
            raise MapFormatError(f"bad run token {tok!r}", lineno, offset) from None
        if val not in (0, 1) or cnt <= 0:
            raise MapFormatError(f"bad run token {tok!r}", lineno, offset)
        if pos + cnt > n:
            raise MapFormatError(f"run overflows layer of {n} cells", lineno, offset)
        out[pos:pos + cnt] = val
        pos += cnt
        offset += len(tok) + 1
    if pos != n:
        raise MapFormatError(f"layer has {pos} cells, expected {n}", lineno, offset)
    return out


def save_map(gt: GroundTruth, path: str | os.PathLike) -> None:
    s = gt.spec
    lines = [
        MAP_MAGIC,
        f"width_m {s.width_m!r}",
        f"height_m {s.height_m!r}",
        f"cell_size {s.cell_size!r}",
        f"seed {gt.seed if gt.seed is not None else 'none'}",
        "substrate " + _rle_encode(gt.substrate),
        "coral " + _rle_encode(gt.coral),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_map(path: str | os.PathLike) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_map(text)


def parse_map(text: str) -> GroundTruth:
    lines = text.splitlines()
    if not lines or not text.strip():
        raise MapFormatError("empty map file", 1, 0)
    if lines[0].strip() != MAP_MAGIC:
        raise MapFormatError(f"missing header {MAP_MAGIC!r}", 1, 0)
    header: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key in header:
            raise MapFormatError(f"duplicate key {key!r}", lineno, 0)
        header[key] = (rest, lineno)
    for key in ("width_m", "height_m", "cell_size", "seed", "substrate", "coral"):
        if key not in header:
            raise MapFormatError(f"missing key {key!r}", len(lines), 0)

    def num(key):
        val, ln = header[key]
        try:
            return float(val)
        except ValueError:
            raise MapFormatError(f"bad number for {key}: {val!r}", ln, len(key) + 1) from None

    try:
        spec = GridSpec(num("width_m"), num("height_m"), num("cell_size"))
    except MapFormatError:
        raise
    except ValueError as exc:
        raise MapFormatError(str(exc), header["cell_size"][1], 0) from None
    seed_s, seed_ln = header["seed"]
    if seed_s == "none":
        seed = None
    else:
        try:
            seed = int(seed_s)
        except ValueError:
            raise MapFormatError(f"bad seed {seed_s!r}", seed_ln, 5) from None
    layers = {}
    for key in ("substrate", "coral"):
        val, ln = header[key]
        layers[key] = _rle_decode(val, spec.n_cells, ln, len(key) + 1).reshape(spec.shape)
    return GroundTruth(spec, layers["substrate"], layers["coral"], seed=seed)


def coral_cells(gt: GroundTruth) -> np.ndarray:
    return np.flatnonzero(gt.coral.ravel())


def iter_tiles(spec: GridSpec, size: float) -> Iterable[Rect]:
    """Tile the map with ``size`` squares from the origin; edge tiles are clipped."""
    nx = int(np.ceil(spec.width_m / size - 1e-9))
    ny = int(np.ceil(spec.height_m / size - 1e-9))
    for j in range(ny):
        for i in range(nx):
            yield Rect(i * size, j * size, min((i + 1) * size, spec.width_m),
                       min((j + 1) * size, spec.height_m))
