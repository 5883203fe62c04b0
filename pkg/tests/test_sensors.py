from __future__ import annotations

import math

import numpy as np
import pytest

from himos.sensors import (FLC_DEFAULT, FLS_DEFAULT, DlcSpec, RobotState, ScoutSensorSpec,
                           footprint_cells, sample_dlc, sample_scout, sample_scout_arrays,
                           scan_sector, soft_clip, visible_cells_sector, wrap_angle)
from himos.world import GridSpec, GroundTruth


def _brute_sector(grid, state, spec):
    out = []
    for i, (x, y) in enumerate(grid.centers()):
        d = math.hypot(x - state.x, y - state.y)
        if d > spec.r_max:
            continue
        if d == 0:
            out.append(i)
            continue
        bearing = math.atan2(y - state.y, x - state.x) - state.theta
        bearing = math.atan2(math.sin(bearing), math.cos(bearing))
        if abs(bearing) <= spec.half_fov + 1e-12:
            out.append(i)
    return np.array(out, dtype=np.int64)


@pytest.mark.parametrize("theta", [0.0, 0.3, -2.0, math.pi])
def test_sector_matches_exhaustive_scan(theta):
    grid = GridSpec(20.0, 20.0, 0.25)
    state = RobotState(10.1, 9.8, theta)
    for spec in (FLS_DEFAULT, FLC_DEFAULT):
        fast = np.sort(visible_cells_sector(state, spec, grid))
        np.testing.assert_array_equal(fast, _brute_sector(grid, state, spec))


def test_fls_sector_cell_count_near_area():
    grid = GridSpec(20.0, 20.0, 0.25)
    n = visible_cells_sector(RobotState(10.0, 10.0, 0.0), FLS_DEFAULT, grid).size
    expected = (math.pi / 4) * 36 / 0.0625
    assert abs(n - expected) / expected < 0.05


def test_sector_ahead_and_behind():
    grid = GridSpec(20.0, 20.0, 0.25)
    state = RobotState(10.125, 10.125, 0.0)
    vis = set(visible_cells_sector(state, FLS_DEFAULT, grid).tolist())
    assert grid.index_of(13.1, 10.1) in vis
    assert grid.index_of(7.1, 10.1) not in vis


def test_sector_includes_cell_at_exact_range():
    grid = GridSpec(20.0, 20.0, 0.5)
    state = RobotState(2.25, 10.25, 0.0)  # cell centre at (8.25, 10.25) is exactly 6 m ahead
    idx, d = scan_sector(state, FLS_DEFAULT, grid)
    assert grid.index_of(8.25, 10.25) in set(idx.tolist())
    assert d.max() <= 6.0


def test_sector_clipped_at_map_edge():
    grid = GridSpec(10.0, 10.0, 0.25)
    assert visible_cells_sector(RobotState(9.99, 5.0, 0.0), FLS_DEFAULT, grid).size < 60


def test_footprint_axis_aligned_counts_sixteen():
    grid = GridSpec(10.0, 10.0, 0.25)
    cells = footprint_cells(RobotState(5.0, 5.0, 0.0), DlcSpec(1.0), grid)
    assert cells.size == 16


def _brute_footprint(grid, state, side):
    c, s = math.cos(state.theta), math.sin(state.theta)
    out = []
    for i, (x, y) in enumerate(grid.centers()):
        dx, dy = x - state.x, y - state.y
        if abs(c * dx + s * dy) <= side / 2 + 1e-12 and abs(-s * dx + c * dy) <= side / 2 + 1e-12:
            out.append(i)
    return np.array(out, dtype=np.int64)


def test_footprint_rotated_matches_oracle_and_radius():
    grid = GridSpec(10.0, 10.0, 0.25)
    rng = np.random.default_rng(0)
    counts = []
    for k in range(400):
        state = RobotState(5 + 0.25 * rng.random(), 5 + 0.25 * rng.random(), math.pi / 4)
        cells = np.sort(footprint_cells(state, DlcSpec(1.0), grid))
        if k < 20:
            np.testing.assert_array_equal(cells, _brute_footprint(grid, state, 1.0))
        ctr = grid.center_of(cells)
        assert np.all(np.hypot(ctr[:, 0] - state.x, ctr[:, 1] - state.y) <= 0.71)
        counts.append(cells.size)
    # a 1 m^2 diamond on a 0.25 m lattice holds 12..18 centres depending on offset; 16 on average
    assert abs(np.mean(counts) - 16) < 0.5
    assert min(counts) >= 12 and max(counts) <= 20


def test_footprint_excludes_cell_past_half_side():
    grid = GridSpec(10.0, 10.0, 0.1)
    cells = set(footprint_cells(RobotState(4.95, 4.95, 0.0), DlcSpec(1.0), grid).tolist())
    assert grid.index_of(5.55, 4.95) not in cells
    assert grid.index_of(5.35, 4.95) in cells


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_footprint_rotation_equivariance(k):
    grid = GridSpec(10.0, 10.0, 0.25)
    base = RobotState(5.0, 5.0, 0.0)
    rot = RobotState(5.0, 5.0, k * math.pi / 2)
    a = footprint_cells(base, DlcSpec(1.0), grid)
    b = footprint_cells(rot, DlcSpec(1.0), grid)
    # quarter turns about a grid vertex map the cell lattice onto itself
    assert set(a.tolist()) == set(b.tolist())


def test_rates_are_monotone_and_discriminating():
    for spec in (FLS_DEFAULT, FLC_DEFAULT):
        d = np.linspace(0, spec.r_max, 101)
        tp, fp = spec.p_tp(d), spec.p_fp(d)
        assert np.all(np.diff(tp) <= 0) and np.all(np.diff(fp) >= 0)
        assert np.all(tp[:-1] - fp[:-1] > 0)
    assert FLS_DEFAULT.p_tp(0.0) == 1.0
    assert FLS_DEFAULT.p_fp(6.0) == pytest.approx(0.1)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScoutSensorSpec("FLS", 6.0, 90.0, 0.0, 0.1, "substrate")
    with pytest.raises(ValueError):
        ScoutSensorSpec("FLS", 6.0, 90.0, 0.6, 0.6, "substrate")
    with pytest.raises(ValueError):
        DlcSpec(0.0)


def test_soft_clip_matches_hard_clip_outside_bands():
    p = np.array([0.0, 0.003, 0.02, 0.5, 0.97, 0.996, 1.0])
    v, _ = soft_clip(p)
    np.testing.assert_allclose(v[[0, 2, 3, 4, 6]], np.clip(p[[0, 2, 3, 4, 6]], 0.01, 0.99))
    assert np.all((v >= 0.01 - 1e-12) & (v <= 0.99 + 1e-12))
    x = np.linspace(0.0, 1.0, 20001)
    val, der = soft_clip(x)
    fd = np.gradient(val, x)
    assert np.max(np.abs(fd[1:-1] - der[1:-1])) < 1e-2
    assert np.all(np.diff(val) >= -1e-15)


def test_wrap_angle_range():
    th = np.linspace(-10, 10, 1001)
    w = wrap_angle(th)
    assert np.all((w > -math.pi) & (w <= math.pi))
    np.testing.assert_allclose(np.cos(w), np.cos(th), atol=1e-12)
    assert wrap_angle(-math.pi) == math.pi


def _one_cell_world(sub, coral):
    grid = GridSpec(7.0, 1.0, 0.5)
    s = np.full(grid.shape, sub, np.uint8)
    c = np.full(grid.shape, coral, np.uint8)
    return GroundTruth(grid, s, c)


def test_scout_rates_at_range_extremes():
    gt = _one_cell_world(1, 0)
    rng = np.random.default_rng(0)
    state = RobotState(0.25, 0.25, 0.0)
    for _ in range(50):
        obs = {o.cell: o for o in sample_scout(gt, state, FLS_DEFAULT, rng)}
        assert obs[gt.spec.index_of(0.25, 0.25)].z == 1  # hard cell, d = 0
    sand = _one_cell_world(0, 0)
    state = RobotState(0.25, 0.25, 0.0)
    far = sand.spec.index_of(6.25, 0.25)
    hits = 0
    n = 20000
    for _ in range(n // 1000):
        for _ in range(1000):
            idx, z, d = sample_scout_arrays(sand, state, FLS_DEFAULT, rng)
            hits += int(z[idx == far][0])
    assert abs(hits / n - 0.1) < 3 * math.sqrt(0.09 / n)


def test_scout_monte_carlo_rate_at_three_metres():
    gt = _one_cell_world(1, 0)
    rng = np.random.default_rng(1)
    state = RobotState(0.25, 0.25, 0.0)
    cell = gt.spec.index_of(3.25, 0.25)
    zs = []
    for _ in range(10000):
        idx, z, d = sample_scout_arrays(gt, state, FLS_DEFAULT, rng)
        zs.append(z[idx == cell][0])
    assert abs(np.mean(zs) - 0.95) < 0.01


def test_scout_observations_within_range_and_targets_layer():
    gt = _one_cell_world(1, 0)
    rng = np.random.default_rng(2)
    obs = sample_scout(gt, RobotState(0.25, 0.25, 0.0), FLC_DEFAULT, rng)
    assert obs and all(o.distance <= FLC_DEFAULT.r_max for o in obs)
    assert all(o.sensor == "FLC" for o in obs)


def test_dlc_is_exact_and_repeatable():
    gt = _one_cell_world(1, 1)
    a = sample_dlc(gt, RobotState(2.0, 0.5, 0.0), DlcSpec(1.0))
    b = sample_dlc(gt, RobotState(2.0, 0.5, 0.0), DlcSpec(1.0))
    assert a == b and all(o.z == 1 for o in a)
    sand = _one_cell_world(0, 0)
    assert all(o.z == 0 for o in sample_dlc(sand, RobotState(2.0, 0.5, 0.0), DlcSpec(1.0)))
