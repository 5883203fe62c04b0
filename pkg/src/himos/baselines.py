"""Reference planners: Boustrophedon coverage and a receding-horizon UCT search."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import BeliefState, binary_entropy_logodds
from .sensors import DlcSpec, RobotState, wrap_angle
from .world import GridSpec

# ------------------------------------------------------------ boustrophedon


@dataclass
class LawnmowerPlan:
    waypoints: np.ndarray  # (K, 2)
    swath: float
    index: int = 0

    @property
    def done(self) -> bool:
        return self.index >= len(self.waypoints)


def lawnmower_plan(spec: GridSpec, swath: float = 1.0, start=None) -> LawnmowerPlan:
    """Transects along x spaced ``swath`` apart, starting from the corner nearest ``start``."""
    if swath <= 0:
        raise ValueError("swath must be positive")
    ys = np.arange(swath / 2, spec.height_m, swath)
    x0, x1 = min(swath / 2, spec.width_m / 2), max(spec.width_m - swath / 2, spec.width_m / 2)
    best = None
    for flip_y in (False, True):
        rows = ys[::-1] if flip_y else ys
        for flip_x in (False, True):
            pts = []
            for k, y in enumerate(rows):
                a, b = (x1, x0) if (k % 2 == 0) == flip_x else (x0, x1)
                pts += [(a, y), (b, y)]
            pts = np.array(pts)
            d = 0.0 if start is None else float(np.hypot(*(pts[0] - np.asarray(start)[:2])))
            if best is None or d < best[0] - 1e-12:
                best = (d, pts)
    return LawnmowerPlan(best[1], float(swath))


def boustrophedon_next(state: RobotState, plan: LawnmowerPlan, dt: float, v_max: float = 0.5,
                       omega_max: float = 1.0, k_heading: float = 2.0, tol: float = 0.05,
                       lookahead: float = 0.5):
    """Proportional heading plus saturated surge along the current transect segment.

    The heading target is a point ``lookahead`` metres ahead of the robot's
    projection onto the segment (line-of-sight guidance), so cross-track error
    decays instead of persisting until the waypoint.  Returns ``(control, done)``;
    waypoints are consumed on arrival.
    """
    if len(plan.waypoints) == 0:
        raise ValueError("empty lawnmower plan")
    while not plan.done:
        dx, dy = plan.waypoints[plan.index] - state.p
        dist = math.hypot(dx, dy)
        if dist > tol:
            break
        plan.index += 1
    if plan.done:
        return np.zeros(3), True
    goal = plan.waypoints[plan.index]
    aim = goal
    if plan.index > 0:
        a = plan.waypoints[plan.index - 1]
        seg = goal - a
        seg_len = math.hypot(*seg)
        if seg_len > 1e-9:
            along = float(np.dot(state.p - a, seg)) / seg_len
            t = min(max(along + lookahead, 0.0), seg_len)
            aim = a + seg * (t / seg_len)
    ax, ay = aim - state.p
    err = wrap_angle(math.atan2(ay, ax) - state.theta) if math.hypot(ax, ay) > 1e-9 else 0.0
    omega = float(np.clip(k_heading * err, -omega_max, omega_max))
    surge = min(v_max * max(math.cos(err), 0.0), dist / dt)
    # keep the turning circle small enough to reach the aim point instead of orbiting it
    if abs(math.sin(err)) > 1e-9:
        surge = min(surge, omega_max * math.hypot(ax, ay) / (2 * abs(math.sin(err))))
    return np.array([surge, 0.0, omega]), False


# -------------------------------------------------------------------- MCTS


@dataclass
class MctsConfig:
    v: float = 0.5
    omega: float = 1.0
    dt: float = 0.5
    depth: int = 20
    discount: float = 0.95
    c_uct: float = 1.0
    n_sims: int = 64
    time_cap_s: float | None = 0.5
    info_weight: float = 0.1
    heading_bins: int = 16
    dlc: DlcSpec = field(default_factory=DlcSpec)

    def __post_init__(self):
        if self.time_cap_s is not None and self.time_cap_s <= 0:
            raise ValueError("time_cap_s must be positive")
        if self.depth < 1 or self.n_sims < 0:
            raise ValueError("bad depth or simulation count")

    @property
    def actions(self) -> np.ndarray:
        v, w = self.v, self.omega
        vd = v / math.sqrt(2)
        return np.array([
            [v, 0, 0], [0, v, 0], [0, -v, 0], [vd, vd, 0], [vd, -vd, 0],
            [v, 0, w / 2], [v, 0, -w / 2], [v, 0, w], [v, 0, -w],
        ], dtype=float)


class _FootprintTable:
    """Footprint cell offsets per heading bin, for a robot snapped to the nearest grid vertex."""

    def __init__(self, spec: GridSpec, side: float, bins: int):
        cs = spec.cell_size
        half = side / 2
        reach = int(math.ceil(half * math.sqrt(2) / cs)) + 1
        off = np.arange(-reach, reach)
        dc, dr = np.meshgrid(off, off, indexing="xy")
        dc, dr = dc.ravel(), dr.ravel()
        cx, cy = (dc + 0.5) * cs, (dr + 0.5) * cs
        tabs = []
        for b in range(bins):
            th = 2 * math.pi * b / bins
            lon = math.cos(th) * cx + math.sin(th) * cy
            lat = -math.sin(th) * cx + math.cos(th) * cy
            ok = (np.abs(lon) <= half + 1e-9) & (np.abs(lat) <= half + 1e-9)
            tabs.append(np.stack([dc[ok], dr[ok]], axis=1))
        width = max(len(t) for t in tabs)
        self.dc = np.zeros((bins, width), dtype=np.int64)
        self.dr = np.zeros((bins, width), dtype=np.int64)
        self.valid = np.zeros((bins, width), dtype=bool)
        for b, t in enumerate(tabs):
            self.dc[b, :len(t)], self.dr[b, :len(t)] = t[:, 0], t[:, 1]
            self.valid[b, :len(t)] = True
        self.spec, self.bins = spec, bins

    def cells(self, poses) -> np.ndarray:
        """(K, W) flat cell indices (-1 where outside the map) for (K, 3) poses."""
        cs = self.spec.cell_size
        vc = np.rint(poses[:, 0] / cs).astype(np.int64)
        vr = np.rint(poses[:, 1] / cs).astype(np.int64)
        b = np.rint(np.mod(poses[:, 2], 2 * math.pi) / (2 * math.pi / self.bins)).astype(np.int64) % self.bins
        col = vc[:, None] + self.dc[b]
        row = vr[:, None] + self.dr[b]
        ok = self.valid[b] & (col >= 0) & (col < self.spec.cols) & (row >= 0) & (row < self.spec.rows)
        return np.where(ok, row * self.spec.cols + col, -1)


def _advance(pose, ctrl, dt, width, height):
    """Body-frame kinematics for one pose tuple, with position clamping."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    nx = min(max(x + (c * ctrl[0] - s * ctrl[1]) * dt, 0.0), width - 1e-6)
    ny = min(max(y + (s * ctrl[0] + c * ctrl[1]) * dt, 0.0), height - 1e-6)
    return (nx, ny, th + ctrl[2] * dt)


class _Node:
    __slots__ = ("pose", "children", "n", "w", "untried")

    def __init__(self, pose, n_actions, rng):
        self.pose = pose
        self.children: dict[int, _Node] = {}
        self.n = 0
        self.w = 0.0
        self.untried = list(rng.permutation(n_actions))


@dataclass
class MctsResult:
    control: np.ndarray
    action: int
    n_sims: int
    root_values: np.ndarray  # mean return per root action (nan if unvisited)
    visits: np.ndarray
    random_fallback: bool
    solve_time: float


def mcts_plan(state: RobotState, belief: BeliefState, cfg: MctsConfig, rng: np.random.Generator,
              deterministic: bool = False, table: _FootprintTable | None = None) -> MctsResult:
    """UCT over the discrete action set; returns the most visited root action.

    Step reward is the coral probability mass newly swept by the DLC footprint
    plus ``info_weight`` times the coral entropy it removes, both over unsampled cells.
    In deterministic mode exactly ``n_sims`` simulations run; otherwise the wall cap applies too.
    """
    t0 = time.perf_counter()
    spec = belief.spec
    table = table or _FootprintTable(spec, cfg.dlc.side_len, cfg.heading_bins)
    acts = [tuple(a) for a in cfg.actions.tolist()]
    nA = len(acts)
    pc = 1.0 / (1.0 + np.exp(-belief.ell_c))
    gain_cell = np.where(belief.xi, 0.0, pc + cfg.info_weight * binary_entropy_logodds(belief.ell_c))
    gamma = cfg.discount ** np.arange(cfg.depth)
    root = _Node((state.x, state.y, state.theta), nA, rng)
    W, Hm = spec.width_m, spec.height_m
    ret_scale = 1e-12
    n_done = 0
    while n_done < cfg.n_sims:
        if not deterministic and cfg.time_cap_s is not None and time.perf_counter() - t0 > cfg.time_cap_s:
            break
        # selection / expansion
        path, node, acts_taken, poses = [root], root, [], []
        while len(acts_taken) < cfg.depth:
            if node.untried:
                a = int(node.untried.pop())
                child = _Node(_advance(node.pose, acts[a], cfg.dt, W, Hm), nA, rng)
                node.children[a] = child
                path.append(child)
                acts_taken.append(a)
                poses.append(child.pose)
                break
            logn = math.log(node.n)
            best, best_a = -math.inf, -1
            for a, ch in node.children.items():
                u = ch.w / ch.n / ret_scale + cfg.c_uct * math.sqrt(logn / ch.n)
                if u > best:
                    best, best_a = u, a
            node = node.children[best_a]
            path.append(node)
            acts_taken.append(best_a)
            poses.append(node.pose)
        # random rollout to full depth
        k = len(acts_taken)
        pose = poses[-1]
        roll = rng.integers(nA, size=cfg.depth - k)
        for a in roll:
            pose = _advance(pose, acts[a], cfg.dt, W, Hm)
            poses.append(pose)
        cells = table.cells(np.array(poses))  # (depth, Wf)
        flat = cells.ravel()
        step = np.repeat(np.arange(cfg.depth), cells.shape[1])
        ok = flat >= 0
        uniq, first = np.unique(flat[ok], return_index=True)
        r = np.bincount(step[ok][first], weights=gain_cell[uniq], minlength=cfg.depth)
        # discounted return from each depth onward
        disc = np.cumsum((r * gamma)[::-1])[::-1] / gamma
        ret_scale = max(ret_scale, float(disc[0]))
        for d, nd in enumerate(path):
            nd.n += 1
            if d > 0:
                nd.w += disc[d - 1]
        n_done += 1
    visits = np.array([root.children[a].n if a in root.children else 0 for a in range(nA)])
    values = np.array([root.children[a].w / root.children[a].n if a in root.children and root.children[a].n
                       else np.nan for a in range(nA)])
    fallback = n_done == 0
    if fallback:
        action = int(rng.integers(nA))
    else:
        top = np.flatnonzero(visits == visits.max())
        if len(top) > 1:
            # break visit ties by value, then by rng
            vals = values[top]
            top = top[vals >= np.nanmax(vals) - 1e-12]
        action = int(top[rng.integers(len(top))]) if len(top) > 1 else int(top[0])
    return MctsResult(np.array(acts[action]), action, n_done, values, visits, fallback,
                      time.perf_counter() - t0)
