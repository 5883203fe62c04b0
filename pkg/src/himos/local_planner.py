"""Receding-horizon local planner driven by differentiable belief dynamics.

The belief evolution along a candidate trajectory is replaced by a deterministic
surrogate: every active cell accumulates a confidence ``Lambda`` at the rate
``eta(d) * alpha(x)``, where ``eta`` is the average log-odds evidence per
observation at range ``d`` and ``alpha`` is a smooth field-of-view indicator.
The scouting cost telescopes over the horizon, so only the terminal confidence
enters ``J_scout``.  Gradients are propagated analytically (adjoint sweep
through the kinematics), and the control sequence is optimised with
box-constrained L-BFGS.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .belief import BeliefState, CandidateMap
from .sensors import (FLC_DEFAULT, FLS_DEFAULT, DlcSpec, RobotState, ScoutSensorSpec,
                      soft_clip, wrap_angle)

LN2 = math.log(2.0)
# regularises |dp| near the robot so bearing and range stay differentiable
DIST_EPS = 1e-3
# soft range factor is tapered to exactly zero between r_max + 1.5 m and r_max + 2.5 m
TAPER = (1.5, 2.5)


@dataclass(frozen=True)
class ProxySensorParams:
    gamma_d: float = 4.0
    gamma_a: float = 8.0
    epsilon: float = 0.05
    eta_down: float = 1.0
    lambda_sat: float = 1.0
    pooling: int = 4

    def __post_init__(self):
        for k in ("gamma_d", "gamma_a", "epsilon", "eta_down", "lambda_sat"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.pooling < 1:
            raise ValueError("pooling must be >= 1")


@dataclass
class LocalPlannerConfig:
    dt: float = 0.5
    v_max: float = 0.5
    omega_max: float = 1.0
    w_s: float = 1.0
    w_c: float = 10.0
    w_samp: float = 5.0
    delta: float = 0.8
    n_exec: int = 4
    h_max: int = 40
    w_energy: float = 0.01
    w_jerk: float = 0.05
    w_terminal: float = 0.5
    max_iter: int = 30
    solve_cap_s: float | None = 0.5
    reach_margin: float = 2.0
    proxy: ProxySensorParams = field(default_factory=ProxySensorParams)
    fls: ScoutSensorSpec = FLS_DEFAULT
    flc: ScoutSensorSpec = FLC_DEFAULT
    dlc: DlcSpec = field(default_factory=DlcSpec)


# ---------------------------------------------------------------- kinematics

def kinematics_step(x: RobotState, u, dt: float) -> RobotState:
    vx, vy, om = (float(v) for v in u)
    c, s = math.cos(x.theta), math.sin(x.theta)
    return RobotState(x.x + (c * vx - s * vy) * dt, x.y + (s * vx + c * vy) * dt,
                      wrap_angle(x.theta + om * dt))


def rollout_states(x0, U, dt: float) -> np.ndarray:
    """(H+1, 3) states with unwrapped heading; row k is the state before control k."""
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float).reshape(-1, 3)
    H = U.shape[0]
    X = np.empty((H + 1, 3))
    X[0] = x0
    if H == 0:
        return X
    th = x0[2] + dt * np.concatenate([[0.0], np.cumsum(U[:, 2])])
    c, s = np.cos(th[:-1]), np.sin(th[:-1])
    vxw = c * U[:, 0] - s * U[:, 1]
    vyw = s * U[:, 0] + c * U[:, 1]
    X[1:, 0] = x0[0] + dt * np.cumsum(vxw)
    X[1:, 1] = x0[1] + dt * np.cumsum(vyw)
    X[:, 2] = th
    return X


# ---------------------------------------------------------------- proxies

def evidence_magnitude(d, spec: ScoutSensorSpec, with_grad: bool = False):
    """Average absolute log-odds evidence of one observation at range ``d``."""
    d = np.asarray(d, dtype=float)
    ptp, dptp = soft_clip(spec.p_tp(d))
    pfp, dpfp = soft_clip(spec.p_fp(d))
    a = np.log(ptp) - np.log(pfp)
    b = np.log1p(-pfp) - np.log1p(-ptp)
    eta = 0.5 * (np.abs(a) + np.abs(b))
    if not with_grad:
        return eta
    dtp = -dptp * spec.tp_slope / spec.r_max
    dfp = dpfp * spec.fp_slope / spec.r_max
    da = dtp / ptp - dfp / pfp
    db = -dfp / (1 - pfp) + dtp / (1 - ptp)
    return eta, 0.5 * (np.sign(a) * da + np.sign(b) * db)


def h_proxy(lam):
    """Entropy surrogate ln(1 + e^L) - L * sigmoid(L), overflow-safe for large L."""
    lam = np.asarray(lam, dtype=float)
    a = np.abs(lam)
    # identical rewrite for L >= 0: log1p(e^-L) + L * sigmoid(-L); the function is even
    out = np.log1p(np.exp(-a)) + a * expit(-a)
    return float(out) if out.ndim == 0 else out


def h_proxy_grad(lam):
    lam = np.asarray(lam, dtype=float)
    s = expit(lam)
    return -lam * s * (1 - s)


def p_samp(lambda_down, lambda_sat: float = 1.0):
    return -np.expm1(-lambda_sat * np.asarray(lambda_down, dtype=float))


def _sig(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _taper(r, r_max: float, grad: bool):
    """C1 smoothstep that is 1 inside ``r_max + TAPER[0]`` and exactly 0 beyond ``r_max + TAPER[1]``."""
    a, b = r_max + TAPER[0], r_max + TAPER[1]
    t = np.clip((r - a) / (b - a), 0.0, 1.0)
    val = 1.0 - t * t * (3.0 - 2.0 * t)
    if not grad:
        return val
    return val, -6.0 * t * (1.0 - t) / (b - a)


def _sector_alpha(dx, dy, th, spec: ScoutSensorSpec, prm: ProxySensorParams, grad: bool,
                  cs=None):
    """Soft sector visibility times evidence rate for offsets (dx, dy) = cell - robot."""
    r = np.sqrt(dx * dx + dy * dy + DIST_EPS ** 2)
    c, s = (np.cos(th), np.sin(th)) if cs is None else cs
    cosphi = (dx * c + dy * s) / r
    a_rng = _sig(prm.gamma_d * (spec.r_max - r))
    a_brg = _sig(prm.gamma_a * (cosphi - math.cos(spec.half_fov)))
    if not grad:
        return evidence_magnitude(r, spec) * a_rng * a_brg * _taper(r, spec.r_max, False)
    eta, deta = evidence_magnitude(r, spec, with_grad=True)
    tp, dtp = _taper(r, spec.r_max, True)
    inc = eta * a_rng * a_brg * tp
    # d inc / d r  (bearing held fixed) and d inc / d cosphi
    d_r = ((deta * a_rng - eta * prm.gamma_d * a_rng * (1 - a_rng)) * tp + eta * a_rng * dtp) * a_brg
    d_cos = eta * a_rng * tp * prm.gamma_a * a_brg * (1 - a_brg)
    # cosphi = (d . h) / r
    gdx = d_r * dx / r + d_cos * (c / r - cosphi * dx / (r * r))
    gdy = d_r * dy / r + d_cos * (s / r - cosphi * dy / (r * r))
    gth = d_cos * (-dx * s + dy * c) / r
    return inc, gdx, gdy, gth


def _dlc_alpha(dx, dy, th, side: float, eps: float, grad: bool):
    c, s = np.cos(th), np.sin(th)
    lon = c * dx + s * dy
    lat = -s * dx + c * dy
    h = side / 2
    # sigmoid((h - |d|)/eps) written as a smooth two-sided box
    s1, s2 = _sig((h - lon) / eps), _sig((h + lon) / eps)
    s3, s4 = _sig((h - lat) / eps), _sig((h + lat) / eps)
    alpha = s1 * s2 * s3 * s4
    if not grad:
        return alpha
    dlon = alpha * (-(1 - s1) + (1 - s2)) / eps
    dlat = alpha * (-(1 - s3) + (1 - s4)) / eps
    gdx = dlon * c - dlat * s
    gdy = dlon * s + dlat * c
    gth = dlon * lat - dlat * lon
    return alpha, gdx, gdy, gth


def soft_fov(x: RobotState, cell, spec, params: ProxySensorParams = ProxySensorParams()) -> float:
    """Smooth visibility of ``cell`` from pose ``x`` (sector sensor or DLC footprint)."""
    cell = np.asarray(cell, dtype=float)
    dx, dy = cell[..., 0] - x.x, cell[..., 1] - x.y
    if isinstance(spec, DlcSpec):
        return _dlc_alpha(dx, dy, x.theta, spec.side_len, params.epsilon, False)
    r = np.sqrt(dx * dx + dy * dy + DIST_EPS ** 2)
    cosphi = (dx * math.cos(x.theta) + dy * math.sin(x.theta)) / r
    return (expit(params.gamma_d * (spec.r_max - r))
            * expit(params.gamma_a * (cosphi - math.cos(spec.half_fov)))
            * _taper(r, spec.r_max, False))


# ---------------------------------------------------------------- active map

@dataclass
class ActiveMap:
    centers: np.ndarray  # (M, 2)
    lam_fls: np.ndarray  # (M,)
    lam_flc: np.ndarray  # (M,)
    shape: tuple[int, int]
    cell_size: float


def build_active_map(belief: BeliefState, pooling: int = 4) -> ActiveMap:
    rows, cols = belief.spec.shape
    if rows % pooling or cols % pooling:
        raise ValueError(f"pooling {pooling} must divide grid dims {rows}x{cols}")
    R, C = rows // pooling, cols // pooling

    def pool(ell):
        return np.abs(ell).reshape(R, pooling, C, pooling).mean(axis=(1, 3)).ravel()

    cs = belief.spec.cell_size * pooling
    xs = (np.arange(C) + 0.5) * cs
    ys = (np.arange(R) + 0.5) * cs
    gx, gy = np.meshgrid(xs, ys)
    return ActiveMap(np.column_stack([gx.ravel(), gy.ravel()]), pool(belief.ell_s),
                     pool(belief.ell_c), (R, C), cs)


# ---------------------------------------------------------------- proxy rollout

@dataclass
class ProxyBeliefState:
    lambda_fls: np.ndarray
    lambda_flc: np.ndarray
    lambda_down: np.ndarray


def rollout_proxy(x0: RobotState, U, proxy0: ProxyBeliefState, fls_cells, flc_cells, cand_cells,
                  cfg: LocalPlannerConfig = None, hard: bool = False) -> list[ProxyBeliefState]:
    """Deterministic confidence accumulation along the trajectory induced by ``U``.

    ``hard=True`` swaps the smooth field of view for the exact sector/footprint
    indicator and evaluates ``eta`` at the true range.
    """
    cfg = cfg or LocalPlannerConfig()
    X = rollout_states(x0.as_array(), U, cfg.dt)
    prm = cfg.proxy
    fls_cells = np.asarray(fls_cells, dtype=float).reshape(-1, 2)
    flc_cells = np.asarray(flc_cells, dtype=float).reshape(-1, 2)
    cand_cells = np.asarray(cand_cells, dtype=float).reshape(-1, 2)
    out = [ProxyBeliefState(proxy0.lambda_fls.copy(), proxy0.lambda_flc.copy(),
                            proxy0.lambda_down.copy())]
    for k in range(X.shape[0] - 1):
        px, py, th = X[k]
        prev = out[-1]
        nxt = ProxyBeliefState(
            prev.lambda_fls + _scout_rate(fls_cells, px, py, th, cfg.fls, prm, hard),
            prev.lambda_flc + _scout_rate(flc_cells, px, py, th, cfg.flc, prm, hard),
            prev.lambda_down + prm.eta_down * _down_rate(cand_cells, px, py, th, cfg.dlc, prm, hard))
        out.append(nxt)
    return out


def _scout_rate(cells, px, py, th, spec, prm, hard):
    dx, dy = cells[:, 0] - px, cells[:, 1] - py
    if not hard:
        return _sector_alpha(dx, dy, th, spec, prm, False)
    d = np.hypot(dx, dy)
    along = dx * math.cos(th) + dy * math.sin(th)
    vis = (d <= spec.r_max) & ((along >= d * math.cos(spec.half_fov) - 1e-12) | (d < 1e-12))
    return np.where(vis, evidence_magnitude(d, spec), 0.0)


def _down_rate(cells, px, py, th, dlc, prm, hard):
    dx, dy = cells[:, 0] - px, cells[:, 1] - py
    if not hard:
        return _dlc_alpha(dx, dy, th, dlc.side_len, prm.epsilon, False)
    c, s = math.cos(th), math.sin(th)
    h = dlc.side_len / 2 + 1e-12
    return ((np.abs(c * dx + s * dy) <= h) & (np.abs(-s * dx + c * dy) <= h)).astype(float)


# ---------------------------------------------------------------- cost

@dataclass
class LocalProblem:
    """Everything the cost needs, frozen at planning time."""

    x0: np.ndarray  # (3,)
    H: int
    target: np.ndarray  # (2,)
    fls_cells: np.ndarray  # (n_s, 2)
    fls_lam0: np.ndarray
    flc_cells: np.ndarray  # (n_c, 2)
    flc_lam0: np.ndarray
    cand_cells: np.ndarray  # (n_d, 2)
    cfg: LocalPlannerConfig
    cand_weight: np.ndarray | None = None

    def __post_init__(self):
        if self.cand_weight is None:
            self.cand_weight = np.ones(len(self.cand_cells))
        self._h0_fls = h_proxy(self.fls_lam0) if len(self.fls_lam0) else np.zeros(0)
        self._h0_flc = h_proxy(self.flc_lam0) if len(self.flc_lam0) else np.zeros(0)


@dataclass
class CostTerms:
    scout_fls: float
    scout_flc: float
    samp: float
    energy: float
    jerk: float
    terminal: float

    @property
    def scout(self) -> float:
        return self.scout_fls + self.scout_flc

    @property
    def reg(self) -> float:
        return self.energy + self.jerk + self.terminal

    @property
    def total(self) -> float:
        return self.scout + self.samp + self.reg

    def as_dict(self) -> dict:
        return {"scout_fls": self.scout_fls, "scout_flc": self.scout_flc, "samp": self.samp,
                "energy": self.energy, "jerk": self.jerk, "terminal": self.terminal,
                "total": self.total}


def _scout_term(cells, lam0, h0, X, spec, prm, w, need_grad):
    """Returns (J, dJ/dpx[k], dJ/dpy[k], dJ/dth[k]) for k < H.

    Only (step, cell) pairs inside the taper support are evaluated.
    """
    H = X.shape[0] - 1
    if w == 0 or len(cells) == 0 or H == 0:
        z = np.zeros(H)
        return 0.0, z, z, z
    cut = spec.r_max + TAPER[1]
    P = X[:-1, :2]
    lo, hi = P.min(axis=0) - cut, P.max(axis=0) + cut
    sel = np.flatnonzero((cells[:, 0] > lo[0]) & (cells[:, 0] < hi[0])
                         & (cells[:, 1] > lo[1]) & (cells[:, 1] < hi[1]))
    dx = cells[None, sel, 0] - P[:, 0, None]
    dy = cells[None, sel, 1] - P[:, 1, None]
    kk, jj = np.nonzero(dx * dx + dy * dy < cut * cut)
    dx, dy = dx[kk, jj], dy[kk, jj]
    ii = sel[jj]
    th = X[kk, 2]
    cs = (np.cos(X[:, 2])[kk], np.sin(X[:, 2])[kk])
    n = len(cells)
    if not need_grad:
        inc = _sector_alpha(dx, dy, th, spec, prm, False, cs)
        lam_h = lam0 + np.bincount(ii, weights=inc, minlength=n)
        return w * float(np.sum(h_proxy(lam_h) - h0)), None, None, None
    inc, gdx, gdy, gth = _sector_alpha(dx, dy, th, spec, prm, True, cs)
    lam_h = lam0 + np.bincount(ii, weights=inc, minlength=n)
    J = w * float(np.sum(h_proxy(lam_h) - h0))
    g = (w * h_proxy_grad(lam_h))[ii]  # dJ/dinc, identical for every step
    # d(dx)/dpx = -1
    return (J, -np.bincount(kk, weights=gdx * g, minlength=H),
            -np.bincount(kk, weights=gdy * g, minlength=H),
            np.bincount(kk, weights=gth * g, minlength=H))


def evaluate(U, prob: LocalProblem, need_grad: bool = True):
    """Cost, gradient w.r.t. the flattened controls and the per-term breakdown."""
    cfg = prob.cfg
    prm = cfg.proxy
    dt = cfg.dt
    U = np.asarray(U, dtype=float).reshape(prob.H, 3)
    H = prob.H
    X = rollout_states(prob.x0, U, dt)

    Js, gpx_s, gpy_s, gth_s = _scout_term(prob.fls_cells, prob.fls_lam0, prob._h0_fls, X,
                                          cfg.fls, prm, cfg.w_s, need_grad)
    Jc, gpx_c, gpy_c, gth_c = _scout_term(prob.flc_cells, prob.flc_lam0, prob._h0_flc, X,
                                          cfg.flc, prm, cfg.w_c, need_grad)

    # sampling
    Jd = 0.0
    gpx_d = gpy_d = gth_d = np.zeros(H)
    if len(prob.cand_cells) and cfg.w_samp != 0 and H > 0:
        cc = prob.cand_cells
        dx = cc[None, :, 0] - X[:-1, 0, None]
        dy = cc[None, :, 1] - X[:-1, 1, None]
        th = X[:-1, 2, None]
        res = _dlc_alpha(dx, dy, th, cfg.dlc.side_len, prm.epsilon, need_grad)
        alpha = res[0] if need_grad else res
        lam_d = prm.eta_down * alpha.sum(axis=0)
        e = np.exp(-prm.lambda_sat * lam_d)
        Jd = -cfg.w_samp * float(np.sum(prob.cand_weight * (1.0 - e)))
        if need_grad:
            g = -cfg.w_samp * prob.cand_weight * prm.lambda_sat * e * prm.eta_down
            gpx_d, gpy_d, gth_d = -(res[1] @ g), -(res[2] @ g), res[3] @ g

    # regularisation
    Je = cfg.w_energy * float(np.sum(U * U))
    d2 = U[2:] - 2 * U[1:-1] + U[:-2] if H >= 3 else np.zeros((0, 3))
    Jj = cfg.w_jerk * float(np.sum(d2 * d2))
    err = X[-1, :2] - prob.target
    Jt = cfg.w_terminal * float(err @ err)

    terms = CostTerms(Js, Jc, Jd, Je, Jj, Jt)
    if not need_grad:
        return terms.total, None, terms

    # adjoint sweep through the kinematics
    gpx = np.zeros(H + 1)
    gpy = np.zeros(H + 1)
    gth = np.zeros(H + 1)
    gpx[:-1] += gpx_s + gpx_c + gpx_d
    gpy[:-1] += gpy_s + gpy_c + gpy_d
    gth[:-1] += gth_s + gth_c + gth_d
    gpx[-1] += 2 * cfg.w_terminal * err[0]
    gpy[-1] += 2 * cfg.w_terminal * err[1]

    lpx = np.cumsum(gpx[::-1])[::-1]  # adjoint of p_k
    lpy = np.cumsum(gpy[::-1])[::-1]
    th = X[:-1, 2]
    c, s = np.cos(th), np.sin(th)
    nx, ny = lpx[1:], lpy[1:]  # adjoint of p_{k+1}
    gU = np.zeros((H, 3))
    gU[:, 0] = dt * (nx * c + ny * s)
    gU[:, 1] = dt * (-nx * s + ny * c)
    # theta_k influences p_{k+1} through R(theta_k) v_k
    dth_direct = dt * (nx * (-s * U[:, 0] - c * U[:, 1]) + ny * (c * U[:, 0] - s * U[:, 1]))
    gth_total = gth.copy()
    gth_total[:-1] += dth_direct
    lth = np.cumsum(gth_total[::-1])[::-1]
    gU[:, 2] = dt * lth[1:]

    gU += 2 * cfg.w_energy * U
    if H >= 3:
        r = 2 * cfg.w_jerk * d2
        gU[2:] += r
        gU[1:-1] -= 2 * r
        gU[:-2] += r
    return terms.total, gU.ravel(), terms


def cost(U, prob: LocalProblem):
    J, g, _ = evaluate(U, prob, need_grad=True)
    return J, g


# ---------------------------------------------------------------- problem set-up

def horizon_steps(t_local: float, cfg: LocalPlannerConfig) -> int:
    return int(min(max(math.floor(t_local / cfg.dt + 1e-9), 1), cfg.h_max))


def build_problem(x0: RobotState, active: ActiveMap, belief: BeliefState, candidates: CandidateMap,
                  target, H: int, cfg: LocalPlannerConfig) -> LocalProblem:
    p0 = np.array([x0.x, x0.y])
    travel = H * cfg.dt * cfg.v_max * math.sqrt(2)

    def near(pts, radius):
        if len(pts) == 0:
            return np.zeros(0, dtype=bool)
        return np.hypot(pts[:, 0] - p0[0], pts[:, 1] - p0[1]) <= radius

    ms = near(active.centers, cfg.fls.r_max + travel + cfg.reach_margin)
    mc = near(active.centers, cfg.flc.r_max + travel + cfg.reach_margin)
    cand = belief.spec.center_of(candidates.cells) if len(candidates) else np.zeros((0, 2))
    md = near(cand, travel + cfg.dlc.side_len)
    return LocalProblem(
        x0=x0.as_array(), H=H, target=np.asarray(target, dtype=float),
        fls_cells=active.centers[ms], fls_lam0=active.lam_fls[ms],
        flc_cells=active.centers[mc], flc_lam0=active.lam_flc[mc],
        cand_cells=cand[md], cfg=cfg)


def straight_line_seed(x0: RobotState, target, H: int, cfg: LocalPlannerConfig) -> np.ndarray:
    """Constant-velocity straight-line controls toward ``target`` at 0.8 v_max."""
    target = np.asarray(target, dtype=float)
    delta = target - x0.p
    dist = float(np.hypot(*delta))
    U = np.zeros((H, 3))
    if dist < 1e-9:
        return U
    direction = delta / dist
    speed = 0.8 * cfg.v_max
    psi = math.atan2(direction[1], direction[0])
    th = x0.theta
    remaining = dist
    for k in range(H):
        step = min(speed * cfg.dt, remaining)
        remaining -= step
        vw = direction * step / cfg.dt
        c, s = math.cos(th), math.sin(th)
        U[k, 0] = c * vw[0] + s * vw[1]
        U[k, 1] = -s * vw[0] + c * vw[1]
        om = float(np.clip(wrap_angle(psi - th) / cfg.dt, -cfg.omega_max, cfg.omega_max))
        U[k, 2] = om
        th += om * cfg.dt
    return U


@dataclass
class TrajectoryPlan:
    controls: np.ndarray  # (H, 3)
    states: np.ndarray  # (H+1, 3), heading wrapped
    cost: float
    terms: dict
    converged: bool
    iterations: int = 0
    solve_time: float = 0.0
    diverged: bool = False

    @property
    def H(self) -> int:
        return self.controls.shape[0]

    def state(self, k: int) -> RobotState:
        return RobotState(*(float(v) for v in self.states[k]))


def _bounds(H, cfg):
    return [(-cfg.v_max, cfg.v_max), (-cfg.v_max, cfg.v_max), (-cfg.omega_max, cfg.omega_max)] * H


def _project(U, cfg):
    U = np.array(U, dtype=float).reshape(-1, 3)
    U[:, :2] = np.clip(U[:, :2], -cfg.v_max, cfg.v_max)
    U[:, 2] = np.clip(U[:, 2], -cfg.omega_max, cfg.omega_max)
    return U


def solve_problem(prob: LocalProblem, seeds, deterministic: bool = True) -> TrajectoryPlan:
    """Minimise the local cost from the best of ``seeds`` under control box constraints."""
    cfg = prob.cfg
    t0 = time.perf_counter()
    best = {"J": math.inf, "U": None}
    start_J = math.inf
    U0 = None
    for seed in seeds:
        seed = _project(seed, cfg)
        J, _, _ = evaluate(seed, prob, need_grad=False)
        if np.isfinite(J) and J < start_J:
            start_J, U0 = J, seed
    if U0 is None:
        U0 = np.zeros((prob.H, 3))
        start_J = evaluate(U0, prob, need_grad=False)[0]
    best["J"], best["U"] = start_J, U0.ravel().copy()
    diverged = False

    class _Stop(Exception):
        pass

    def fun(u):
        nonlocal diverged
        J, g, _ = evaluate(u, prob, need_grad=True)
        if not np.isfinite(J) or not np.all(np.isfinite(g)):
            diverged = True
            raise _Stop
        if J < best["J"]:
            best["J"], best["U"] = J, u.copy()
        if not deterministic and cfg.solve_cap_s is not None \
                and time.perf_counter() - t0 > cfg.solve_cap_s:
            raise _Stop
        return J, g

    converged = False
    nit = 0
    try:
        res = minimize(fun, U0.ravel(), jac=True, method="L-BFGS-B", bounds=_bounds(prob.H, cfg),
                       options={"maxiter": cfg.max_iter, "ftol": 1e-9, "gtol": 1e-6})
        converged = bool(res.success)
        nit = int(res.nit)
    except _Stop:
        pass
    U = _project(best["U"], cfg)
    X = rollout_states(prob.x0, U, cfg.dt)
    X[:, 2] = wrap_angle(X[:, 2])
    J, _, terms = evaluate(U, prob, need_grad=False)
    return TrajectoryPlan(U, X, J, terms.as_dict(), converged, nit,
                          time.perf_counter() - t0, diverged)


def optimize_trajectory(x0: RobotState, belief: BeliefState, candidates: CandidateMap, target,
                        t_local: float, cfg: LocalPlannerConfig = None, warm_start=None,
                        active: ActiveMap | None = None, deterministic: bool = True) -> TrajectoryPlan:
    """Plan ``H = floor(t_local / dt)`` steps (capped at ``h_max``) toward ``target``."""
    cfg = cfg or LocalPlannerConfig()
    H = horizon_steps(t_local, cfg)
    if active is None:
        active = build_active_map(belief, cfg.proxy.pooling)
    prob = build_problem(x0, active, belief, candidates, target, H, cfg)
    seeds = [straight_line_seed(x0, target, H, cfg)]
    if warm_start is not None and len(warm_start):
        ws = np.asarray(warm_start, dtype=float).reshape(-1, 3)[:H]
        if ws.shape[0] < H:
            ws = np.vstack([ws, np.repeat(ws[-1:], H - ws.shape[0], axis=0)])
        seeds.append(ws)
    return solve_problem(prob, seeds, deterministic=deterministic)
