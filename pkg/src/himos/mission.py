"""Closed-loop mission simulation, logging, export and batch sweeps."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .baselines import MctsConfig, _FootprintTable, boustrophedon_next, lawnmower_plan, mcts_plan
from .belief import BeliefState, extract_candidates, update_dlc_arrays, update_scout_arrays
from .global_planner import GlobalDirective, GlobalPlannerConfig, GpHyper, SpatialGraph, plan_global
from .local_planner import (LocalPlannerConfig, ProxySensorParams, build_active_map,
                            kinematics_step, optimize_trajectory)
from .sensors import DlcSpec, RobotState, ScoutSensorSpec, sample_dlc_arrays, sample_scout_arrays
from .world import GroundTruth, MapGenConfig, generate_map, load_map

PLANNERS = ("himos", "boustrophedon", "mcts")


class ConfigError(ValueError):
    """Invalid mission configuration; ``path`` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.detail = message

    def as_dict(self) -> dict:
        return {"error": "ConfigError", "path": self.path, "message": self.detail}


# ------------------------------------------------------------------ config

@dataclass
class MissionConfig:
    t_total: float = 2000.0
    dt: float = 0.5
    n_exec: int = 4
    planner: str = "himos"
    seed: int = 0
    start: tuple | None = None  # (x, y, theta); drawn from the seed when absent
    map_file: str | None = None
    map: MapGenConfig = field(default_factory=MapGenConfig)
    v_max: float = 0.5
    omega_max: float = 1.0
    fls: ScoutSensorSpec = field(default_factory=lambda: ScoutSensorSpec("FLS", 6.0, 90.0, 0.1, 0.1, "substrate"))
    flc: ScoutSensorSpec = field(default_factory=lambda: ScoutSensorSpec("FLC", 2.5, 60.0, 0.15, 0.15, "coral"))
    dlc: DlcSpec = field(default_factory=DlcSpec)
    global_planner: GlobalPlannerConfig = field(default_factory=lambda: GlobalPlannerConfig(max_iter=10))
    local_planner: LocalPlannerConfig = field(default_factory=lambda: LocalPlannerConfig(max_iter=12))
    mcts: MctsConfig = field(default_factory=MctsConfig)
    swath: float = 1.0
    stall_factor: float = 3.0
    deterministic: bool = True  # wall-clock caps off, so a seed fixes the whole run

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.t_total > 0:
            raise ConfigError("must be > 0", "mission.t_total")
        if not self.dt > 0:
            raise ConfigError("must be > 0", "mission.dt")
        if int(self.n_exec) != self.n_exec or self.n_exec < 1:
            raise ConfigError("must be an integer >= 1", "mission.n_exec")
        if self.planner not in PLANNERS:
            raise ConfigError(f"must be one of {list(PLANNERS)}", "mission.planner")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ConfigError("limits must be > 0", "robot")
        if self.start is not None and len(self.start) not in (2, 3):
            raise ConfigError("expected [x, y] or [x, y, theta]", "mission.start")
        if self.stall_factor <= 0:
            raise ConfigError("must be > 0", "mission.stall_factor")

    def with_overrides(self, **kw) -> MissionConfig:
        return dataclasses.replace(self, **kw)

    def load_ground_truth(self) -> GroundTruth:
        return load_map(self.map_file) if self.map_file else generate_map(self.map)


_SECTIONS = {
    "mission": ("t_total", "dt", "n_exec", "planner", "seed", "start", "stall_factor", "deterministic"),
    "robot": ("v_max", "omega_max"),
}


def _build(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", path)
    kw = dict(data)
    if "n_blobs" in kw and isinstance(kw["n_blobs"], list):
        kw["n_blobs"] = tuple(kw["n_blobs"])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def config_from_dict(data: dict) -> MissionConfig:
    """Build a config from the nested document layout (see ``default_config_dict``)."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    known = set(_SECTIONS) | {"map", "sensors", "global_planner", "local_planner", "mcts", "boustrophedon"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown sections {unknown}")
    kw = {}
    for sec, keys in _SECTIONS.items():
        block = data.get(sec) or {}
        if not isinstance(block, dict):
            raise ConfigError("expected a mapping", sec)
        bad = sorted(set(block) - set(keys))
        if bad:
            raise ConfigError(f"unknown keys {bad}", sec)
        kw.update(block)
    if "start" in kw and kw["start"] is not None:
        kw["start"] = tuple(float(v) for v in kw["start"])
    m = dict(data.get("map") or {})
    if "file" in m:
        kw["map_file"] = m.pop("file")
    kw["map"] = _build(MapGenConfig, m, "map")
    sensors = data.get("sensors") or {}
    for name, default in (("fls", ("FLS", "substrate")), ("flc", ("FLC", "coral"))):
        if name in sensors:
            block = {"name": default[0], "target_layer": default[1], **sensors[name]}
            kw[name] = _build(ScoutSensorSpec, block, f"sensors.{name}")
    if "dlc" in sensors:
        kw["dlc"] = _build(DlcSpec, sensors["dlc"], "sensors.dlc")
    g = dict(data.get("global_planner") or {})
    gp = _build(GpHyper, g.pop("gp", None), "global_planner.gp")
    kw["global_planner"] = _build(GlobalPlannerConfig, {"max_iter": 10, **g, "gp": gp}, "global_planner")
    lp = dict(data.get("local_planner") or {})
    proxy = _build(ProxySensorParams, lp.pop("proxy", None), "local_planner.proxy")
    kw["local_planner"] = _build(LocalPlannerConfig, {"max_iter": 12, **lp, "proxy": proxy}, "local_planner")
    kw["mcts"] = _build(MctsConfig, data.get("mcts"), "mcts")
    b = data.get("boustrophedon") or {}
    if set(b) - {"swath"}:
        raise ConfigError(f"unknown keys {sorted(set(b) - {'swath'})}", "boustrophedon")
    if "swath" in b:
        kw["swath"] = b["swath"]
    try:
        return MissionConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> MissionConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", os.fspath(path)) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}", os.fspath(path)) from None
    return config_from_dict(data)


def default_config_dict() -> dict:
    """The shipped defaults in document form (round-trips through ``config_from_dict``)."""
    c = MissionConfig()
    lp = dataclasses.asdict(c.local_planner)
    for k in ("fls", "flc", "dlc"):
        lp.pop(k)
    gpl = dataclasses.asdict(c.global_planner)
    mc = dataclasses.asdict(c.mcts)
    mc.pop("dlc")
    mp = dataclasses.asdict(c.map)
    for k in ("n_blobs", "blob_radius_mean", "blob_radius_std", "substrate_fill_target", "coral_density"):
        mp.pop(k)

    def sensor(s):
        d = dataclasses.asdict(s)
        d.pop("name")
        d.pop("target_layer")
        return d

    return {
        "mission": {k: getattr(c, k) for k in _SECTIONS["mission"]},
        "robot": {"v_max": c.v_max, "omega_max": c.omega_max},
        "map": mp,
        "sensors": {"fls": sensor(c.fls), "flc": sensor(c.flc), "dlc": dataclasses.asdict(c.dlc)},
        "global_planner": gpl,
        "local_planner": lp,
        "mcts": mc,
        "boustrophedon": {"swath": c.swath},
    }


# ---------------------------------------------------------------- logging

@dataclass
class MissionLog:
    run_id: str
    planner: str
    seed: int
    n_targets: int
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    distance: list = field(default_factory=list)
    events: list = field(default_factory=list)  # planner events; deterministic content only
    local_solve_times: list = field(default_factory=list)  # wall-clock, not part of the fingerprint
    global_solve_times: list = field(default_factory=list)
    wall_time: float = 0.0  # seconds spent simulating this run; not part of the fingerprint
    difficulty: str | None = None
    error: str | None = None

    @property
    def final_samples(self) -> int:
        return self.samples[-1] if self.samples else 0

    @property
    def ratio(self) -> float | None:
        return self.final_samples / self.n_targets if self.n_targets else None

    def ratio_series(self) -> np.ndarray:
        s = np.asarray(self.samples, dtype=float)
        return s / self.n_targets if self.n_targets else np.full(s.shape, np.nan)

    def summary(self) -> dict:
        return {
            "run_id": self.run_id, "planner": self.planner, "seed": self.seed,
            "difficulty": self.difficulty, "n_targets": self.n_targets,
            "samples": self.final_samples, "ratio": self.ratio,
            "final_t": self.t[-1] if self.t else 0.0,
            "distance": self.distance[-1] if self.distance else 0.0,
            "n_global_plans": sum(1 for e in self.events if e["kind"] == "global"),
            "n_local_plans": sum(1 for e in self.events if e["kind"] == "local"),
            "error": self.error,
        }

    def deterministic_payload(self) -> dict:
        return {k: getattr(self, k) for k in
                ("run_id", "planner", "seed", "n_targets", "t", "x", "y", "theta", "samples",
                 "distance", "events", "difficulty", "error")}

    def fingerprint(self) -> str:
        blob = json.dumps(self.deterministic_payload(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, MissionLog):
            return NotImplemented
        return self.deterministic_payload() == other.deterministic_payload()


def has_reached(state: RobotState, directive: GlobalDirective) -> bool:
    return directive.region.contains(state.x, state.y)


# ----------------------------------------------------------------- the loop

def _start_state(cfg: MissionConfig, gt: GroundTruth, rng) -> RobotState:
    W, H = gt.spec.width_m, gt.spec.height_m
    if cfg.start is not None:
        x, y = float(cfg.start[0]), float(cfg.start[1])
        th = float(cfg.start[2]) if len(cfg.start) > 2 else 0.0
        if not (0 <= x < W and 0 <= y < H):
            raise ConfigError("start outside the map", "mission.start")
        return RobotState(x, y, th)
    return RobotState(float(rng.uniform(0, W)), float(rng.uniform(0, H)),
                      float(rng.uniform(-math.pi, math.pi)))


class _World:
    """Mutable simulation state: robot, belief, sensor rng, counters."""

    def __init__(self, cfg: MissionConfig, gt: GroundTruth, state: RobotState, rng):
        self.cfg, self.gt, self.state, self.rng = cfg, gt, state, rng
        self.belief = BeliefState(gt.spec)
        self.samples = 0
        self.distance = 0.0

    def sense(self) -> None:
        gt, st, b = self.gt, self.state, self.belief
        for spec in (self.cfg.fls, self.cfg.flc):
            idx, z, d = sample_scout_arrays(gt, st, spec, self.rng)
            if idx.size:
                update_scout_arrays(b, idx, z, d, spec)
        idx, z = sample_dlc_arrays(gt, st, self.cfg.dlc)
        if idx.size:
            self.samples += update_dlc_arrays(b, idx, z)

    def step(self, u) -> None:
        W, H = self.gt.spec.width_m, self.gt.spec.height_m
        u = np.asarray(u, dtype=float).copy()
        u[:2] = np.clip(u[:2], -self.cfg.v_max, self.cfg.v_max)
        u[2] = np.clip(u[2], -self.cfg.omega_max, self.cfg.omega_max)
        nxt = kinematics_step(self.state, u, self.cfg.dt)
        # clamp to the map; the motion component into the wall is simply lost
        nx = min(max(nxt.x, 0.0), W - 1e-6)
        ny = min(max(nxt.y, 0.0), H - 1e-6)
        self.distance += math.hypot(nx - self.state.x, ny - self.state.y)
        self.state = RobotState(nx, ny, nxt.theta)


def run_mission(cfg: MissionConfig, gt: GroundTruth | None = None, run_id: str | None = None) -> MissionLog:
    """Simulate one mission; the result is a pure function of ``cfg`` (and ``gt``) when deterministic."""
    t_start = time.perf_counter()
    cfg.validate()
    gt = gt if gt is not None else cfg.load_ground_truth()
    ss = np.random.SeedSequence(cfg.seed)
    rng_start, rng_sense, rng_plan = (np.random.default_rng(s) for s in ss.spawn(3))
    state = _start_state(cfg, gt, rng_start)
    world = _World(cfg, gt, state, rng_sense)
    difficulty = None if cfg.map_file else cfg.map.difficulty
    log = MissionLog(run_id or f"{cfg.planner}-{difficulty or 'file'}-m{gt.seed}-s{cfg.seed}",
                     cfg.planner, cfg.seed, gt.n_coral, difficulty=difficulty)
    n_steps = int(math.floor(cfg.t_total / cfg.dt + 1e-9))

    def record(k):
        s = world.state
        log.t.append(k * cfg.dt)
        log.x.append(s.x)
        log.y.append(s.y)
        log.theta.append(s.theta)
        log.samples.append(world.samples)
        log.distance.append(world.distance)

    world.sense()
    record(0)
    if cfg.planner == "himos":
        _run_himos(cfg, world, log, record, n_steps, rng_plan)
    elif cfg.planner == "boustrophedon":
        _run_boustrophedon(cfg, world, record, n_steps)
    else:
        _run_mcts(cfg, world, log, record, n_steps, rng_plan)
    log.wall_time = time.perf_counter() - t_start
    return log


def _execute(world, controls, k, n_steps, record, on_step=None) -> int:
    for u in controls:
        if k >= n_steps:
            break
        world.step(u)
        world.sense()
        k += 1
        record(k)
        if on_step is not None:
            on_step()
    return k


def _run_himos(cfg, world, log, record, n_steps, rng):
    graph = SpatialGraph(world.gt.spec, cfg.global_planner.macro_size, cfg.global_planner.micro_size)
    lp = dataclasses.replace(cfg.local_planner, dt=cfg.dt, v_max=cfg.v_max, omega_max=cfg.omega_max,
                             n_exec=cfg.n_exec, fls=cfg.fls, flc=cfg.flc, dlc=cfg.dlc)
    directive, issued_at, reached = None, 0, False
    warm = None
    k = 0

    def replan(reason):
        nonlocal directive, issued_at, reached, warm
        t_rem = (n_steps - k) * cfg.dt
        directive, rec = plan_global(world.state, world.belief, t_rem, graph, cfg.global_planner,
                                     rng=rng, deterministic=cfg.deterministic, t_min=cfg.dt)
        issued_at, reached, warm = k, has_reached(world.state, directive), None
        log.global_solve_times.append(rec.solve_time)
        ev = {"kind": "global", "t": k * cfg.dt, "reason": reason, "target": directive.node_id,
              "t_local": directive.t_local}
        ev.update({key: v for key, v in rec.as_dict().items() if key != "solve_time"})
        log.events.append(ev)

    def watch():
        nonlocal reached
        if directive is not None and not reached and has_reached(world.state, directive):
            reached = True

    while k < n_steps:
        if directive is None:
            replan("start")
        guard = 0
        while reached and guard < len(graph.active_nodes()) + 1:
            graph.visited.add(directive.node_id)
            replan("reached")
            guard += 1
        elapsed = (k - issued_at) * cfg.dt
        if elapsed > cfg.stall_factor * directive.t_local:
            replan("stall")
            elapsed = 0.0
        t_left = max(directive.t_local - elapsed, cfg.dt)
        cands = extract_candidates(world.belief, lp.delta)
        active = build_active_map(world.belief, lp.proxy.pooling)
        plan = optimize_trajectory(world.state, world.belief, cands, directive.center, t_left, lp,
                                   warm_start=warm, active=active, deterministic=cfg.deterministic)
        log.local_solve_times.append(plan.solve_time)
        log.events.append({"kind": "local", "t": k * cfg.dt, "H": plan.H, "iterations": plan.iterations,
                           "converged": plan.converged, "diverged": plan.diverged,
                           "cost": plan.cost, "terms": plan.terms, "n_candidates": len(cands)})
        n = min(cfg.n_exec, n_steps - k)
        k = _execute(world, plan.controls[:n], k, n_steps, record, watch)
        warm = plan.controls[n:] if plan.H > n else None


def _run_boustrophedon(cfg, world, record, n_steps):
    plan = lawnmower_plan(world.gt.spec, cfg.swath, world.state.p)
    k = 0
    while k < n_steps:
        u, done = boustrophedon_next(world.state, plan, cfg.dt, cfg.v_max, cfg.omega_max)
        if done:
            # coverage finished: hold position for the rest of the budget
            u = np.zeros(3)
        k = _execute(world, [u], k, n_steps, record)


def _run_mcts(cfg, world, log, record, n_steps, rng):
    mc = dataclasses.replace(cfg.mcts, dt=cfg.dt, dlc=cfg.dlc)
    table = _FootprintTable(world.gt.spec, mc.dlc.side_len, mc.heading_bins)
    k = 0
    while k < n_steps:
        res = mcts_plan(world.state, world.belief, mc, rng, deterministic=cfg.deterministic, table=table)
        log.local_solve_times.append(res.solve_time)
        if res.random_fallback:
            log.events.append({"kind": "mcts_fallback", "t": k * cfg.dt})
        k = _execute(world, [res.control], k, n_steps, record)


# ------------------------------------------------------------------ export

CSV_HEADER = ("run_id", "t", "metric", "value")
SERIES = ("samples", "ratio", "distance", "x", "y", "theta")


def _histogram(values, bins: int = 20) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"edges": [], "counts": [], "n": 0}
    counts, edges = np.histogram(v, bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist(), "n": int(v.size),
            "mean": float(v.mean()), "p95": float(np.percentile(v, 95)), "max": float(v.max())}


def timing_report(logs) -> dict:
    loc = [x for lg in logs for x in lg.local_solve_times]
    glo = [x for lg in logs for x in lg.global_solve_times]
    return {"local_solve_s": _histogram(loc), "global_solve_s": _histogram(glo),
            "run_wall_s": {lg.run_id: lg.wall_time for lg in logs}}


def _rows(log: MissionLog):
    ratio = log.ratio_series()
    for i, t in enumerate(log.t):
        vals = {"samples": log.samples[i], "ratio": ratio[i], "distance": log.distance[i],
                "x": log.x[i], "y": log.y[i], "theta": log.theta[i]}
        for m in SERIES:
            v = vals[m]
            yield (log.run_id, t, m, "" if isinstance(v, float) and math.isnan(v) else v)


def export_results(logs, path, fmt: str = "both", bin_s: float = 50.0) -> dict:
    """Write ``<path>.csv`` (tidy: run_id, t, metric, value) and/or ``<path>.json``.

    The JSON holds run summaries, the per-time-bin ratio mean/std per planner and
    difficulty, and solve-time histogram data.  Returns the written paths.
    """
    if isinstance(logs, MissionLog):
        logs = [logs]
    logs = list(logs)
    if fmt not in ("csv", "json", "both"):
        raise ValueError("fmt must be csv, json or both")
    prefix = os.fspath(path)
    if prefix.endswith((".csv", ".json")):
        prefix = os.path.splitext(prefix)[0]
    out = {}
    try:
        parent = os.path.dirname(prefix)
        if parent:
            os.makedirs(parent, exist_ok=True)
        if fmt in ("csv", "both"):
            out["csv"] = prefix + ".csv"
            with open(out["csv"], "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(CSV_HEADER)
                for lg in logs:
                    w.writerows(_rows(lg))
            out["curves_csv"] = prefix + "_curves.csv"
            with open(out["curves_csv"], "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(("planner", "difficulty", "t_bin", "mean_ratio", "std_ratio", "n_runs"))
                for row in aggregate_curves(logs, bin_s):
                    w.writerow([row[k] for k in ("planner", "difficulty", "t_bin", "mean_ratio",
                                                 "std_ratio", "n_runs")])
        if fmt in ("json", "both"):
            out["json"] = prefix + ".json"
            doc = {
                "schema": "himos-results-v1",
                "runs": [lg.summary() for lg in logs],
                "aggregate": aggregate_final(logs),
                "curves": aggregate_curves(logs, bin_s),
                "timing": timing_report(logs),
                "fingerprints": {lg.run_id: lg.fingerprint() for lg in logs},
            }
            with open(out["json"], "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2, default=float)
    except OSError as exc:
        raise OSError(f"failed writing results to {prefix}: {exc}") from exc
    return out


def read_series_csv(path) -> dict:
    """Parse a tidy CSV back into ``{run_id: {metric: [(t, value), ...]}}``."""
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for run_id, t, metric, value in r:
            out.setdefault(run_id, {}).setdefault(metric, []).append(
                (float(t), float(value) if value != "" else float("nan")))
    return out


def _groups(logs):
    g: dict = {}
    for lg in logs:
        if lg.error is None:
            g.setdefault((lg.planner, lg.difficulty), []).append(lg)
    return g


def aggregate_final(logs) -> list[dict]:
    rows = []
    for (planner, diff), group in sorted(_groups(logs).items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        r = np.array([lg.ratio for lg in group if lg.ratio is not None], dtype=float)
        rows.append({"planner": planner, "difficulty": diff, "n_runs": len(group),
                     "mean_ratio": float(r.mean()) if r.size else None,
                     "std_ratio": float(r.std()) if r.size else None})
    return rows


def aggregate_curves(logs, bin_s: float = 50.0) -> list[dict]:
    """Ratio-vs-time mean and std per (planner, difficulty) on a common time grid."""
    rows = []
    for (planner, diff), group in sorted(_groups(logs).items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        group = [lg for lg in group if lg.n_targets and lg.t]
        if not group:
            continue
        t_end = min(lg.t[-1] for lg in group)
        bins = np.arange(0.0, t_end + 1e-9, bin_s)
        mat = []
        for lg in group:
            t = np.asarray(lg.t)
            idx = np.searchsorted(t, bins, side="right") - 1
            mat.append(lg.ratio_series()[np.clip(idx, 0, len(t) - 1)])
        mat = np.array(mat)
        for j, tb in enumerate(bins):
            rows.append({"planner": planner, "difficulty": diff, "t_bin": float(tb),
                         "mean_ratio": float(mat[:, j].mean()), "std_ratio": float(mat[:, j].std()),
                         "n_runs": len(group)})
    return rows


# ------------------------------------------------------------------- sweep

@dataclass
class SweepReport:
    logs: list
    failures: list  # (run_id, message)

    @property
    def summary(self) -> list[dict]:
        return [lg.summary() for lg in self.logs]

    def aggregate(self) -> list[dict]:
        return aggregate_final(self.logs)

    def curves(self, bin_s: float = 50.0) -> list[dict]:
        return aggregate_curves(self.logs, bin_s)


def _sweep_job(args):
    cfg, run_id = args
    try:
        return run_mission(cfg, run_id=run_id)
    except Exception as exc:  # a failed run is recorded, the sweep continues
        gt_targets = 0
        lg = MissionLog(run_id, cfg.planner, cfg.seed, gt_targets,
                        difficulty=None if cfg.map_file else cfg.map.difficulty)
        lg.error = f"{type(exc).__name__}: {exc}"
        return lg


def sweep_jobs(base, seeds, planners, maps=None):
    """Expand (map, seed, planner) into ``(config, run_id)`` pairs.

    ``maps`` is a list of MapGenConfig or map file paths; default is the base map.
    """
    configs = base if isinstance(base, (list, tuple)) else [base]
    jobs = []
    for cfg in configs:
        map_list = maps if maps is not None else [cfg.map_file or cfg.map]
        for m in map_list:
            if isinstance(m, MapGenConfig):
                mcfg = dataclasses.replace(cfg, map=m, map_file=None)
                tag = f"{m.difficulty}-m{m.seed}"
            else:
                mcfg = dataclasses.replace(cfg, map_file=os.fspath(m))
                tag = os.path.splitext(os.path.basename(os.fspath(m)))[0]
            for seed in seeds:
                for planner in planners:
                    c = dataclasses.replace(mcfg, seed=int(seed), planner=planner)
                    jobs.append((c, f"{planner}-{tag}-s{seed}"))
    return jobs


def run_sweep(base, seeds, planners=PLANNERS, maps=None, jobs: int = 1) -> SweepReport:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    for p in planners:
        if p not in PLANNERS:
            raise ConfigError(f"unknown planner {p!r}", "planners")
    work = sweep_jobs(base, seeds, planners, maps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            logs = list(ex.map(_sweep_job, work))
    else:
        logs = [_sweep_job(w) for w in work]
    failures = [(lg.run_id, lg.error) for lg in logs if lg.error]
    return SweepReport(logs, failures)


def log_to_dict(log: MissionLog) -> dict:
    d = log.deterministic_payload()
    d["local_solve_times"] = log.local_solve_times
    d["global_solve_times"] = log.global_solve_times
    d["wall_time"] = log.wall_time
    return d


def log_from_dict(d: dict) -> MissionLog:
    return MissionLog(**d)


def save_log(log: MissionLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(log_to_dict(log), fh, default=float)


def load_log(path) -> MissionLog:
    with open(path, encoding="utf-8") as fh:
        return log_from_dict(json.load(fh))


__all__ = [
    "ConfigError", "MissionConfig", "MissionLog", "SweepReport", "config_from_dict", "load_config",
    "default_config_dict", "has_reached", "run_mission", "export_results", "read_series_csv",
    "run_sweep", "sweep_jobs", "aggregate_final", "aggregate_curves", "timing_report",
    "save_log", "load_log",
]
