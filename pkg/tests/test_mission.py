from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np
import pytest
import yaml

from himos.global_planner import GlobalDirective
from himos.mission import (ConfigError, MissionConfig, MissionLog, aggregate_curves, config_from_dict,
                           default_config_dict, export_results, has_reached, load_config, load_log,
                           read_series_csv, run_mission, run_sweep, save_log, sweep_jobs)
from himos.world import MapGenConfig, Rect


def small(planner="himos", seed=0, t_total=60.0, **kw):
    return MissionConfig(planner=planner, seed=seed, t_total=t_total,
                         map=MapGenConfig(seed=1, width_m=20.0, height_m=20.0), **kw)


def check_invariants(log: MissionLog, cfg: MissionConfig):
    t = np.asarray(log.t)
    s = np.asarray(log.samples)
    assert t[-1] <= cfg.t_total + 1e-9
    assert len(t) - 1 <= math.floor(cfg.t_total / cfg.dt + 1e-9)
    assert np.all(np.diff(s) >= 0)
    assert s[-1] <= log.n_targets
    step = np.hypot(np.diff(log.x), np.diff(log.y))
    assert np.all(step <= math.sqrt(2) * cfg.v_max * cfg.dt + 1e-9)
    assert np.all(np.diff(log.distance) >= 0)


@pytest.mark.parametrize("planner", ["himos", "boustrophedon", "mcts"])
def test_short_mission_invariants_and_determinism(planner):
    cfg = small(planner, seed=3, t_total=40.0)
    a = run_mission(cfg)
    b = run_mission(cfg)
    check_invariants(a, cfg)
    assert a == b and a.fingerprint() == b.fingerprint()
    assert len(a.t) == 81


def test_full_budget_step_count():
    cfg = MissionConfig(planner="boustrophedon", seed=0, t_total=2000.0)
    log = run_mission(cfg)
    assert len(log.t) == 4001 and log.t[-1] == 2000.0
    check_invariants(log, cfg)


def test_zero_coral_map_reports_null_ratio():
    cfg = dataclasses.replace(small("boustrophedon", t_total=20.0),
                              map=MapGenConfig(seed=0, width_m=20.0, height_m=20.0, coral_density=0.0))
    log = run_mission(cfg)
    assert log.n_targets == 0 and log.ratio is None
    assert log.summary()["ratio"] is None


def test_himos_events_are_event_triggered():
    cfg = small("himos", seed=2, t_total=120.0)
    log = run_mission(cfg)
    glob = [e for e in log.events if e["kind"] == "global"]
    loc = [e for e in log.events if e["kind"] == "local"]
    assert glob[0]["reason"] == "start" and glob[0]["t"] == 0.0
    assert {e["reason"] for e in glob} <= {"start", "reached", "stall"}
    assert all(0 < e["t_local"] <= cfg.t_total - e["t"] + 1e-9 for e in glob)
    # each local cycle executes min(N_exec, H) steps before the next one
    t_loc = [e["t"] for e in loc] + [cfg.t_total]
    for e, t0, t1 in zip(loc, t_loc, t_loc[1:]):
        assert round((t1 - t0) / cfg.dt) == min(cfg.n_exec, e["H"], round((cfg.t_total - t0) / cfg.dt))
    assert len(log.local_solve_times) == len(loc) and len(log.global_solve_times) == len(glob)
    check_invariants(log, cfg)


def test_has_reached_boundaries():
    d = GlobalDirective(0, np.array([3.0, 3.0]), Rect(2.0, 2.0, 4.0, 4.0), 10.0)
    from himos.sensors import RobotState
    assert has_reached(RobotState(3.0, 3.0), d)
    assert not has_reached(RobotState(4.01, 3.0), d)
    assert not has_reached(RobotState(4.0, 3.0), d)
    assert has_reached(RobotState(2.0, 2.0), d)


def test_config_validation():
    with pytest.raises(ConfigError):
        MissionConfig(t_total=0)
    with pytest.raises(ConfigError):
        MissionConfig(dt=-1)
    with pytest.raises(ConfigError):
        MissionConfig(n_exec=0)
    with pytest.raises(ConfigError):
        MissionConfig(planner="random")
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"mission": {"t_totl": 5}})
    assert exc.value.path == "mission"
    with pytest.raises(ConfigError):
        config_from_dict({"sensors": {"fls": {"tp_slope": 2.0}}})
    with pytest.raises(ConfigError):
        config_from_dict({"colour": {}})


def test_start_outside_map_rejected_before_stepping():
    with pytest.raises(ConfigError):
        run_mission(small("boustrophedon", start=(100.0, 1.0)))


def test_default_document_round_trips(tmp_path):
    doc = default_config_dict()
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(doc))
    cfg = load_config(p)
    assert cfg == MissionConfig()
    assert cfg.local_planner.w_c == 10.0 and cfg.global_planner.c_time == 6.0
    assert cfg.fls.r_max == 6.0 and cfg.flc.fov_deg == 60.0


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("mission: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_export_round_trip(tmp_path):
    cfg = small("boustrophedon", t_total=20.0)
    log = run_mission(cfg)
    paths = export_results([log], tmp_path / "out")
    series = read_series_csv(paths["csv"])[log.run_id]
    assert [v for _, v in series["samples"]] == [float(s) for s in log.samples]
    assert [t for t, _ in series["x"]] == log.t
    assert [v for _, v in series["x"]] == log.x
    assert [v for _, v in series["distance"]] == log.distance


def test_export_empty_log_is_header_only(tmp_path):
    empty = MissionLog("empty", "himos", 0, 0)
    paths = export_results([empty], tmp_path / "e")
    with open(paths["csv"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["run_id", "t", "metric", "value"]]


def test_export_reports_io_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as exc:
        export_results([MissionLog("a", "himos", 0, 0)], blocker / "sub" / "out")
    assert str(blocker) in str(exc.value)


def test_log_save_load_is_exact(tmp_path):
    log = run_mission(small("himos", t_total=20.0))
    save_log(log, tmp_path / "log.json")
    back = load_log(tmp_path / "log.json")
    assert back == log and back.fingerprint() == log.fingerprint()


def test_sweep_counts_and_reproducible():
    base = small(t_total=10.0)
    rep = run_sweep(base, seeds=[0, 1, 2], planners=["boustrophedon", "mcts"])
    assert len(rep.logs) == 6 and len(rep.summary) == 6 and not rep.failures
    again = run_sweep(base, seeds=[0, 1, 2], planners=["boustrophedon", "mcts"])
    assert rep.aggregate() == again.aggregate()
    curves = rep.curves(5.0)
    assert {"mean_ratio", "std_ratio", "t_bin", "n_runs"} <= set(curves[0])
    assert len({lg.run_id for lg in rep.logs}) == 6


def test_sweep_parallel_matches_serial():
    base = small(t_total=10.0)
    a = run_sweep(base, seeds=[0, 1], planners=["himos", "boustrophedon"], jobs=1)
    b = run_sweep(base, seeds=[0, 1], planners=["himos", "boustrophedon"], jobs=2)
    assert [lg.fingerprint() for lg in a.logs] == [lg.fingerprint() for lg in b.logs]


def test_sweep_records_failures_and_continues(tmp_path):
    base = dataclasses.replace(small(t_total=10.0), map_file=str(tmp_path / "missing.map"))
    rep = run_sweep(base, seeds=[0], planners=["boustrophedon"],
                    maps=[tmp_path / "missing.map", MapGenConfig(seed=0, width_m=20.0, height_m=20.0)])
    assert len(rep.logs) == 2 and len(rep.failures) == 1
    assert rep.logs[1].error is None
    assert aggregate_curves(rep.logs, 5.0)


def test_sweep_job_ids_cover_grid():
    jobs = sweep_jobs(small(), [0, 1], ["himos", "mcts"],
                      maps=[MapGenConfig(seed=s, difficulty=d) for d in ("easy", "hard") for s in (0, 1)])
    assert len(jobs) == 16
    assert jobs[0][1] == "himos-easy-m0-s0"
    with pytest.raises(ValueError):
        run_sweep(small(), seeds=[], planners=["himos"])
