"""Command-line entry point: generate-map, run, sweep, report."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import io
import json
import os
import sys

from .mission import (PLANNERS, ConfigError, MissionConfig, aggregate_curves, aggregate_final,
                      export_results, load_config, load_log, run_mission, run_sweep, save_log,
                      timing_report)
from .world import (InfeasibleMapConfig, MapFormatError, MapGenConfig, MapValidationError,
                    generate_map, save_map)


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.payload = {"error": kind, "message": message, **extra}


def _seeds(text: str) -> list[int]:
    """``"0,1,5"`` or ``"0-3"`` (inclusive) or a mix of non-negative seeds."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("no seeds given")
    return out


def _planners(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in PLANNERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"planners must come from {list(PLANNERS)}")
    return names


def _config(path) -> MissionConfig:
    return load_config(path) if path else MissionConfig()


def cmd_generate_map(args) -> dict:
    cfg = MapGenConfig(seed=args.seed, difficulty=args.difficulty, width_m=args.width,
                       height_m=args.height, cell_size=args.cell_size)
    gt = generate_map(cfg)
    save_map(gt, args.out)
    return {"out": args.out, "n_coral": gt.n_coral, "substrate_fill": gt.substrate_fill,
            "shape": list(gt.spec.shape)}


def cmd_run(args) -> dict:
    cfg = _config(args.config)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.planner is not None:
        kw["planner"] = args.planner
    if args.map is not None:
        kw["map_file"] = args.map
    if args.t_total is not None:
        kw["t_total"] = args.t_total
    cfg = dataclasses.replace(cfg, **kw)
    log = run_mission(cfg)
    paths = export_results([log], args.out)
    save_log(log, os.path.splitext(args.out)[0] + "_log.json")
    return {"summary": log.summary(), "files": paths}


def cmd_sweep(args) -> dict:
    configs = [_config(p) for p in (args.configs or [None])]
    if args.t_total is not None:
        configs = [dataclasses.replace(c, t_total=args.t_total) for c in configs]
    maps = None
    if args.difficulties:
        maps = [MapGenConfig(seed=ms, difficulty=d) for d in args.difficulties.split(",")
                for ms in args.map_seeds]
    report = run_sweep(configs, args.seeds, args.planners, maps=maps, jobs=args.jobs)
    paths = export_results(report.logs, args.out)
    logdir = os.path.splitext(args.out)[0] + "_logs"
    os.makedirs(logdir, exist_ok=True)
    for lg in report.logs:
        save_log(lg, os.path.join(logdir, lg.run_id + ".json"))
    return {"runs": len(report.logs), "failures": report.failures, "aggregate": report.aggregate(),
            "files": paths}


def _load_logs(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.json")))
    else:
        files = [path]
    logs = []
    for f in files:
        with open(f, encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, dict) and doc.get("schema") == "himos-results-v1":
            raise CliError("InputError", f"{f} is an exported summary; pass the *_log.json file or the logs directory",
                           path=f)
        logs.append(load_log(f))
    if not logs:
        raise CliError("InputError", f"no logs found under {path}", path=path)
    return logs


def cmd_report(args) -> str:
    logs = _load_logs(args.input)
    if args.format == "json":
        return json.dumps({"runs": [lg.summary() for lg in logs], "aggregate": aggregate_final(logs),
                           "curves": aggregate_curves(logs, args.bin), "timing": timing_report(logs)},
                          indent=2, default=float)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("planner", "difficulty", "t_bin", "mean_ratio", "std_ratio", "n_runs"))
    for r in aggregate_curves(logs, args.bin):
        w.writerow([r["planner"], r["difficulty"], r["t_bin"], r["mean_ratio"], r["std_ratio"], r["n_runs"]])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="himos", description="Hierarchical search-and-sample mission simulator")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-map", help="write a synthetic benthic map")
    g.add_argument("--difficulty", choices=("easy", "medium", "hard"), default="medium")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=float, default=50.0)
    g.add_argument("--height", type=float, default=50.0)
    g.add_argument("--cell-size", type=float, default=0.25)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_map)

    r = sub.add_parser("run", help="simulate one mission")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--planner", choices=PLANNERS)
    r.add_argument("--map", help="map file (overrides the config's map section)")
    r.add_argument("--t-total", type=float)
    r.add_argument("--out", required=True, help="output prefix")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run (map, seed, planner) combinations")
    s.add_argument("--configs", nargs="*")
    s.add_argument("--seeds", type=_seeds, default=[0])
    s.add_argument("--planners", type=_planners, default=list(PLANNERS))
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--difficulties", help="comma list; generates maps instead of the config map")
    s.add_argument("--map-seeds", type=_seeds, default=[0])
    s.add_argument("--t-total", type=float)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("report", help="aggregate saved mission logs")
    q.add_argument("--in", dest="input", required=True, help="log file or directory of logs")
    q.add_argument("--format", choices=("csv", "json"), default="csv")
    q.add_argument("--bin", type=float, default=50.0, help="time bin in seconds")
    q.set_defaults(func=cmd_report)
    return p


def _fail(payload: dict, code: int) -> int:
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail({"error": "UsageError", "message": "invalid arguments (see usage above)"}, 2)
    try:
        out = args.func(args)
    except ConfigError as exc:
        return _fail(exc.as_dict(), 2)
    except MapFormatError as exc:
        return _fail({"error": "MapFormatError", "message": str(exc), "line": exc.line,
                      "offset": exc.offset}, 3)
    except (MapValidationError, InfeasibleMapConfig) as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)}, 3)
    except CliError as exc:
        return _fail(exc.payload, 4)
    except OSError as exc:
        return _fail({"error": "IOError", "message": str(exc), "path": getattr(exc, "filename", None)}, 5)
    except ValueError as exc:
        return _fail({"error": "ValueError", "message": str(exc)}, 2)
    sys.stdout.write(out if isinstance(out, str) else json.dumps(out, indent=2, default=float) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
