"""Fly the three planners on one generated map and print how many corals each sampled.

A short 600 s mission keeps this under a few minutes on one core.
    python demos/compare_planners.py [difficulty] [seed]
"""
from __future__ import annotations

import sys

from himos.mission import MissionConfig, run_mission
from himos.world import MapGenConfig, generate_map

difficulty = sys.argv[1] if len(sys.argv) > 1 else "medium"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

map_cfg = MapGenConfig(seed=seed, difficulty=difficulty)
gt = generate_map(map_cfg)
print(f"{difficulty} map, seed {seed}: {gt.n_coral} coral cells, substrate fill {gt.substrate_fill:.2f}")

for planner in ("himos", "mcts", "boustrophedon"):
    log = run_mission(MissionConfig(planner=planner, seed=seed, map=map_cfg, t_total=600.0), gt=gt)
    s = log.summary()
    print(f"{planner:>14}: sampled {s['samples']:4d}/{s['n_targets']}  ratio {s['ratio']:.3f}  "
          f"distance {s['distance']:.0f} m")
