"""Event-triggered global planner: adaptive macro/micro graph, GP reward field, orienteering."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import BeliefState, binary_entropy_logodds, region_stats
from .orienteering import solve_op
from .sensors import RobotState
from .world import GridSpec, Rect, cells_in_region, iter_tiles

MACRO, MICRO = "macro", "micro"


class GpFitError(np.linalg.LinAlgError):
    """K + R stayed indefinite after jitter escalation."""


# ------------------------------------------------------------------- graph

@dataclass
class GraphNode:
    id: int
    center: np.ndarray
    region: Rect
    level: str
    cells: np.ndarray = field(repr=False, default=None)
    rho_bar: float = float("nan")
    nu2_bar: float = float("nan")
    area_weight: float = 1.0


class SpatialGraph:
    """Active node set V_macro ∪ V_micro over a rectangular map."""

    def __init__(self, spec: GridSpec, macro_size: float = 4.0, micro_size: float = 2.0):
        if not 0 < micro_size <= macro_size:
            raise ValueError("need 0 < micro_size <= macro_size")
        self.spec = spec
        self.macro_size = float(macro_size)
        self.micro_size = float(micro_size)
        self.macro_nodes: dict[int, GraphNode] = {}
        self.micro_nodes: dict[int, GraphNode] = {}
        self.visited: set[int] = set()
        self._next_id = 0
        for rect in iter_tiles(spec, self.macro_size):
            node = self._make(rect, MACRO)
            self.macro_nodes[node.id] = node

    def _make(self, rect: Rect, level: str) -> GraphNode:
        node = GraphNode(self._next_id, rect.center, rect, level,
                         cells_in_region(self.spec, rect),
                         area_weight=rect.area / self.micro_size ** 2)
        self._next_id += 1
        return node

    @property
    def n_macro(self) -> int:
        return len(self.macro_nodes)

    def active_nodes(self) -> list[GraphNode]:
        nodes = list(self.macro_nodes.values()) + list(self.micro_nodes.values())
        return sorted(nodes, key=lambda n: n.id)

    def node(self, node_id: int) -> GraphNode:
        if node_id in self.macro_nodes:
            return self.macro_nodes[node_id]
        return self.micro_nodes[node_id]

    def node_at(self, x: float, y: float) -> GraphNode | None:
        for n in self.active_nodes():
            if n.region.contains(x, y):
                return n
        return None

    def split(self, node_id: int) -> list[GraphNode]:
        parent = self.macro_nodes.pop(node_id)
        r, m = parent.region, self.micro_size
        kids = []
        nx = int(math.ceil((r.xmax - r.xmin) / m - 1e-9))
        ny = int(math.ceil((r.ymax - r.ymin) / m - 1e-9))
        for j in range(ny):
            for i in range(nx):
                rect = Rect(r.xmin + i * m, r.ymin + j * m,
                            min(r.xmin + (i + 1) * m, r.xmax), min(r.ymin + (j + 1) * m, r.ymax))
                kid = self._make(rect, MICRO)
                self.micro_nodes[kid.id] = kid
                kids.append(kid)
        return kids


def maybe_split(graph: SpatialGraph, belief: BeliefState, h_split: float = 0.35) -> list[int]:
    """Replace every macro node whose mean substrate entropy fell below ``h_split``.

    Returns the ids of the split parents.
    """
    if not 0 < h_split < math.log(2):
        raise ValueError("h_split must lie in (0, ln 2)")
    split = []
    for node in sorted(graph.macro_nodes.values(), key=lambda n: n.id):
        if node.cells.size == 0:
            continue
        h = float(binary_entropy_logodds(belief.ell_s[node.cells]).mean())
        if h < h_split:
            split.append(node.id)
    for nid in split:
        graph.split(nid)
    return split


def aggregate_stats(graph: SpatialGraph, belief: BeliefState) -> None:
    for node in graph.micro_nodes.values():
        if node.cells.size:
            node.rho_bar, node.nu2_bar = region_stats(belief, node.cells)


# --------------------------------------------------------------------- GP

@dataclass(frozen=True)
class GpHyper:
    lengthscale: float = 5.0
    signal_var: float = 0.25
    prior_mean: float = 0.5


@dataclass
class GpModel:
    X: np.ndarray  # (M, 2)
    y: np.ndarray  # (M,)
    noise: np.ndarray  # (M,) diagonal of R
    hyper: GpHyper
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    jitter: float = 0.0


def se_kernel(A, B, hyper: GpHyper) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return hyper.signal_var * np.exp(-0.5 * d2 / hyper.lengthscale ** 2)


def gp_fit(data, hyper: GpHyper = GpHyper(), max_jitter: float = 1e-4) -> GpModel:
    """Fit on ``[(p, rho_bar, nu2_bar), ...]`` with R = diag(nu2_bar)."""
    data = list(data)
    if not data:
        e = np.empty(0)
        return GpModel(np.empty((0, 2)), e, e, hyper)
    X = np.array([np.asarray(p, dtype=float) for p, _, _ in data]).reshape(-1, 2)
    y = np.array([r for _, r, _ in data], dtype=float)
    noise = np.array([n for _, _, n in data], dtype=float)
    if np.any(noise < 0) or not np.all(np.isfinite(noise)):
        raise ValueError("noise variances must be finite and non-negative")
    K = se_kernel(X, X, hyper) + np.diag(noise)
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(y)))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-10 * hyper.signal_var if jitter == 0 else jitter * 10
            if jitter > max_jitter * hyper.signal_var:
                raise GpFitError("K + R is not positive definite after jitter escalation")
    from scipy.linalg import cho_solve
    alpha = cho_solve((L, True), y - hyper.prior_mean)
    return GpModel(X, y, noise, hyper, L, alpha, jitter)


def gp_predict(model: GpModel, query):
    """Posterior (mu, sigma2) at one point (scalars) or at an (N, 2) batch (arrays)."""
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    Q = q.reshape(-1, 2)
    h = model.hyper
    if model.y.size == 0:
        mu = np.full(len(Q), h.prior_mean)
        var = np.full(len(Q), h.signal_var)
    else:
        from scipy.linalg import solve_triangular
        Ks = se_kernel(Q, model.X, h)
        mu = h.prior_mean + Ks @ model.alpha
        v = solve_triangular(model.chol, Ks.T, lower=True)
        var = np.maximum(h.signal_var - (v * v).sum(0), 0.0)
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def node_rewards(graph: SpatialGraph, model: GpModel, beta: float = 0.6, nodes=None) -> np.ndarray:
    """UCB reward (mu + beta*sigma) * area weight, zero for visited nodes."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    nodes = graph.active_nodes() if nodes is None else nodes
    if not nodes:
        return np.empty(0)
    mu, var = gp_predict(model, np.array([n.center for n in nodes]))
    lam = np.array([n.area_weight for n in nodes])
    unvisited = np.array([n.id not in graph.visited for n in nodes])
    return (mu + beta * np.sqrt(var)) * lam * unvisited


# --------------------------------------------------------------- planning

@dataclass
class GlobalPlannerConfig:
    macro_size: float = 4.0
    micro_size: float = 2.0
    h_split: float = 0.35
    beta: float = 0.6
    c_time: float = 6.0  # seconds of budget per metre of route
    gp: GpHyper = field(default_factory=GpHyper)
    grasp_alpha: float = 0.3
    max_no_improve: int = 200
    max_iter: int = 2000
    time_cap_s: float | None = 1.5


@dataclass(frozen=True)
class GlobalDirective:
    node_id: int
    center: np.ndarray
    region: Rect
    t_local: float
    fallback: bool = False


@dataclass
class PlanningRecord:
    n_nodes: int
    n_split: int
    n_train: int
    d_budget: float
    solve_time: float
    route: list
    fallback: bool

    def as_dict(self) -> dict:
        return {"n_nodes": self.n_nodes, "n_split": self.n_split, "n_train": self.n_train,
                "d_budget": self.d_budget, "solve_time": self.solve_time,
                "route": list(self.route), "fallback": self.fallback}


def _directive(state: RobotState, node: GraphNode, t_rem: float, c: float, fallback: bool,
               t_min: float) -> GlobalDirective:
    dist = float(np.hypot(*(node.center - state.p)))
    t_local = min(max(c * dist, t_min), t_rem)
    return GlobalDirective(node.id, node.center.copy(), node.region, t_local, fallback)


def plan_global(state: RobotState, belief: BeliefState, t_rem: float, graph: SpatialGraph,
                cfg: GlobalPlannerConfig = None, rng=None, deterministic: bool = False,
                t_min: float = 0.5):
    """One Alg.-style planning call.  Mutates ``graph`` (splits); returns (directive, record).

    ``t_min`` floors t_local so a directive issued on top of its target stays positive.
    """
    if t_rem <= 0:
        raise ValueError("t_rem must be positive")
    cfg = cfg or GlobalPlannerConfig()
    t0 = time.perf_counter()
    split = maybe_split(graph, belief, cfg.h_split)
    aggregate_stats(graph, belief)
    micro = sorted(graph.micro_nodes.values(), key=lambda n: n.id)
    model = gp_fit([(n.center, n.rho_bar, n.nu2_bar) for n in micro if n.cells.size], cfg.gp)
    nodes = graph.active_nodes()
    rewards = node_rewards(graph, model, cfg.beta, nodes)
    d_budget = t_rem / cfg.c_time
    keep = np.flatnonzero(rewards > 0)
    route = []
    if keep.size:
        pos = np.array([nodes[i].center for i in keep])
        sub = solve_op(pos, rewards[keep], state.p, d_budget, rng=rng,
                       time_cap=None if deterministic else cfg.time_cap_s,
                       max_no_improve=cfg.max_no_improve, grasp_alpha=cfg.grasp_alpha,
                       max_iter=cfg.max_iter)
        route = [nodes[int(keep[k])].id for k in sub]
    fallback = not route
    if route:
        target = graph.node(route[0])
    else:
        pool = [n for n in nodes if n.id not in graph.visited] or nodes
        dists = [float(np.hypot(*(n.center - state.p))) for n in pool]
        target = pool[int(np.argmin(dists))]
    directive = _directive(state, target, t_rem, cfg.c_time, fallback, t_min)
    record = PlanningRecord(len(nodes), len(split), len(model.y), d_budget,
                            time.perf_counter() - t0, route, fallback)
    return directive, record
