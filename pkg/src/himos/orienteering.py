"""Budgeted open-path orienteering: GRASP construction + iterated local search.

A route is an ordered list of node indices travelled from a fixed start point;
its length is the Euclidean path length including the start leg, and no return
to the start is required.
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np

_EPS = 1e-9


class _Instance:
    def __init__(self, positions, rewards, start, budget):
        self.pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.rew = np.asarray(rewards, dtype=float)
        self.n = len(self.rew)
        pts = np.vstack([self.pos, np.asarray(start, dtype=float).reshape(1, 2)])
        diff = pts[:, None, :] - pts[None, :, :]
        self.D = np.sqrt((diff ** 2).sum(-1))
        self.s = self.n  # start index in D
        self.budget = float(budget)
        self.Dl = self.D.tolist()  # python rows are much faster for short routes
        self.rl = self.rew.tolist()

    def length(self, route) -> float:
        Dl, prev, total = self.Dl, self.s, 0.0
        for v in route:
            total += Dl[prev][v]
            prev = v
        return total

    def best_slot(self, route, node) -> tuple[int, float]:
        """Cheapest insertion slot for ``node`` and its extra length."""
        Dl = self.Dl
        dn = Dl[node]
        prev = self.s
        best, best_k = math.inf, 0
        for k, v in enumerate(route):
            c = dn[prev] + dn[v] - Dl[prev][v]
            if c < best:
                best, best_k = c, k
            prev = v
        if dn[prev] < best:
            best, best_k = dn[prev], len(route)
        return best_k, best

    def reward(self, route) -> float:
        rl = self.rl
        return float(sum(rl[v] for v in route))

    def insertion_costs(self, route, cands):
        """(len(cands), len(route)+1) extra length of inserting each candidate at each slot."""
        D = self.D
        c = np.asarray(cands, dtype=np.intp)
        prevs = np.empty(len(route) + 1, dtype=np.intp)
        prevs[0] = self.s
        prevs[1:] = route
        # D is symmetric; gathering rows first is much faster than np.ix_
        rows = D[prevs][:, c]  # (L+1, m) leg prev -> cand for every slot
        out = rows.T.copy()
        if route:
            nexts = prevs[1:]
            out[:, :-1] += rows[1:].T - D[prevs[:-1], nexts]
        return out


def _construct(inst: _Instance, alpha: float, rng, route=None):
    """Randomised-greedy insertion by reward per extra metre.  ``alpha=0`` is pure greedy."""
    route = list(route) if route else []
    length = inst.length(route)
    inside = set(route)
    cands = np.array([u for u in range(inst.n) if inst.rl[u] > 0 and u not in inside], dtype=np.intp)
    if cands.size == 0:
        return route
    D = inst.D
    C = inst.insertion_costs(route, cands)  # kept in sync with route and cands below
    while cands.size:
        slot = np.argmin(C, axis=1)
        extra = C[np.arange(len(cands)), slot]
        ok = length + extra <= inst.budget + _EPS
        if not ok.any():
            break
        idx = np.flatnonzero(ok)
        score = inst.rew[cands[idx]] / (extra[idx] + 1e-6)
        if alpha <= 0 or rng is None:
            pick = int(idx[np.argmax(score)])
        else:
            hi, lo = score.max(), score.min()
            rcl = idx[score >= hi - alpha * (hi - lo)]
            pick = int(rcl[rng.integers(len(rcl))])
        x, j = int(cands[pick]), int(slot[pick])
        prev = route[j - 1] if j else inst.s
        route.insert(j, x)
        length += extra[pick]
        cands = np.delete(cands, pick)
        C = np.delete(C, pick, axis=0)
        # slot j (prev -> next) splits into (prev -> x) and (x -> next)
        left = D[prev, cands] + D[x, cands] - D[prev, x]
        if j + 1 < len(route):
            nxt = route[j + 1]
            right = D[x, cands] + D[nxt, cands] - D[x, nxt]
        else:
            right = D[x, cands]
        C[:, j] = left
        C = np.insert(C, j + 1, right, axis=1)
    return route


def _two_opt(inst: _Instance, route):
    """Best-improvement 2-opt on the open path until no move shortens it."""
    route = list(route)
    D = inst.D
    while len(route) >= 2:
        seq = np.array([inst.s] + route)
        L = len(seq)
        # reverse seq[i+1..j], i in [0, L-2], j in [i+1, L-1]
        i = np.arange(L - 1)[:, None]
        j = np.arange(L)[None, :]
        a, b = seq[i], seq[np.minimum(i + 1, L - 1)]
        c = seq[np.minimum(j, L - 1)]
        has_next = j < L - 1
        d = seq[np.minimum(j + 1, L - 1)]
        delta = D[a, c] - D[a, b] + np.where(has_next, D[b, d] - D[c, d], 0.0)
        delta = np.where(j > i + 1, delta, 0.0)
        k = int(np.argmin(delta))
        if delta.flat[k] >= -1e-10:
            break
        bi, bj = divmod(k, L)
        seq = seq.tolist()
        seq[bi + 1:bj + 1] = seq[bi + 1:bj + 1][::-1]
        route = seq[1:]
    return route


def _removal_saving(inst: _Instance, route):
    """Length saved by dropping each routed node (its neighbours get joined)."""
    D = inst.D
    seq = np.array([inst.s] + list(route))
    k = np.arange(len(route))
    prev, cur = seq[k], seq[k + 1]
    nxt = np.append(seq[2:], -1)
    has_next = nxt >= 0
    nxt_safe = np.where(has_next, nxt, 0)
    saved = D[prev, cur] + np.where(has_next, D[cur, nxt_safe] - D[prev, nxt_safe], 0.0)
    return saved, prev, nxt_safe, has_next


def _slot_minima(C):
    """(prefix-min, suffix-min) over slot columns, padded with +inf at both ends."""
    inf = np.full((C.shape[0], 1), np.inf)
    pre = np.hstack([inf, np.minimum.accumulate(C, axis=1)])  # pre[:, k] = min C[:, :k]
    suf = np.hstack([np.minimum.accumulate(C[:, ::-1], axis=1)[:, ::-1], inf])  # min C[:, k:]
    return pre, suf


def _or_opt(inst: _Instance, route):
    """Relocate single nodes to their cheapest slot while that shortens the path."""
    route = list(route)
    while len(route) >= 3:
        L = len(route)
        saved = _removal_saving(inst, route)[0]
        # reinsertion anywhere except the two slots adjacent to the node itself
        pre, suf = _slot_minima(inst.insertion_costs(route, route))
        k = np.arange(L)
        gain = saved - np.minimum(pre[k, k], suf[k, k + 2])
        idx = int(np.argmax(gain))
        if gain[idx] <= 1e-10:
            break
        node = route[idx]
        rest = route[:idx] + route[idx + 1:]
        slot, _ = inst.best_slot(rest, node)
        rest.insert(slot, node)
        route = rest
    return route


def _swap_in(inst: _Instance, route):
    """Replace a routed node by a higher-reward unrouted one when the budget allows.

    Considers every (removed, inserted) pair at once: removing ``route[k]`` merges
    slots k and k+1 into one, so the cheapest remaining slot is the min of a
    prefix-min, a suffix-min and the merged slot.
    """
    route = list(route)
    inside = set(route)
    out = np.array([u for u in range(inst.n) if inst.rl[u] > 0 and u not in inside], dtype=int)
    L = len(route)
    if not L or out.size == 0:
        return route, False
    gain = inst.rew[out][:, None] - inst.rew[route][None, :]
    if not np.any(gain > 1e-12):
        return route, False
    D = inst.D
    saved, prev, nxt_safe, has_next = _removal_saving(inst, route)
    pre, suf = _slot_minima(inst.insertion_costs(route, out))
    k = np.arange(L)
    merged = D[prev][:, out].T + np.where(has_next, D[nxt_safe][:, out].T - D[prev, nxt_safe], 0.0)
    extra = np.minimum(np.minimum(pre[:, k], suf[:, k + 2]), merged)
    rest_len = inst.length(route) - saved
    fits = (rest_len[None, :] + extra <= inst.budget + _EPS) & (gain > 1e-12)
    if not fits.any():
        return route, False
    score = np.where(fits, gain, -np.inf)
    ui, idx = np.unravel_index(int(np.argmax(score)), score.shape)
    rest = route[:idx] + route[idx + 1:]
    slot, _ = inst.best_slot(rest, int(out[ui]))
    rest.insert(slot, int(out[ui]))
    return rest, True


def _local_search(inst: _Instance, route, max_rounds: int = 50):
    for _ in range(max_rounds):
        route = _two_opt(inst, route)
        route = _or_opt(inst, route)
        before = inst.reward(route)
        route = _construct(inst, 0.0, None, route)
        route, swapped = _swap_in(inst, route)
        if not swapped and inst.reward(route) <= before + 1e-12:
            break
    return route


def _better(inst, a, b) -> bool:
    """True if route ``a`` beats ``b`` (reward, then shorter length)."""
    ra, rb = inst.reward(a), inst.reward(b)
    if ra > rb + 1e-12:
        return True
    return abs(ra - rb) <= 1e-12 and inst.length(a) < inst.length(b) - 1e-10


def greedy_route(positions, rewards, start, d_budget) -> list[int]:
    """Pure greedy insertion construction (the ILS baseline)."""
    inst = _Instance(positions, rewards, start, d_budget)
    return _construct(inst, 0.0, None)


def solve_op(positions, rewards, start, d_budget: float, rng=None, time_cap: float | None = 1.5,
             max_no_improve: int = 200, grasp_alpha: float = 0.3, max_iter: int = 2000) -> list[int]:
    """Iterated local search for the open-path orienteering problem.

    Returns an ordered list of node indices whose travelled length from
    ``start`` is within ``d_budget`` and whose reward is at least that of the
    pure greedy construction.
    """
    if d_budget < 0:
        raise ValueError("d_budget must be non-negative")
    inst = _Instance(positions, rewards, start, d_budget)
    if inst.n == 0 or not np.any(inst.rew > 0):
        return []
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    t0 = time.perf_counter()

    best = _local_search(inst, _construct(inst, 0.0, None))
    current = _local_search(inst, _construct(inst, grasp_alpha, rng))
    if _better(inst, current, best):
        best = list(current)
    else:
        current = list(best)

    positive = [u for u in range(inst.n) if inst.rl[u] > 0]
    stale = 0
    for it in range(max_iter):
        if stale >= max_no_improve:
            break
        if time_cap is not None and time.perf_counter() - t0 > time_cap:
            break
        cand = list(current)
        if cand:
            k = int(rng.integers(1, max(1, len(cand) // 3) + 1))
            i = int(rng.integers(0, len(cand) - k + 1))
            del cand[i:i + k]
        # kick: force one random unrouted node in before refilling
        outside = [u for u in positive if u not in set(cand)]
        if outside:
            u = outside[int(rng.integers(len(outside)))]
            while True:
                slot, extra = inst.best_slot(cand, u)
                if inst.length(cand) + extra <= inst.budget + _EPS or not cand:
                    break
                del cand[int(rng.integers(len(cand)))]
            if inst.length(cand) + extra <= inst.budget + _EPS:
                cand.insert(slot, u)
        alpha = grasp_alpha if it % 2 == 0 else float(rng.random())
        cand = _local_search(inst, _construct(inst, alpha, rng, cand))
        if _better(inst, cand, current) or inst.reward(cand) >= inst.reward(current) - 1e-12:
            current = cand
        if _better(inst, cand, best):
            best = list(cand)
            stale = 0
        else:
            stale += 1
            if stale % 50 == 0:
                current = list(best)
    return best


def exhaustive_op(positions, rewards, start, d_budget: float) -> tuple[float, list[int]]:
    """Brute-force optimum over all ordered subsets (depth-first with budget pruning)."""
    inst = _Instance(positions, rewards, start, d_budget)
    D, rew, n = inst.D, inst.rew, inst.n
    best = [0.0, []]

    def dfs(last, used, length, reward, path):
        if reward > best[0] + 1e-12:
            best[0], best[1] = reward, list(path)
        for j in range(n):
            if used >> j & 1:
                continue
            nl = length + D[last, j]
            if nl <= d_budget + _EPS:
                path.append(j)
                dfs(j, used | (1 << j), nl, reward + rew[j], path)
                path.pop()

    dfs(inst.s, 0, 0.0, 0.0, [])
    return best[0], best[1]


def shortest_order(positions, start, subset) -> tuple[float, tuple[int, ...]]:
    """Shortest open path from ``start`` through all of ``subset`` (exhaustive)."""
    inst = _Instance(positions, np.zeros(len(positions)), start, math.inf)
    best = (math.inf, ())
    for perm in itertools.permutations(subset):
        L = inst.length(list(perm))
        if L < best[0]:
            best = (L, perm)
    return best


def route_length(positions, start, route) -> float:
    return _Instance(positions, np.zeros(len(positions)), start, math.inf).length(list(route))
