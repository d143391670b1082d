"""Min-cost flow by successive shortest paths, and the transportation and
b-matching problems built on top of it."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .._tol import CMP_TOL

_CAP_EPS = 1e-12


class InfeasibleFlow(ValueError):
    """Demand cannot be routed within the available supply."""


class MinCostFlow:
    """Residual network with node potentials; Dijkstra on reduced costs."""

    def __init__(self, n):
        self.n = n
        self.adj = [[] for _ in range(n)]
        self.to = []
        self.cap = []
        self.cost = []

    def add_edge(self, u, v, cap, cost):
        e = len(self.to)
        self.to += [v, u]
        self.cap += [float(cap), 0.0]
        self.cost += [float(cost), -float(cost)]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def flow_on(self, e):
        return self.cap[e ^ 1]

    def _initial_potential(self, s):
        # Bellman-Ford, only needed when some forward edge has negative cost
        if all(self.cost[e] >= 0 for e in range(0, len(self.cost), 2)):
            return [0.0] * self.n
        h = [float("inf")] * self.n
        h[s] = 0.0
        for _ in range(self.n):
            changed = False
            for u in range(self.n):
                if h[u] == float("inf"):
                    continue
                for e in self.adj[u]:
                    if self.cap[e] > _CAP_EPS and h[u] + self.cost[e] < h[self.to[e]]:
                        h[self.to[e]] = h[u] + self.cost[e]
                        changed = True
            if not changed:
                break
        return [0.0 if x == float("inf") else x for x in h]

    def solve(self, s, t, need):
        """Push up to ``need`` units from s to t at minimum cost."""
        inf = float("inf")
        h = self._initial_potential(s)
        flow = 0.0
        total = 0.0
        to, cap, cost, adj = self.to, self.cap, self.cost, self.adj
        while need - flow > _CAP_EPS:
            dist = [inf] * self.n
            prev = [-1] * self.n
            dist[s] = 0.0
            pq = [(0.0, s)]
            while pq:
                du, u = heapq.heappop(pq)
                if du > dist[u]:
                    continue
                hu = h[u]
                for e in adj[u]:
                    if cap[e] <= _CAP_EPS:
                        continue
                    v = to[e]
                    rc = cost[e] + hu - h[v]
                    if rc < 0.0:
                        rc = 0.0
                    nd = du + rc
                    if nd < dist[v]:
                        dist[v] = nd
                        prev[v] = e
                        heapq.heappush(pq, (nd, v))
            if dist[t] == inf:
                break
            for v in range(self.n):
                if dist[v] < inf:
                    h[v] += dist[v]
            push = need - flow
            v = t
            while v != s:
                e = prev[v]
                push = min(push, cap[e])
                v = to[e ^ 1]
            v = t
            while v != s:
                e = prev[v]
                cap[e] -= push
                cap[e ^ 1] += push
                total += push * cost[e]
                v = to[e ^ 1]
            flow += push
        return flow, total


@dataclass
class TransportProblem:
    """Demands on rows, supplies on columns, costs[row, col]."""

    demands: np.ndarray
    supplies: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        self.demands = np.asarray(self.demands, dtype=float).reshape(-1)
        self.supplies = np.asarray(self.supplies, dtype=float).reshape(-1)
        self.costs = np.asarray(self.costs, dtype=float).reshape(
            self.demands.size, self.supplies.size)
        if np.any(self.demands < 0) or np.any(self.supplies < 0):
            raise ValueError("negative demand or supply")
        if np.any(self.costs < 0):
            raise ValueError("negative transport cost")


def _is_integral(v):
    return bool(np.all(np.abs(v - np.round(v)) <= CMP_TOL))


def transport_solve(tp):
    """Minimum-cost plan meeting every demand from the supplies."""
    dem, sup, C = tp.demands, tp.supplies, tp.costs
    need = float(dem.sum())
    if need > sup.sum() + 1e-9 * max(1.0, need):
        raise InfeasibleFlow(f"demand {need:g} exceeds supply {sup.sum():g}")
    rows = np.flatnonzero(dem > 0)
    cols = np.flatnonzero(sup > 0)
    plan = np.zeros(C.shape)
    if need <= 0:
        return 0.0, plan
    nr, nc = rows.size, cols.size
    s, t = nr + nc, nr + nc + 1
    g = MinCostFlow(nr + nc + 2)
    arcs = {}
    for a, r in enumerate(rows):
        g.add_edge(s, a, dem[r], 0.0)
    for b, c in enumerate(cols):
        g.add_edge(nr + b, t, sup[c], 0.0)
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            arcs[(r, c)] = g.add_edge(a, nr + b, need, C[r, c])
    flow, _ = g.solve(s, t, need)
    if flow < need - 1e-9 * max(1.0, need):
        raise InfeasibleFlow(f"routed {flow:g} of {need:g}")
    for (r, c), e in arcs.items():
        plan[r, c] = g.flow_on(e)
    if _is_integral(dem) and _is_integral(sup):
        if not _is_integral(plan):
            raise AssertionError("integral transport data produced a fractional plan")
        plan = np.round(plan)
    return float(np.sum(plan * C)), plan


def mcf_assign(costs, caps):
    """Assign each client (row) to one facility (column) within integer caps.

    Returns ``(sigma, cost)`` where ``sigma[j]`` is the column index.
    """
    costs = np.asarray(costs, dtype=float)
    caps = np.asarray(caps)
    if costs.ndim != 2 or costs.shape[1] != caps.size:
        raise ValueError("cost table and caps disagree")
    if not _is_integral(caps.astype(float)):
        raise ValueError("caps must be integral")
    nc = costs.shape[0]
    if caps.sum() < nc:
        raise InfeasibleFlow(f"capacity {int(caps.sum())} below {nc} clients")
    _, plan = transport_solve(TransportProblem(np.ones(nc), caps.astype(float), costs))
    sigma = np.argmax(plan, axis=1)
    if not np.allclose(plan[np.arange(nc), sigma], 1.0):
        raise AssertionError("b-matching plan is not a 0/1 assignment")
    return sigma, float(costs[np.arange(nc), sigma].sum())
