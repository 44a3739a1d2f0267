"""Two-terminal max-flow / min-cut on small sparse graphs (Dinic's algorithm)."""
from __future__ import annotations

from collections import deque

import numpy as np


class FlowNetwork:
    """Directed network with float capacities; nodes are 0..n-1."""

    def __init__(self, n):
        self.n = n
        self.head = [[] for _ in range(n)]
        self.to = []
        self.cap = []

    def add_edge(self, u, v, cap, rev_cap=0.0):
        """Add u->v with ``cap`` and v->u with ``rev_cap``; returns the edge id."""
        eid = len(self.to)
        self.to.extend((v, u))
        self.cap.extend((float(cap), float(rev_cap)))
        self.head[u].append(eid)
        self.head[v].append(eid + 1)
        return eid

    def _levels(self, s, eps):
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for e in self.head[u]:
                v = self.to[e]
                if level[v] < 0 and self.cap[e] > eps:
                    level[v] = level[u] + 1
                    q.append(v)
        return level

    def _push(self, u, t, limit, level, it, eps):
        # iterative DFS along the level graph
        path = []
        while True:
            if u == t:
                f = min(self.cap[e] for e in path) if path else limit
                for e in path:
                    self.cap[e] -= f
                    self.cap[e ^ 1] += f
                return f
            advanced = False
            while it[u] < len(self.head[u]):
                e = self.head[u][it[u]]
                v = self.to[e]
                if self.cap[e] > eps and level[v] == level[u] + 1:
                    path.append(e)
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if not path:
                    return 0.0
                level[u] = -1  # dead end
                e = path.pop()
                u = self.to[e ^ 1]
                it[u] += 1

    def max_flow(self, s, t):
        """Saturate the network; returns the flow value."""
        scale = max((abs(c) for c in self.cap), default=0.0)
        eps = 1e-12 * max(scale, 1.0)
        self._eps = eps
        flow = 0.0
        while True:
            level = self._levels(s, eps)
            if level[t] < 0:
                return flow
            it = [0] * self.n
            while True:
                f = self._push(s, t, float("inf"), level, it, eps)
                if f <= 0:
                    break
                flow += f

    def source_side(self, s):
        """Nodes reachable from ``s`` in the residual graph (the minimal source set)."""
        eps = getattr(self, "_eps", 0.0)
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for e in self.head[u]:
                v = self.to[e]
                if not seen[v] and self.cap[e] > eps:
                    seen[v] = True
                    q.append(v)
        return seen


def minimum_cut(source_caps, sink_caps, edges=(), edge_caps=()):
    """Min s-t cut over ``len(source_caps)`` inner nodes.

    ``source_caps[i]`` is the capacity s->i, ``sink_caps[i]`` the capacity
    i->t, and each ``edges[k] = (i, j)`` carries capacity ``edge_caps[k]``
    from i to j.  Returns (cut_value, mask of nodes on the source side).
    """
    n = len(source_caps)
    s, t = n, n + 1
    net = FlowNetwork(n + 2)
    for i in range(n):
        if source_caps[i] > 0:
            net.add_edge(s, i, source_caps[i])
        if sink_caps[i] > 0:
            net.add_edge(i, t, sink_caps[i])
    for (i, j), c in zip(edges, edge_caps):
        if c > 0:
            net.add_edge(int(i), int(j), c)
    value = net.max_flow(s, t)
    return value, net.source_side(s)[:n]
