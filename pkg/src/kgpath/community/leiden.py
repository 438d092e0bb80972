"""Leiden community detection optimizing modularity with a resolution parameter.

The three phases follow the usual structure: fast local moving over a
queue, refinement of each community into well-connected sub-communities
(greedy merges only, so the same seed always gives the same answer), and
aggregation of the refined partition with the unrefined one as its
starting point. Refined communities are connected by construction, which is
what guarantees connected output communities.
"""

from __future__ import annotations

import random
from collections import deque
from collections.abc import Hashable, Mapping
from dataclasses import dataclass

_EPS = 1e-12


@dataclass
class _Graph:
    adj: list[dict[int, float]]  # no self-loops
    self_w: list[float]
    strength: list[float]
    total: float  # 2m

    @property
    def n(self) -> int:
        return len(self.adj)


def _build(nodes: list, weights: Mapping[Hashable, Mapping[Hashable, float]]) -> _Graph:
    index = {v: i for i, v in enumerate(nodes)}
    adj: list[dict[int, float]] = [dict() for _ in nodes]
    self_w = [0.0] * len(nodes)
    for u, nbrs in weights.items():
        for v, w in nbrs.items():
            if w <= 0:
                raise ValueError(f"edge weight must be positive, got {w} on ({u!r}, {v!r})")
            i, j = index[u], index[v]
            if i == j:
                self_w[i] = max(self_w[i], float(w))
            else:
                # accept either one-sided or symmetric input
                adj[i][j] = max(adj[i].get(j, 0.0), float(w))
                adj[j][i] = adj[i][j]
    strength = [sum(a.values()) + 2 * s for a, s in zip(adj, self_w)]
    return _Graph(adj, self_w, strength, sum(strength))


def _modularity(g: _Graph, part: list[int], resolution: float) -> float:
    if g.total == 0:
        return 0.0
    internal: dict[int, float] = {}
    tot: dict[int, float] = {}
    for i in range(g.n):
        c = part[i]
        tot[c] = tot.get(c, 0.0) + g.strength[i]
        internal[c] = internal.get(c, 0.0) + g.self_w[i]
        for j, w in g.adj[i].items():
            if j > i and part[j] == c:
                internal[c] += w
    m = g.total / 2
    return sum(internal.get(c, 0.0) / m - resolution * (tot[c] / g.total) ** 2 for c in tot)


def modularity(weights: Mapping, partition: Mapping, resolution: float = 1.0) -> float:
    """Modularity of ``partition`` (node -> community label) on a weighted graph."""
    nodes = sorted(weights, key=repr)
    g = _build(nodes, weights)
    labels: dict = {}
    part = [labels.setdefault(partition[v], len(labels)) for v in nodes]
    return _modularity(g, part, resolution)


def _move_nodes(g: _Graph, part: list[int], resolution: float, rng: random.Random) -> bool:
    n = g.n
    tot = [0.0] * n
    size = [0] * n
    for i in range(n):
        tot[part[i]] += g.strength[i]
        size[part[i]] += 1
    free = [c for c in range(n - 1, -1, -1) if size[c] == 0]
    order = list(range(n))
    rng.shuffle(order)
    queue = deque(order)
    queued = [True] * n
    scale = resolution / g.total
    moved = False
    while queue:
        v = queue.popleft()
        queued[v] = False
        cur = part[v]
        kv = g.strength[v]
        wc: dict[int, float] = {}
        for u, w in g.adj[v].items():
            wc[part[u]] = wc.get(part[u], 0.0) + w
        tot[cur] -= kv
        size[cur] -= 1
        best = cur
        best_gain = wc.get(cur, 0.0) - scale * kv * tot[cur]
        for c in sorted(wc):
            if c == cur:
                continue
            gain = wc[c] - scale * kv * tot[c]
            if gain > best_gain + _EPS:
                best, best_gain = c, gain
        if best_gain < -_EPS and size[cur] > 0:
            best = free.pop()
            best_gain = 0.0
        if size[cur] == 0 and best != cur:
            free.append(cur)
        tot[best] += kv
        size[best] += 1
        if best != cur:
            part[v] = best
            moved = True
            for u in g.adj[v]:
                if part[u] != best and not queued[u]:
                    queued[u] = True
                    queue.append(u)
    return moved


def _refine(g: _Graph, part: list[int], resolution: float, rng: random.Random) -> list[int]:
    n = g.n
    refined = list(range(n))
    r_tot = list(g.strength)
    r_size = [1] * n
    members: dict[int, list[int]] = {}
    for i in range(n):
        members.setdefault(part[i], []).append(i)
    scale = resolution / g.total
    r_ext = [0.0] * n
    for c in sorted(members):
        nodes = members[c]
        k_c = sum(g.strength[i] for i in nodes)
        ext = {}
        for v in nodes:
            ext[v] = sum(w for u, w in g.adj[v].items() if part[u] == c)
            r_ext[v] = ext[v]
        order = list(nodes)
        rng.shuffle(order)
        for v in order:
            if r_size[refined[v]] != 1:
                continue
            kv = g.strength[v]
            if ext[v] < scale * kv * (k_c - kv) - _EPS:
                continue
            wr: dict[int, float] = {}
            for u, w in g.adj[v].items():
                if part[u] == c:
                    wr[refined[u]] = wr.get(refined[u], 0.0) + w
            best, best_gain = None, 0.0
            for t in sorted(wr):
                if t == refined[v]:
                    continue
                if r_ext[t] < scale * r_tot[t] * (k_c - r_tot[t]) - _EPS:
                    continue
                gain = wr[t] - scale * kv * r_tot[t]
                if gain > best_gain + _EPS:
                    best, best_gain = t, gain
            if best is None:
                continue
            old = refined[v]
            r_size[old] -= 1
            r_tot[old] -= kv
            refined[v] = best
            r_ext[best] = r_ext[best] + ext[v] - 2 * wr[best]
            r_tot[best] += kv
            r_size[best] += 1
    return refined


def _relabel(labels: list[int]) -> tuple[list[int], int]:
    seen: dict[int, int] = {}
    out = [seen.setdefault(x, len(seen)) for x in labels]
    return out, len(seen)


def _aggregate(g: _Graph, groups: list[int]) -> tuple[_Graph, list[int]]:
    groups, k = _relabel(groups)
    adj: list[dict[int, float]] = [dict() for _ in range(k)]
    self_w = [0.0] * k
    for i in range(g.n):
        a = groups[i]
        self_w[a] += g.self_w[i]
        for j, w in g.adj[i].items():
            b = groups[j]
            if a == b:
                if j > i:
                    self_w[a] += w
            else:
                adj[a][b] = adj[a].get(b, 0.0) + w
    strength = [sum(x.values()) + 2 * s for x, s in zip(adj, self_w)]
    return _Graph(adj, self_w, strength, g.total), groups


def _components(g: _Graph, part: list[int]) -> list[int]:
    """Split every community into its connected components."""
    out = [-1] * g.n
    label = 0
    for s in range(g.n):
        if out[s] != -1:
            continue
        out[s] = label
        stack = [s]
        while stack:
            v = stack.pop()
            for u in g.adj[v]:
                if out[u] == -1 and part[u] == part[s]:
                    out[u] = label
                    stack.append(u)
        label += 1
    return out


def _one_pass(base: _Graph, part: list[int], resolution: float, rng: random.Random,
              max_levels: int = 64) -> list[int]:
    g = base
    to_agg = list(range(base.n))
    part = list(part)
    for _ in range(max_levels):
        _move_nodes(g, part, resolution, rng)
        part, n_comm = _relabel(part)
        if n_comm == g.n:
            break
        refined = _refine(g, part, resolution, rng)
        if len(set(refined)) == g.n:
            refined = part  # refinement merged nothing; fall back to plain aggregation
        agg, groups = _aggregate(g, refined)
        agg_part = [0] * agg.n
        for i in range(g.n):
            agg_part[groups[i]] = part[i]
        to_agg = [groups[a] for a in to_agg]
        g, part = agg, agg_part
    return [part[a] for a in to_agg]


def leiden_partition(
    weights: Mapping[Hashable, Mapping[Hashable, float]],
    resolution: float = 1.0,
    seed: int = 0,
    max_iterations: int = 10,
    trace: list[float] | None = None,
) -> dict:
    """Partition a weighted undirected graph with Leiden.

    Args:
        weights: ``{node: {neighbor: weight}}``. Every node must appear as a
            key, including isolated ones. One-sided edges are mirrored.
        resolution: Modularity resolution; larger values give smaller communities.
        seed: Seeds node visiting order. Same inputs and seed give the same result.
        max_iterations: Full Leiden passes to run while modularity still improves.
        trace: If given, receives the modularity before the first pass and after
            every pass.

    Returns:
        ``{node: community_index}``. Indices are contiguous from 0 and assigned
        in order of each community's first node (nodes sorted by ``repr``).
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    nodes = sorted(weights, key=repr)
    if not nodes:
        return {}
    g = _build(nodes, weights)
    if g.total == 0:
        return {v: i for i, v in enumerate(nodes)}
    rng = random.Random(seed)
    part = list(range(g.n))
    quality = _modularity(g, part, resolution)
    if trace is not None:
        trace.append(quality)
    for _ in range(max_iterations):
        candidate, _ = _relabel(_components(g, _one_pass(g, part, resolution, rng)))
        q = _modularity(g, candidate, resolution)
        if q < quality - 1e-12:
            break
        if trace is not None:
            trace.append(q)
        if candidate == part or q <= quality + 1e-12:
            part = candidate
            break
        part, quality = candidate, q
    return dict(zip(nodes, part))
