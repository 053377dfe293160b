"""Directed communication graphs and the mixing weights derived from them.

Edge convention throughout: ``(u, v)`` means *u transmits to v*, so ``u`` is an
in-neighbor of ``v``. Self-loops are never stored; the weight builders add the
self term themselves.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ppacdc.rng import SplitMix64


class GraphFormatError(ValueError):
    """Raised for malformed graph text files."""


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: tuple[tuple[int, int], ...]
    in_adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    out_adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        ins: list[list[int]] = [[] for _ in range(self.n)]
        outs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            outs[u].append(v)
            ins[v].append(u)
        object.__setattr__(self, "in_adj", tuple(tuple(sorted(a)) for a in ins))
        object.__setattr__(self, "out_adj", tuple(tuple(sorted(a)) for a in outs))

    @property
    def m(self) -> int:
        return len(self.edges)

    def in_degree(self, j: int) -> int:
        return len(self.in_adj[j])

    def out_degree(self, j: int) -> int:
        return len(self.out_adj[j])

    def relabel(self, perm: Iterable[int]) -> "Digraph":
        """Return the isomorphic graph with node ``i`` renamed ``perm[i]``."""
        perm = list(perm)
        return build_digraph(self.n, [(perm[u], perm[v]) for u, v in self.edges])


def build_digraph(n: int, edge_list: Iterable[tuple[int, int]]) -> Digraph:
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got n={n}")
    seen: set[tuple[int, int]] = set()
    for u, v in edge_list:
        u, v = int(u), int(v)
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) has a node id outside 0..{n - 1}")
        if u == v:
            raise ValueError(f"self-loop ({u}, {v}) is not allowed")
        if (u, v) in seen:
            raise ValueError(f"duplicate edge ({u}, {v})")
        seen.add((u, v))
    return Digraph(n, tuple(sorted(seen)))


def _reachable(adj: tuple[tuple[int, ...], ...], start: int) -> list[int]:
    """BFS hop distances from ``start``; -1 marks unreachable nodes."""
    dist = [-1] * len(adj)
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_strongly_connected(g: Digraph) -> bool:
    return min(_reachable(g.out_adj, 0)) >= 0 and min(_reachable(g.in_adj, 0)) >= 0


def diameter(g: Digraph) -> int:
    """Longest shortest directed path over all ordered node pairs."""
    best = 0
    for src in range(g.n):
        dist = _reachable(g.out_adj, src)
        if min(dist) < 0:
            raise ValueError("diameter is undefined: graph is not strongly connected")
        best = max(best, max(dist))
    return best


def pull_weights(g: Digraph) -> np.ndarray:
    """Row-stochastic R with ``R[j, i] = 1 / (1 + din_j)`` for i in N_j^- and i = j."""
    R = np.zeros((g.n, g.n))
    for j in range(g.n):
        r = 1.0 / (1 + g.in_degree(j))
        R[j, j] = r
        for i in g.in_adj[j]:
            R[j, i] = r
    return R


def push_weights(g: Digraph) -> np.ndarray:
    """Column-stochastic C with ``C[l, j] = 1 / (1 + dout_j)`` for l in N_j^+ and l = j."""
    C = np.zeros((g.n, g.n))
    for j in range(g.n):
        c = 1.0 / (1 + g.out_degree(j))
        C[j, j] = c
        for l in g.out_adj[j]:
            C[l, j] = c
    return C


def random_strongly_connected(n: int, extra_edge_prob: float, seed: int) -> Digraph:
    """Random Hamiltonian cycle plus independent extra edges.

    The cycle order is a Fisher-Yates shuffle of ``0..n-1`` driven by
    splitmix64; afterwards every ordered pair not on the cycle is visited in
    lexicographic order and kept when a fresh uniform draw is below
    ``extra_edge_prob``. One draw is consumed per visited pair regardless of
    the probability, so the stream layout does not depend on it.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got n={n}")
    if not 0.0 <= extra_edge_prob <= 1.0:
        raise ValueError("extra_edge_prob must lie in [0, 1]")
    rng = SplitMix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    edges = {(order[i], order[(i + 1) % n]) for i in range(n)}
    for u in range(n):
        for v in range(n):
            if u == v or (u, v) in edges:
                continue
            if rng.uniform() < extra_edge_prob:
                edges.add((u, v))
    return build_digraph(n, edges)


def cycle_graph(n: int) -> Digraph:
    return build_digraph(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> Digraph:
    return build_digraph(n, [(u, v) for u in range(n) for v in range(n) if u != v])


# -- text format -------------------------------------------------------------


def format_graph(g: Digraph, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"{g.n} {g.m}")
    lines.extend(f"{u} {v}" for u, v in g.edges)
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> Digraph:
    header: tuple[int, int] | None = None
    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected two integers, got {raw!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: expected two integers, got {raw!r}") from None
        if header is None:
            if a < 2 or b < 0:
                raise GraphFormatError(f"line {lineno}: bad header 'n m' = {a} {b}")
            header = (a, b)
            continue
        if (a, b) in seen:
            raise GraphFormatError(f"line {lineno}: duplicate edge ({a}, {b})")
        try:
            build_digraph(header[0], [(a, b)])
        except ValueError as exc:
            raise GraphFormatError(f"line {lineno}: {exc}") from None
        seen.add((a, b))
        edges.append((a, b))
    if header is None:
        raise GraphFormatError("missing 'n m' header line")
    if len(edges) != header[1]:
        raise GraphFormatError(f"header announces {header[1]} edges, found {len(edges)}")
    try:
        return build_digraph(header[0], edges)
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from None


def load_graph(path: str | Path) -> Digraph:
    return parse_graph(Path(path).read_text())


def save_graph(g: Digraph, path: str | Path, comment: str | None = None) -> None:
    Path(path).write_text(format_graph(g, comment))
