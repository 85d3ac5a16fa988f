"""Interaction graphs, grounded Laplacians and network sector constants.

Nodes are 0-based in the Python API.  Edge files are 1-based::

    # comment
    nodes: 4
    informed: 1,3
    1 2
    2 3
    3 4

``nodes:`` is optional (defaults to the largest index seen).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InteractionGraph",
    "laplacian",
    "grounded_laplacians",
    "sector_constants",
    "structural_bounds",
    "star",
    "cycle",
    "path",
    "generate",
    "read_graph",
    "write_graph",
    "all_reach_informed",
    "NONE_THRESHOLD",
]

NONE_THRESHOLD = 1e-12


@dataclass(frozen=True)
class InteractionGraph:
    N: int
    edges: frozenset
    informed: frozenset = frozenset()

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"graph needs at least one node, got N={self.N}")
        norm = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.N and 0 <= j < self.N):
                raise ValueError(f"edge ({i}, {j}) out of range for N={self.N}")
            norm.add((min(i, j), max(i, j)))
        inf = frozenset(int(v) for v in self.informed)
        if any(not 0 <= v < self.N for v in inf):
            raise ValueError(f"informed nodes {sorted(inf)} out of range for N={self.N}")
        object.__setattr__(self, "edges", frozenset(norm))
        object.__setattr__(self, "informed", inf)

    @classmethod
    def from_edges(cls, N: int, edges, informed=()) -> "InteractionGraph":
        return cls(N, frozenset(tuple(e) for e in edges), frozenset(informed))

    def with_edge(self, i: int, j: int) -> "InteractionGraph":
        return InteractionGraph(self.N, self.edges | {(i, j)}, self.informed)

    def with_informed(self, informed) -> "InteractionGraph":
        return InteractionGraph(self.N, self.edges, frozenset(informed))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.N, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def informed_indicator(self) -> np.ndarray:
        E = np.zeros((self.N, self.N))
        for v in self.informed:
            E[v, v] = 1.0
        return E


def laplacian(g: InteractionGraph) -> np.ndarray:
    Lap = np.zeros((g.N, g.N))
    for i, j in g.edges:
        Lap[i, j] -= 1.0
        Lap[j, i] -= 1.0
        Lap[i, i] += 1.0
        Lap[j, j] += 1.0
    return Lap


def _check_sector(m_psi: float, L_psi: float):
    if not 0 < m_psi <= L_psi:
        raise ValueError(f"need 0 < m_psi <= L_psi, got {m_psi}, {L_psi}")


def grounded_laplacians(g: InteractionGraph, m_psi: float, L_psi: float) -> tuple[np.ndarray, np.ndarray]:
    """``(Lap + m_psi E, Lap + L_psi E)`` with ``E`` the informed-node indicator."""
    _check_sector(m_psi, L_psi)
    Lap, E = laplacian(g), g.informed_indicator()
    return Lap + m_psi * E, Lap + L_psi * E


def sector_constants(g: InteractionGraph, m_psi: float, L_psi: float) -> tuple[float, float] | None:
    """``(lambda_min(L_s), lambda_max(L_b))``, or ``None`` when ``L_s`` is singular."""
    Ls, Lb = grounded_laplacians(g, m_psi, L_psi)
    m = float(np.linalg.eigvalsh(Ls)[0])
    if m <= NONE_THRESHOLD:
        return None
    return m, float(np.linalg.eigvalsh(Lb)[-1])


def structural_bounds(minimal_g: InteractionGraph, d_max: int, m_psi: float, L_psi: float) -> tuple[float, float]:
    """Bounds valid for every graph containing ``minimal_g`` with degree at most ``d_max``.

    ``m`` is the smallest eigenvalue of the minimal grounded Laplacian and
    ``L = 2 d_max + L_psi`` (Gershgorin on ``Lap + L_psi E``).
    """
    _check_sector(m_psi, L_psi)
    deg = minimal_g.degrees()
    if deg.size and deg.max() > d_max:
        raise ValueError(f"d_max={d_max} is below the minimal graph's degree {deg.max()}")
    Lm = laplacian(minimal_g) + m_psi * minimal_g.informed_indicator()
    return float(np.linalg.eigvalsh(Lm)[0]), 2.0 * d_max + L_psi


def all_reach_informed(g: InteractionGraph) -> bool:
    """Breadth-first check that every node has a path to an informed node."""
    adj = [[] for _ in range(g.N)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = set(g.informed)
    queue = deque(seen)
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == g.N


def star(N: int, informed=()) -> InteractionGraph:
    """Node 0 is the centre."""
    return InteractionGraph.from_edges(N, [(0, i) for i in range(1, N)], informed)


def cycle(N: int, informed=()) -> InteractionGraph:
    if N < 3:
        raise ValueError("a cycle needs at least 3 nodes")
    return InteractionGraph.from_edges(N, [(i, (i + 1) % N) for i in range(N)], informed)


def path(N: int, informed=()) -> InteractionGraph:
    return InteractionGraph.from_edges(N, [(i, i + 1) for i in range(N - 1)], informed)


_GENERATORS = {"star": star, "cycle": cycle, "path": path}


def generate(kind: str, N: int, informed=()) -> InteractionGraph:
    try:
        return _GENERATORS[kind](N, informed)
    except KeyError:
        raise ValueError(f"unknown graph kind {kind!r}; choose from {sorted(_GENERATORS)}") from None


def read_graph(path_: str) -> InteractionGraph:
    with open(path_) as fh:
        return parse_graph(fh.read())


def parse_graph(text: str) -> InteractionGraph:
    N = None
    informed: list[int] = []
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if sep:
            key = key.strip().lower()
            if key == "informed":
                informed = [int(t) - 1 for t in rest.replace(",", " ").split()]
            elif key == "nodes":
                N = int(rest)
            else:
                raise ValueError(f"line {lineno}: unknown header {key!r}")
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {raw!r}")
        edges.append((int(parts[0]) - 1, int(parts[1]) - 1))
    if N is None:
        idx = [v for e in edges for v in e] + informed
        if not idx:
            raise ValueError("empty graph file")
        N = max(idx) + 1
    return InteractionGraph.from_edges(N, edges, informed)


def write_graph(g: InteractionGraph, path_: str) -> None:
    lines = [f"nodes: {g.N}", "informed: " + ",".join(str(v + 1) for v in sorted(g.informed))]
    lines += [f"{i + 1} {j + 1}" for i, j in sorted(g.edges)]
    with open(path_, "w") as fh:
        fh.write("\n".join(lines) + "\n")
