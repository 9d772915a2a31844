"""Activity-graph machinery: simple cycles, control directions, and the
tree-based assignment maps.

The bipartite activity graph has classes and stations as vertices and
activities as edges.  Under complete resource pooling the basic activities
form a spanning tree, so every nonbasic activity closes exactly one cycle
(its *simple cycle*).  Shifting customers around such a cycle moves the
class headcounts along the signed rate vector ``m_c``; a cycle with
``sum(m_c) < 0`` lets the controller push the total headcount down, which is
the null-controllability criterion.

The assignment map ``G`` solves, on the basic tree, for the in-service
matrix with prescribed row sums (per class) and column sums (per station).
On a tree the solution is obtained by leaf elimination, involves no
division, and is therefore exact on integers and rationals alike.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from nullq.fluid import FluidSolution
from nullq.model import NetworkSpec


@dataclass(frozen=True)
class ActivityGraph:
    """Bipartite graph of activities with its basic/nonbasic split."""

    class_count: int
    station_count: int
    edges: frozenset[tuple[int, int]]
    basic: frozenset[tuple[int, int]]

    @property
    def nonbasic(self) -> frozenset[tuple[int, int]]:
        return self.edges - self.basic

    @classmethod
    def from_fluid(cls, spec: NetworkSpec, fluid: FluidSolution) -> "ActivityGraph":
        return cls(
            class_count=spec.class_count,
            station_count=spec.station_count,
            edges=frozenset(spec.activities),
            basic=fluid.basic_edges,
        )


@dataclass(frozen=True)
class SimpleCycle:
    """A cycle of the activity graph containing exactly one nonbasic edge.

    ``vertices`` alternates class and station indices starting at the
    nonbasic edge's class; ``sign`` orients each edge along the cycle, with
    the nonbasic edge directed class -> station (sign -1) and signs
    alternating around the cycle.
    """

    nonbasic_edge: tuple[int, int]
    vertices: tuple[tuple[str, int], ...]
    edges: tuple[tuple[int, int], ...]
    sign: dict[tuple[int, int], int] = field(hash=False)

    def classes(self) -> list[int]:
        return [idx for kind, idx in self.vertices if kind == "class"]

    def direction(self, mu: Sequence[Sequence]) -> tuple:
        """Control direction: per class, the signed sum of its cycle rates."""
        out = []
        for i in range(len(mu)):
            out.append(sum((self.sign[(ci, cj)] * mu[ci][cj] for ci, cj in self.edges if ci == i),
                           start=0))
        return tuple(out)


def enumerate_simple_cycles(graph: ActivityGraph) -> list[SimpleCycle]:
    """One simple cycle per nonbasic edge: the edge plus the unique path
    between its endpoints through the basic tree."""
    I = graph.class_count
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {
        v: [] for v in range(I + graph.station_count)
    }
    for i, j in graph.basic:
        adj[i].append((I + j, (i, j)))
        adj[I + j].append((i, (i, j)))

    def tree_path(src: int, dst: int) -> list[tuple[int, tuple[int, int]]]:
        # DFS through the tree; returns [(vertex, edge-used)] from src to dst
        stack = [(src, [])]
        seen = {src}
        while stack:
            v, path = stack.pop()
            if v == dst:
                return path
            for w, edge in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append((w, path + [(w, edge)]))
        raise ValueError("basic edges do not span the graph; tree condition violated")

    cycles = []
    for i0, j0 in sorted(graph.nonbasic):
        path = tree_path(I + j0, i0)
        vertices: list[tuple[str, int]] = [("class", i0), ("station", j0)]
        edges: list[tuple[int, int]] = [(i0, j0)]
        sign = {(i0, j0): -1}
        s = 1
        for v, edge in path:
            vertices.append(("class", v) if v < I else ("station", v - I))
            edges.append(edge)
            sign[edge] = s
            s = -s
        vertices.pop()  # last path vertex is i0 again, already listed first
        cycles.append(
            SimpleCycle(
                nonbasic_edge=(i0, j0),
                vertices=tuple(vertices),
                edges=tuple(edges),
                sign=sign,
            )
        )
    return cycles


def control_direction(cycle: SimpleCycle, mu: Sequence[Sequence]) -> tuple:
    return cycle.direction(mu)


def check_null_controllability(
    cycles: Sequence[SimpleCycle], mu: Sequence[Sequence]
) -> Optional[SimpleCycle]:
    """Pick a cycle whose direction lowers total headcount, if one exists.

    Ties are broken by the most negative directional sum, then by the
    lexicographically smallest nonbasic edge.
    """
    best = None
    best_key = None
    for cycle in cycles:
        total = sum(cycle.direction(mu))
        if total < 0:
            key = (total, cycle.nonbasic_edge)
            if best_key is None or key < best_key:
                best, best_key = cycle, key
    return best


# ---------------------------------------------------------------------------
# Assignment maps
# ---------------------------------------------------------------------------


class AssignmentMaps:
    """The linear solution map ``G`` on the basic tree and the drift ``H``.

    ``G(a, b)`` is the unique matrix supported on basic edges with row sums
    ``a`` and column sums ``b`` (requires ``sum(a) == sum(b)``), computed by
    leaf elimination in O(I + J).  ``H(a, b) = -sum_j mu_ij G_ij(a, b)``.
    """

    def __init__(self, graph: ActivityGraph, mu: Sequence[Sequence]):
        self.graph = graph
        self.mu = mu
        self.I = graph.class_count
        self.J = graph.station_count
        self._order = self._elimination_order()

    def _elimination_order(self) -> list[tuple[int, int, tuple[int, int]]]:
        """List of (leaf vertex, neighbor, edge) in elimination sequence."""
        I = self.I
        degree = {v: 0 for v in range(I + self.J)}
        adj: dict[int, set[tuple[int, int]]] = {v: set() for v in degree}
        for i, j in self.graph.basic:
            degree[i] += 1
            degree[I + j] += 1
            adj[i].add((i, j))
            adj[I + j].add((i, j))
        order = []
        leaves = [v for v, d in degree.items() if d == 1]
        while leaves:
            v = leaves.pop()
            if not adj[v]:
                continue
            (edge,) = adj[v]
            i, j = edge
            w = I + j if v == i else i
            order.append((v, w, edge))
            adj[v].discard(edge)
            adj[w].discard(edge)
            degree[w] -= 1
            if degree[w] == 1:
                leaves.append(w)
        if len(order) != len(self.graph.basic):
            raise ValueError("basic edges contain a cycle; tree condition violated")
        return order

    def solve(self, a: Sequence, b: Sequence, check: bool = True) -> list[list]:
        """Evaluate ``G(a, b)`` as an I x J matrix (zeros off basic edges)."""
        if check:
            sa, sb = sum(a), sum(b)
            if isinstance(sa, float) or isinstance(sb, float):
                scale = 1 + abs(sa) + abs(sb)
                if abs(sa - sb) > 1e-9 * scale:
                    raise ValueError(f"domain violation: sum(a) = {sa} != sum(b) = {sb}")
            elif sa != sb:
                raise ValueError(f"domain violation: sum(a) = {sa} != sum(b) = {sb}")
        I, J = self.I, self.J
        residual = list(a) + list(b)
        psi = [[0 * a[0]] * J for _ in range(I)]
        for v, w, (i, j) in self._order:
            value = residual[v]
            psi[i][j] = value
            residual[w] -= value
            residual[v] -= value
        return psi

    def drift(self, a: Sequence, b: Sequence, mu: Optional[Sequence[Sequence]] = None,
              check: bool = True) -> list:
        """``H(a, b)``; pass finite-scale rates via ``mu`` for the n-version."""
        rates = self.mu if mu is None else mu
        psi = self.solve(a, b, check=check)
        return [
            -sum(rates[i][j] * psi[i][j] for j in range(self.J))
            for i in range(self.I)
        ]

    def _domain_extreme_points(self):
        """Extreme points of the unit l1-ball intersected with the balanced
        hyperplane sum(a) = sum(b): two half-unit coordinates whose signed
        contributions cancel."""
        I, J = self.I, self.J
        half = Fraction(1, 2)
        pts = []
        for i, k in itertools.combinations(range(I), 2):
            a = [Fraction(0)] * I
            a[i], a[k] = half, -half
            pts.append((a, [Fraction(0)] * J))
        for j, k in itertools.combinations(range(J), 2):
            b = [Fraction(0)] * J
            b[j], b[k] = half, -half
            pts.append(([Fraction(0)] * I, b))
        for i in range(I):
            for j in range(J):
                a = [Fraction(0)] * I
                b = [Fraction(0)] * J
                a[i] = half
                b[j] = half
                pts.append((a, b))
        return pts

    def lipschitz_constant(self) -> Fraction:
        """Smallest ``C`` with ``||H(a,b)||_1 <= (C / 2I)(||a||_1 + ||b||_1)``
        on the balanced domain; the supremum is attained at an extreme point
        of the unit cross-polytope section."""
        best = Fraction(0)
        for a, b in self._domain_extreme_points():
            h = self.drift(a, b, check=False)
            norm = sum(abs(v) for v in h)
            best = max(best, norm)
        return 2 * self.I * best
