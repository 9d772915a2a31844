"""Static fluid linear program, solved exactly in rational arithmetic.

The program allocates fractions ``xi_ij`` of each station's capacity to the
classes so that capacity-weighted service matches the arrival rates, while
minimizing the largest station utilization ``rho``::

    minimize rho
    s.t.  sum_j nu_j mu_ij xi_ij = lambda_i   for every class i
          sum_i xi_ij <= rho                  for every station j
          xi_ij >= 0

Everything is computed with :class:`fractions.Fraction`: optimality,
uniqueness of the optimum and the basic/nonbasic split of activities are all
exact, never thresholded.  Problem sizes are desk scale (a handful of
classes and stations), so a dense tableau simplex plus an exhaustive walk
over optimal bases is both simple and fast.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from nullq.model import NetworkSpec

Matrix = list[list[Fraction]]


class InfeasibleError(ValueError):
    """The fluid program has no feasible allocation."""


# ---------------------------------------------------------------------------
# Exact simplex
# ---------------------------------------------------------------------------


def _pivot(T: Matrix, basis: list[int], row: int, col: int) -> None:
    piv = T[row][col]
    T[row] = [v / piv for v in T[row]]
    for r in range(len(T)):
        if r != row and T[r][col] != 0:
            factor = T[r][col]
            T[r] = [v - factor * w for v, w in zip(T[r], T[row])]
    basis[row] = col


def _reduced_costs(T: Matrix, basis: list[int], c: list[Fraction]) -> list[Fraction]:
    ncols = len(T[0]) - 1
    rc = list(c)
    for r, bcol in enumerate(basis):
        coeff = c[bcol]
        if coeff != 0:
            for j in range(ncols):
                rc[j] -= coeff * T[r][j]
    return rc


def _simplex(T: Matrix, basis: list[int], c: list[Fraction]) -> None:
    """Run the simplex method to optimality in place (Bland's rule)."""
    ncols = len(T[0]) - 1
    while True:
        rc = _reduced_costs(T, basis, c)
        enter = next((j for j in range(ncols) if rc[j] < 0), None)
        if enter is None:
            return
        leave, best = None, None
        for r in range(len(T)):
            if T[r][enter] > 0:
                ratio = T[r][-1] / T[r][enter]
                if best is None or ratio < best or (ratio == best and basis[r] < basis[leave]):
                    leave, best = r, ratio
        if leave is None:
            raise ArithmeticError("LP unbounded; cannot happen for the fluid program")
        _pivot(T, basis, leave, enter)


def _solve_standard_form(A: Matrix, b: list[Fraction], c: list[Fraction]):
    """Two-phase simplex for ``min c.x : Ax = b, x >= 0``.

    Returns ``(tableau, basis)`` at an optimal basic solution over the
    original columns only.  Raises :class:`InfeasibleError` if empty.
    """
    m, n = len(A), len(A[0])
    T = [list(row) + [bi] for row, bi in zip(A, b)]
    for r in range(m):
        if T[r][-1] < 0:
            T[r] = [-v for v in T[r]]
    # phase 1: artificial columns n..n+m-1
    for r in range(m):
        T[r][len(T[r]) - 1 : len(T[r]) - 1] = [
            Fraction(int(r == k)) for k in range(m)
        ]
    basis = [n + r for r in range(m)]
    art_cost = [Fraction(0)] * n + [Fraction(1)] * m
    _simplex(T, basis, art_cost)
    value = sum(T[r][-1] for r in range(m) if basis[r] >= n)
    if value > 0:
        raise InfeasibleError("fluid program infeasible: arrival rates unreachable")
    # drive remaining zero-valued artificials out of the basis
    for r in range(m):
        if basis[r] >= n:
            col = next((j for j in range(n) if T[r][j] != 0), None)
            if col is not None:
                _pivot(T, basis, r, col)
    # rows still basic in an artificial are redundant; they carry zero value
    keep = [r for r in range(m) if basis[r] < n]
    T = [T[r][:n] + [T[r][-1]] for r in keep]
    basis = [basis[r] for r in keep]
    _simplex(T, basis, list(c))
    return T, basis


def _solution_from(T: Matrix, basis: list[int], n: int) -> list[Fraction]:
    x = [Fraction(0)] * n
    for r, col in enumerate(basis):
        x[col] = T[r][-1]
    return x


def _optimal_vertex_solutions(T: Matrix, basis: list[int], c: list[Fraction], n: int):
    """All distinct basic solutions on the optimal face, by walking zero
    reduced-cost pivots from the optimal basis found by the simplex."""
    seen_bases = {frozenset(basis)}
    solutions = {tuple(_solution_from(T, basis, n))}
    queue = [([row[:] for row in T], list(basis))]
    while queue:
        T0, b0 = queue.pop()
        rc = _reduced_costs(T0, b0, c)
        for enter in range(n):
            if enter in b0 or rc[enter] != 0:
                continue
            ratios = [
                (T0[r][-1] / T0[r][enter], r)
                for r in range(len(T0))
                if T0[r][enter] > 0
            ]
            if not ratios:
                continue  # zero-cost ray; face unbounded in slack directions only
            best = min(ratio for ratio, _ in ratios)
            for ratio, r in ratios:
                if ratio != best:
                    continue
                T1 = [row[:] for row in T0]
                b1 = list(b0)
                _pivot(T1, b1, r, enter)
                key = frozenset(b1)
                if key not in seen_bases:
                    seen_bases.add(key)
                    solutions.add(tuple(_solution_from(T1, b1, n)))
                    queue.append((T1, b1))
    return [list(sol) for sol in solutions]


# ---------------------------------------------------------------------------
# Fluid solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FluidSolution:
    """Optimal capacity allocation and derived fluid quantities."""

    xi_star: tuple[tuple[Fraction, ...], ...]
    rho_star: Fraction
    mu_bar: tuple[tuple[Fraction, ...], ...]
    psi_star: tuple[tuple[Fraction, ...], ...]   # xi_star * nu (server headcounts / n)
    x_star: tuple[Fraction, ...]                 # per-class fluid headcount
    basic_edges: frozenset[tuple[int, int]]
    nonbasic_edges: frozenset[tuple[int, int]]
    unique: bool
    alternatives: tuple[tuple[tuple[Fraction, ...], ...], ...]
    heavy_traffic: bool
    resource_pooling: bool

    @property
    def class_count(self) -> int:
        return len(self.x_star)

    @property
    def station_count(self) -> int:
        return len(self.xi_star[0])


def solve_static_lp(spec: NetworkSpec) -> FluidSolution:
    """Solve the fluid allocation program and classify activities.

    The optimum is found by an exact two-phase simplex; all vertices of the
    optimal face are then enumerated so uniqueness is decided exactly.
    """
    I, J = spec.class_count, spec.station_count
    activities = spec.activities
    mu_bar = spec.mu_bar()
    E = len(activities)
    nvar = E + 1 + J  # xi per activity, rho, one slack per station

    A: Matrix = []
    b: list[Fraction] = []
    for i in range(I):
        row = [Fraction(0)] * nvar
        for k, (ai, aj) in enumerate(activities):
            if ai == i:
                row[k] = mu_bar[ai][aj]
        A.append(row)
        b.append(spec.lam[i])
    for j in range(J):
        row = [Fraction(0)] * nvar
        for k, (ai, aj) in enumerate(activities):
            if aj == j:
                row[k] = Fraction(1)
        row[E] = Fraction(-1)      # -rho
        row[E + 1 + j] = Fraction(1)  # slack
        A.append(row)
        b.append(Fraction(0))
    cost = [Fraction(0)] * nvar
    cost[E] = Fraction(1)

    T, basis = _solve_standard_form(A, b, cost)
    vertices = _optimal_vertex_solutions(T, basis, cost, nvar)

    def to_xi(sol: list[Fraction]) -> tuple[tuple[Fraction, ...], ...]:
        xi = [[Fraction(0)] * J for _ in range(I)]
        for k, (ai, aj) in enumerate(activities):
            xi[ai][aj] = sol[k]
        return tuple(tuple(row) for row in xi)

    xi_solutions = sorted({to_xi(sol) for sol in vertices})
    rho_star = vertices[0][E]
    xi_star = to_xi(_solution_from(T, basis, nvar))
    unique = len(xi_solutions) == 1
    alternatives = tuple(x for x in xi_solutions if x != xi_star)

    psi_star = tuple(
        tuple(xi_star[i][j] * spec.nu[j] for j in range(J)) for i in range(I)
    )
    x_star = tuple(sum(psi_star[i][j] for j in range(J)) for i in range(I))
    basic = frozenset((i, j) for (i, j) in activities if xi_star[i][j] > 0)
    nonbasic = frozenset(activities) - basic

    col_sums_one = all(
        sum(xi_star[i][j] for i in range(I)) == 1 for j in range(J)
    )
    heavy = unique and col_sums_one and rho_star == 1
    pooling = heavy and _is_spanning_tree(basic, I, J)

    return FluidSolution(
        xi_star=xi_star,
        rho_star=rho_star,
        mu_bar=tuple(tuple(row) for row in mu_bar),
        psi_star=psi_star,
        x_star=x_star,
        basic_edges=basic,
        nonbasic_edges=nonbasic,
        unique=unique,
        alternatives=alternatives,
        heavy_traffic=heavy,
        resource_pooling=pooling,
    )


def _is_spanning_tree(edges: frozenset[tuple[int, int]], I: int, J: int) -> bool:
    if len(edges) != I + J - 1:
        return False
    adj: dict[int, list[int]] = {v: [] for v in range(I + J)}
    for i, j in edges:
        adj[i].append(I + j)
        adj[I + j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == I + J


def check_heavy_traffic(sol: FluidSolution) -> tuple[bool, str]:
    """Heavy-traffic verdict with a human-readable certificate."""
    if not sol.unique:
        alt = sol.alternatives[0] if sol.alternatives else sol.xi_star
        return False, f"optimum not unique; alternative vertex xi = {_fmt(alt)}"
    for j in range(sol.station_count):
        colsum = sum(sol.xi_star[i][j] for i in range(sol.class_count))
        if colsum != 1:
            return False, f"station {j} utilization {colsum} != 1"
    if sol.rho_star != 1:
        return False, f"rho* = {sol.rho_star} != 1"
    return True, "unique optimum with every station fully utilized"


def check_resource_pooling(sol: FluidSolution) -> bool:
    """True iff the basic activities form a spanning tree of all vertices."""
    return _is_spanning_tree(sol.basic_edges, sol.class_count, sol.station_count)


def feasibility_residuals(spec: NetworkSpec, sol: FluidSolution) -> list[Fraction]:
    """Per-class residual of the equality constraints (exact; all zero)."""
    mu_bar = spec.mu_bar()
    return [
        sum(mu_bar[i][j] * sol.xi_star[i][j] for j in range(spec.station_count))
        - spec.lam[i]
        for i in range(spec.class_count)
    ]


def _fmt(xi) -> str:
    return "[" + "; ".join(" ".join(str(v) for v in row) for row in xi) + "]"
