"""Scheduling control policies.

Three policies operate on the engine's state:

- :class:`GreedyPolicy` is a plain work-conserving baseline (used for
  single-class calibration and as the preemptive policy's fallback).
- :class:`PreemptivePolicy` recomputes the whole assignment after every
  event as a function of the headcount vector alone: queue and idleness are
  concentrated in one class / one station, a block of ``round(n^{3/4})``
  customers is parked on the chosen cycle's nonbasic activity whenever the
  centered total headcount is above ``-sqrt(n)``, and the rest of the
  matrix is the tree assignment map evaluated at integer arguments (exact:
  leaf elimination involves no division).
- :class:`NonpreemptivePolicy` (two classes, two stations) controls only
  routing: class-1 arrivals chase the station with more free servers, and
  class-2 arrivals are split by a biased coin into a trickle routed to the
  nonbasic station (keeping its occupancy near ``kappa * n^{5/8} * e^{gamma t}``)
  and a bulk routed to its basic station.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from nullq.cycles import ActivityGraph, AssignmentMaps, SimpleCycle
from nullq.engine import RngStreams, SystemState, Trace
from nullq.fluid import FluidSolution
from nullq.model import NetworkSpec, ScaledInstance


class PolicyError(ValueError):
    """Policy preconditions not met for this instance."""


# ---------------------------------------------------------------------------
# Greedy baseline
# ---------------------------------------------------------------------------


class GreedyPolicy:
    """Work-conserving policy: park every customer at any free compatible
    server, refill freed servers from the queues in class order."""

    name = "greedy"

    def __init__(self, spec: NetworkSpec):
        self.activities = spec.activities
        self.stations_of = [
            [j for (i2, j) in self.activities if i2 == i]
            for i in range(spec.class_count)
        ]
        self.classes_of = [
            [i for (i, j2) in self.activities if j2 == j]
            for j in range(spec.station_count)
        ]

    def init(self, state: SystemState, instance: ScaledInstance, rng: RngStreams):
        remaining = list(state.X)
        for i, j in self.activities:
            free = state.N[j] - sum(state.Psi[k][j] for k in range(len(state.X)))
            take = min(remaining[i], free)
            if take > 0:
                state.Psi[i][j] += take
                remaining[i] -= take

    def _place(self, state: SystemState, i: int) -> bool:
        best_j, best_z = -1, 0
        for j in self.stations_of[i]:
            if state.Z[j] > best_z:
                best_j, best_z = j, state.Z[j]
        if best_j < 0:
            return False
        state.Psi[i][best_j] += 1
        state.Z[best_j] -= 1
        return True

    def on_arrival(self, state, i, trace, rng):
        if not self._place(state, i):
            state.Y[i] += 1

    def on_completion(self, state, i, j, trace, rng):
        state.Z[j] += 1
        for k in self.classes_of[j]:
            if state.Y[k] > 0:
                state.Y[k] -= 1
                state.Psi[k][j] += 1
                state.Z[j] -= 1
                return


# ---------------------------------------------------------------------------
# Preemptive policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreemptiveConfig:
    """Choices the preemptive construction leaves open."""

    cycle: SimpleCycle           # cycle with negative directional sum
    i0: int                      # class absorbing the queue
    j0: int                      # station absorbing the idleness
    a0: Fraction                 # guard radius (per sqrt(n)) for the assignment map
    block_exponent: float = 0.75  # nonbasic block size round(n^exponent)


def default_guard_radius(fluid: FluidSolution, maps: AssignmentMaps) -> Fraction:
    """Guard radius keeping the tree assignment provably nonnegative.

    Uses half of ``min basic psi* / C3`` where ``C3`` bounds the assignment
    map's response to the centered state, the concentrated queue/idleness
    and the cycle block.
    """
    ext = maps._domain_extreme_points()
    L_G = Fraction(0)
    for a, b in ext:
        psi = maps.solve(a, b, check=False)
        L_G = max(L_G, max(abs(v) for row in psi for v in row))
    L_G = 2 * L_G  # extreme points have l1 norm 1/2 per block, scale to 1
    I = maps.I
    C3 = L_G * (2 * I + 1) + 1
    min_psi = min(fluid.psi_star[i][j] for (i, j) in fluid.basic_edges)
    return Fraction(min_psi, 2 * C3)


class PreemptivePolicy:
    """Feedback assignment policy; see module docs for the construction."""

    name = "preemptive"

    def __init__(
        self,
        instance: ScaledInstance,
        fluid: FluidSolution,
        maps: AssignmentMaps,
        config: PreemptiveConfig,
    ):
        spec = instance.spec
        if sum(config.cycle.direction(spec.mu)) >= 0:
            raise PolicyError("chosen cycle does not lower total headcount")
        self.instance = instance
        self.config = config
        self.I = spec.class_count
        self.J = spec.station_count
        n = instance.n
        self.sqrt_n = instance.sqrt_n
        self.N = list(instance.N_n)
        self.eN = sum(self.N)
        self.x_center = [n * x for x in instance.x_star]
        self.e_x_center = float(n * sum(fluid.x_star))
        self.guard = float(config.a0) * n
        self.block = int(round(n ** config.block_exponent))
        self.i0 = config.i0
        self.j0 = config.j0
        self.cycle_terms = [
            (i, j, config.cycle.sign[(i, j)]) for (i, j) in config.cycle.edges
        ]
        order = maps._order
        self.order = [(v, w, i, j) for (v, w, (i, j)) in order]
        # fallback fill order: basic activities in tree order, then nonbasic
        basic_sorted = sorted(fluid.basic_edges)
        nonbasic_sorted = sorted(fluid.nonbasic_edges)
        self.fill_order = basic_sorted + nonbasic_sorted

    # -- assignment ---------------------------------------------------------

    def assignment(self, X: list[int]) -> Optional[tuple[list, list, list]]:
        """(Y, Z, Psi) for headcounts X, or None if the map goes negative."""
        I, J = self.I, self.J
        eX = 0
        for v in X:
            eX += v
        u = eX - self.eN
        Y = [0] * I
        Z = [0] * J
        if u > 0:
            Y[self.i0] = u
        elif u < 0:
            Z[self.j0] = -u
        block = 0 if (eX - self.e_x_center) < -self.sqrt_n else self.block
        res = [0] * (I + J)
        for i in range(I):
            res[i] = X[i] - Y[i]
        for j in range(J):
            res[I + j] = self.N[j] - Z[j]
        psi = [[0] * J for _ in range(I)]
        for v, w, i, j in self.order:
            val = res[v]
            psi[i][j] = val
            res[w] -= val
            res[v] = 0
        if block:
            for i, j, s in self.cycle_terms:
                psi[i][j] -= s * block
        for row in psi:
            for v in row:
                if v < 0:
                    return None
        return Y, Z, psi

    def _greedy_fill(self, state: SystemState) -> None:
        I, J = self.I, self.J
        psi = [[0] * J for _ in range(I)]
        left = list(state.X)
        free = list(self.N)
        for i, j in self.fill_order:
            take = left[i] if left[i] < free[j] else free[j]
            if take > 0:
                psi[i][j] = take
                left[i] -= take
                free[j] -= take
        state.Psi = psi
        state.Y = left
        state.Z = free

    def reassign(self, state: SystemState, trace: Optional[Trace]) -> None:
        X = state.X
        norm = 0.0
        for i in range(self.I):
            norm += abs(X[i] - self.x_center[i])
        in_guard = norm <= self.guard
        result = self.assignment(X)
        if result is None:
            if in_guard:
                raise RuntimeError(
                    "tree assignment went negative inside the guard region: "
                    f"X={X}, guard={self.guard}"
                )
            if trace is not None:
                trace.fallback_events += 1
            self._greedy_fill(state)
        else:
            state.Y, state.Z, state.Psi = result
        if not in_guard and trace is not None:
            trace.guard_exceed_events += 1

    # -- engine hooks -------------------------------------------------------

    def init(self, state, instance, rng):
        self.reassign(state, None)

    def on_arrival(self, state, i, trace, rng):
        self.reassign(state, trace)

    def on_completion(self, state, i, j, trace, rng):
        self.reassign(state, trace)


# ---------------------------------------------------------------------------
# Non-preemptive policy (two classes, two stations)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonpreemptiveConfig:
    """Constants and labeling for the routing-only policy.

    Internal labels follow the convention that the nonbasic activity is
    (class 2, station 1); ``c1/c2`` and ``s1/s2`` give the actual indices
    of internal classes/stations 1 and 2.
    """

    c1: int
    c2: int
    s1: int
    s2: int
    C_H_prime: Fraction
    C_m: Fraction
    m_internal: tuple[Fraction, Fraction]
    kappa: float
    delta: float
    gamma: float
    mu21: float     # service rate of the nonbasic activity
    lam2: float     # fluid arrival rate of internal class 2
    kappa_exact: Fraction = Fraction(0)


def derive_constants(
    spec: NetworkSpec,
    fluid: FluidSolution,
    cycle: SimpleCycle,
    maps: AssignmentMaps,
    kappa: Optional[float] = None,
    delta: Optional[float] = None,
    gamma: Optional[float] = None,
) -> NonpreemptiveConfig:
    """Compute the routing-policy constants from the network data.

    ``kappa``, ``delta``, ``gamma`` may be overridden (expert mode); by
    default they follow the proof prescription
    ``kappa = (2 + 16 C'_H)/C_m``, ``delta = min(1/(8 kappa ||m||),
    log 2 / C'_H)``, ``gamma = log 8 / delta``.
    """
    if spec.class_count != 2 or spec.station_count != 2:
        raise PolicyError("routing-only policy supports exactly 2 classes and 2 stations")
    m_actual = cycle.direction(spec.mu)
    if sum(m_actual) >= 0:
        raise PolicyError("cycle direction does not lower total headcount")
    i_nb, j_nb = cycle.nonbasic_edge
    c2, s1 = i_nb, j_nb
    c1 = 1 - c2
    s2 = 1 - s1
    mu = spec.mu
    m_internal = (mu[c1][s1] - mu[c1][s2], -mu[c2][s1] + mu[c2][s2])
    C_m = -(m_internal[0] + m_internal[1])
    assert C_m == -sum(m_actual)
    C_H = maps.lipschitz_constant()
    norm_m = abs(m_internal[0]) + abs(m_internal[1])
    kappa_exact = Fraction(2 + 16 * C_H, 1) / C_m
    if kappa is None:
        kappa = float(kappa_exact)
    if delta is None:
        bound1 = 1.0 / float(8 * kappa * norm_m)
        bound2 = math.log(2.0) / float(C_H) if C_H > 0 else math.inf
        delta = min(bound1, bound2)
    if gamma is None:
        gamma = math.log(8.0) / delta
    return NonpreemptiveConfig(
        c1=c1,
        c2=c2,
        s1=s1,
        s2=s2,
        C_H_prime=C_H,
        C_m=C_m,
        m_internal=m_internal,
        kappa=float(kappa),
        delta=float(delta),
        gamma=float(gamma),
        mu21=float(mu[c2][s1]),
        lam2=float(spec.lam[c2]),
        kappa_exact=kappa_exact,
    )


def alpha_schedule(k: int, n: int, config: NonpreemptiveConfig) -> float:
    """Probability that the k-th class-2 arrival joins the trickle routed to
    the nonbasic station."""
    base = config.kappa * (config.gamma + config.mu21) / (config.lam2 * n ** 0.375)
    expo = config.gamma * (k - 1) / (n * config.lam2)
    # cap the exponent; the schedule saturates at 1 anyway
    if expo > 50:
        return 1.0
    return min(1.0, base * math.exp(expo))


def nonpreemptive_initial_assignment(
    X0: tuple[int, int], instance: ScaledInstance, config: NonpreemptiveConfig
) -> tuple[list[list[int]], int]:
    """Initial in-service matrix (actual index order) and held class-1 count.

    When the centered total headcount starts below ``-sqrt(n)`` the whole
    population enters service with near-equal idleness at the two stations;
    otherwise the surplus ``r_n`` is held in the class-1 queue until enough
    servers free up.
    """
    n = instance.n
    c1, c2, s1, s2 = config.c1, config.c2, config.s1, config.s2
    N1, N2 = instance.N_n[s1], instance.N_n[s2]
    eN = N1 + N2
    e_center = float(n * (instance.x_star[0] + instance.x_star[1]))
    eX0 = X0[0] + X0[1]
    if eX0 - e_center < -instance.sqrt_n:
        held = 0
    else:
        held = eX0 - eN + math.ceil(instance.sqrt_n)
        held = max(held, 0)
    x1 = X0[c1] - held
    x2 = X0[c2]
    psi21 = math.ceil(n ** 0.625 * config.kappa)
    psi11 = math.ceil((N1 - N2 + x1 + x2) / 2) - psi21
    psi12 = math.floor((N2 - N1 + x1 - x2) / 2) + psi21
    psi22 = x2 - psi21
    if min(psi11, psi12, psi21, psi22) < 0:
        raise PolicyError(
            "initial arrangement infeasible at this scale "
            f"(n={n}: entries {psi11}, {psi12}, {psi21}, {psi22}); use a larger n"
        )
    psi = [[0, 0], [0, 0]]
    psi[c1][s1] = psi11
    psi[c1][s2] = psi12
    psi[c2][s1] = psi21
    psi[c2][s2] = psi22
    return psi, held


class NonpreemptivePolicy:
    """Routing-only policy for the 2x2 network; see module docs."""

    name = "nonpreemptive"

    def __init__(self, instance: ScaledInstance, config: NonpreemptiveConfig):
        self.instance = instance
        self.config = config
        self.n = instance.n
        self.held = 0
        self.release_threshold = 0

    # -- engine hooks -------------------------------------------------------

    def init(self, state, instance, rng):
        psi, held = nonpreemptive_initial_assignment(
            tuple(state.X), instance, self.config
        )
        state.Psi = [row[:] for row in psi]
        self.held = held
        self.release_threshold = held + math.ceil(instance.sqrt_n)

    def on_completion(self, state, i, j, trace, rng):
        state.Z[j] += 1

    def on_arrival(self, state, i, trace, rng):
        cfg = self.config
        if self.held and state.Z[0] + state.Z[1] > self.release_threshold:
            self._release(state)
        if i == cfg.c1:
            self._route_class1(state, trace)
        else:
            k = state.arrival_counts[i]
            p = alpha_schedule(k, self.n, cfg)
            coin = rng.coin[i].random()
            target = cfg.s1 if coin < p else cfg.s2
            self._route_to(state, i, target, trace)
        self._drain_queues(state, trace)

    # -- internals ----------------------------------------------------------

    def _route_class1(self, state, trace):
        cfg = self.config
        target = cfg.s1 if state.Z[cfg.s1] > state.Z[cfg.s2] else cfg.s2
        self._route_to(state, cfg.c1, target, trace)

    def _route_to(self, state, i, target, trace):
        other = 1 - target
        if state.Z[target] > 0:
            state.Psi[i][target] += 1
            state.Z[target] -= 1
        elif state.Z[other] > 0:
            # full station: overflow to the other one
            if trace is not None:
                trace.full_station_events += 1
            state.Psi[i][other] += 1
            state.Z[other] -= 1
        else:
            if trace is not None:
                trace.full_station_events += 1
            state.Y[i] += 1

    def _release(self, state):
        cfg = self.config
        r = self.held
        z1, z2 = state.Z[cfg.s1], state.Z[cfg.s2]
        g1 = math.ceil((z2 - z1 + r) / 2)
        g1 = min(max(g1, r - z2, 0), r, z1)
        g2 = r - g1
        state.Psi[cfg.c1][cfg.s1] += g1
        state.Z[cfg.s1] -= g1
        state.Psi[cfg.c1][cfg.s2] += g2
        state.Z[cfg.s2] -= g2
        state.Y[cfg.c1] -= r
        self.held = 0

    def _drain_queues(self, state, trace):
        # customers queued by the full-station overflow re-enter at arrival
        # epochs (the only times routing decisions are allowed)
        cfg = self.config
        while state.Z[0] + state.Z[1] > 0:
            c1_extra = state.Y[cfg.c1] - self.held
            if c1_extra > 0:
                target = cfg.s1 if state.Z[cfg.s1] > state.Z[cfg.s2] else cfg.s2
                if state.Z[target] == 0:
                    target = 1 - target
                state.Y[cfg.c1] -= 1
                state.Psi[cfg.c1][target] += 1
                state.Z[target] -= 1
            elif state.Y[cfg.c2] > 0:
                target = cfg.s2 if state.Z[cfg.s2] > 0 else cfg.s1
                state.Y[cfg.c2] -= 1
                state.Psi[cfg.c2][target] += 1
                state.Z[target] -= 1
            else:
                return
