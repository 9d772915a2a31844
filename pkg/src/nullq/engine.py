"""Event-driven simulation core.

Arrivals are per-class renewal processes (unit-mean law scaled by the
instance arrival rate); service completions are generated by a single
aggregate exponential clock of rate ``sum mu_ij Psi_ij``, redrawn after
every event, with the completing activity chosen proportionally to its
share of the rate.  By memorylessness this is distributionally exact for
exponential services while touching the generator only twice per event.
Renewal arrival clocks are never redrawn.

State is kept in plain integer lists and the balance identities

    Y_i + sum_j Psi_ij == X_i        Z_j + sum_i Psi_ij == N_j

are asserted after every event.  Service-time integrals are accumulated in
closed form between events with compensated summation, so the diffusion
identity check downstream operates at 1e-9 accuracy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nullq.model import ScaledInstance

ARRIVAL = 1
COMPLETION = 2

_CHUNK = 1024


class InvariantViolation(RuntimeError):
    """Integer balance identity broken; carries the offending state."""


class _ChunkedExponential:
    """Unit-mean exponential variates drawn in blocks."""

    __slots__ = ("_rng", "_buf", "_pos")

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = rng.exponential(1.0, _CHUNK)
        self._pos = 0

    def next(self) -> float:
        if self._pos == _CHUNK:
            self._buf = self._rng.exponential(1.0, _CHUNK)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


class _ChunkedUniform:
    __slots__ = ("_rng", "_buf", "_pos")

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = rng.random(_CHUNK)
        self._pos = 0

    def next(self) -> float:
        if self._pos == _CHUNK:
            self._buf = self._rng.random(_CHUNK)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


class _ChunkedLaw:
    """Block-drawn unit-mean interarrival variates for one class."""

    __slots__ = ("_rng", "_law", "_buf", "_pos")

    def __init__(self, law, rng: np.random.Generator):
        self._rng = rng
        self._law = law
        self._buf = law.sample(rng, _CHUNK)
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._law.sample(self._rng, _CHUNK)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


class RngStreams:
    """Named independent substreams derived from (master seed, replication).

    Streams: one renewal stream per class, one aggregate service stream
    (exponential spacings plus activity-selection uniforms) and one routing
    coin stream per class.
    """

    def __init__(self, master_seed: int, replication: int, class_count: int):
        self.master_seed = master_seed
        self.replication = replication
        ss = np.random.SeedSequence([int(master_seed), int(replication)])
        children = ss.spawn(2 * class_count + 1)
        self.arrival = [
            np.random.Generator(np.random.PCG64(children[i]))
            for i in range(class_count)
        ]
        svc = np.random.Generator(np.random.PCG64(children[class_count]))
        self.service = svc
        self.coin = [
            np.random.Generator(np.random.PCG64(children[class_count + 1 + i]))
            for i in range(class_count)
        ]


@dataclass
class SystemState:
    """Exact integer state of one system instance at a point in time."""

    t: float
    X: list[int]
    Y: list[int]
    Z: list[int]
    Psi: list[list[int]]
    N: list[int]
    service_integrals: list[list[float]]
    arrival_counts: list[int]
    departure_counts: list[list[int]]

    def copy_arrays(self):
        return (
            tuple(self.X),
            tuple(self.Y),
            tuple(self.Z),
            tuple(tuple(row) for row in self.Psi),
        )


@dataclass
class Trace:
    """Event path of one replication.

    ``times``/``kinds``/``who`` always cover every event; full mode
    additionally snapshots the state, the service integrals and the
    primitive counts at each event time.
    """

    instance: ScaledInstance
    seed: tuple[int, int]
    policy_name: str
    full: bool
    times: list[float] = field(default_factory=list)
    kinds: list[int] = field(default_factory=list)
    who: list[tuple[int, int]] = field(default_factory=list)  # (class, station), -1 if n/a
    queue_totals: list[int] = field(default_factory=list)
    snapshots: list[tuple] = field(default_factory=list)
    integral_snapshots: list[tuple] = field(default_factory=list)
    arrival_snapshots: list[tuple] = field(default_factory=list)
    departure_snapshots: list[tuple] = field(default_factory=list)
    max_queue_total: int = 0
    max_xhat_norm: float = 0.0
    guard_exceed_events: int = 0
    fallback_events: int = 0
    full_station_events: int = 0
    final_state: Optional[SystemState] = None

    def to_csv(self, path, stride: int = 1) -> None:
        """Write the (full-mode) event path; one row per ``stride`` events."""
        if not self.full:
            raise ValueError("CSV export needs a full-mode trace")
        I = self.instance.spec.class_count
        J = self.instance.spec.station_count
        header = (
            ["time", "event", "class", "station"]
            + [f"X{i}" for i in range(I)]
            + [f"Y{i}" for i in range(I)]
            + [f"Z{j}" for j in range(J)]
            + [f"Psi{i}_{j}" for i in range(I) for j in range(J)]
        )
        names = {0: "init", ARRIVAL: "arrival", COMPLETION: "completion"}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(0, len(self.times), stride):
                X, Y, Z, Psi = self.snapshots[k]
                i, j = self.who[k]
                writer.writerow(
                    [f"{self.times[k]:.9f}", names[self.kinds[k]], i, j]
                    + list(X)
                    + list(Y)
                    + list(Z)
                    + [Psi[a][b] for a in range(I) for b in range(J)]
                )


def check_balance(state: SystemState) -> None:
    """Assert the integer balance identities; raise with context if broken."""
    I = len(state.X)
    J = len(state.Z)
    for i in range(I):
        if state.Y[i] < 0 or state.Y[i] + sum(state.Psi[i]) != state.X[i]:
            raise InvariantViolation(
                f"class balance broken at t={state.t}: i={i}, "
                f"X={state.X}, Y={state.Y}, Psi={state.Psi}"
            )
    for j in range(J):
        col = sum(state.Psi[i][j] for i in range(I))
        if state.Z[j] < 0 or state.Z[j] + col != state.N[j]:
            raise InvariantViolation(
                f"station balance broken at t={state.t}: j={j}, "
                f"Z={state.Z}, Psi={state.Psi}, N={state.N}"
            )
    for i in range(I):
        for j in range(J):
            if state.Psi[i][j] < 0:
                raise InvariantViolation(
                    f"negative assignment at t={state.t}: Psi[{i}][{j}]={state.Psi[i][j]}"
                )


def init_state(instance: ScaledInstance, policy, rng: RngStreams) -> SystemState:
    """Build the initial state; the policy proposes the initial assignment."""
    I = instance.spec.class_count
    J = instance.spec.station_count
    state = SystemState(
        t=0.0,
        X=list(instance.X0_n),
        Y=[0] * I,
        Z=list(instance.N_n),
        Psi=[[0] * J for _ in range(I)],
        N=list(instance.N_n),
        service_integrals=[[0.0] * J for _ in range(I)],
        arrival_counts=[0] * I,
        departure_counts=[[0] * J for _ in range(I)],
    )
    policy.init(state, instance, rng)
    for i in range(I):
        row = sum(state.Psi[i])
        if row > state.X[i]:
            raise ValueError(
                f"initial assignment exceeds class {i} headcount: {row} > {state.X[i]}"
            )
        state.Y[i] = state.X[i] - row
    for j in range(J):
        col = sum(state.Psi[i][j] for i in range(I))
        if col > state.N[j]:
            raise ValueError(
                f"initial assignment exceeds station {j} capacity: {col} > {state.N[j]}"
            )
        state.Z[j] = state.N[j] - col
    check_balance(state)
    return state


def run(
    instance: ScaledInstance,
    policy,
    horizon: float,
    rng: RngStreams,
    full_trace: bool = False,
    check: bool = True,
) -> Trace:
    """Simulate on ``[0, horizon]`` and return the trace.

    With a fixed seed the trace is bitwise reproducible.  ``check`` keeps
    the per-event balance assertion on (cheap at desk scale).
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    spec = instance.spec
    I, J = spec.class_count, spec.station_count
    state = init_state(instance, policy, rng)
    trace = Trace(
        instance=instance,
        seed=(rng.master_seed, rng.replication),
        policy_name=policy.name,
        full=full_trace,
    )
    mu_n = [list(row) for row in instance.mu_n]
    activities = [(i, j, mu_n[i][j]) for i, j in spec.activities]
    lam_n = instance.lambda_n
    x_center = [instance.n * x for x in instance.x_star]
    inv_sqrt_n = 1.0 / instance.sqrt_n

    arrival_laws = [
        _ChunkedLaw(spec.interarrival[i], rng.arrival[i]) for i in range(I)
    ]
    svc_exp = _ChunkedExponential(rng.service)
    svc_pick = _ChunkedUniform(rng.service)
    next_arrival = [arrival_laws[i].next() / lam_n[i] for i in range(I)]

    comp = [[0.0] * J for _ in range(I)]  # Kahan compensations
    integrals = state.service_integrals

    def advance_integrals(dt: float) -> None:
        for i, j, _ in activities:
            p = state.Psi[i][j]
            if p:
                y = p * dt - comp[i][j]
                s = integrals[i][j]
                t_new = s + y
                comp[i][j] = (t_new - s) - y
                integrals[i][j] = t_new

    def record(kind: int, i: int, j: int) -> None:
        trace.times.append(state.t)
        trace.kinds.append(kind)
        trace.who.append((i, j))
        q = sum(state.Y)
        trace.queue_totals.append(q)
        if q > trace.max_queue_total:
            trace.max_queue_total = q
        norm = 0.0
        for k in range(I):
            norm += abs(state.X[k] - x_center[k])
        norm *= inv_sqrt_n
        if norm > trace.max_xhat_norm:
            trace.max_xhat_norm = norm
        if full_trace:
            trace.snapshots.append(state.copy_arrays())
            trace.integral_snapshots.append(
                tuple(tuple(row) for row in integrals)
            )
            trace.arrival_snapshots.append(tuple(state.arrival_counts))
            trace.departure_snapshots.append(
                tuple(tuple(row) for row in state.departure_counts)
            )

    record(0, -1, -1)

    while True:
        rate = 0.0
        for i, j, m in activities:
            rate += m * state.Psi[i][j]
        t_completion = state.t + svc_exp.next() / rate if rate > 0.0 else math.inf
        t_arrival = math.inf
        arrival_class = -1
        for i in range(I):
            if next_arrival[i] < t_arrival:
                t_arrival = next_arrival[i]
                arrival_class = i
        # completions win ties for reproducibility
        t_next = t_completion if t_completion <= t_arrival else t_arrival
        if t_next > horizon:
            advance_integrals(horizon - state.t)
            state.t = horizon
            break
        advance_integrals(t_next - state.t)
        state.t = t_next
        if t_completion <= t_arrival:
            u = svc_pick.next() * rate
            acc = 0.0
            ci = cj = -1
            for i, j, m in activities:
                r = m * state.Psi[i][j]
                if r > 0.0:
                    ci, cj = i, j  # falls back to last busy activity on roundoff
                    acc += r
                    if u < acc:
                        break
            state.Psi[ci][cj] -= 1
            state.X[ci] -= 1
            state.departure_counts[ci][cj] += 1
            policy.on_completion(state, ci, cj, trace, rng)
            if check:
                check_balance(state)
            record(COMPLETION, ci, cj)
        else:
            i = arrival_class
            state.X[i] += 1
            state.arrival_counts[i] += 1
            next_arrival[i] += arrival_laws[i].next() / lam_n[i]
            policy.on_arrival(state, i, trace, rng)
            if check:
                check_balance(state)
            record(ARRIVAL, i, -1)

    trace.final_state = state
    return trace
