"""Analysis, scaling, verification and Monte Carlo estimation.

Pulls the other modules together:

- :func:`analyze_network` solves the fluid program, enumerates the simple
  cycles and renders the null-controllability verdict.
- :func:`diffusion_scale` applies the centered ``1/sqrt(n)`` scaling to an
  event trace; :func:`check_representation` verifies the semimartingale
  identity that every admissible trace must satisfy, to float accuracy.
- :func:`estimate_null_probability` runs the replication ladder estimating
  the probability that the queues stay empty on an observation window.
- :func:`overloaded_sweep` demonstrates linear queue growth once the
  arrival rates exceed the critical ones.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
import yaml

from nullq import __version__
from nullq.cycles import (
    ActivityGraph,
    AssignmentMaps,
    SimpleCycle,
    check_null_controllability,
    enumerate_simple_cycles,
)
from nullq.engine import RngStreams, Trace, run
from nullq.fluid import FluidSolution, solve_static_lp
from nullq.model import NetworkSpec, ScaledInstance, scale_instance
from nullq.policies import (
    GreedyPolicy,
    NonpreemptiveConfig,
    NonpreemptivePolicy,
    PolicyError,
    PreemptiveConfig,
    PreemptivePolicy,
    default_guard_radius,
    derive_constants,
)


# ---------------------------------------------------------------------------
# Network analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkAnalysis:
    """Fluid solution, cycle structure and controllability verdict."""

    fluid: FluidSolution
    graph: ActivityGraph
    cycles: tuple[SimpleCycle, ...]
    directions: tuple[tuple[Fraction, ...], ...]
    chosen: Optional[SimpleCycle]

    @property
    def null_controllable(self) -> bool:
        return self.chosen is not None

    def certificate(self) -> str:
        lines = []
        for cycle, m in zip(self.cycles, self.directions):
            total = sum(m)
            lines.append(
                f"cycle at nonbasic {cycle.nonbasic_edge}: m = "
                f"({', '.join(str(v) for v in m)}), e.m = {total}"
            )
        if self.chosen is not None:
            lines.append(
                f"verdict: null-controllable via the cycle at "
                f"{self.chosen.nonbasic_edge}"
            )
        else:
            lines.append("verdict: not null-controllable (no cycle with e.m < 0)")
        return "\n".join(lines)


def analyze_network(spec: NetworkSpec) -> NetworkAnalysis:
    fluid = solve_static_lp(spec)
    if not fluid.resource_pooling:
        raise ValueError(
            "network is not in the pooled heavy-traffic regime; "
            "cycle analysis undefined"
        )
    graph = ActivityGraph.from_fluid(spec, fluid)
    cycles = tuple(enumerate_simple_cycles(graph))
    directions = tuple(c.direction(spec.mu) for c in cycles)
    chosen = check_null_controllability(cycles, spec.mu)
    return NetworkAnalysis(
        fluid=fluid, graph=graph, cycles=cycles, directions=directions, chosen=chosen
    )


def paired_rate_inequality(cycle: SimpleCycle, mu) -> tuple[Fraction, Fraction, bool]:
    """Cycle rate comparison equivalent to the controllability sign test.

    Returns ``(forward, backward, verdict)`` where ``forward`` sums the
    rates of positively signed cycle edges, ``backward`` the negatively
    signed ones; the cycle lowers total headcount iff forward < backward.
    """
    fwd = sum(
        (mu[i][j] for (i, j) in cycle.edges if cycle.sign[(i, j)] > 0),
        start=Fraction(0),
    )
    bwd = sum(
        (mu[i][j] for (i, j) in cycle.edges if cycle.sign[(i, j)] < 0),
        start=Fraction(0),
    )
    return fwd, bwd, fwd < bwd


# ---------------------------------------------------------------------------
# Diffusion scaling and the representation identity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaledTrace:
    """Centered, ``1/sqrt(n)``-scaled event path."""

    times: np.ndarray      # (K,)
    X_hat: np.ndarray      # (K, I)
    Y_hat: np.ndarray      # (K, I)
    Z_hat: np.ndarray      # (K, J)
    Psi_hat: np.ndarray    # (K, I, J), centered at psi*


def diffusion_scale(trace: Trace, fluid: FluidSolution) -> ScaledTrace:
    """Scale a full-mode trace; exact affine transform at every event time."""
    if not trace.full:
        raise ValueError("diffusion scaling needs a full-mode trace")
    inst = trace.instance
    n = inst.n
    rn = inst.sqrt_n
    I = inst.spec.class_count
    J = inst.spec.station_count
    K = len(trace.times)
    X = np.array([snap[0] for snap in trace.snapshots], dtype=float)
    Y = np.array([snap[1] for snap in trace.snapshots], dtype=float)
    Z = np.array([snap[2] for snap in trace.snapshots], dtype=float)
    Psi = np.array([snap[3] for snap in trace.snapshots], dtype=float)
    x_center = np.array([n * float(x) for x in fluid.x_star])
    psi_center = np.array(
        [[n * float(fluid.psi_star[i][j]) for j in range(J)] for i in range(I)]
    )
    return ScaledTrace(
        times=np.array(trace.times),
        X_hat=(X - x_center) / rn,
        Y_hat=Y / rn,
        Z_hat=Z / rn,
        Psi_hat=(Psi - psi_center) / rn,
    )


class RepresentationError(AssertionError):
    """The semimartingale identity failed beyond tolerance."""


def check_representation(
    trace: Trace,
    fluid: FluidSolution,
    maps: AssignmentMaps,
    cycles: Sequence[SimpleCycle],
    tolerance: Optional[float] = None,
) -> float:
    """Max absolute residual of the scaled headcount identity over the trace.

    The scaled headcount must equal, at every event time, the sum of the
    initial state, the centered arrival and departure noise terms, the
    second-order drift offset times t, the integrated assignment-map drift
    and the cycle control terms.  The identity is algebraic, so the residual
    measures only float accumulation.  Also asserts the sign and balance
    conditions (queues, idleness and cycle occupancies nonnegative, scaled
    class and station totals consistent) at every event.
    """
    if not trace.full:
        raise ValueError("representation check needs a full-mode trace")
    inst = trace.instance
    spec = inst.spec
    n, rn = inst.n, inst.sqrt_n
    I, J = spec.class_count, spec.station_count
    lam_n = inst.lambda_n
    mu_n = inst.mu_n
    x_center = [n * float(x) for x in fluid.x_star]
    nu_center = [n * float(v) for v in spec.nu]

    # second-order drift offset of the n-th system
    ell = [
        (lam_n[i] - n * float(spec.lam[i])) / rn
        - sum(
            rn * (mu_n[i][j] - float(spec.mu[i][j])) * float(fluid.psi_star[i][j])
            for j in range(J)
        )
        for i in range(I)
    ]
    m_n = [c.direction(mu_n) for c in cycles]
    nonbasic = [c.nonbasic_edge for c in cycles]

    drift_int = [0.0] * I
    drift_comp = [0.0] * I
    max_residual = 0.0
    worst_t = 0.0
    prev_t = trace.times[0]
    prev_drift_state: Optional[list[float]] = None

    x_hat0 = [(trace.snapshots[0][0][i] - x_center[i]) / rn for i in range(I)]

    for k in range(len(trace.times)):
        t = trace.times[k]
        X, Y, Z, Psi = trace.snapshots[k]
        A = trace.arrival_snapshots[k]
        D = trace.departure_snapshots[k]
        T = trace.integral_snapshots[k]

        # advance the drift integral over [prev_t, t] with the previous state
        if prev_drift_state is not None and t > prev_t:
            dt = t - prev_t
            for i in range(I):
                y = prev_drift_state[i] * dt - drift_comp[i]
                s = drift_int[i]
                s_new = s + y
                drift_comp[i] = (s_new - s) - y
                drift_int[i] = s_new
        a = [(X[i] - Y[i] - x_center[i]) / rn for i in range(I)]
        b = [(inst.N_n[j] - Z[j] - nu_center[j]) / rn for j in range(J)]
        prev_drift_state = maps.drift(a, b, mu=mu_n, check=False)
        prev_t = t

        # sign and balance conditions (exact integers underneath)
        for i in range(I):
            if Y[i] < 0:
                raise RepresentationError(f"negative queue at t={t}: Y={Y}")
        for j in range(J):
            if Z[j] < 0:
                raise RepresentationError(f"negative idleness at t={t}: Z={Z}")
        for i0, j0 in nonbasic:
            if Psi[i0][j0] < 0:
                raise RepresentationError(
                    f"negative cycle occupancy at t={t}: Psi[{i0}][{j0}]"
                )
        if sum(X) - sum(Y) != sum(inst.N_n) - sum(Z):
            raise RepresentationError(f"in-service balance broken at t={t}")

        for i in range(I):
            lhs = (X[i] - x_center[i]) / rn
            a_hat = (A[i] - lam_n[i] * t) / rn
            s_hat = sum((D[i][j] - mu_n[i][j] * T[i][j]) / rn for j in range(J))
            control = sum(
                m_n[c][i] * T[nonbasic[c][0]][nonbasic[c][1]] / rn
                for c in range(len(cycles))
            )
            rhs = x_hat0[i] + a_hat - s_hat + ell[i] * t + drift_int[i] + control
            r = abs(lhs - rhs)
            if r > max_residual:
                max_residual = r
                worst_t = t
    if tolerance is not None and max_residual > tolerance:
        raise RepresentationError(
            f"representation residual {max_residual:.3e} exceeds "
            f"{tolerance:.1e} (worst at t={worst_t})"
        )
    return max_residual


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One null-probability estimation campaign."""

    spec: NetworkSpec
    policy: str                     # "preemptive" | "nonpreemptive" | "greedy"
    n_values: tuple[int, ...]
    epsilon: float
    horizon: float
    replications: int
    master_seed: int
    workers: int = 1
    check_invariants: bool = False

    def validate(self) -> None:
        if not (0 < self.epsilon < self.horizon):
            raise ValueError("need 0 < epsilon < horizon")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ValueError("n values must be strictly increasing")
        if self.policy not in ("preemptive", "nonpreemptive", "greedy"):
            raise ValueError(f"unknown policy {self.policy!r}")


@dataclass(frozen=True)
class PerScale:
    """Replication summary at one value of n."""

    n: int
    replications: int
    successes: int
    p_hat: float
    ci: tuple[float, float]
    successes_from_zero: Optional[int]
    p_hat_from_zero: Optional[float]
    ci_from_zero: Optional[tuple[float, float]]
    max_queue: int
    max_xhat_norm: float
    guard_exceed_events: int
    fallback_events: int
    full_station_events: int
    init_failures: int


@dataclass(frozen=True)
class SummaryStats:
    """Result of one estimation campaign; deterministic given the seed."""

    policy: str
    epsilon: float
    horizon: float
    master_seed: int
    per_scale: tuple[PerScale, ...]

    def p_hats(self) -> list[float]:
        return [s.p_hat for s in self.per_scale]


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return (max(0.0, center - half), min(1.0, center + half))


def null_on_window(trace: Trace, epsilon: float, horizon: float) -> bool:
    """True iff the total queue is zero from the state entering ``epsilon``
    through every event in ``(epsilon, horizon]``."""
    k = bisect.bisect_right(trace.times, epsilon) - 1
    if k < 0:
        k = 0
    return all(q == 0 for q in trace.queue_totals[k:])


def make_policy(
    scenario_policy: str,
    instance: ScaledInstance,
    fluid: FluidSolution,
    maps: AssignmentMaps,
    analysis: NetworkAnalysis,
    np_config: Optional[NonpreemptiveConfig] = None,
):
    """Fresh policy object for one replication."""
    if scenario_policy == "greedy":
        return GreedyPolicy(instance.spec)
    if scenario_policy == "preemptive":
        config = PreemptiveConfig(
            cycle=analysis.chosen,
            i0=0,
            j0=0,
            a0=default_guard_radius(fluid, maps),
        )
        return PreemptivePolicy(instance, fluid, maps, config)
    if scenario_policy == "nonpreemptive":
        if np_config is None:
            np_config = derive_constants(instance.spec, fluid, analysis.chosen, maps)
        return NonpreemptivePolicy(instance, np_config)
    raise ValueError(f"unknown policy {scenario_policy!r}")


def _replication_seed(n: int, rep: int) -> int:
    # unique, order-independent id per (scale, replication)
    return (n << 24) + rep


def estimate_null_probability(scenario: Scenario) -> SummaryStats:
    """Estimate, per n, the probability the queues vanish on the window.

    Refuses with the cycle-direction certificate when the network is not
    null-controllable.  Replications run under deterministic per-(n, rep)
    seeds, so the result does not depend on the worker count.  A
    replication whose policy cannot even be initialized at this scale
    counts as a failure.  When the initial scaled total is below -1 the
    stricter from-time-zero variant is reported as well.
    """
    scenario.validate()
    spec = scenario.spec
    analysis = analyze_network(spec)
    if scenario.policy in ("preemptive", "nonpreemptive") and analysis.chosen is None:
        raise PolicyError(
            "network is not null-controllable:\n" + analysis.certificate()
        )
    fluid = analysis.fluid
    maps = AssignmentMaps(analysis.graph, spec.mu)
    np_config = None
    if scenario.policy == "nonpreemptive":
        np_config = derive_constants(spec, fluid, analysis.chosen, maps)
    report_zero = sum(spec.x0_hat) < -1

    per_scale = []
    for n in scenario.n_values:
        instance = scale_instance(spec, fluid, n)

        def one(rep: int, n=n, instance=instance):
            rng = RngStreams(
                scenario.master_seed, _replication_seed(n, rep), spec.class_count
            )
            try:
                policy = make_policy(
                    scenario.policy, instance, fluid, maps, analysis, np_config
                )
                trace = run(
                    instance,
                    policy,
                    scenario.horizon,
                    rng,
                    full_trace=False,
                    check=scenario.check_invariants,
                )
            except PolicyError:
                return None
            return trace

        reps = range(scenario.replications)
        if scenario.workers > 1:
            with ThreadPoolExecutor(max_workers=scenario.workers) as pool:
                traces = list(pool.map(one, reps))
        else:
            traces = [one(rep) for rep in reps]

        successes = 0
        successes0 = 0
        init_failures = 0
        max_queue = 0
        max_norm = 0.0
        guard = fallback = full_station = 0
        for trace in traces:
            if trace is None:
                init_failures += 1
                continue
            if null_on_window(trace, scenario.epsilon, scenario.horizon):
                successes += 1
            if null_on_window(trace, 0.0, scenario.horizon):
                successes0 += 1
            max_queue = max(max_queue, trace.max_queue_total)
            max_norm = max(max_norm, trace.max_xhat_norm)
            guard += trace.guard_exceed_events
            fallback += trace.fallback_events
            full_station += trace.full_station_events
        trials = scenario.replications
        per_scale.append(
            PerScale(
                n=n,
                replications=trials,
                successes=successes,
                p_hat=successes / trials,
                ci=wilson_interval(successes, trials),
                successes_from_zero=successes0 if report_zero else None,
                p_hat_from_zero=successes0 / trials if report_zero else None,
                ci_from_zero=wilson_interval(successes0, trials) if report_zero else None,
                max_queue=max_queue,
                max_xhat_norm=max_norm,
                guard_exceed_events=guard,
                fallback_events=fallback,
                full_station_events=full_station,
                init_failures=init_failures,
            )
        )
    return SummaryStats(
        policy=scenario.policy,
        epsilon=scenario.epsilon,
        horizon=scenario.horizon,
        master_seed=scenario.master_seed,
        per_scale=tuple(per_scale),
    )


# ---------------------------------------------------------------------------
# Overload demonstration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverloadStats:
    """Queue growth under arrival rates above the critical ones."""

    n: int
    times: tuple[float, ...]
    scaled_queues: dict[float, tuple[float, ...]]   # t -> e.Y(t)/n per replication
    fraction_positive: dict[float, float]
    medians: dict[float, float]
    slope: float                                     # median growth per time unit


def overloaded_sweep(
    spec: NetworkSpec,
    lam_prime: Sequence[Fraction],
    n: int,
    times: Sequence[float],
    replications: int,
    master_seed: int,
    policy: str = "preemptive",
    workers: int = 1,
) -> OverloadStats:
    """Simulate with inflated arrival rates and measure e.Y(t)/n.

    The policy is built for the original (critical) rates; only the arrival
    streams are inflated.  Requires ``lam_prime >= lam`` with strict
    inequality for at least one class.
    """
    lam_prime = tuple(Fraction(v) for v in lam_prime)
    if len(lam_prime) != spec.class_count:
        raise ValueError("lam_prime must have one rate per class")
    if any(lp < l for lp, l in zip(lam_prime, spec.lam)):
        raise ValueError("overload requires lam_prime >= lam componentwise")
    if all(lp == l for lp, l in zip(lam_prime, spec.lam)):
        raise ValueError("overload requires strict inequality for some class")

    analysis = analyze_network(spec)
    fluid = analysis.fluid
    maps = AssignmentMaps(analysis.graph, spec.mu)
    overloaded = dataclasses.replace(spec, lam=lam_prime)
    instance = scale_instance(overloaded, fluid, n)
    horizon = max(times)

    def one(rep: int):
        rng = RngStreams(master_seed, _replication_seed(n, rep), spec.class_count)
        pol = make_policy(policy, instance, fluid, maps, analysis)
        trace = run(instance, pol, horizon, rng, full_trace=False, check=False)
        out = []
        for t in times:
            k = bisect.bisect_right(trace.times, t) - 1
            out.append(trace.queue_totals[k] / n)
        return out

    reps = range(replications)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, reps))
    else:
        rows = [one(rep) for rep in reps]

    scaled = {
        t: tuple(row[k] for row in rows) for k, t in enumerate(times)
    }
    frac_pos = {t: sum(v > 0 for v in vals) / replications for t, vals in scaled.items()}
    medians = {t: float(np.median(vals)) for t, vals in scaled.items()}
    ts = np.array(sorted(times))
    med = np.array([medians[t] for t in sorted(times)])
    slope = float(np.polyfit(ts, med, 1)[0]) if len(times) > 1 else 0.0
    return OverloadStats(
        n=n,
        times=tuple(times),
        scaled_queues=scaled,
        fraction_positive=frac_pos,
        medians=medians,
        slope=slope,
    )


# ---------------------------------------------------------------------------
# Engine calibration helper
# ---------------------------------------------------------------------------


def time_average_queue(trace: Trace, horizon: float, burn_in: float = 0.0) -> float:
    """Time average of the total queue over ``[burn_in, horizon]``."""
    times = trace.times
    q = trace.queue_totals
    total = 0.0
    start = bisect.bisect_right(times, burn_in) - 1
    if start < 0:
        start = 0
    t_prev = burn_in
    for k in range(start + 1, len(times)):
        total += q[k - 1] * (times[k] - t_prev)
        t_prev = times[k]
    total += q[-1] * (horizon - t_prev)
    return total / (horizon - burn_in)


def erlang_c_mean_queue(servers: int, offered_load: float) -> float:
    """Mean queue length of the classical single-class many-server queue.

    ``offered_load`` is arrival rate over service rate (in erlangs); must be
    below ``servers``.
    """
    if offered_load >= servers:
        raise ValueError("offered load must be below the server count")
    a = offered_load
    # stable recurrence for the blocking-form ratio
    inv_b = 1.0
    for k in range(1, servers + 1):
        inv_b = 1.0 + inv_b * k / a
    erlang_b = 1.0 / inv_b
    rho = a / servers
    wait_prob = erlang_b / (1.0 - rho + rho * erlang_b)
    return wait_prob * rho / (1.0 - rho)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_summary_csv(stats: SummaryStats, path) -> None:
    header = [
        "n", "replications", "successes", "p_hat", "ci_low", "ci_high",
        "p_hat_from_zero", "max_queue", "max_xhat_norm",
        "guard_exceed_events", "fallback_events", "full_station_events",
        "init_failures",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in stats.per_scale:
            writer.writerow([
                s.n, s.replications, s.successes, f"{s.p_hat:.6f}",
                f"{s.ci[0]:.6f}", f"{s.ci[1]:.6f}",
                "" if s.p_hat_from_zero is None else f"{s.p_hat_from_zero:.6f}",
                s.max_queue, f"{s.max_xhat_norm:.6f}",
                s.guard_exceed_events, s.fallback_events,
                s.full_station_events, s.init_failures,
            ])


def write_manifest(scenario: Scenario, path) -> None:
    """Reproducibility manifest: configuration snapshot, seed, code version."""
    spec = scenario.spec
    data = {
        "version": __version__,
        "policy": scenario.policy,
        "n_values": list(scenario.n_values),
        "epsilon": scenario.epsilon,
        "horizon": scenario.horizon,
        "replications": scenario.replications,
        "master_seed": scenario.master_seed,
        "workers": scenario.workers,
        "network": {
            "classes": spec.class_count,
            "stations": spec.station_count,
            "lambda": [str(v) for v in spec.lam],
            "lambda_hat": [str(v) for v in spec.lam_hat],
            "mu": [[str(v) for v in row] for row in spec.mu],
            "mu_hat": [[str(v) for v in row] for row in spec.mu_hat],
            "nu": [str(v) for v in spec.nu],
            "interarrival": [repr(law) for law in spec.interarrival],
            "x0_hat": [str(v) for v in spec.x0_hat],
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
