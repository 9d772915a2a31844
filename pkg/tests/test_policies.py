"""Policy constructions: assignment scheme, routing rules, derived constants."""

import math
from fractions import Fraction

import pytest

from nullq.cycles import ActivityGraph, AssignmentMaps, enumerate_simple_cycles
from nullq.engine import RngStreams, init_state, run
from nullq.fluid import solve_static_lp
from nullq.model import scale_instance
from nullq.policies import (
    GreedyPolicy,
    NonpreemptivePolicy,
    PolicyError,
    PreemptiveConfig,
    PreemptivePolicy,
    alpha_schedule,
    default_guard_radius,
    derive_constants,
    nonpreemptive_initial_assignment,
)
from tests.conftest import make_spec
from tests.test_cycles import lstsq_oracle

F = Fraction


def setup_network(spec, n):
    fluid = solve_static_lp(spec)
    graph = ActivityGraph.from_fluid(spec, fluid)
    maps = AssignmentMaps(graph, spec.mu)
    cycles = enumerate_simple_cycles(graph)
    instance = scale_instance(spec, fluid, n)
    return fluid, graph, maps, cycles, instance


def preemptive(spec, n, **overrides):
    fluid, graph, maps, cycles, instance = setup_network(spec, n)
    cycle = min(
        (c for c in cycles if sum(c.direction(spec.mu)) < 0),
        key=lambda c: sum(c.direction(spec.mu)),
    )
    config = PreemptiveConfig(
        cycle=cycle,
        i0=overrides.get("i0", 0),
        j0=overrides.get("j0", 0),
        a0=overrides.get("a0", default_guard_radius(fluid, maps)),
    )
    return PreemptivePolicy(instance, fluid, maps, config), instance, fluid, maps, graph


# ---------------------------------------------------------------------------
# Preemptive assignment
# ---------------------------------------------------------------------------


class TestPreemptiveAssignment:
    def test_deep_interior_has_no_queue_and_no_block(self, spec_2x2_controllable):
        pol, inst, fluid, _, _ = preemptive(spec_2x2_controllable, 100)
        # start far below capacity: block off, queue empty
        X = [130, 30]
        Y, Z, psi = pol.assignment(X)
        assert Y == [0, 0]
        assert psi[1][0] == 0
        assert sum(Z) == sum(inst.N_n) - sum(X)

    def test_block_engages_near_capacity(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 100)
        X = [150, 50]  # exactly the fluid center, total at capacity
        Y, Z, psi = pol.assignment(X)
        assert psi[1][0] == pol.block
        assert pol.block == round(100 ** 0.75)

    def test_queue_concentrates_in_designated_class(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 100)
        X = [160, 55]  # 15 above capacity
        Y, Z, psi = pol.assignment(X)
        assert Y == [15, 0]
        assert Z == [0, 0]

    def test_idleness_concentrates_in_designated_station(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 100)
        X = [152, 43]  # 5 below capacity but above the block threshold
        Y, Z, psi = pol.assignment(X)
        assert Y == [0, 0]
        assert Z == [5, 0]

    def test_balance_identities_exact(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 100)
        for X in ([150, 50], [140, 40], [158, 52], [146, 51]):
            Y, Z, psi = pol.assignment(X)
            for i in range(2):
                assert Y[i] + sum(psi[i]) == X[i]
            for j in range(2):
                assert Z[j] + psi[0][j] + psi[1][j] == inst.N_n[j]

    def test_matches_dense_oracle_with_cycle_correction(self, spec_2x2_controllable):
        pol, inst, fluid, maps, graph = preemptive(spec_2x2_controllable, 400)
        X = [605, 199]  # slightly above capacity: queue 4, block on
        Y, Z, psi = pol.assignment(X)
        a = [X[i] - Y[i] for i in range(2)]
        b = [inst.N_n[j] - Z[j] for j in range(2)]
        base = lstsq_oracle(graph, a, b)
        cycle = pol.config.cycle
        for i in range(2):
            for j in range(2):
                expected = base[i][j] - cycle.sign.get((i, j), 0) * pol.block
                assert psi[i][j] == pytest.approx(expected, abs=1e-6)

    def test_infeasible_state_returns_none(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 100)
        # nearly everyone in class 2: the tree solve must go negative
        assert pol.assignment([5, 195]) is None

    def test_greedy_fallback_keeps_balance(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 100)
        state = init_state(inst, pol, RngStreams(0, 0, 2))
        state.X = [5, 195]
        pol.reassign(state, None)
        for i in range(2):
            assert state.Y[i] + sum(state.Psi[i]) == state.X[i]
            assert state.Y[i] >= 0
        for j in range(2):
            col = state.Psi[0][j] + state.Psi[1][j]
            assert state.Z[j] + col == inst.N_n[j]
            assert state.Z[j] >= 0

    def test_rejects_cycle_that_raises_total(self, spec_2x2_uncontrollable):
        fluid, graph, maps, cycles, instance = setup_network(spec_2x2_uncontrollable, 100)
        config = PreemptiveConfig(
            cycle=cycles[0], i0=0, j0=0, a0=default_guard_radius(fluid, maps)
        )
        with pytest.raises(PolicyError):
            PreemptivePolicy(instance, fluid, maps, config)

    def test_guard_radius_positive_and_modest(self, spec_2x2_controllable):
        fluid, _, maps, _, _ = setup_network(spec_2x2_controllable, 100)
        a0 = default_guard_radius(fluid, maps)
        assert 0 < a0 < min(
            fluid.psi_star[i][j] for (i, j) in fluid.basic_edges
        )

    def test_full_run_keeps_invariants(self, spec_2x2_controllable):
        pol, inst, *_ = preemptive(spec_2x2_controllable, 50)
        trace = run(inst, pol, 2.0, RngStreams(3, 1, 2), check=True)
        assert trace.final_state.t == 2.0

    def test_run_on_three_station_network(self, spec_2x3):
        pol, inst, *_ = preemptive(spec_2x3, 50)
        trace = run(inst, pol, 1.0, RngStreams(4, 0, 2), check=True)
        assert trace.final_state.t == 1.0


# ---------------------------------------------------------------------------
# Routing-policy constants
# ---------------------------------------------------------------------------


class TestDeriveConstants:
    def golden_config(self, spec):
        fluid, graph, maps, cycles, _ = setup_network(spec, 100)
        return derive_constants(spec, fluid, cycles[0], maps)

    def test_golden_values(self, spec_2x2_controllable):
        cfg = self.golden_config(spec_2x2_controllable)
        assert cfg.C_H_prime == 22
        assert cfg.C_m == 1
        assert cfg.m_internal == (-3, 2)
        assert cfg.kappa_exact == 354
        assert cfg.kappa == 354.0
        # the norm bound is the binding branch here
        assert cfg.delta == pytest.approx(1.0 / (8 * 354 * 5), rel=1e-12)
        assert cfg.gamma == pytest.approx(math.log(8.0) / cfg.delta, rel=1e-12)

    def test_recomputation_is_exact(self, spec_2x2_controllable):
        a = self.golden_config(spec_2x2_controllable)
        b = self.golden_config(spec_2x2_controllable)
        assert a == b

    def test_reversed_orientation_relabeled(self, spec_2x2_reversed):
        cfg = self.golden_config(spec_2x2_reversed)
        # nonbasic activity (0, 0): internal class 2 is actual class 0
        assert (cfg.c1, cfg.c2, cfg.s1, cfg.s2) == (1, 0, 0, 1)
        assert cfg.m_internal == (-5, 4)
        assert cfg.C_m == 1
        assert cfg.mu21 == 3.0  # actual mu[0][0]
        assert cfg.lam2 == 3.5

    def test_kappa_scales_inversely_with_pushdown_rate(self, spec_2x2_controllable):
        cfg = self.golden_config(spec_2x2_controllable)
        # doubling every service rate doubles C_m and C'_H stays homogeneous
        doubled = make_spec(
            lam=[15, 4], mu=[[8, 14], [4, 8]], x0_hat=[-1, -1]
        )
        cfg2 = self.golden_config(doubled)
        assert cfg2.C_m == 2 * cfg.C_m
        assert cfg2.C_H_prime == 2 * cfg.C_H_prime
        assert cfg2.kappa_exact == F(2 + 16 * 44, 2)

    def test_rejects_wrong_shape(self, spec_2x3):
        fluid, graph, maps, cycles, _ = setup_network(spec_2x3, 100)
        with pytest.raises(PolicyError, match="2"):
            derive_constants(spec_2x3, fluid, cycles[0], maps)

    def test_rejects_rising_cycle(self, spec_2x2_uncontrollable):
        fluid, graph, maps, cycles, _ = setup_network(spec_2x2_uncontrollable, 100)
        with pytest.raises(PolicyError, match="lower"):
            derive_constants(spec_2x2_uncontrollable, fluid, cycles[0], maps)

    def test_overrides_accepted(self, spec_2x2_controllable):
        fluid, graph, maps, cycles, _ = setup_network(spec_2x2_controllable, 100)
        cfg = derive_constants(
            spec_2x2_controllable, fluid, cycles[0], maps, kappa=0.5
        )
        assert cfg.kappa == 0.5
        assert cfg.delta == pytest.approx(min(1.0 / (8 * 0.5 * 5), math.log(2) / 22))


class TestAlphaSchedule:
    def small_config(self, spec):
        # a gentle gamma keeps the schedule away from its cap at small n
        fluid, graph, maps, cycles, _ = setup_network(spec, 100)
        return derive_constants(spec, fluid, cycles[0], maps, kappa=0.5, gamma=1.0)

    def test_first_arrival_value(self, spec_2x2_controllable):
        cfg = self.small_config(spec_2x2_controllable)
        n = 100
        expected = min(
            1.0, cfg.kappa * (cfg.gamma + cfg.mu21) / (cfg.lam2 * n ** 0.375)
        )
        assert alpha_schedule(1, n, cfg) == pytest.approx(expected)

    def test_monotone_and_bounded(self, spec_2x2_controllable):
        cfg = self.small_config(spec_2x2_controllable)
        values = [alpha_schedule(k, 100, cfg) for k in range(1, 2000, 50)]
        assert all(0 <= v <= 1 for v in values)
        assert all(v1 <= v2 for v1, v2 in zip(values, values[1:]))

    def test_saturates_for_large_index(self, spec_2x2_controllable):
        cfg = self.small_config(spec_2x2_controllable)
        assert alpha_schedule(10_000_000, 100, cfg) == 1.0


# ---------------------------------------------------------------------------
# Routing policy initialization and dynamics
# ---------------------------------------------------------------------------


class TestNonpreemptiveInit:
    def test_true_constants_feasible_at_astronomic_scale(self, spec_2x2_controllable):
        fluid, graph, maps, cycles, _ = setup_network(spec_2x2_controllable, 100)
        cfg = derive_constants(spec_2x2_controllable, fluid, cycles[0], maps)
        inst = scale_instance(spec_2x2_controllable, fluid, 10 ** 8)
        psi, held = nonpreemptive_initial_assignment(inst.X0_n, inst, cfg)
        assert held == 0
        # queues empty, idleness nearly balanced
        for i in range(2):
            assert sum(psi[i]) == inst.X0_n[i]
        z = [inst.N_n[j] - psi[0][j] - psi[1][j] for j in range(2)]
        assert all(v >= 0 for v in z)
        assert abs(z[0] - z[1]) <= 1
        assert psi[1][0] == math.ceil((10 ** 8) ** 0.625 * cfg.kappa)

    def test_true_constants_infeasible_at_desk_scale(self, spec_2x2_controllable):
        fluid, graph, maps, cycles, _ = setup_network(spec_2x2_controllable, 100)
        cfg = derive_constants(spec_2x2_controllable, fluid, cycles[0], maps)
        inst = scale_instance(spec_2x2_controllable, fluid, 800)
        with pytest.raises(PolicyError, match="larger n"):
            nonpreemptive_initial_assignment(inst.X0_n, inst, cfg)

    def test_small_kappa_init_at_desk_scale(self, spec_2x2_controllable):
        fluid, graph, maps, cycles, _ = setup_network(spec_2x2_controllable, 100)
        cfg = derive_constants(spec_2x2_controllable, fluid, cycles[0], maps, kappa=0.5)
        inst = scale_instance(spec_2x2_controllable, fluid, 100)
        psi, held = nonpreemptive_initial_assignment(inst.X0_n, inst, cfg)
        assert held == 0
        assert psi == [[81, 59], [9, 31]]

    def test_surplus_held_in_queue(self, spec_2x2_controllable):
        spec = make_spec(lam=[F(15, 2), 2], mu=[[4, 7], [2, 4]], x0_hat=[1, 1])
        fluid, graph, maps, cycles, _ = setup_network(spec, 100)
        cfg = derive_constants(spec, fluid, cycles[0], maps, kappa=0.5)
        inst = scale_instance(spec, fluid, 100)
        psi, held = nonpreemptive_initial_assignment(inst.X0_n, inst, cfg)
        assert held == sum(inst.X0_n) - sum(inst.N_n) + 10
        assert sum(psi[0]) == inst.X0_n[0] - held
        assert sum(psi[1]) == inst.X0_n[1]

    def test_full_run_keeps_invariants(self, spec_2x2_controllable):
        fluid, graph, maps, cycles, inst = setup_network(spec_2x2_controllable, 100)
        cfg = derive_constants(spec_2x2_controllable, fluid, cycles[0], maps, kappa=0.5)
        pol = NonpreemptivePolicy(inst, cfg)
        trace = run(inst, pol, 3.0, RngStreams(8, 0, 2), check=True)
        assert trace.final_state.t == 3.0

    def test_held_customers_released_once_servers_free_up(self):
        spec = make_spec(lam=[F(15, 2), 2], mu=[[4, 7], [2, 4]], x0_hat=[1, 1])
        fluid, graph, maps, cycles, inst = setup_network(spec, 100)
        cfg = derive_constants(spec, fluid, cycles[0], maps, kappa=0.5)
        pol = NonpreemptivePolicy(inst, cfg)
        rng = RngStreams(8, 1, 2)
        state = init_state(inst, pol, rng)
        assert pol.held == 30
        assert state.Y[cfg.c1] == 30
        # free servers drift just past the release threshold of held + sqrt(n)
        state.Z = [21, 20]
        pol.on_arrival(state, cfg.c1, None, rng)
        assert pol.held == 0
        assert state.Y == [0, 0]
        assert all(z >= 0 for z in state.Z)

    def test_release_split_respects_free_server_caps(self):
        spec = make_spec(lam=[F(15, 2), 2], mu=[[4, 7], [2, 4]], x0_hat=[1, 1])
        fluid, graph, maps, cycles, inst = setup_network(spec, 100)
        cfg = derive_constants(spec, fluid, cycles[0], maps, kappa=0.5)
        pol = NonpreemptivePolicy(inst, cfg)
        state = init_state(inst, pol, RngStreams(8, 2, 2))
        # one station has almost no room: the split must clamp to it
        state.Z = [2, 40]
        pol._release(state)
        assert pol.held == 0
        assert state.Z[cfg.s1] == 0
        assert state.Z[cfg.s2] == 12
        assert state.Y[cfg.c1] == 0

    def test_reversed_orientation_full_run(self, spec_2x2_reversed):
        fluid, graph, maps, cycles, inst = setup_network(spec_2x2_reversed, 100)
        cfg = derive_constants(spec_2x2_reversed, fluid, cycles[0], maps, kappa=0.5)
        pol = NonpreemptivePolicy(inst, cfg)
        trace = run(inst, pol, 2.0, RngStreams(2, 0, 2), check=True)
        assert trace.final_state.t == 2.0


class TestRoutingRules:
    def make_policy(self, spec_2x2_controllable, n=100):
        fluid, graph, maps, cycles, inst = setup_network(spec_2x2_controllable, n)
        cfg = derive_constants(spec_2x2_controllable, fluid, cycles[0], maps, kappa=0.5)
        pol = NonpreemptivePolicy(inst, cfg)
        state = init_state(inst, pol, RngStreams(0, 0, 2))
        return pol, state

    def test_class_one_chases_free_servers(self, spec_2x2_controllable):
        pol, state = self.make_policy(spec_2x2_controllable)
        state.Z = [7, 3]
        before = [row[:] for row in state.Psi]
        state.X[0] += 1
        pol._route_class1(state, None)
        assert state.Psi[0][0] == before[0][0] + 1
        assert state.Z == [6, 3]

    def test_class_one_tie_goes_to_second_station(self, spec_2x2_controllable):
        pol, state = self.make_policy(spec_2x2_controllable)
        state.Z = [4, 4]
        before = [row[:] for row in state.Psi]
        state.X[0] += 1
        pol._route_class1(state, None)
        assert state.Psi[0][1] == before[0][1] + 1

    def test_full_target_overflows_to_other_station(self, spec_2x2_controllable):
        pol, state = self.make_policy(spec_2x2_controllable)
        trace_stub = type("T", (), {"full_station_events": 0})()
        state.Z = [0, 2]
        state.X[1] += 1
        pol._route_to(state, 1, 0, trace_stub)
        assert trace_stub.full_station_events == 1
        assert state.Z == [0, 1]

    def test_both_full_joins_queue(self, spec_2x2_controllable):
        pol, state = self.make_policy(spec_2x2_controllable)
        trace_stub = type("T", (), {"full_station_events": 0})()
        state.Z = [0, 0]
        state.X[1] += 1
        pol._route_to(state, 1, 0, trace_stub)
        assert state.Y[1] == 1
        assert trace_stub.full_station_events == 1


class TestGreedyPolicy:
    def test_work_conserving(self, spec_2x2_controllable):
        fluid = solve_static_lp(spec_2x2_controllable)
        inst = scale_instance(spec_2x2_controllable, fluid, 30)
        trace = run(
            inst, GreedyPolicy(spec_2x2_controllable), 2.0, RngStreams(6, 0, 2),
            full_trace=True, check=True,
        )
        # never a queued customer while a compatible server idles
        for X, Y, Z, Psi in trace.snapshots:
            for i in range(2):
                for j in range(2):
                    assert not (Y[i] > 0 and Z[j] > 0)
