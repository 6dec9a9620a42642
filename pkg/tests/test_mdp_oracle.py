"""Exact average-cost oracle: action enumeration, uniformization, relative
value iteration, and the stationary-distribution cross-check."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnetctrl.ctmc_sim import estimate_costs, simulate_replicates
from nnetctrl.errors import (
    BoxTooLarge,
    EmptyActionSet,
    PreconditionViolation,
)
from nnetctrl.mdp_oracle import (
    LookupPolicy,
    build_chain,
    default_box,
    enumerate_actions,
    load_policy_csv,
    oracle_curve,
    policy_table,
    relative_value_iteration,
    save_policy_csv,
    stationary_average,
)
from nnetctrl.model import CostSpec, instantiate
from nnetctrl.policies import in_action_set, sdp_schedule


def brute_force_actions(x, inst):
    n1, n2 = inst.pools
    out = []
    for z11 in range(0, min(x[0], n1) + 1):
        for z12 in range(0, n2 + 1):
            for z22 in range(0, n2 + 1):
                z = ((z11, z12), (0, z22))
                if z11 + z12 <= x[0] and z22 <= x[1] and in_action_set(x, z, inst):
                    out.append((z11, z12, z22))
    return sorted(out)


def as_triples(decisions):
    return sorted((d.z[0][0], d.z[0][1], d.z[1][1]) for d in decisions)


class TestEnumerateActions:
    def test_empty_system_has_the_single_zero_action(self, ref1):
        inst = instantiate(ref1, 2)
        acts = enumerate_actions((0, 0), inst)
        assert as_triples(acts) == [(0, 0, 0)]

    def test_class2_overload_forces_the_full_shared_pool(self, ref1):
        inst = instantiate(ref1, 2)
        acts = enumerate_actions((0, 3), inst)
        assert as_triples(acts) == [(0, 0, 2)]
        d = acts[0]
        assert d.q == (0, 1)
        assert d.y == (2, 0)

    def test_class1_overload_matches_brute_force(self, ref1):
        # both admissible seatings appear: the dedicated pool may idle a
        # seat when the shared pool absorbs the whole class-1 backlog
        inst = instantiate(ref1, 2)
        acts = enumerate_actions((3, 0), inst)
        assert as_triples(acts) == brute_force_actions((3, 0), inst)

    @pytest.mark.parametrize("n", [2, 5])
    def test_exhaustive_brute_force_agreement(self, ref1, n):
        inst = instantiate(ref1, n)
        side = 2 * sum(inst.pools)
        for x1 in range(side):
            for x2 in range(side):
                expect = brute_force_actions((x1, x2), inst)
                got = as_triples(enumerate_actions((x1, x2), inst))
                assert got == expect, f"mismatch at {(x1, x2)}"

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 6), x1=st.integers(0, 25), x2=st.integers(0, 25))
    def test_membership_and_completeness_on_random_states(self, ref2, n, x1, x2):
        inst = instantiate(ref2, n)
        got = as_triples(enumerate_actions((x1, x2), inst))
        assert got == brute_force_actions((x1, x2), inst)
        assert len(got) == len(set(got))

    def test_jwc_filter_keeps_balanced_states_jwc(self, ref1):
        from nnetctrl.mdp_oracle import ejwc_filter

        inst = instantiate(ref1, 5)
        x = (7, 4)  # near the fluid headcounts (6.5, 3.5)
        full = enumerate_actions(x, inst)
        kept = ejwc_filter(x, full, inst, ball=0.5)
        assert kept
        for d in kept:
            assert min(d.q[0] + d.q[1], d.y[0] + d.y[1]) == 0

    def test_jwc_filter_empty_at_an_unbalanced_state(self, ref1):
        from nnetctrl.mdp_oracle import ejwc_filter

        inst = instantiate(ref1, 5)
        x = (0, 30)  # class-2 mass beyond the shared pool, pool 1 unusable
        with pytest.raises(EmptyActionSet):
            ejwc_filter(x, enumerate_actions(x, inst), inst, ball=100.0)


class TestBuildChain:
    def test_rows_are_stochastic(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        ch = build_chain(inst, linear_cost, box=(40, 40))
        total = ch.row_prob.sum(axis=1) + ch.row_self
        np.testing.assert_allclose(total, 1.0, atol=1e-12)
        assert ch.row_prob.min() >= 0.0
        assert ch.row_self.min() >= 0.0

    def test_uniform_rate_bounds_every_exit_rate(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        ch = build_chain(inst, linear_cost, box=(40, 40))
        assert ch.row_prob.sum(axis=1).max() <= 1.0

    def test_neighbor_indices_stay_in_the_box(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        ch = build_chain(inst, linear_cost, box=(40, 40))
        assert ch.row_nidx.min() >= 0
        assert ch.row_nidx.max() < ch.nstates

    def test_state_count_cap(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        with pytest.raises(BoxTooLarge):
            build_chain(inst, linear_cost, box=(1200, 1200))

    def test_box_must_contain_the_fluid_point(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        with pytest.raises(PreconditionViolation):
            build_chain(inst, linear_cost, box=(4, 4))

    def test_ejwc_ball_too_large_raises(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        with pytest.raises(EmptyActionSet):
            build_chain(inst, linear_cost, box=(40, 40), ejwc=True, ball=100.0)


class TestRelativeValueIteration:
    def test_zero_cost_gives_zero_value(self, ref1):
        inst = instantiate(ref1, 5)
        cost = CostSpec(xi=(0.0, 0.0), zeta=(0.0, 0.0), m=1, m_tilde=1)
        ch = build_chain(inst, cost, box=(30, 30))
        sol = relative_value_iteration(ch)
        assert sol.rho == pytest.approx(0.0, abs=1e-12)

    def test_value_and_recompute_agree(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        ch = build_chain(inst, linear_cost, box=(40, 40))
        sol = relative_value_iteration(ch)
        assert sol.converged
        assert sol.rho > 0
        avg, pi = stationary_average(ch, sol.rows)
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)
        assert avg == pytest.approx(sol.rho, abs=1e-8)

    def test_box_growth_leaves_the_value_unchanged(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        a = relative_value_iteration(build_chain(inst, linear_cost, box=(40, 40)))
        b = relative_value_iteration(build_chain(inst, linear_cost, box=(60, 60)))
        assert abs(a.rho - b.rho) < 1e-5

    def test_restricting_to_jwc_cannot_lower_the_value(self, ref1, linear_cost):
        inst = instantiate(ref1, 5)
        full = relative_value_iteration(build_chain(inst, linear_cost, box=(40, 40)))
        filt = relative_value_iteration(
            build_chain(inst, linear_cost, box=(40, 40), ejwc=True, ball=0.3)
        )
        assert filt.rho >= full.rho - 1e-9

    def test_small_system_matches_simulation(self, ref1, linear_cost):
        inst = instantiate(ref1, 2)
        ch = build_chain(inst, linear_cost, box=(25, 25))
        sol = relative_value_iteration(ch)
        table = policy_table(ch, sol.rows)
        lookup = {(int(r[0]), int(r[1])): (int(r[2]), int(r[3]), int(r[4]))
                  for r in table}
        policy = LookupPolicy(lookup, inst)
        stats = simulate_replicates(inst, policy, T=4000.0, burn_in=400.0,
                                    seed_base=11, cost=linear_cost, n_rep=4)
        est = estimate_costs(stats, linear_cost)
        assert abs(est.J - sol.rho) <= 3.0 * est.se["J"]


class TestPolicyRoundTrip:
    def test_csv_save_load_lookup(self, ref1, linear_cost, tmp_path):
        inst = instantiate(ref1, 2)
        ch = build_chain(inst, linear_cost, box=(12, 12))
        sol = relative_value_iteration(ch)
        table = policy_table(ch, sol.rows)
        path = tmp_path / "policy.csv"
        save_policy_csv(path, table)
        loaded = load_policy_csv(path)
        assert len(loaded) == ch.nstates
        pol = LookupPolicy(loaded, inst)
        d = pol((3, 4))
        assert (d.z[0][0], d.z[0][1], d.z[1][1]) == loaded[(3, 4)]
        assert d.q[0] >= 0 and d.q[1] >= 0

    def test_lookup_falls_back_to_the_priority_rule(self, ref1):
        inst = instantiate(ref1, 2)
        pol = LookupPolicy({}, inst)
        assert pol((9, 9)) == sdp_schedule((9, 9), inst)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "policy.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(PreconditionViolation):
            load_policy_csv(path)


class TestOracleCurve:
    def test_empty_input_gives_empty_table(self, linear_cost):
        assert oracle_curve([], linear_cost) == []

    def test_single_instance_single_row(self, ref1, linear_cost):
        inst = instantiate(ref1, 2)
        rows = oracle_curve([inst], linear_cost, spread=2.0)
        assert len(rows) == 1
        n, rho, states = rows[0]
        assert n == 2 and rho > 0 and states > 0

    def test_default_box_contains_the_fluid_point(self, ref1, ref2):
        for params, n in ((ref1, 5), (ref2, 7)):
            inst = instantiate(params, n)
            box = default_box(inst)
            nx = inst.n * np.asarray(inst.fluid.xstar)
            assert box[0] >= nx[0] and box[1] >= nx[1]
