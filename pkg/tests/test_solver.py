import math

import numpy as np
import pytest

from shelterplan.domain import ServiceIntensity, ServiceNeed
from shelterplan.model import LinearProgram, build
from shelterplan.solver import (
    LP_INFEASIBLE,
    LP_OPTIMAL,
    STATUS_GAP,
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    STATUS_TIME,
    BruteForceTooLarge,
    Solution,
    SolverConfig,
    branch_and_bound,
    brute_force,
    enumerate_schedules,
    solve_lp,
    verify,
)

from conftest import bed_catalog, bed_need, make_instance, micro_instance, org, psi_org, youth


def hand_lp():
    """min -x1 - x2 - x3 subject to x1 + x2 + x3 <= 1, x in [0, 1]^3.

    Optimum -1: enumerating the vertices of the feasible box-with-cut gives
    objective values {0, -1}, so any vertex on the cut is optimal.
    """
    lp = LinearProgram()
    for j in range(3):
        lp.add_col("X", y=1, s=1, i=1, t=j + 1, obj=-1.0, lb=0.0, ub=1.0, integer=False)
    lp.add_row("CAP", "2a", "<=", 1.0, [0, 1, 2], [1.0, 1.0, 1.0])
    return lp


class TestSolveLp:
    def test_hand_lp_value(self):
        res = solve_lp(hand_lp())
        assert res.status == LP_OPTIMAL
        assert res.objective == pytest.approx(-1.0)
        assert res.x.sum() == pytest.approx(1.0)

    def test_lower_bound_row_added(self):
        lp = hand_lp()
        lp.add_row("DEMAND", "3b", ">=", 0.5, [0], [1.0])
        res = solve_lp(lp)
        assert res.status == LP_OPTIMAL
        assert res.objective == pytest.approx(-1.0)
        assert res.x[0] >= 0.5 - 1e-9

    def test_empty_model_is_optimal_zero(self):
        res = solve_lp(LinearProgram())
        assert res.status == LP_OPTIMAL
        assert res.objective == 0.0

    def test_infeasible_detected(self):
        lp = hand_lp()
        lp.add_row("IMPOSSIBLE", "3b", ">=", 4.0, [0, 1, 2], [1.0, 1.0, 1.0])
        assert solve_lp(lp).status == LP_INFEASIBLE

    def test_zero_cost_feasible_instance(self):
        inst = make_instance(
            8, bed_catalog(), [youth(1, 1, [bed_need(3, 1, 2)])],
            [org(1, cap=2), psi_org(2, [1])],
        )
        assert solve_lp(build(inst)).objective == pytest.approx(0.0)

    def test_deterministic(self):
        lp = hand_lp()
        a = solve_lp(lp)
        b = solve_lp(lp)
        assert a.objective == b.objective
        assert np.array_equal(a.x, b.x)


class TestBranchAndBound:
    def test_oracle_agreement_sample(self, micro_pool):
        for inst in micro_pool[:12]:
            bf = brute_force(inst)
            sol = branch_and_bound(build(inst), SolverConfig(rel_gap=0.0))
            assert sol.status == bf.status
            if bf.status == STATUS_OPTIMAL:
                assert sol.objective == pytest.approx(bf.objective, abs=1e-6)

    def test_tighter_gap_never_worse(self):
        rng = np.random.default_rng(99)
        inst = micro_instance(rng)
        lp = build(inst)
        tight = branch_and_bound(lp, SolverConfig(rel_gap=0.01))
        loose = branch_and_bound(lp, SolverConfig(rel_gap=0.5))
        assert tight.objective <= loose.objective * (1 + 1e-9)

    def test_uncontested_single_start_solves_at_root(self):
        inst = make_instance(
            8, bed_catalog(), [youth(1, 2, [bed_need(3, 2, 2)])],
            [org(1, cap=1), psi_org(2, [1])],
        )
        sol = branch_and_bound(build(inst), SolverConfig(rel_gap=0.0))
        assert sol.status == STATUS_OPTIMAL
        assert sol.node_count == 1

    def test_incumbents_always_verify(self, micro_pool):
        for inst in micro_pool[:8]:
            sol = branch_and_bound(build(inst), SolverConfig())
            if sol.status == STATUS_INFEASIBLE:
                continue
            assert verify(inst, sol).ok
            assert sum(sol.decomposition.values()) == pytest.approx(
                sol.objective, abs=1e-7
            )
            assert sol.gap == pytest.approx(
                (sol.objective - sol.bound) / max(abs(sol.objective), 1e-9), abs=1e-9
            )

    def test_determinism_across_runs(self):
        rng = np.random.default_rng(123)
        inst = micro_instance(rng)
        lp = build(inst)
        a = branch_and_bound(lp, SolverConfig())
        b = branch_and_bound(lp, SolverConfig())
        assert a.objective == b.objective
        assert a.gap == b.gap
        assert a.node_count == b.node_count
        assert a.values == b.values

    def test_threads_agree_within_gap(self):
        rng = np.random.default_rng(55)
        inst = micro_instance(rng)
        lp = build(inst)
        one = branch_and_bound(lp, SolverConfig(rel_gap=0.01, threads=1))
        two = branch_and_bound(lp, SolverConfig(rel_gap=0.01, threads=2))
        assert two.objective <= one.objective * 1.011 + 1e-9
        assert one.objective <= two.objective * 1.011 + 1e-9

    def test_weak_duality_check_passes(self):
        rng = np.random.default_rng(31)
        inst = micro_instance(rng)
        sol = branch_and_bound(build(inst), SolverConfig(check_weak_duality=True))
        assert sol.status in (STATUS_OPTIMAL, STATUS_GAP)
        assert sol.bound <= sol.objective + 1e-6

    def test_time_limit_returns_best_incumbent(self):
        rng = np.random.default_rng(17)
        inst = micro_instance(rng)
        lp = build(inst)
        sol = branch_and_bound(lp, SolverConfig(time_limit=0.0))
        assert sol.status == STATUS_TIME
        assert math.isfinite(sol.objective)  # heuristic incumbent exists

    def test_pseudo_cost_rule_matches_optimum(self, micro_pool):
        inst = micro_pool[0]
        bf = brute_force(inst)
        sol = branch_and_bound(
            build(inst), SolverConfig(rel_gap=0.0, branching_rule="pseudo_cost")
        )
        assert sol.objective == pytest.approx(bf.objective, abs=1e-6)

    def test_infeasible_without_catch_all(self):
        # The single organization rejects the youth and no catch-all exists.
        inst = make_instance(
            8,
            bed_catalog(),
            [youth(1, 1, [bed_need(3, 1, 2)], bits=(1, 1, 1, 1))],
            [org(1, bits=(0, 1, 1, 1))],
        )
        sol = branch_and_bound(build(inst), SolverConfig())
        bf = brute_force(inst)
        assert sol.status == STATUS_INFEASIBLE
        assert bf.status == STATUS_INFEASIBLE


class TestVerifier:
    @pytest.fixture()
    def solved(self):
        inst = make_instance(
            10,
            bed_catalog([ServiceIntensity(3, "Checkup", "Low", False, 0)]),
            [
                youth(1, 1, [bed_need(4, 1, 3), ServiceNeed(3, 8, 2, 1, 4)]),
                youth(2, 2, [bed_need(3, 2, 4)]),
            ],
            [org(1, offers=(1, 3), cap=1, head=1), psi_org(2, [1, 3])],
        )
        sol = branch_and_bound(build(inst), SolverConfig(rel_gap=0.0))
        return inst, sol

    def test_valid_solution_passes_all_families(self, solved):
        inst, sol = solved
        report = verify(inst, sol)
        assert report.ok
        assert all(report.family_ok.values())
        assert report.objective_recomputed == pytest.approx(sol.objective)

    def test_moved_occurrence_flags_window_family(self, solved):
        inst, sol = solved
        values = dict(sol.values)
        # Move the later checkup occurrence past b + d = 12; the earlier one
        # stays inside the start window, so only 3a trips.
        keys = [
            k for k, v in values.items()
            if k.startswith("X_y1") and "_i3_" in k and v > 0.5
        ]
        key = max(keys, key=lambda k: int(k.rsplit("_t", 1)[1]))
        prefix = key.rsplit("_t", 1)[0]
        del values[key]
        values[prefix + "_t13"] = 1.0
        report = verify(inst, values)
        assert not report.ok
        assert report.family_ok["3a"] is False

    def test_capacity_violation_flags_2a(self, solved):
        inst, sol = solved
        values = dict(sol.values)
        removed = False
        for k in list(values):
            if k.startswith("O_s1_i1") or k.startswith("E_s1_i1"):
                del values[k]
                removed = True
        assert removed, "expected a binding bed day at organization 1"
        report = verify(inst, values)
        assert not report.ok
        assert report.family_ok["2a"] is False
        assert report.first_violation["2a"].startswith("s=1,i=1")


class TestBruteForce:
    def test_tiny_hand_case(self):
        inst = make_instance(
            6, bed_catalog(), [youth(1, 1, [bed_need(2, 1, 2)])],
            [org(1, cap=1), psi_org(2, [1])],
        )
        need = inst.youths[0].needs[0]
        assert len(enumerate_schedules(need, True, 0, 6)) == 2
        sol = brute_force(inst)
        assert sol.status == STATUS_OPTIMAL
        assert sol.objective == 0.0

    def test_refuses_oversized_search_space(self):
        ys = [
            youth(j, 1, [bed_need(6, 1, 6)]) for j in range(1, 5)
        ]
        inst = make_instance(40, bed_catalog(), ys, [org(1, cap=1), org(2, cap=1),
                                                     org(3, cap=1), psi_org(4, [1])])
        with pytest.raises(BruteForceTooLarge) as err:
            brute_force(inst, limit=100.0)
        assert err.value.estimate > 100.0

    def test_scaling_invariance_of_optima(self):
        rng = np.random.default_rng(2024)
        inst = micro_instance(rng)
        base = brute_force(inst, collect_optima=True)
        if base.status != STATUS_OPTIMAL:
            pytest.skip("infeasible draw")

        scaled_orgs = []
        for o in inst.organizations:
            scaled_orgs.append(
                type(o)(
                    id=o.id, kind=o.kind, accepts=o.accepts, offers=o.offers,
                    capacity_c=o.capacity_c, headroom_mu=o.headroom_mu,
                    cost_assign_r={k: 3.0 * v for k, v in o.cost_assign_r.items()},
                    cost_expand_gamma={k: 3.0 * v for k, v in o.cost_expand_gamma.items()},
                    cost_overflow_lambda={
                        k: 3.0 * v for k, v in o.cost_overflow_lambda.items()
                    },
                )
            )
        scaled = make_instance(
            inst.horizon_T, inst.services, inst.youths, scaled_orgs, seed=inst.rng_seed
        )
        other = brute_force(scaled, collect_optima=True)
        assert other.objective == pytest.approx(3.0 * base.objective, abs=1e-6)
        assert other.optimal_patterns == base.optimal_patterns

    def test_solution_values_verify(self, micro_pool):
        for inst in micro_pool[:6]:
            sol = brute_force(inst)
            if sol.status == STATUS_OPTIMAL:
                assert verify(inst, sol).ok


class TestSolutionSerialization:
    def test_round_trip(self, micro_pool, tmp_path):
        from shelterplan.solver import load_solution, save_solution

        sol = branch_and_bound(build(micro_pool[1]), SolverConfig())
        path = tmp_path / "sol.json"
        save_solution(sol, str(path))
        again = load_solution(str(path))
        assert again.objective == sol.objective
        assert again.values == sol.values
        assert again.status == sol.status
