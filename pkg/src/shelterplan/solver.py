"""Exact MILP solution: LP-relaxation branch-and-bound, verifier, oracle.

The LP relaxations are solved with scipy's HiGHS interface; the search,
branching, incumbent handling and stopping rule live here. A schedule-aware
greedy heuristic provides the first incumbent, and every incumbent has its
expansion/overflow variables recomputed to the cheapest feasible split
before acceptance.

The verifier re-checks every constraint family directly against the problem
instance (never against the matrix), so model-construction bugs cannot
certify themselves. The brute-force oracle enumerates all admissible
(organization, schedule) combinations; distinct services share nothing
(capacity, continuity, windows and periodicity are all per-service), so the
search space factors by service.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .domain import (
    ProblemInstance,
    demographic_compatible,
    service_offered,
)
from .model import SENSE_EQ, SENSE_LE, LinearProgram, parse_variable_name

STATUS_OPTIMAL = "Optimal"
STATUS_GAP = "GapReached"
STATUS_TIME = "TimeLimit"
STATUS_NODES = "NodeLimit"
STATUS_INFEASIBLE = "Infeasible"

LP_OPTIMAL = "optimal"
LP_INFEASIBLE = "infeasible"
LP_UNBOUNDED = "unbounded"


class SolverError(RuntimeError):
    """Numerical failure or internal inconsistency while solving."""


class BruteForceTooLarge(RuntimeError):
    """Enumeration refused; carries the estimated search-space size."""

    def __init__(self, estimate: float):
        super().__init__(f"search space too large for enumeration: ~{estimate:.3g} combinations")
        self.estimate = estimate


@dataclass(frozen=True)
class SolverConfig:
    rel_gap: float = 0.01
    time_limit: float | None = None
    node_limit: int = 1_000_000
    branching_rule: str = "most_fractional"  # or "pseudo_cost"
    lp_tolerance: float = 1e-7
    integrality_eps: float = 1e-6
    threads: int = 1
    check_weak_duality: bool = False

    def __post_init__(self) -> None:
        if self.rel_gap < 0:
            raise ValueError("rel_gap must be >= 0")
        if self.lp_tolerance <= 0 or self.integrality_eps <= 0:
            raise ValueError("tolerances must be positive")
        if self.branching_rule not in ("most_fractional", "pseudo_cost"):
            raise ValueError(f"unknown branching rule {self.branching_rule!r}")


@dataclass
class LpResult:
    status: str
    objective: float
    x: np.ndarray | None


@dataclass
class Solution:
    values: dict[str, float]
    objective: float
    bound: float
    gap: float
    status: str
    decomposition: dict[str, float]
    node_count: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "objective": self.objective,
            "bound": self.bound,
            "gap": self.gap,
            "status": self.status,
            "decomposition": dict(self.decomposition),
            "node_count": self.node_count,
            "values": {k: self.values[k] for k in sorted(self.values)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Solution":
        return cls(
            values=dict(doc["values"]),
            objective=float(doc["objective"]),
            bound=float(doc["bound"]),
            gap=float(doc["gap"]),
            status=doc["status"],
            decomposition=dict(doc.get("decomposition", {})),
            node_count=int(doc.get("node_count", 0)),
        )


def load_solution(path: str) -> Solution:
    with open(path, "r", encoding="utf-8") as fh:
        return Solution.from_dict(json.load(fh))


def save_solution(solution: Solution, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(solution.to_json())
        fh.write("\n")


# ---------------------------------------------------------------------------
# LP relaxation
# ---------------------------------------------------------------------------


def solve_lp(
    lp: LinearProgram,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    config: SolverConfig | None = None,
) -> LpResult:
    """Solve the LP relaxation; deterministic for identical input."""
    config = config or SolverConfig()
    if lp.n_cols == 0:
        rhs = np.asarray(lp.rhs, dtype=float)
        sense = np.asarray(lp.row_sense)
        ok = True
        for sgn, r in zip(sense, rhs):
            if sgn == "<=" and r < -config.lp_tolerance:
                ok = False
            elif sgn == ">=" and r > config.lp_tolerance:
                ok = False
            elif sgn == "=" and abs(r) > config.lp_tolerance:
                ok = False
        if ok:
            return LpResult(LP_OPTIMAL, 0.0, np.zeros(0))
        return LpResult(LP_INFEASIBLE, math.inf, None)

    c, A_ub, b_ub, A_eq, b_eq = lp.to_scipy()
    lb, ub = bounds if bounds is not None else lp.bounds_arrays()
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=np.column_stack([lb, ub]),
        method="highs",
        options={
            "primal_feasibility_tolerance": config.lp_tolerance,
            "dual_feasibility_tolerance": config.lp_tolerance,
        },
    )
    if res.status == 0:
        return LpResult(LP_OPTIMAL, float(res.fun), np.asarray(res.x))
    if res.status == 2:
        return LpResult(LP_INFEASIBLE, math.inf, None)
    if res.status == 3:
        return LpResult(LP_UNBOUNDED, -math.inf, None)
    raise SolverError(f"LP solve failed: status={res.status} message={res.message!r}")


# ---------------------------------------------------------------------------
# Shared solution utilities
# ---------------------------------------------------------------------------


def _triple_index(lp: LinearProgram) -> dict[tuple[int, int, int], list[int]]:
    by_triple: dict[tuple[int, int, int], list[int]] = {k: [] for k in lp.e_cols}
    for (y, s, i), tmap in lp.x_cols.items():
        for t, col in tmap.items():
            by_triple[(s, i, t)].append(col)
    return by_triple


def repair_expansion(lp: LinearProgram, x: np.ndarray, by_triple=None) -> np.ndarray:
    """Recompute E/O as the cheapest split covering the assigned load.

    For each (s, i, t): the load above existing capacity is met by the
    cheaper of expansion and overflow first (expansion capped at mu - c).
    Returns a copy with integral E/O values.
    """
    inst = lp.source_instance
    org_by_id = {o.id: o for o in inst.organizations}
    if by_triple is None:
        by_triple = _triple_index(lp)
    out = x.copy()
    for (s, i, t), cols in by_triple.items():
        load = int(round(sum(float(out[c]) for c in cols)))
        org = org_by_id[s]
        cap = org.capacity(i, t)
        mu = org.headroom(i)
        over = max(0, load - cap)
        gamma = org.cost_expand_gamma.get(i, 0.0)
        lam = org.cost_overflow_lambda.get(i, 0.0)
        if gamma <= lam:
            e = min(over, mu - cap)
            o = over - e
        else:
            o = over
            e = 0
        out[lp.e_cols[(s, i, t)]] = float(e)
        out[lp.o_cols[(s, i, t)]] = float(o)
    return out


def values_from_vector(lp: LinearProgram, x: np.ndarray) -> dict[str, float]:
    values: dict[str, float] = {}
    for ref, v in zip(lp.col_refs, x):
        v = float(v)
        if abs(v) < 1e-9:
            continue
        values[ref.name] = float(round(v)) if abs(v - round(v)) < 1e-6 else v
    return values


def decompose_objective(lp: LinearProgram, x: np.ndarray) -> dict[str, float]:
    parts = {"assignment": 0.0, "expansion": 0.0, "overflow": 0.0}
    for ref, coef, v in zip(lp.col_refs, lp.obj, x):
        if coef == 0.0 or v == 0.0:
            continue
        if ref.kind == "X":
            parts["assignment"] += coef * float(v)
        elif ref.kind == "E":
            parts["expansion"] += coef * float(v)
        elif ref.kind == "O":
            parts["overflow"] += coef * float(v)
    return parts


# ---------------------------------------------------------------------------
# Greedy schedule heuristic
# ---------------------------------------------------------------------------


class _LoadTracker:
    """Marginal service cost per (org, service, day) given committed loads."""

    def __init__(self, instance: ProblemInstance):
        self.org_by_id = {o.id: o for o in instance.organizations}
        self.loads: dict[tuple[int, int, int], int] = {}

    def marginal(self, s: int, i: int, t: int) -> float:
        org = self.org_by_id[s]
        load = self.loads.get((s, i, t), 0)
        r = org.cost_assign_r.get(i, 0.0)
        cap = org.capacity(i, t)
        if load < cap:
            return r
        if load < org.headroom(i):
            return r + org.cost_expand_gamma.get(i, 0.0)
        return r + org.cost_overflow_lambda.get(i, 0.0)

    def commit(self, s: int, i: int, days: Iterable[int], sign: int = 1) -> None:
        for t in days:
            key = (s, i, t)
            self.loads[key] = self.loads.get(key, 0) + sign


def _greedy_schedule(
    tracker: _LoadTracker,
    s: int,
    i: int,
    need,
    periodic: bool,
    k: int,
    day_domain: Sequence[int],
) -> tuple[float, tuple[int, ...]] | None:
    """Cheapest greedy schedule at one organization, or None if impossible."""
    domain = set(day_domain)
    a, b, f = need.window_start_a, need.window_end_b, need.frequency_f
    starts = [t for t in range(a, b + 1) if t in domain]
    if not starts:
        return None

    if f == 1:
        best = min(starts, key=lambda t: (tracker.marginal(s, i, t), t))
        return tracker.marginal(s, i, best), (best,)

    if not periodic:
        ranked = sorted(day_domain, key=lambda t: (tracker.marginal(s, i, t), t))
        first = min(starts, key=lambda t: (tracker.marginal(s, i, t), t))
        chosen = [first]
        for t in ranked:
            if len(chosen) == f:
                break
            if t != first:
                chosen.append(t)
        if len(chosen) < f:
            return None
        days = tuple(sorted(chosen))
        return sum(tracker.marginal(s, i, t) for t in days), days

    omega = need.omega
    lo_gap = max(omega - k, 1)
    hi_gap = omega + k
    best_cost, best_days = None, None
    for t0 in starts:
        days = [t0]
        cost = tracker.marginal(s, i, t0)
        ok = True
        for _ in range(f - 1):
            prev = days[-1]
            cands = [t for t in range(prev + lo_gap, prev + hi_gap + 1) if t in domain]
            if not cands:
                ok = False
                break
            target = prev + omega
            pick = min(cands, key=lambda t: (tracker.marginal(s, i, t), abs(t - target), t))
            days.append(pick)
            cost += tracker.marginal(s, i, pick)
        if ok and (best_cost is None or cost < best_cost):
            best_cost, best_days = cost, tuple(days)
    if best_days is None:
        return None
    return best_cost, best_days


def schedule_heuristic(
    lp: LinearProgram,
    passes: int = 3,
    initial: Mapping[tuple[int, int], tuple[int, tuple[int, ...]]] | None = None,
) -> np.ndarray:
    """Greedy per-need assignment with remove-and-reinsert improvement.

    An optional initial assignment (e.g. rounded from an LP relaxation)
    seeds the search; improvement passes re-place each need against the
    marginal cost of the current loads until a pass changes nothing.
    """
    inst = lp.source_instance
    catalog = inst.services
    tracker = _LoadTracker(inst)
    chosen: dict[tuple[int, int], tuple[int, tuple[int, ...]]] = {}
    if initial:
        for key, (s, days) in initial.items():
            chosen[key] = (s, days)
            tracker.commit(s, key[1], days, sign=1)

    needs = []
    for youth in inst.youths:
        for need in youth.needs:
            needs.append((youth, need))

    for pass_no in range(passes):
        changed = False
        for youth, need in needs:
            key = (youth.id, need.service)
            svc = catalog.get(need.service)
            if key in chosen:
                s_old, days_old = chosen[key]
                tracker.commit(s_old, need.service, days_old, sign=-1)
            best = None
            for s in lp.need_orgs[(youth.id, need.service)]:
                domain = sorted(lp.x_cols[(youth.id, s, need.service)])
                res = _greedy_schedule(
                    tracker, s, need.service, need, svc.periodic, svc.flexibility_k, domain
                )
                if res is None:
                    continue
                cost, days = res
                if best is None or cost < best[0]:
                    best = (cost, s, days)
            if best is None:
                raise SolverError(
                    f"no feasible schedule for youth {youth.id}, service {need.service}"
                )
            _, s_new, days_new = best
            if key in chosen and chosen[key] != (s_new, days_new):
                changed = True
            chosen[key] = (s_new, days_new)
            tracker.commit(s_new, need.service, days_new, sign=1)
        if pass_no > 0 and not changed:
            break

    x = np.zeros(lp.n_cols)
    for (y, i), (s, days) in chosen.items():
        x[lp.u_cols[(y, s, i)]] = 1.0
        tmap = lp.x_cols[(y, s, i)]
        for t in days:
            x[tmap[t]] = 1.0
    return repair_expansion(lp, x)


def _stays_from_lp(
    stay_cols: Mapping[tuple[int, int], list[tuple[int, int, int]]],
    x: np.ndarray,
    frequencies: Mapping[tuple[int, int], int],
) -> dict[tuple[int, int], tuple[int, tuple[int, ...]]]:
    """Round stay-mixture mass to one concrete stay per daily-service need."""
    initial: dict[tuple[int, int], tuple[int, tuple[int, ...]]] = {}
    for key, entries in stay_cols.items():
        best = max(entries, key=lambda e: (x[e[2]], -e[0], -e[1]))
        s, t0, _ = best
        f = frequencies[key]
        initial[key] = (s, tuple(range(t0, t0 + f)))
    return initial


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------


def _extend_with_stay_vars(lp: LinearProgram):
    """Internal bounding relaxation: convexify daily-service stays.

    For every need that is a run of f consecutive days (the bed), append one
    continuous stay-start column per (organization, start day) and link the
    public X columns to the mixture of stays. Fractional X profiles are then
    convex combinations of real stays instead of arbitrary smooth shapes,
    which removes most of the relaxation's demand-smoothing slack. The
    integer feasible set is unchanged, so bounds remain valid; the public
    model and its exports are not touched.
    """
    inst = lp.source_instance
    slp = LinearProgram(inst)
    slp.col_refs = list(lp.col_refs)
    slp.obj = list(lp.obj)
    slp.lb = list(lp.lb)
    slp.ub = list(lp.ub)
    slp.is_integer = list(lp.is_integer)
    slp.row_names = list(lp.row_names)
    slp.row_family = list(lp.row_family)
    slp.row_sense = list(lp.row_sense)
    slp.rhs = list(lp.rhs)
    slp._tri_row = list(lp._tri_row)
    slp._tri_col = list(lp._tri_col)
    slp._tri_val = list(lp._tri_val)
    slp.u_cols = lp.u_cols
    slp.x_cols = lp.x_cols
    slp.e_cols = lp.e_cols
    slp.o_cols = lp.o_cols
    slp.need_orgs = lp.need_orgs

    stay_cols: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    catalog = inst.services
    for youth in inst.youths:
        for need in youth.needs:
            svc = catalog.get(need.service)
            if not svc.periodic or svc.flexibility_k != 0 or need.omega != 1:
                continue
            f = need.frequency_f
            if f < 2:
                continue
            orgs = lp.need_orgs[(youth.id, need.service)]
            if not orgs:
                continue
            days = sorted(lp.x_cols[(youth.id, orgs[0], need.service)])
            if not days or days != list(range(days[0], days[-1] + 1)):
                continue
            last_start = days[-1] - f + 1
            starts = [t for t in range(need.window_start_a, need.window_end_b + 1) if t <= last_start]
            if not starts:
                continue
            entries = []
            for s in orgs:
                for t0 in starts:
                    col = slp.add_col(
                        "W", y=youth.id, s=s, i=need.service, t=t0,
                        obj=0.0, lb=0.0, ub=1.0, integer=False,
                    )
                    entries.append((s, t0, col))
            stay_cols[(youth.id, need.service)] = entries
            # Exactly one stay is chosen.
            slp.add_row(
                f"W1_y{youth.id}_i{need.service}", "aux", SENSE_EQ, 1.0,
                [c for _, _, c in entries], [1.0] * len(entries),
            )
            # Each X day equals the mass of stays covering it; days beyond
            # the last coverable start are forced to zero.
            for s in orgs:
                tmap = lp.x_cols[(youth.id, s, need.service)]
                scol = {t0: c for (ss, t0, c) in entries if ss == s}
                for t in days:
                    covering = [scol[t0] for t0 in starts if t0 <= t <= t0 + f - 1]
                    slp.add_row(
                        f"WL_y{youth.id}_s{s}_i{need.service}_t{t}", "aux", SENSE_EQ, 0.0,
                        [tmap[t]] + covering, [1.0] + [-1.0] * len(covering),
                    )
                # Stays at an organization imply its assignment indicator.
                slp.add_row(
                    f"WU_y{youth.id}_s{s}_i{need.service}", "aux", SENSE_LE, 0.0,
                    list(scol.values()) + [lp.u_cols[(youth.id, s, need.service)]],
                    [1.0] * len(scol) + [-1.0],
                )
    return slp, stay_cols


def _select_branch_var(
    lp: LinearProgram,
    x: np.ndarray,
    eps: float,
    rule: str,
    pseudo: dict[int, list[float]] | None,
) -> int | None:
    """Pick the branching column: fractional U first, then X, then E/O."""
    frac = np.abs(x - np.round(x))
    is_frac = (np.asarray(lp.is_integer, dtype=bool) & (frac > eps)).nonzero()[0]
    if is_frac.size == 0:
        return None
    best_col, best_rank = None, None
    for col in is_frac:
        kind = lp.col_refs[col].kind
        tier = 0 if kind == "U" else (1 if kind == "X" else 2)
        f = frac[col]
        if rule == "pseudo_cost" and pseudo is not None and col in pseudo:
            down, up, n = pseudo[col]
            score = -((down / max(n, 1)) * f + (up / max(n, 1)) * (1.0 - f))
        else:
            score = abs(f - 0.5)
        rank = (tier, score, col)
        if best_rank is None or rank < best_rank:
            best_rank, best_col = rank, int(col)
    return best_col


def branch_and_bound(lp: LinearProgram, config: SolverConfig | None = None) -> Solution:
    """Best-bound branch and bound with depth-first plunging.

    Stops when the relative gap between the incumbent and the best open
    bound reaches config.rel_gap (the MIP-gap stopping contract), or on
    node/time limits. Every incumbent passes the independent verifier
    before being accepted.
    """
    config = config or SolverConfig()
    inst = lp.source_instance
    t_start = time.monotonic()

    # Bounds come from a strengthened (stay-convexified) relaxation with the
    # same integer feasible set; incumbents live in the public column space.
    if inst is not None and lp.n_cols > 0:
        slp, stay_cols = _extend_with_stay_vars(lp)
    else:
        slp, stay_cols = lp, {}
    n_pub = lp.n_cols
    frequencies = {}
    if inst is not None:
        for youth in inst.youths:
            for need in youth.needs:
                frequencies[(youth.id, need.service)] = need.frequency_f

    root_lb, root_ub = slp.bounds_arrays()
    by_triple = _triple_index(lp) if inst is not None else None
    int_mask_pub = np.asarray(lp.is_integer) if n_pub else np.zeros(0, dtype=bool)

    best_x: np.ndarray | None = None
    best_obj = math.inf

    def try_incumbent(x: np.ndarray) -> None:
        nonlocal best_x, best_obj
        xr = np.asarray(x)[:n_pub].copy()
        xr[int_mask_pub] = np.round(xr[int_mask_pub])
        if inst is not None:
            xr = repair_expansion(lp, xr, by_triple)
        obj = float(np.dot(lp.obj, xr)) if n_pub else 0.0
        if obj < best_obj - 1e-9:
            if inst is not None:
                report = verify(inst, values_from_vector(lp, xr), claimed_objective=obj)
                if not report.ok:
                    raise SolverError(f"incumbent failed verification: {report.first_failure()}")
            best_x, best_obj = xr, obj

    def guided_incumbent(x: np.ndarray) -> None:
        if inst is None or not inst.youths:
            return
        try:
            initial = _stays_from_lp(stay_cols, x, frequencies)
            try_incumbent(schedule_heuristic(lp, initial=initial))
        except SolverError:
            pass

    if inst is not None and lp.n_cols > 0 and inst.youths:
        try:
            try_incumbent(schedule_heuristic(lp))
        except SolverError:
            # No greedy schedule exists (hand-crafted instance); let the
            # search discover infeasibility or a solution on its own.
            pass

    seq = itertools.count()
    # Heap entries: (parent bound, tiebreak, patch dict col -> (lb, ub),
    # pseudo-cost bookkeeping for the branch that created the node).
    heap: list[tuple] = [(-math.inf, next(seq), {}, None)]
    dive: list[tuple] = []
    pseudo: dict[int, list[float]] = {}
    node_count = 0
    status = None
    best_bound = -math.inf
    saw_infeasible_root = False

    def open_bound() -> float:
        bounds = [entry[0] for entry in heap] + [entry[0] for entry in dive]
        if not bounds:
            return best_obj
        low = min(bounds)
        return low if low != -math.inf else -math.inf

    def current_gap() -> float:
        if best_obj == math.inf:
            return math.inf
        ob = open_bound()
        if ob == -math.inf:
            return math.inf
        return (best_obj - ob) / max(abs(best_obj), 1e-9)

    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        while heap or dive:
            if best_obj < math.inf and current_gap() <= config.rel_gap:
                status = STATUS_GAP
                break
            if node_count >= config.node_limit:
                status = STATUS_NODES
                break
            if config.time_limit is not None and time.monotonic() - t_start > config.time_limit:
                status = STATUS_TIME
                break

            batch: list[tuple] = []
            width = config.threads if config.threads > 1 else 1
            while len(batch) < width and (dive or heap):
                batch.append(dive.pop() if dive else heapq.heappop(heap))

            def _solve(entry):
                patch = entry[2]
                lb = root_lb.copy()
                ub = root_ub.copy()
                for col, (lo, hi) in patch.items():
                    lb[col], ub[col] = lo, hi
                return solve_lp(slp, bounds=(lb, ub), config=config)

            if pool is not None and len(batch) > 1:
                results = list(pool.map(_solve, batch))
            else:
                results = [_solve(entry) for entry in batch]

            for (parent_bound, _, patch, pc_info), res in zip(batch, results):
                node_count += 1
                if res.status == LP_INFEASIBLE:
                    if node_count == 1 and not patch:
                        saw_infeasible_root = True
                    continue
                if res.status == LP_UNBOUNDED:
                    raise SolverError("LP relaxation unbounded; model bounds missing")
                node_bound = res.objective
                best_bound = max(best_bound, min(node_bound, best_obj))
                if pc_info is not None and parent_bound > -math.inf:
                    col, direction, frac = pc_info
                    gain = max(0.0, node_bound - parent_bound)
                    stats = pseudo.setdefault(col, [0.0, 0.0, 0.0])
                    if direction == "down":
                        stats[0] += gain / max(frac, 1e-9)
                    else:
                        stats[1] += gain / max(1.0 - frac, 1e-9)
                    stats[2] += 1.0
                if config.check_weak_duality and best_obj < math.inf:
                    ob = min(open_bound(), node_bound)
                    if ob > best_obj + 1e-6:
                        raise SolverError("weak duality violated: bound above incumbent")
                if node_bound >= best_obj * (1.0 - 1e-12) - 1e-9:
                    continue
                x = res.x
                if node_count == 1 or node_count % 50 == 0:
                    guided_incumbent(x)
                    if node_bound >= best_obj * (1.0 - 1e-12) - 1e-9:
                        continue
                branch_col = _select_branch_var(
                    slp, x, config.integrality_eps, config.branching_rule, pseudo
                )
                if branch_col is None:
                    try_incumbent(x)
                    continue
                v = float(x[branch_col])
                frac = v - math.floor(v)
                floor_patch = dict(patch)
                lo0, hi0 = floor_patch.get(branch_col, (root_lb[branch_col], root_ub[branch_col]))
                floor_patch[branch_col] = (lo0, float(math.floor(v)))
                ceil_patch = dict(patch)
                ceil_patch[branch_col] = (float(math.ceil(v)), hi0)
                children = [
                    (node_bound, next(seq), floor_patch, (branch_col, "down", frac)),
                    (node_bound, next(seq), ceil_patch, (branch_col, "up", frac)),
                ]
                # Dive toward the side the LP value leans to; the sibling
                # goes to the best-bound heap.
                if frac >= 0.5:
                    children.reverse()
                heapq.heappush(heap, children[0])
                dive.append(children[1])
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    if status is None:
        status = STATUS_OPTIMAL

    if best_x is None:
        if saw_infeasible_root or (not heap and not dive):
            return Solution(
                values={},
                objective=math.inf,
                bound=math.inf,
                gap=math.inf,
                status=STATUS_INFEASIBLE,
                decomposition={"assignment": 0.0, "expansion": 0.0, "overflow": 0.0},
                node_count=node_count,
            )
        return Solution(
            values={},
            objective=math.inf,
            bound=open_bound(),
            gap=math.inf,
            status=status,
            decomposition={"assignment": 0.0, "expansion": 0.0, "overflow": 0.0},
            node_count=node_count,
        )

    if status == STATUS_OPTIMAL:
        final_bound = best_obj
    else:
        final_bound = min(open_bound(), best_obj)
        if final_bound == -math.inf:
            final_bound = best_bound
    gap = max(0.0, (best_obj - final_bound) / max(abs(best_obj), 1e-9))
    if gap <= 1e-12 and status == STATUS_GAP:
        status = STATUS_OPTIMAL
    return Solution(
        values=values_from_vector(lp, best_x),
        objective=best_obj,
        bound=final_bound,
        gap=gap,
        status=status,
        decomposition=decompose_objective(lp, best_x),
        node_count=node_count,
    )


# ---------------------------------------------------------------------------
# Verifier
# ---------------------------------------------------------------------------


FAMILIES = ("2a", "2b", "2c", "2d", "2e", "3a", "3b", "4a", "4b", "4c")


@dataclass
class VerifyReport:
    family_ok: dict[str, bool]
    first_violation: dict[str, str | None]
    violation_counts: dict[str, int]
    objective_ok: bool
    objective_recomputed: float
    objective_claimed: float | None
    ok: bool = field(init=False)

    def __post_init__(self) -> None:
        self.ok = all(self.family_ok.values()) and self.objective_ok

    def first_failure(self) -> str | None:
        for fam in FAMILIES:
            if not self.family_ok[fam]:
                return f"{fam}: {self.first_violation[fam]}"
        if not self.objective_ok:
            return (
                f"objective: claimed {self.objective_claimed} != "
                f"recomputed {self.objective_recomputed}"
            )
        return None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "families": {
                fam: {
                    "ok": self.family_ok[fam],
                    "first_violation": self.first_violation[fam],
                    "violations": self.violation_counts[fam],
                }
                for fam in FAMILIES
            },
            "objective_ok": self.objective_ok,
            "objective_recomputed": self.objective_recomputed,
            "objective_claimed": self.objective_claimed,
        }


def _parse_values(values: Mapping[str, float]):
    u_vals: dict[tuple[int, int, int], float] = {}
    x_vals: dict[tuple[int, int, int, int], float] = {}
    e_vals: dict[tuple[int, int, int], float] = {}
    o_vals: dict[tuple[int, int, int], float] = {}
    for name, v in values.items():
        if abs(v) < 1e-9:
            continue
        kind, idx = parse_variable_name(name)
        if kind == "U":
            u_vals[(idx["y"], idx["s"], idx["i"])] = v
        elif kind == "X":
            x_vals[(idx["y"], idx["s"], idx["i"], idx["t"])] = v
        elif kind == "E":
            e_vals[(idx["s"], idx["i"], idx["t"])] = v
        elif kind == "O":
            o_vals[(idx["s"], idx["i"], idx["t"])] = v
    return u_vals, x_vals, e_vals, o_vals


def verify(
    instance: ProblemInstance,
    values: Mapping[str, float] | Solution,
    claimed_objective: float | None = None,
    tolerance: float = 1e-6,
) -> VerifyReport:
    """Re-check all constraint families against the instance alone.

    Family semantics: 4b covers the periodic occurrence count and the
    maximum consecutive gap (omega + k); 4c covers the minimum gap
    (omega - k, i.e. at most one occurrence per flexibility window).
    """
    if isinstance(values, Solution):
        if claimed_objective is None:
            claimed_objective = values.objective
        values = values.values
    u_vals, x_vals, e_vals, o_vals = _parse_values(values)

    family_ok = {fam: True for fam in FAMILIES}
    first: dict[str, str | None] = {fam: None for fam in FAMILIES}
    counts = {fam: 0 for fam in FAMILIES}

    def flag(fam: str, where: str) -> None:
        counts[fam] += 1
        if family_ok[fam]:
            family_ok[fam] = False
            first[fam] = where

    org_by_id = {o.id: o for o in instance.organizations}
    catalog = instance.services
    T = instance.horizon_T

    # Assignment loads per (s, i, t) for the capacity checks.
    loads: dict[tuple[int, int, int], int] = {}
    for (y, s, i, t), v in sorted(x_vals.items()):
        loads[(s, i, t)] = loads.get((s, i, t), 0) + int(round(v))

    for youth in instance.youths:
        for need in youth.needs:
            i = need.service
            svc = catalog.get(i)
            a, b, d, f = (
                need.window_start_a,
                need.window_end_b,
                need.duration_d,
                need.frequency_f,
            )
            occ: list[tuple[int, int]] = []  # (t, s)
            for (yy, s, ii, t), v in x_vals.items():
                if yy == youth.id and ii == i and v > 0.5:
                    occ.append((t, s))
            occ.sort()
            orgs_used = sorted({s for _, s in occ})
            u_orgs = sorted(
                {s for (yy, s, ii), v in u_vals.items() if yy == youth.id and ii == i and v > 0.5}
            )

            if len(u_orgs) > 1:
                flag("2c", f"y={youth.id},i={i}")
            for s in orgs_used:
                if u_vals.get((youth.id, s, i), 0.0) < 0.5:
                    flag("2d", f"y={youth.id},s={s},i={i}")
            for s in sorted(set(orgs_used) | set(u_orgs)):
                org = org_by_id.get(s)
                if org is None:
                    flag("2e", f"y={youth.id},s={s},i={i}")
                    continue
                if not service_offered(org, i, catalog) or not demographic_compatible(
                    youth.demographics, org.accepts
                ):
                    flag("2e", f"y={youth.id},s={s},i={i}")

            upper = min(b + d, T)
            for t, s in occ:
                if t < a or t > upper:
                    flag("3a", f"y={youth.id},i={i},t={t}")
            if not any(a <= t <= b for t, _ in occ):
                flag("3b", f"y={youth.id},i={i}")

            if not svc.periodic:
                if len(occ) != f:
                    flag("4a", f"y={youth.id},i={i}")
                continue
            if len(occ) != f:
                flag("4b", f"y={youth.id},i={i}")
            omega, k = need.omega, svc.flexibility_k
            lo_gap = max(omega - k, 1)
            days = [t for t, _ in occ]
            for prev, nxt in zip(days, days[1:]):
                gap = nxt - prev
                if gap > omega + k:
                    flag("4b", f"y={youth.id},i={i},t={nxt}")
                if gap < lo_gap:
                    flag("4c", f"y={youth.id},i={i},t={nxt}")

    triples = set(loads) | set(e_vals) | set(o_vals)
    for (s, i, t) in sorted(triples):
        org = org_by_id.get(s)
        if org is None:
            flag("2a", f"s={s},i={i},t={t}")
            continue
        load = loads.get((s, i, t), 0)
        e = e_vals.get((s, i, t), 0.0)
        o = o_vals.get((s, i, t), 0.0)
        cap = org.capacity(i, t)
        mu = org.headroom(i)
        if o < -tolerance:
            flag("2a", f"s={s},i={i},t={t}")
        if load > cap + e + o + tolerance:
            flag("2a", f"s={s},i={i},t={t}")
        if e < -tolerance or cap + e > mu + tolerance:
            flag("2b", f"s={s},i={i},t={t}")

    # Objective recomputed from the instance cost data.
    obj = 0.0
    for (y, s, i, t), v in x_vals.items():
        org = org_by_id.get(s)
        if org is not None:
            obj += org.cost_assign_r.get(i, 0.0) * v
    for (s, i, t), v in e_vals.items():
        org = org_by_id.get(s)
        if org is not None:
            obj += org.cost_expand_gamma.get(i, 0.0) * v
    for (s, i, t), v in o_vals.items():
        org = org_by_id.get(s)
        if org is not None:
            obj += org.cost_overflow_lambda.get(i, 0.0) * v

    if claimed_objective is None:
        objective_ok = True
    else:
        objective_ok = abs(obj - claimed_objective) <= max(
            tolerance, 1e-6 * max(1.0, abs(obj))
        )

    return VerifyReport(
        family_ok=family_ok,
        first_violation=first,
        violation_counts=counts,
        objective_ok=objective_ok,
        objective_recomputed=obj,
        objective_claimed=claimed_objective,
    )


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def enumerate_schedules(need, periodic: bool, k: int, horizon_T: int) -> list[tuple[int, ...]]:
    """All admissible occurrence-day tuples for one need."""
    a, b, d, f = need.window_start_a, need.window_end_b, need.duration_d, need.frequency_f
    upper = min(b + d, horizon_T)
    starts = list(range(a, min(b, horizon_T) + 1))
    if f == 1:
        return [(t,) for t in starts]
    if not periodic:
        out = []
        pool = list(range(a, upper + 1))
        for first in starts:
            rest = [t for t in pool if t > first]
            for combo in itertools.combinations(rest, f - 1):
                out.append((first,) + combo)
        return out
    omega = need.omega
    lo_gap, hi_gap = max(omega - k, 1), omega + k
    out = []

    def extend(days: tuple[int, ...]) -> None:
        if len(days) == f:
            out.append(days)
            return
        prev = days[-1]
        for gap in range(lo_gap, hi_gap + 1):
            t = prev + gap
            if t > upper:
                break
            extend(days + (t,))

    for t0 in starts:
        extend((t0,))
    return out


def _capacity_cost(load: int, cap: int, mu: int, gamma: float, lam: float) -> float:
    over = max(0, load - cap)
    if gamma <= lam:
        e = min(over, mu - cap)
        return gamma * e + lam * (over - e)
    return lam * over


def brute_force(
    instance: ProblemInstance,
    limit: float = 1e7,
    collect_optima: bool = False,
) -> Solution:
    """Exact optimum by exhaustive enumeration, for micro-instances.

    Needs for different services never interact (capacity, continuity and
    scheduling are all per-service), so enumeration factors by service; the
    size guard applies to each service's combination count.
    """
    catalog = instance.services
    org_by_id = {o.id: o for o in instance.organizations}
    by_service: dict[int, list] = {}
    for youth in instance.youths:
        for need in youth.needs:
            by_service.setdefault(need.service, []).append((youth, need))

    total_cost = 0.0
    chosen: dict[tuple[int, int], tuple[int, tuple[int, ...]]] = {}
    optima_patterns: dict[int, set] = {}

    for i, pairs in sorted(by_service.items()):
        svc = catalog.get(i)
        options_per_need: list[list[tuple[int, tuple[int, ...], float]]] = []
        space = 1.0
        for youth, need in pairs:
            schedules = enumerate_schedules(need, svc.periodic, svc.flexibility_k, instance.horizon_T)
            options = []
            for org in instance.organizations:
                if not service_offered(org, i, catalog):
                    continue
                if not demographic_compatible(youth.demographics, org.accepts):
                    continue
                r = org.cost_assign_r.get(i, 0.0)
                for days in schedules:
                    options.append((org.id, days, r * len(days)))
            if not options:
                return Solution(
                    values={},
                    objective=math.inf,
                    bound=math.inf,
                    gap=math.inf,
                    status=STATUS_INFEASIBLE,
                    decomposition={"assignment": 0.0, "expansion": 0.0, "overflow": 0.0},
                )
            options_per_need.append(options)
            space *= len(options)
            if space > limit:
                raise BruteForceTooLarge(space)

        best_cost = math.inf
        best_combo = None
        argmins: set = set()
        for combo in itertools.product(*options_per_need):
            loads: dict[tuple[int, int], int] = {}
            cost = 0.0
            for s, days, assign_cost in combo:
                cost += assign_cost
                for t in days:
                    loads[(s, t)] = loads.get((s, t), 0) + 1
            for (s, t), load in loads.items():
                org = org_by_id[s]
                cost += _capacity_cost(
                    load,
                    org.capacity(i, t),
                    org.headroom(i),
                    org.cost_expand_gamma.get(i, 0.0),
                    org.cost_overflow_lambda.get(i, 0.0),
                )
            if cost < best_cost - 1e-9:
                best_cost = cost
                best_combo = combo
                if collect_optima:
                    argmins = {tuple((s, days) for s, days, _ in combo)}
            elif collect_optima and cost <= best_cost + 1e-9:
                argmins.add(tuple((s, days) for s, days, _ in combo))

        total_cost += best_cost
        if collect_optima:
            optima_patterns[i] = argmins
        for (youth, need), (s, days, _) in zip(pairs, best_combo):
            chosen[(youth.id, i)] = (s, days)

    # Materialize variable values with the cheapest expansion/overflow split.
    values: dict[str, float] = {}
    loads_all: dict[tuple[int, int, int], int] = {}
    for (y, i), (s, days) in chosen.items():
        values[f"U_y{y}_s{s}_i{i}"] = 1.0
        for t in days:
            values[f"X_y{y}_s{s}_i{i}_t{t}"] = 1.0
            loads_all[(s, i, t)] = loads_all.get((s, i, t), 0) + 1
    decomposition = {"assignment": 0.0, "expansion": 0.0, "overflow": 0.0}
    for (s, i, t), load in sorted(loads_all.items()):
        org = org_by_id[s]
        cap = org.capacity(i, t)
        mu = org.headroom(i)
        gamma = org.cost_expand_gamma.get(i, 0.0)
        lam = org.cost_overflow_lambda.get(i, 0.0)
        over = max(0, load - cap)
        if gamma <= lam:
            e = min(over, mu - cap)
            o = over - e
        else:
            e, o = 0, over
        if e:
            values[f"E_s{s}_i{i}_t{t}"] = float(e)
            decomposition["expansion"] += gamma * e
        if o:
            values[f"O_s{s}_i{i}_t{t}"] = float(o)
            decomposition["overflow"] += lam * o
        decomposition["assignment"] += org.cost_assign_r.get(i, 0.0) * load
    solution = Solution(
        values=values,
        objective=total_cost,
        bound=total_cost,
        gap=0.0,
        status=STATUS_OPTIMAL,
        decomposition=decomposition,
    )
    if collect_optima:
        solution.optimal_patterns = optima_patterns  # type: ignore[attr-defined]
    return solution
