"""Sparse MILP construction from a problem instance.

Variables
    U[y,s,i]    binary: youth y receives service i from organization s
    X[y,s,i,t]  binary: youth y receives service i from s on day t
    E[s,i,t]    integer: extra in-house units added at s for service i, day t
    O[s,i,t]    integer: youth referred to the overflow shelter from s

Constraint families (row annotations)
    2a  per-day capacity: sum_y X <= c + E + O
    2b  facility headroom: c + E <= mu
    2c  one serving organization per (youth, service)
    2d  continuity link: sum_t X <= T * U
    3b  start inside the [a, b] window (>= 1); 3a/2e hold structurally
        because no X column is created outside [a, b+d] or at an
        incompatible or non-offering organization
    4a  non-periodic occurrence count == f
    4b  periodic occurrence count == f plus maximum-gap chain rows so
        consecutive occurrences are at most omega + k days apart
    4c  minimum-gap windows: at most one occurrence per organization in
        any window of omega - k consecutive days

Together 4b and 4c force consecutive occurrence gaps into
[omega - k, omega + k] anchored at the realized start day.

X columns are created only on reachable days: for a periodic need the union
of the per-occurrence intervals [a + j*(omega-k), b + j*(omega+k)], clipped
to [a, min(b + d, T)]; for a single-occurrence need just [a, b]; otherwise
the full [a, min(b + d, T)].
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .domain import (
    ProblemInstance,
    demographic_compatible,
    service_offered,
)

SENSE_LE = "<="
SENSE_GE = ">="
SENSE_EQ = "="

KIND_ORDER = {"U": 0, "X": 1, "E": 2, "O": 3}


class VariableRef(NamedTuple):
    """One column of the matrix with its semantic index tuple."""

    kind: str
    y: int | None
    s: int
    i: int
    t: int | None
    col: int

    @property
    def name(self) -> str:
        if self.kind == "U":
            return f"U_y{self.y}_s{self.s}_i{self.i}"
        if self.kind == "X":
            return f"X_y{self.y}_s{self.s}_i{self.i}_t{self.t}"
        return f"{self.kind}_s{self.s}_i{self.i}_t{self.t}"


def parse_variable_name(name: str) -> tuple[str, dict[str, int]]:
    """Inverse of VariableRef.name: kind plus index dict."""
    kind, _, rest = name.partition("_")
    indices: dict[str, int] = {}
    for part in rest.split("_"):
        indices[part[0]] = int(part[1:])
    return kind, indices


class LinearProgram:
    """Annotated sparse model: objective, rows, bounds, integrality."""

    def __init__(self, instance: ProblemInstance | None = None):
        self.source_instance = instance
        self.col_refs: list[VariableRef] = []
        self.obj: list[float] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.is_integer: list[bool] = []
        self.row_names: list[str] = []
        self.row_family: list[str] = []
        self.row_sense: list[str] = []
        self.rhs: list[float] = []
        self._tri_row: list[int] = []
        self._tri_col: list[int] = []
        self._tri_val: list[float] = []
        # Structured lookups used by the solver heuristic and reporting.
        self.u_cols: dict[tuple[int, int, int], int] = {}
        self.x_cols: dict[tuple[int, int, int], dict[int, int]] = {}
        self.e_cols: dict[tuple[int, int, int], int] = {}
        self.o_cols: dict[tuple[int, int, int], int] = {}
        self.need_orgs: dict[tuple[int, int], list[int]] = {}
        self._scipy_cache = None

    # -- construction ------------------------------------------------------

    def add_col(
        self,
        kind: str,
        *,
        y: int | None,
        s: int,
        i: int,
        t: int | None,
        obj: float,
        lb: float,
        ub: float,
        integer: bool,
    ) -> int:
        col = len(self.col_refs)
        self.col_refs.append(VariableRef(kind, y, s, i, t, col))
        self.obj.append(obj)
        self.lb.append(lb)
        self.ub.append(ub)
        self.is_integer.append(integer)
        return col

    def add_row(
        self,
        name: str,
        family: str,
        sense: str,
        rhs: float,
        cols: list[int] | np.ndarray,
        vals: list[float] | np.ndarray,
    ) -> int:
        row = len(self.row_names)
        self.row_names.append(name)
        self.row_family.append(family)
        self.row_sense.append(sense)
        self.rhs.append(rhs)
        self._tri_row.extend([row] * len(cols))
        self._tri_col.extend(int(c) for c in cols)
        self._tri_val.extend(float(v) for v in vals)
        return row

    # -- properties --------------------------------------------------------

    @property
    def n_cols(self) -> int:
        return len(self.col_refs)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    @property
    def nnz(self) -> int:
        return len(self._tri_val)

    def counts_by_family(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for fam in self.row_family:
            counts[fam] = counts.get(fam, 0) + 1
        return counts

    def counts_by_kind(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ref in self.col_refs:
            counts[ref.kind] = counts.get(ref.kind, 0) + 1
        return counts

    def column_names(self) -> list[str]:
        return [ref.name for ref in self.col_refs]

    # -- solver-facing matrices --------------------------------------------

    def to_scipy(self):
        """Split rows by sense into (c, A_ub, b_ub, A_eq, b_eq) with >= negated."""
        if self._scipy_cache is not None:
            return self._scipy_cache
        n, m = self.n_cols, self.n_rows
        A = sp.csr_matrix(
            (
                np.asarray(self._tri_val, dtype=float),
                (np.asarray(self._tri_row, dtype=np.int64), np.asarray(self._tri_col, dtype=np.int64)),
            ),
            shape=(m, max(n, 1)),
        )
        sense = np.asarray(self.row_sense)
        rhs = np.asarray(self.rhs, dtype=float)
        le = np.flatnonzero(sense == SENSE_LE)
        ge = np.flatnonzero(sense == SENSE_GE)
        eq = np.flatnonzero(sense == SENSE_EQ)
        blocks = []
        b_ub_parts = []
        if le.size:
            blocks.append(A[le])
            b_ub_parts.append(rhs[le])
        if ge.size:
            blocks.append(-A[ge])
            b_ub_parts.append(-rhs[ge])
        A_ub = sp.vstack(blocks, format="csr") if blocks else None
        b_ub = np.concatenate(b_ub_parts) if b_ub_parts else None
        A_eq = A[eq] if eq.size else None
        b_eq = rhs[eq] if eq.size else None
        c = np.asarray(self.obj, dtype=float)
        self._scipy_cache = (c, A_ub, b_ub, A_eq, b_eq)
        return self._scipy_cache

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lb, dtype=float), np.asarray(self.ub, dtype=float)

    # -- export -------------------------------------------------------------

    def write_mps(self, path: str) -> None:
        write_mps(self, path)

    def write_triplets(self, path: str) -> None:
        write_triplets(self, path)


def reachable_days(need, horizon_T: int, periodic: bool, k: int) -> list[int]:
    """Days on which an occurrence of this need can fall.

    See the module docstring for the rule; the result is sorted and unique.
    """
    a, b = need.window_start_a, need.window_end_b
    d, f = need.duration_d, need.frequency_f
    upper = min(b + d, horizon_T)
    if f == 1:
        return list(range(a, min(b, horizon_T) + 1))
    if not periodic:
        return list(range(a, upper + 1))
    omega = need.omega
    days: set[int] = set()
    for j in range(f):
        lo = a + j * (omega - k)
        hi = b + j * (omega + k)
        if lo > upper:
            break
        for t in range(max(lo, a), min(hi, upper) + 1):
            days.add(t)
    return sorted(days)


class ModelBuilder:
    """Builds the annotated sparse model for one instance."""

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        self.catalog = instance.services

    def admissible_orgs(self, youth, need) -> list[int]:
        orgs = []
        for org in self.instance.organizations:
            if not service_offered(org, need.service, self.catalog):
                continue
            if not demographic_compatible(youth.demographics, org.accepts):
                continue
            orgs.append(org.id)
        return orgs

    def build(self) -> LinearProgram:
        inst = self.instance
        lp = LinearProgram(inst)
        org_by_id = {o.id: o for o in inst.organizations}
        T = inst.horizon_T

        # Enumerate admissible (youth, need, org, day) tuples first so that
        # columns can be laid out in canonical (kind, y, s, i, t) order.
        need_info = []  # (youth, need, svc, orgs, days)
        for youth in inst.youths:
            for need in youth.needs:
                svc = self.catalog.get(need.service)
                orgs = self.admissible_orgs(youth, need)
                days = reachable_days(need, T, svc.periodic, svc.flexibility_k)
                need_info.append((youth, need, svc, orgs, days))
                lp.need_orgs[(youth.id, need.service)] = orgs

        for youth, need, svc, orgs, days in need_info:
            for s in orgs:
                lp.u_cols[(youth.id, s, need.service)] = lp.add_col(
                    "U", y=youth.id, s=s, i=need.service, t=None,
                    obj=0.0, lb=0.0, ub=1.0, integer=True,
                )

        used_triples: set[tuple[int, int, int]] = set()
        for youth, need, svc, orgs, days in need_info:
            for s in orgs:
                org = org_by_id[s]
                r = org.cost_assign_r.get(need.service, 0.0)
                tmap: dict[int, int] = {}
                for t in days:
                    tmap[t] = lp.add_col(
                        "X", y=youth.id, s=s, i=need.service, t=t,
                        obj=r, lb=0.0, ub=1.0, integer=True,
                    )
                    used_triples.add((s, need.service, t))
                lp.x_cols[(youth.id, s, need.service)] = tmap

        triples = sorted(used_triples)
        for (s, i, t) in triples:
            org = org_by_id[s]
            mu = org.headroom(i)
            c = org.capacity(i, t)
            lp.e_cols[(s, i, t)] = lp.add_col(
                "E", y=None, s=s, i=i, t=t,
                obj=org.cost_expand_gamma.get(i, 0.0),
                lb=0.0, ub=float(mu - c), integer=True,
            )
        for (s, i, t) in triples:
            org = org_by_id[s]
            lp.o_cols[(s, i, t)] = lp.add_col(
                "O", y=None, s=s, i=i, t=t,
                obj=org.cost_overflow_lambda.get(i, 0.0),
                lb=0.0, ub=float(max(len(inst.youths), 1)), integer=True,
            )

        # (2a)/(2b): per-day capacity and headroom on used triples.
        x_by_triple: dict[tuple[int, int, int], list[int]] = {t: [] for t in triples}
        for (y, s, i), tmap in lp.x_cols.items():
            for t, col in tmap.items():
                x_by_triple[(s, i, t)].append(col)
        for (s, i, t) in triples:
            org = org_by_id[s]
            c = org.capacity(i, t)
            mu = org.headroom(i)
            cols = x_by_triple[(s, i, t)] + [lp.e_cols[(s, i, t)], lp.o_cols[(s, i, t)]]
            vals = [1.0] * (len(cols) - 2) + [-1.0, -1.0]
            lp.add_row(f"C2a_s{s}_i{i}_t{t}", "2a", SENSE_LE, float(c), cols, vals)
            lp.add_row(
                f"C2b_s{s}_i{i}_t{t}", "2b", SENSE_LE, float(mu - c),
                [lp.e_cols[(s, i, t)]], [1.0],
            )

        # (2c)/(2d)/(3b)/(4a)/(4b)/(4c): per-need scheduling structure.
        for youth, need, svc, orgs, days in need_info:
            y, i = youth.id, need.service
            a, b, f = need.window_start_a, need.window_end_b, need.frequency_f
            ucols = [lp.u_cols[(y, s, i)] for s in orgs]
            if ucols:
                lp.add_row(f"C2c_y{y}_i{i}", "2c", SENSE_LE, 1.0, ucols, [1.0] * len(ucols))
            all_x: list[int] = []
            window_x: list[int] = []
            day_cols: dict[int, list[int]] = {t: [] for t in days}
            for s in orgs:
                tmap = lp.x_cols[(y, s, i)]
                xcols = [tmap[t] for t in sorted(tmap)]
                lp.add_row(
                    f"C2d_y{y}_s{s}_i{i}", "2d", SENSE_LE, 0.0,
                    xcols + [lp.u_cols[(y, s, i)]],
                    [1.0] * len(xcols) + [-float(T)],
                )
                all_x.extend(xcols)
                for t, col in tmap.items():
                    day_cols[t].append(col)
                    if a <= t <= b:
                        window_x.append(col)
            lp.add_row(f"C3b_y{y}_i{i}", "3b", SENSE_GE, 1.0, window_x, [1.0] * len(window_x))

            if not svc.periodic:
                lp.add_row(
                    f"C4a_y{y}_i{i}", "4a", SENSE_EQ, float(f), all_x, [1.0] * len(all_x)
                )
                continue

            lp.add_row(f"C4b_y{y}_i{i}", "4b", SENSE_EQ, float(f), all_x, [1.0] * len(all_x))
            if f < 2:
                continue
            omega, k = need.omega, svc.flexibility_k

            # Daily services (a stay of f consecutive days starting in
            # [a, B]) admit an exact two-coefficient encoding: per
            # organization, occupancy is nondecreasing up to the pivot day B
            # shared by every feasible stay, nonincreasing after. This is far
            # tighter in relaxation than the generic gap rows below.
            if omega == 1 and k == 0 and days == list(range(days[0], days[-1] + 1)):
                pivot = min(b, days[-1] - f + 1)
                if a <= pivot <= a + f - 1:
                    for s in orgs:
                        tmap = lp.x_cols[(y, s, i)]
                        for t in days[1:]:
                            if t <= pivot:
                                cols = [tmap[t - 1], tmap[t]]
                                vals = [1.0, -1.0]
                            else:
                                cols = [tmap[t], tmap[t - 1]]
                                vals = [1.0, -1.0]
                            lp.add_row(
                                f"C4bm_y{y}_s{s}_i{i}_t{t}", "4b", SENSE_LE, 0.0, cols, vals
                            )
                    continue

            # Maximum gap: an occurrence with no successor within omega + k
            # days must be the last one (no occurrence after it at all).
            day_list = days
            day_arr = np.asarray(day_list)
            for idx, t in enumerate(day_list):
                later = day_arr[idx + 1 :]
                next_days = later[later <= t + omega + k]
                tail_days = later[later > t + omega + k]
                if tail_days.size == 0:
                    break
                cols: list[int] = []
                vals: list[float] = []
                for tt in tail_days:
                    for col in day_cols[int(tt)]:
                        cols.append(col)
                        vals.append(1.0)
                for col in day_cols[t]:
                    cols.append(col)
                    vals.append(float(f))
                for tt in next_days:
                    for col in day_cols[int(tt)]:
                        cols.append(col)
                        vals.append(-float(f))
                lp.add_row(f"C4bg_y{y}_i{i}_t{t}", "4b", SENSE_LE, float(f), cols, vals)

            # Minimum gap: at most one occurrence per organization in any
            # window of omega - k consecutive days (anchored at each day).
            L = omega - k
            if L >= 2:
                for idx, t in enumerate(day_list):
                    in_window = [tt for tt in day_list[idx:] if tt <= t + L - 1]
                    if len(in_window) < 2:
                        continue
                    for s in orgs:
                        tmap = lp.x_cols[(y, s, i)]
                        cols = [tmap[tt] for tt in in_window if tt in tmap]
                        if len(cols) < 2:
                            continue
                        lp.add_row(
                            f"C4c_y{y}_s{s}_i{i}_t{t}", "4c", SENSE_LE, 1.0,
                            cols, [1.0] * len(cols),
                        )
        return lp


def build(instance: ProblemInstance) -> LinearProgram:
    """Construct the full annotated model for an instance."""
    return ModelBuilder(instance).build()


# ---------------------------------------------------------------------------
# Export formats
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def write_mps(lp: LinearProgram, path: str) -> None:
    """Write the model in fixed MPS layout.

    Fields start at columns 2, 5, 15, 25, 40 and 50; names longer than a
    field overflow it with a single separating space, which mainstream
    readers accept. All variables are integer, so the COLUMNS section sits
    inside one INTORG/INTEND marker pair.
    """
    entries_by_col: dict[int, list[tuple[int, float]]] = {}
    for r, c, v in zip(lp._tri_row, lp._tri_col, lp._tri_val):
        entries_by_col.setdefault(c, []).append((r, v))

    def field(text: str, width: int) -> str:
        return text.ljust(width) if len(text) < width else text + " "

    lines = []
    lines.append("NAME" + " " * 10 + "SHELTERPLAN")
    lines.append("ROWS")
    lines.append(" N  COST")
    for name, sense in zip(lp.row_names, lp.row_sense):
        tag = {SENSE_LE: "L", SENSE_GE: "G", SENSE_EQ: "E"}[sense]
        lines.append(f" {tag}  {name}")
    lines.append("COLUMNS")
    lines.append("    MARKER    " + field("'MARKER'", 25 - 14) + "'INTORG'")
    for col, ref in enumerate(lp.col_refs):
        pairs: list[tuple[str, float]] = []
        if lp.obj[col] != 0.0:
            pairs.append(("COST", lp.obj[col]))
        for r, v in entries_by_col.get(col, []):
            pairs.append((lp.row_names[r], v))
        for j in range(0, len(pairs), 2):
            chunk = pairs[j : j + 2]
            line = "    " + field(ref.name, 10)
            line += field(chunk[0][0], 10) + field(_fmt(chunk[0][1]), 15)
            if len(chunk) == 2:
                line += field(chunk[1][0], 10) + _fmt(chunk[1][1])
            lines.append(line.rstrip())
    lines.append("    MARKER    " + field("'MARKER'", 25 - 14) + "'INTEND'")
    lines.append("RHS")
    for name, rhs in zip(lp.row_names, lp.rhs):
        if rhs != 0.0:
            lines.append("    " + field("RHS", 10) + field(name, 10) + _fmt(rhs))
    lines.append("BOUNDS")
    for col, ref in enumerate(lp.col_refs):
        if lp.lb[col] != 0.0:
            lines.append(" LO " + field("BND", 10) + field(ref.name, 10) + _fmt(lp.lb[col]))
        lines.append(" UI " + field("BND", 10) + field(ref.name, 10) + _fmt(lp.ub[col]))
    lines.append("ENDATA")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def write_triplets(lp: LinearProgram, path: str) -> None:
    """Write the documented sparse-triplet text format (one entry per line)."""
    lines = []
    lines.append("SHELTERPLAN-SPARSE 1")
    lines.append("MINIMIZE")
    lines.append(f"NVARS {lp.n_cols}")
    lines.append(f"NROWS {lp.n_rows}")
    for col, ref in enumerate(lp.col_refs):
        lines.append(
            f"VAR {ref.name} {_fmt(lp.lb[col])} {_fmt(lp.ub[col])} "
            f"{1 if lp.is_integer[col] else 0} {_fmt(lp.obj[col])}"
        )
    for r in range(lp.n_rows):
        lines.append(
            f"ROW {lp.row_names[r]} {lp.row_family[r]} {lp.row_sense[r]} {_fmt(lp.rhs[r])}"
        )
    for r, c, v in zip(lp._tri_row, lp._tri_col, lp._tri_val):
        lines.append(f"NZ {r} {c} {_fmt(v)}")
    lines.append("END")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
