"""Match-rate upper-bound LP: construction, dense simplex, feasibility checks.

One decision variable alpha[x][y] per ordered type pair: the long-run
fraction of type-y arrivals matched to an already-present type-x agent.
The optimum value is an upper bound on the long-run average matched value
per unit time achievable by any policy, and the optimizer alpha feeds the
online matching policy's attempt probabilities.

Constraints, for each ordered pair (x, y) and each type x:
  cap:   alpha[x][y] <= lambda_x / mu_x      (x must be present to be matched)
  flow:  sum_y alpha[x][y] lambda_y + sum_y alpha[y][x] lambda_x <= lambda_x
  box:   0 <= alpha[x][y] <= 1

The box upper bound is kept explicitly even though the arriving type's flow
row implies it. Variables with impatient x (infinite departure rate) are
fixed to zero at build time instead of being emitted as 0-cap rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .market import INFINITE, MarketInstance, validate_instance

_PIVOT_TOL = 1e-10
_OBJ_TOL = 1e-10


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SimplexError(RuntimeError):
    """Numerical failure inside the solver (never silently swallowed)."""


@dataclass(frozen=True)
class LinearProgram:
    """Dense `maximize c.z s.t. A z <= b, z >= 0` over the free alpha variables."""

    objective: np.ndarray  # (nv,)
    rows: np.ndarray  # (m, nv)
    bounds: np.ndarray  # (m,)
    row_labels: tuple[str, ...]
    var_pairs: tuple[tuple[int, int], ...]  # ordered (x, y) per column
    n_types: int

    @property
    def n_vars(self) -> int:
        return len(self.var_pairs)

    @property
    def n_rows(self) -> int:
        return len(self.bounds)


@dataclass(frozen=True)
class LpSolution:
    status: SolveStatus
    value: float
    alpha: np.ndarray  # (n, n), includes the fixed zero rows for impatient types
    var_pairs: tuple[tuple[int, int], ...]

    @property
    def n_types(self) -> int:
        return self.alpha.shape[0]


def build_lp(instance: MarketInstance) -> LinearProgram:
    violations = validate_instance(instance)
    if violations:
        raise ValueError(
            "invalid instance: " + "; ".join(v.code for v in violations)
        )
    n = instance.n_types
    labels = instance.labels()
    lam = [t.arrival_rate for t in instance.types]
    patient = [t.departure_rate is not INFINITE for t in instance.types]
    var_pairs = [(x, y) for x in range(n) if patient[x] for y in range(n)]
    index = {pair: j for j, pair in enumerate(var_pairs)}
    nv = len(var_pairs)
    dense_v = instance.values.dense()

    c = np.zeros(nv)
    for (x, y), j in index.items():
        c[j] = dense_v[x][y] * lam[y]

    rows: list[np.ndarray] = []
    bounds: list[float] = []
    row_labels: list[str] = []

    for (x, y), j in index.items():
        row = np.zeros(nv)
        row[j] = 1.0
        rows.append(row)
        bounds.append(lam[x] / instance.types[x].departure_rate)
        row_labels.append(f"cap:{labels[x]}->{labels[y]}")

    for x in range(n):
        row = np.zeros(nv)
        for y in range(n):
            if (x, y) in index:
                row[index[(x, y)]] += lam[y]
            if (y, x) in index:
                row[index[(y, x)]] += lam[x]
        rows.append(row)
        bounds.append(lam[x])
        row_labels.append(f"flow:{labels[x]}")

    for (x, y), j in index.items():
        row = np.zeros(nv)
        row[j] = 1.0
        rows.append(row)
        bounds.append(1.0)
        row_labels.append(f"box:{labels[x]}->{labels[y]}")

    return LinearProgram(
        objective=c,
        rows=np.array(rows) if rows else np.zeros((0, 0)),
        bounds=np.array(bounds),
        row_labels=tuple(row_labels),
        var_pairs=tuple(var_pairs),
        n_types=n,
    )


def solve_lp(lp: LinearProgram, max_iterations: int | None = None) -> LpSolution:
    """Primal tableau simplex from the slack basis.

    Every row is <= with a nonnegative bound, so the slack basis is feasible
    and no artificial variables are needed (the first phase of a two-phase
    scheme is a no-op here). Dantzig pricing, switching to Bland's rule after
    2 * (rows + cols) pivots without objective improvement; a hard iteration
    cap raises SimplexError rather than looping silently.
    """
    m, nv = lp.n_rows, lp.n_vars
    if nv == 0:
        return LpSolution(
            status=SolveStatus.OPTIMAL,
            value=0.0,
            alpha=np.zeros((lp.n_types, lp.n_types)),
            var_pairs=lp.var_pairs,
        )
    if np.any(lp.bounds < 0):
        raise SimplexError("builder emitted a negative bound; slack basis invalid")

    # tableau columns: [structural vars | slacks | rhs]
    tab = np.zeros((m + 1, nv + m + 1))
    tab[:m, :nv] = lp.rows
    tab[:m, nv : nv + m] = np.eye(m)
    tab[:m, -1] = lp.bounds
    tab[m, :nv] = -lp.objective
    basis = list(range(nv, nv + m))

    if max_iterations is None:
        max_iterations = 1000 + 200 * (m + nv)
    stall_limit = 2 * (m + nv)
    stalled = 0
    bland = False
    last_obj = -np.inf

    for _ in range(max_iterations):
        obj_row = tab[m, : nv + m]
        if bland:
            negatives = np.nonzero(obj_row < -_OBJ_TOL)[0]
            if negatives.size == 0:
                break
            col = int(negatives[0])
        else:
            col = int(np.argmin(obj_row))
            if obj_row[col] >= -_OBJ_TOL:
                break
        ratios = np.full(m, np.inf)
        positive = tab[:m, col] > _PIVOT_TOL
        ratios[positive] = tab[:m, -1][positive] / tab[:m, col][positive]
        best = np.min(ratios)
        if not np.isfinite(best):
            return LpSolution(
                status=SolveStatus.UNBOUNDED,
                value=float("inf"),
                alpha=np.zeros((lp.n_types, lp.n_types)),
                var_pairs=lp.var_pairs,
            )
        candidates = np.nonzero(ratios <= best + 1e-15)[0]
        if bland:
            # true Bland: leave the lowest-index basic variable
            row = int(min(candidates, key=lambda r: basis[r]))
        else:
            row = int(candidates[0])

        pivot = tab[row, col]
        tab[row, :] /= pivot
        for r in range(m + 1):
            if r != row and tab[r, col] != 0.0:
                tab[r, :] -= tab[r, col] * tab[row, :]
        basis[row] = col

        obj = tab[m, -1]
        if obj > last_obj + 1e-12:
            stalled = 0
            last_obj = obj
        else:
            stalled += 1
            if stalled >= stall_limit:
                bland = True
    else:
        raise SimplexError(f"no optimum after {max_iterations} pivots")

    z = np.zeros(nv + m)
    for r, b in enumerate(basis):
        z[b] = tab[r, -1]
    alpha = np.zeros((lp.n_types, lp.n_types))
    for j, (x, y) in enumerate(lp.var_pairs):
        alpha[x, y] = z[j]
    value = float(lp.objective @ z[:nv])

    col_sums = alpha.sum(axis=0)
    if np.any(col_sums > 1.0 + 1e-8):
        raise SimplexError(
            f"solution violates the per-arrival matching budget: max column sum {col_sums.max()}"
        )
    return LpSolution(
        status=SolveStatus.OPTIMAL, value=value, alpha=alpha, var_pairs=lp.var_pairs
    )


def solve_upper_bound(instance: MarketInstance) -> LpSolution:
    """Build and solve in one step."""
    return solve_lp(build_lp(instance))


@dataclass(frozen=True)
class ConstraintSlack:
    label: str
    slack: float  # bound minus left-hand side; negative means violated


@dataclass(frozen=True)
class FeasibilityReport:
    slacks: tuple[ConstraintSlack, ...]
    worst_violation: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.worst_violation <= self.tolerance

    @property
    def violated(self) -> list[ConstraintSlack]:
        return [s for s in self.slacks if s.slack < -self.tolerance]


def check_feasibility(
    instance: MarketInstance,
    solution: LpSolution | np.ndarray,
    tolerance: float = 1e-8,
) -> FeasibilityReport:
    """Per-constraint slack report for a candidate alpha matrix.

    Covers the emitted rows plus the implicit nonnegativity bounds and the
    fixed-to-zero pairs of impatient types.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    lp = build_lp(instance)
    alpha = solution.alpha if isinstance(solution, LpSolution) else solution
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (lp.n_types, lp.n_types):
        raise ValueError(
            f"alpha must be shaped ({lp.n_types}, {lp.n_types}), got {alpha.shape}"
        )
    z = np.array([alpha[x, y] for (x, y) in lp.var_pairs])
    lhs = lp.rows @ z if lp.n_vars else np.zeros(0)
    slacks = [
        ConstraintSlack(label, float(b - l))
        for label, b, l in zip(lp.row_labels, lp.bounds, lhs)
    ]
    labels = instance.labels()
    free = set(lp.var_pairs)
    for j, (x, y) in enumerate(lp.var_pairs):
        slacks.append(ConstraintSlack(f"nonneg:{labels[x]}->{labels[y]}", float(z[j])))
    for x in range(lp.n_types):
        for y in range(lp.n_types):
            if (x, y) not in free:
                slacks.append(
                    ConstraintSlack(
                        f"fixed:{labels[x]}->{labels[y]}", -abs(float(alpha[x, y]))
                    )
                )
    worst = max((-s.slack for s in slacks), default=0.0)
    return FeasibilityReport(
        slacks=tuple(slacks),
        worst_violation=max(0.0, worst),
        tolerance=tolerance,
    )


def format_tableau(lp: LinearProgram) -> str:
    """Plain-text dump of the LP as built (objective plus <= rows)."""
    cols = [f"a[{x}->{y}]" for (x, y) in lp.var_pairs]
    width = max([len(c) for c in cols] + [12])
    lines = ["maximize"]
    lines.append(
        "  " + "  ".join(f"{c:>{width}}" for c in cols)
    )
    lines.append(
        "  " + "  ".join(f"{v:>{width}.6g}" for v in lp.objective)
    )
    lines.append("subject to")
    for label, row, b in zip(lp.row_labels, lp.rows, lp.bounds):
        body = "  ".join(f"{v:>{width}.6g}" for v in row)
        lines.append(f"  {body}  <=  {b:.6g}    [{label}]")
    lines.append("  all variables >= 0")
    return "\n".join(lines) + "\n"
