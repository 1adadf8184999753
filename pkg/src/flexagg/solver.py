"""Embedded LP and MILP engine.

Dense revised simplex for linear programs with general variable bounds,
plus a best-bound branch and bound layer for problems with binary
variables.  This is the only numerical engine used by the scenario
generation loops, so it favours determinism and transparency over speed:
dense numpy linear algebra, lowest-index tie breaking everywhere, and a
product-form basis inverse refreshed by a full refactorization at a fixed
pivot cadence.

The simplex is the two-phase bounded-variable variant.  Phase 1 starts
from an all-artificial basis and minimizes the total infeasibility; phase
2 continues with the true objective.  Pricing uses Dantzig's rule and
falls back to Bland's rule permanently once a long degenerate stall is
detected, which guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import heapq

import numpy as np

from .errors import DimensionMismatch, NodeLimitExceeded, NumericalError

# variable status codes
_BASIC = 0
_AT_LO = 1
_AT_UP = 2
_FREE_NB = 3

_INF = np.inf


@dataclass
class SolverOptions:
    """Numeric knobs shared by the LP and MILP paths.

    All tolerances are absolute unless noted.  ``max_iters`` defaults to
    ``50 * (rows + cols)`` when left at ``None``.
    """

    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    int_tol: float = 1e-9
    pivot_tol: float = 1e-9
    refactor_every: int = 50
    max_iters: int | None = None
    stall_limit: int = 500
    node_limit: int = 1_000_000
    gap_abs: float = 1e-6
    max_binaries: int = 40
    start_bland: bool = False


class _SingularBasis(Exception):
    """The working basis lost invertibility; the solve should restart."""


@dataclass
class LpProblem:
    """min c'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi.

    Matrices are dense float arrays; ``A_ub``/``A_eq`` may be None when a
    group is absent.  Bounds default to free variables.  ``names`` is an
    optional per-variable label list used only in diagnostics.
    """

    c: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    names: list[str] | None = None

    def normalized(self) -> "LpProblem":
        """Return a copy with every field as a well-shaped float64 array."""
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        a_ub, b_ub = _as_rows(self.a_ub, self.b_ub, n)
        a_eq, b_eq = _as_rows(self.a_eq, self.b_eq, n)
        lo = np.full(n, -_INF) if self.lo is None else np.asarray(self.lo, dtype=float).ravel().copy()
        hi = np.full(n, _INF) if self.hi is None else np.asarray(self.hi, dtype=float).ravel().copy()
        if lo.size != n or hi.size != n:
            raise DimensionMismatch("bounds length disagrees with objective length")
        for arr in (c, a_ub, b_ub, a_eq, b_eq):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coefficient in LP data")
        if np.any(lo > hi + 1e-12):
            raise ValueError("variable lower bound exceeds upper bound")
        return LpProblem(c, a_ub, b_ub, a_eq, b_eq, lo, hi, self.names)

    @property
    def n_vars(self) -> int:
        return np.asarray(self.c).size


@dataclass
class MilpProblem:
    """An LpProblem plus indices of variables restricted to {0, 1}."""

    lp: LpProblem
    binaries: list[int] = field(default_factory=list)


@dataclass
class Solution:
    """Solver result.

    ``status`` is one of ``optimal``, ``infeasible``, ``unbounded``,
    ``iter_limit``.  ``duals_ub``/``duals_eq`` follow the convention
    ``c + A_ub' lam + A_eq' mu = z`` with ``lam >= 0`` and ``z`` the
    reduced costs (nonnegative at a lower bound, nonpositive at an
    upper bound).  MILP solves fill ``gap``, ``nodes`` and ``bound``.
    """

    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iters: int = 0
    gap: float | None = None
    nodes: int | None = None
    bound: float | None = None


def _as_rows(a, b, n):
    if a is None and b is None:
        return None, None
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if a.shape[0] != b.size:
        raise DimensionMismatch(f"row count {a.shape[0]} != rhs length {b.size}")
    if a.shape[1] != n and a.shape[0] > 0:
        raise DimensionMismatch(f"column count {a.shape[1]} != variable count {n}")
    if a.shape[0] == 0:
        return None, None
    return a.copy(), b.copy()


class _Simplex:
    """Bounded-variable two-phase revised simplex on one dense tableau."""

    def __init__(self, prob: LpProblem, opts: SolverOptions):
        self.opts = opts
        n = prob.c.size
        m_ub = 0 if prob.a_ub is None else prob.a_ub.shape[0]
        m_eq = 0 if prob.a_eq is None else prob.a_eq.shape[0]
        m = m_ub + m_eq
        self.n, self.m_ub, self.m = n, m_ub, m

        rows = []
        rhs = []
        if m_ub:
            rows.append(prob.a_ub)
            rhs.append(prob.b_ub)
        if m_eq:
            rows.append(prob.a_eq)
            rhs.append(prob.b_eq)
        a_struct = np.vstack(rows) if rows else np.zeros((0, n))
        self.b = np.concatenate(rhs) if rhs else np.zeros(0)

        # full column order: structural | slacks for <= rows | artificials
        ncol = n + m_ub + m
        self.a = np.zeros((m, ncol))
        self.a[:, :n] = a_struct
        if m_ub:
            self.a[:m_ub, n:n + m_ub] = np.eye(m_ub)
        self.lo = np.concatenate([prob.lo, np.zeros(m_ub), np.zeros(m)])
        self.hi = np.concatenate([prob.hi, np.full(m_ub, _INF), np.full(m, _INF)])
        self.art0 = n + m_ub
        self.ncol = ncol

        # initial nonbasic point: clamp zero into the bounds
        x = np.zeros(ncol)
        self.vstat = np.full(ncol, _FREE_NB, dtype=np.int8)
        finite_lo = np.isfinite(self.lo)
        finite_hi = np.isfinite(self.hi)
        at_lo = finite_lo & (np.abs(np.where(finite_lo, self.lo, 0.0)) <= np.abs(np.where(finite_hi, self.hi, _INF)))
        at_up = finite_hi & ~at_lo
        self.vstat[at_lo] = _AT_LO
        self.vstat[at_up] = _AT_UP
        x[at_lo] = self.lo[at_lo]
        x[at_up] = self.hi[at_up]

        resid = self.b - self.a[:, :n] @ x[:n]
        # crash basis: slack where it is feasible, signed artificial otherwise
        basis = np.empty(m, dtype=int)
        diag = np.ones(m)
        for i in range(m):
            if i < m_ub and resid[i] >= 0:
                basis[i] = n + i
                x[n + i] = resid[i]
                self.a[i, self.art0 + i] = 1.0  # unused artificial column
            else:
                sign = 1.0 if resid[i] >= 0 else -1.0
                self.a[i, self.art0 + i] = sign
                x[self.art0 + i] = abs(resid[i])
                basis[i] = self.art0 + i
                diag[i] = sign
        self.basis = basis
        self.vstat[basis] = _BASIC
        self.x = x
        self.binv = np.diag(diag) if m else np.zeros((0, 0))
        self.pivots_since_refactor = 0
        self.total_iters = 0
        self.bland = self.opts.start_bland
        self.stall = 0

    # -- linear algebra helpers ------------------------------------------

    def _refactor(self):
        if self.m == 0:
            return
        bmat = self.a[:, self.basis]
        try:
            self.binv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError as exc:
            raise _SingularBasis(str(exc)) from exc
        probe = self.binv @ np.ones(self.m)
        err = float(np.abs(bmat @ probe - 1.0).max())
        if not np.isfinite(err) or err > 1e-6 * (1.0 + float(np.abs(probe).max())):
            raise _SingularBasis(f"inverse verification failed ({err:.3g})")
        nb = self.vstat != _BASIC
        xnb = self.x[nb]
        self.x[self.basis] = self.binv @ (self.b - self.a[:, nb] @ xnb)
        self.pivots_since_refactor = 0

    # -- simplex core -----------------------------------------------------

    def run(self, c: np.ndarray, max_iters: int) -> str:
        """Optimize objective vector c from the current basis.

        Returns 'optimal', 'unbounded' or 'iter_limit'.
        """
        opts = self.opts
        a, lo, hi = self.a, self.lo, self.hi
        fixed = (hi - lo) <= 0  # zero-range variables can never enter
        while True:
            if self.total_iters >= max_iters:
                return "iter_limit"
            cb = c[self.basis]
            y = self.binv.T @ cb if self.m else np.zeros(0)
            z = c - a.T @ y if self.m else c.copy()

            elig = np.zeros(self.ncol, dtype=bool)
            elig |= (self.vstat == _AT_LO) & (z < -opts.opt_tol) & ~fixed
            elig |= (self.vstat == _AT_UP) & (z > opts.opt_tol) & ~fixed
            elig |= (self.vstat == _FREE_NB) & (np.abs(z) > opts.opt_tol)
            if not elig.any():
                self._y = y
                self._z = z
                return "optimal"

            if self.bland:
                j = int(np.flatnonzero(elig)[0])
            else:
                score = np.where(elig, np.abs(z), -1.0)
                j = int(np.argmax(score))
            sigma = 1.0 if (self.vstat[j] == _AT_LO or (self.vstat[j] == _FREE_NB and z[j] < 0)) else -1.0

            d = self.binv @ a[:, j] if self.m else np.zeros(0)
            sd = sigma * d
            xb = self.x[self.basis]
            lob = lo[self.basis]
            hib = hi[self.basis]

            with np.errstate(divide="ignore", invalid="ignore"):
                t_lo = np.where(sd > opts.pivot_tol, (xb - lob) / sd, _INF)
                t_hi = np.where(sd < -opts.pivot_tol, (xb - hib) / sd, _INF)
            t_rows = np.minimum(np.clip(t_lo, 0.0, None), np.clip(t_hi, 0.0, None))
            t_bound = hi[j] - lo[j] if np.isfinite(hi[j]) and np.isfinite(lo[j]) else _INF
            t_star = min(float(t_rows.min()) if self.m else _INF, t_bound)

            if not np.isfinite(t_star):
                return "unbounded"

            self.total_iters += 1
            if t_star <= opts.pivot_tol:
                self.stall += 1
                if self.stall > opts.stall_limit:
                    self.bland = True
            else:
                self.stall = 0

            if t_bound <= t_star + 1e-12 and np.isfinite(t_bound):
                # bound flip, basis unchanged
                self.x[j] = hi[j] if sigma > 0 else lo[j]
                self.vstat[j] = _AT_UP if sigma > 0 else _AT_LO
                if self.m:
                    self.x[self.basis] = xb - sd * t_bound
                continue

            cand = np.flatnonzero(t_rows <= t_star + 1e-12)
            if self.bland:
                r = int(cand[np.argmin(self.basis[cand])])
            else:
                r = int(cand[np.argmax(np.abs(sd[cand]))])
            # a near-zero pivot off a stale inverse poisons the basis; redo
            # the iteration from a fresh factorization instead
            if (abs(d[r]) < 1e-11 * (1.0 + float(np.abs(d).max()))
                    and self.pivots_since_refactor > 0):
                self._refactor()
                continue
            leave = self.basis[r]
            hit_lo = sd[r] > 0
            newxb = xb - sd * t_star
            self.x[self.basis] = newxb
            self.x[leave] = lob[r] if hit_lo else hib[r]
            self.vstat[leave] = _AT_LO if hit_lo else _AT_UP
            self.x[j] = self.x[j] + sigma * t_star

            self.basis[r] = j
            self.vstat[j] = _BASIC
            # product-form update of the explicit inverse
            piv = d[r]
            factor = self.binv[r] / piv
            self.binv -= np.outer(d, factor)
            self.binv[r] = factor
            self.pivots_since_refactor += 1
            if self.pivots_since_refactor >= opts.refactor_every:
                self._refactor()

    def drive_out_artificials(self):
        """After phase 1, pivot basic artificials out where possible."""
        for r in range(self.m):
            if self.basis[r] < self.art0:
                continue
            row = self.binv[r] @ self.a[:, : self.art0]
            nb = self.vstat[: self.art0] != _BASIC
            cand = np.flatnonzero(nb & (np.abs(row) > self.opts.pivot_tol))
            if cand.size == 0:
                continue  # dependent row; artificial stays pinned at zero
            j = int(cand[0])
            d = self.binv @ self.a[:, j]
            leave = self.basis[r]
            self.vstat[leave] = _AT_LO
            self.x[leave] = 0.0
            self.basis[r] = j
            self.vstat[j] = _BASIC
            piv = d[r]
            factor = self.binv[r] / piv
            self.binv -= np.outer(d, factor)
            self.binv[r] = factor
            self._refactor()


def solve_lp(problem: LpProblem, opts: SolverOptions | None = None) -> Solution:
    """Solve a linear program with the embedded two-phase simplex.

    Returns a Solution whose duals satisfy complementary slackness within
    the optimality tolerance whenever status is 'optimal'.  If the working
    basis degenerates numerically the solve restarts once under Bland's
    rule with a tight refactorization cadence before giving up.
    """
    opts = opts or SolverOptions()
    try:
        return _solve_lp_once(problem, opts)
    except _SingularBasis:
        strict = replace(opts, start_bland=True,
                         refactor_every=min(10, opts.refactor_every))
        try:
            return _solve_lp_once(problem, strict)
        except _SingularBasis as exc:
            raise NumericalError(
                f"working basis stayed singular under strict pivoting: {exc}") from exc


def _solve_lp_once(problem: LpProblem, opts: SolverOptions) -> Solution:
    prob = problem.normalized()
    n = prob.c.size

    if n == 0 and prob.a_ub is None and prob.a_eq is None:
        return Solution("optimal", np.zeros(0), 0.0, np.zeros(0), np.zeros(0), np.zeros(0))

    sx = _Simplex(prob, opts)
    max_iters = opts.max_iters or 50 * (sx.m + sx.ncol)

    # phase 1: minimize total infeasibility
    c1 = np.zeros(sx.ncol)
    c1[sx.art0:] = 1.0
    status = sx.run(c1, max_iters)
    if status == "iter_limit":
        return Solution("iter_limit", iters=sx.total_iters)
    infeas = float(c1 @ sx.x)
    bscale = 1.0 + (np.abs(sx.b).max() if sx.m else 0.0)
    if infeas > opts.feas_tol * bscale:
        return Solution("infeasible", iters=sx.total_iters)
    sx.drive_out_artificials()
    # freeze artificials at zero for phase 2
    sx.lo[sx.art0:] = 0.0
    sx.hi[sx.art0:] = 0.0
    sx.x[sx.art0:][sx.vstat[sx.art0:] != _BASIC] = 0.0

    c2 = np.zeros(sx.ncol)
    c2[:n] = prob.c
    status = sx.run(c2, max_iters)
    if status != "optimal":
        return Solution(status, iters=sx.total_iters)

    x = sx.x[:n].copy()
    y = sx._y
    duals_ub = -y[: sx.m_ub] if sx.m_ub else np.zeros(0)
    duals_eq = -y[sx.m_ub: sx.m] if sx.m > sx.m_ub else np.zeros(0)
    duals_ub = np.clip(duals_ub, 0.0, None)
    return Solution(
        "optimal",
        x=x,
        objective=float(prob.c @ x),
        duals_ub=duals_ub,
        duals_eq=duals_eq,
        reduced_costs=sx._z[:n].copy(),
        iters=sx.total_iters,
    )


def lagrangian_bound(problem: LpProblem, duals_ub: np.ndarray, duals_eq: np.ndarray,
                     clamp_tol: float = 1e-7) -> float:
    """Valid lower bound on the LP optimum from a dual candidate.

    Evaluates min_x over the bound box of the Lagrangian at the given
    multipliers; reduced costs within ``clamp_tol`` of zero are clamped so
    that near-optimal duals of free variables do not poison the bound.
    """
    prob = problem.normalized()
    z = prob.c.copy()
    b_term = 0.0
    if prob.a_ub is not None:
        z += prob.a_ub.T @ duals_ub
        b_term += float(duals_ub @ prob.b_ub)
    if prob.a_eq is not None:
        z += prob.a_eq.T @ duals_eq
        b_term += float(duals_eq @ prob.b_eq)
    z[np.abs(z) <= clamp_tol] = 0.0
    lo = np.where(np.isfinite(prob.lo), prob.lo, 0.0)
    hi = np.where(np.isfinite(prob.hi), prob.hi, 0.0)
    # min of z_j * x_j over [lo_j, hi_j]; zeroed z contributes nothing
    term = np.where(z > 0, z * lo, z * hi)
    return float(term.sum()) - b_term


def solve_milp(problem: MilpProblem, opts: SolverOptions | None = None) -> Solution:
    """Best-bound branch and bound over the binary variables.

    Branches on the most fractional binary (ties to the lowest index),
    explores nodes in best-bound order and stops when the tree is
    exhausted; the absolute optimality gap at return is below
    ``opts.gap_abs``.  Raises NodeLimitExceeded past ``opts.node_limit``.
    """
    opts = opts or SolverOptions()
    lp = problem.lp.normalized()
    bins = sorted(set(int(b) for b in problem.binaries))
    if len(bins) > opts.max_binaries:
        raise ValueError(
            f"{len(bins)} binaries exceeds the configured guard of {opts.max_binaries}")
    for j in bins:
        if j < 0 or j >= lp.c.size:
            raise DimensionMismatch(f"binary index {j} out of range")
        lp.lo[j] = max(lp.lo[j], 0.0)
        lp.hi[j] = min(lp.hi[j], 1.0)

    counter = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    root = solve_lp(lp, opts)
    nodes = 1
    if root.status == "unbounded":
        return Solution("unbounded", nodes=nodes)
    if root.status != "optimal":
        return Solution(root.status, nodes=nodes)

    incumbent: Solution | None = None
    inc_obj = _INF

    def frac_scores(x):
        v = x[bins]
        return np.abs(v - np.round(v))

    heapq.heappush(heap, (root.objective, counter, lp.lo.copy(), lp.hi.copy()))
    counter += 1
    best_bound = root.objective

    while heap:
        bound, _, nlo, nhi = heapq.heappop(heap)
        best_bound = bound
        if incumbent is not None and bound >= inc_obj - 1e-9:
            break  # best-bound order: nothing left can improve
        node_lp = replace(lp, lo=nlo, hi=nhi)
        sol = solve_lp(node_lp, opts)
        if sol.status == "unbounded":
            return Solution("unbounded", nodes=nodes)
        if sol.status != "optimal":
            continue
        if incumbent is not None and sol.objective >= inc_obj - 1e-9:
            continue
        fr = frac_scores(sol.x)
        if bins and fr.max() > opts.int_tol:
            # most fractional first; lowest index on ties
            dist = np.abs(sol.x[bins] - 0.5)
            dist[fr <= opts.int_tol] = _INF
            j = bins[int(np.argmin(dist))]
            for fix in (0.0, 1.0):
                clo, chi = nlo.copy(), nhi.copy()
                clo[j] = fix
                chi[j] = fix
                nodes += 1
                if nodes > opts.node_limit:
                    raise NodeLimitExceeded(f"node limit {opts.node_limit} hit")
                heapq.heappush(heap, (sol.objective, counter, clo, chi))
                counter += 1
        else:
            xr = sol.x.copy()
            if bins:
                xr[bins] = np.round(xr[bins])
            obj = float(lp.c @ xr)
            if obj < inc_obj - 1e-12:
                incumbent = replace(sol, x=xr, objective=obj)
                inc_obj = obj

    if incumbent is None:
        return Solution("infeasible", nodes=nodes)
    gap = max(0.0, inc_obj - min(best_bound, inc_obj))
    incumbent.gap = gap
    incumbent.nodes = nodes
    incumbent.bound = min(best_bound, inc_obj)
    return incumbent
