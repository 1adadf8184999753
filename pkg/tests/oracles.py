"""Independent oracles used to freeze expected values in the test suite.

Everything in here deliberately avoids the package's own algorithmic
paths: LPs are solved by brute-force vertex enumeration, MILPs by
exhaustive binary enumeration, power flow by a node-by-node Gauss-Seidel
sweep, and the scenario-robust problems by enumerating every extreme
scenario.  Slow is fine; these only run on desk-scale instances.
"""

from __future__ import annotations

import itertools

import numpy as np


def vertex_enum_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, lo=None, hi=None,
                   tol=1e-8):
    """Brute-force LP solve by enumerating basic feasible points.

    Returns (status, x, obj) with status in {'optimal', 'infeasible'}.
    Only valid when the feasible region is bounded (all test problems
    used with this oracle are boxes or have bounded polytopes).
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    rows = []
    rhs = []
    kinds = []  # 'ub' or 'eq'
    if a_ub is not None:
        for r, b in zip(np.atleast_2d(a_ub), np.ravel(b_ub)):
            rows.append(np.asarray(r, dtype=float))
            rhs.append(float(b))
            kinds.append("ub")
    if a_eq is not None:
        for r, b in zip(np.atleast_2d(a_eq), np.ravel(b_eq)):
            rows.append(np.asarray(r, dtype=float))
            rhs.append(float(b))
            kinds.append("eq")
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
    for j in range(n):
        if np.isfinite(lo[j]):
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-lo[j])
            kinds.append("ub")
        if np.isfinite(hi[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(hi[j])
            kinds.append("ub")
    rows = np.array(rows)
    rhs = np.array(rhs)
    m = len(rows)

    eq_idx = [i for i, k in enumerate(kinds) if k == "eq"]

    def feasible(x):
        for i in range(m):
            v = rows[i] @ x - rhs[i]
            if kinds[i] == "eq":
                if abs(v) > tol:
                    return False
            elif v > tol:
                return False
        return True

    best = None
    best_x = None
    free_count = n - len(eq_idx)
    for combo in itertools.combinations(range(m), free_count):
        active = list(eq_idx) + [i for i in combo if i not in eq_idx]
        if len(active) != n:
            continue
        a = rows[active]
        b = rhs[active]
        if np.linalg.matrix_rank(a) < n:
            continue
        x = np.linalg.lstsq(a, b, rcond=None)[0]
        if not feasible(x):
            continue
        val = float(c @ x)
        if best is None or val < best - 1e-12:
            best = val
            best_x = x
    if best is None:
        return "infeasible", None, None
    return "optimal", best_x, best


def exhaustive_milp(c, a_ub, b_ub, binaries, lo=None, hi=None, tol=1e-8):
    """Enumerate every binary assignment; solve the continuous rest by
    vertex enumeration.  Pure-binary problems skip the LP entirely."""
    c = np.asarray(c, dtype=float)
    n = c.size
    bins = list(binaries)
    cont = [j for j in range(n) if j not in bins]
    best = None
    best_x = None
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float).copy()
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float).copy()
    for assign in itertools.product((0.0, 1.0), repeat=len(bins)):
        l2 = lo.copy()
        h2 = hi.copy()
        for j, v in zip(bins, assign):
            l2[j] = v
            h2[j] = v
        if not cont:
            x = np.array(assign)
            full = np.zeros(n)
            for j, v in zip(bins, assign):
                full[j] = v
            ok = True
            if a_ub is not None:
                ok = bool(np.all(np.atleast_2d(a_ub) @ full <= np.ravel(b_ub) + tol))
            if ok:
                val = float(c @ full)
                if best is None or val < best - 1e-12:
                    best, best_x = val, full
        else:
            status, x, val = vertex_enum_lp(c, a_ub, b_ub, lo=l2, hi=h2, tol=tol)
            if status == "optimal" and (best is None or val < best - 1e-12):
                best, best_x = val, x
    if best is None:
        return "infeasible", None, None
    return "optimal", best_x, best


def gauss_seidel_pf(ybus, slack_idx, v_slack, s_inj, delta_pairs=None, s_delta=None,
                    tol=1e-12, max_sweeps=20000, v_init=None):
    """Node-by-node Gauss-Seidel power flow over an arbitrary bus-phase graph.

    ybus: full (N x N) complex admittance over all phase nodes including
    the slack nodes listed in slack_idx (voltages pinned to v_slack).
    s_inj: complex wye power injection per node (zero at slack).
    delta_pairs/s_delta: optional list of (a, b) node pairs with complex
    power injected through the pair, handled as voltage-dependent current
    sources recomputed each sweep.
    """
    ybus = np.asarray(ybus, dtype=complex)
    nn = ybus.shape[0]
    v = np.ones(nn, dtype=complex)
    slack_idx = list(slack_idx)
    v[slack_idx] = v_slack
    others = [i for i in range(nn) if i not in slack_idx]
    if v_init is not None:
        v = np.asarray(v_init, dtype=complex).copy()
        v[slack_idx] = v_slack
    else:
        for i in others:
            v[i] = v_slack[0] if np.ndim(v_slack) else v_slack
    if delta_pairs is None:
        delta_pairs = []
        s_delta = []
    for sweep in range(max_sweeps):
        delta = 0.0
        i_extra = np.zeros(nn, dtype=complex)
        for (a, b), s in zip(delta_pairs, s_delta):
            u = v[a] - v[b]
            ib = np.conj(s / u)
            i_extra[a] += ib
            i_extra[b] -= ib
        for i in others:
            i_rhs = np.conj(s_inj[i] / v[i]) + i_extra[i]
            acc = i_rhs - ybus[i] @ v + ybus[i, i] * v[i]
            new = acc / ybus[i, i]
            delta = max(delta, abs(new - v[i]))
            v[i] = new
        if delta < tol:
            return v
    raise RuntimeError("gauss-seidel oracle failed to converge")


def brute_force_box_subproblem(w_mat, w_rhs, d_mat, g_vec, p_lo, p_hi, solve_lp_fn):
    """Worst-case dispatch slack over every vertex of a period box.

    For each corner of [p_lo, p_hi]^T solves
        min 1's  s.t.  W x <= w + s, s >= 0, D x = corner - g
    and returns (worst_slack, worst_corner, per_corner_slacks).
    ``solve_lp_fn(c, a_ub, b_ub, a_eq, b_eq, lo, hi)`` must return
    (status, x, obj); the LP construction here is intentionally separate
    from the package's sub-problem builder.
    """
    t = len(p_lo)
    m, n = w_mat.shape
    worst = -np.inf
    worst_corner = None
    slacks = []
    for bits in itertools.product((0, 1), repeat=t):
        corner = np.where(np.array(bits, dtype=bool), p_hi, p_lo)
        c = np.concatenate([np.zeros(n), np.ones(m)])
        a_ub = np.hstack([w_mat, -np.eye(m)])
        b_ub = np.asarray(w_rhs, dtype=float)
        a_eq = np.hstack([d_mat, np.zeros((t, m))])
        b_eq = corner - np.asarray(g_vec, dtype=float)
        lo = np.concatenate([np.full(n, -np.inf), np.zeros(m)])
        status, x, obj = solve_lp_fn(c, a_ub, b_ub, a_eq, b_eq, lo, None)
        val = obj if status == "optimal" else np.inf
        slacks.append(val)
        if val > worst:
            worst = val
            worst_corner = np.array(bits)
    return worst, worst_corner, slacks


def det_equiv_box_width(w_mat, w_rhs, d_mat, g_vec, solve_lp_fn):
    """Deterministic equivalent of the box-region problem.

    One LP over (p_lo, p_hi, x^v for every vertex v of {0,1}^T):
    maximize sum(p_hi - p_lo) with each vertex trajectory dispatched by
    its own recourse copy.  Returns (status, width, p_lo, p_hi).
    """
    t = d_mat.shape[0]
    m, n = w_mat.shape
    verts = list(itertools.product((0, 1), repeat=t))
    nv = len(verts)
    ntot = 2 * t + nv * n
    c = np.zeros(ntot)
    c[:t] = 1.0       # minimize sum(p_lo) - sum(p_hi)
    c[t:2 * t] = -1.0
    a_ub_rows = []
    b_ub = []
    # p_lo <= p_hi
    for i in range(t):
        r = np.zeros(ntot)
        r[i] = 1.0
        r[t + i] = -1.0
        a_ub_rows.append(r)
        b_ub.append(0.0)
    a_eq_rows = []
    b_eq = []
    for k, bits in enumerate(verts):
        off = 2 * t + k * n
        for i in range(t):
            r = np.zeros(ntot)
            if bits[i]:
                r[t + i] = 1.0
            else:
                r[i] = 1.0
            r[off:off + n] = -d_mat[i]
            a_eq_rows.append(r)
            b_eq.append(g_vec[i])
        for irow in range(m):
            r = np.zeros(ntot)
            r[off:off + n] = w_mat[irow]
            a_ub_rows.append(r)
            b_ub.append(w_rhs[irow])
    status, x, obj = solve_lp_fn(c, np.array(a_ub_rows), np.array(b_ub),
                                 np.array(a_eq_rows), np.array(b_eq), None, None)
    if status != "optimal":
        return status, None, None, None
    return "optimal", -obj, x[:t], x[t:2 * t]


def scipy_solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, lo=None, hi=None):
    """Third-party LP solve in the (status, x, obj) shape the oracles expect.

    Uses scipy's HiGHS backend so cross-checks of the package solver do
    not share an engine with the thing being checked.
    """
    from scipy.optimize import linprog

    c = np.asarray(c, dtype=float)
    n = c.size
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=list(zip(lo, hi)), method="highs")
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "failed")
    return status, res.x, res.fun


def brute_force_assignment_subproblem(w_mat, w_rhs, d_mat, g_vec, f_mat, h_vec,
                                      point_options, solve_lp_fn):
    """Worst dispatch slack over per-period point assignments.

    ``point_options[t]`` lists candidate (p, q) targets for period t; every
    assignment picks one per period and the slack LP
        min 1's  s.t.  W x <= w + s, D x = p - g, F x = q - h, s >= 0
    prices how far dispatch misses it.  Returns (worst, assignment, slacks).
    """
    tt = len(point_options)
    m, n = w_mat.shape
    worst = -np.inf
    worst_assign = None
    slacks = {}
    for assign in itertools.product(*[range(len(opts)) for opts in point_options]):
        pts = np.array([point_options[t][assign[t]] for t in range(tt)])
        c = np.concatenate([np.zeros(n), np.ones(m)])
        a_ub = np.hstack([w_mat, -np.eye(m)])
        a_eq = np.vstack([
            np.hstack([d_mat, np.zeros((tt, m))]),
            np.hstack([f_mat, np.zeros((tt, m))]),
        ])
        b_eq = np.concatenate([pts[:, 0] - g_vec, pts[:, 1] - h_vec])
        lo = np.concatenate([np.full(n, -np.inf), np.zeros(m)])
        status, x, obj = solve_lp_fn(c, a_ub, np.asarray(w_rhs, dtype=float),
                                     a_eq, b_eq, lo, None)
        val = obj if status == "optimal" else np.inf
        slacks[assign] = val
        if val > worst:
            worst = val
            worst_assign = assign
    return worst, np.array(worst_assign), slacks


def scipy_track_feasible(model, p_reg, q_reg=None):
    """Independent check that a substation trajectory admits a dispatch.

    Solves the tracking feasibility LP with the third-party engine:
        find x  s.t.  W x <= w,  D x = p_reg - g  (and F x = q_reg - h).
    Returns (feasible, x).
    """
    n = model.w_mat.shape[1]
    a_eq = [model.d_mat]
    b_eq = [np.asarray(p_reg, dtype=float) - model.g_vec]
    if q_reg is not None:
        a_eq.append(model.f_mat)
        b_eq.append(np.asarray(q_reg, dtype=float) - model.h_vec)
    status, x, _ = scipy_solve_lp(
        np.zeros(n), model.w_mat, model.w_rhs,
        np.vstack(a_eq), np.concatenate(b_eq))
    return status == "optimal", x


def scipy_period_import_max(model, t):
    """Largest active import achievable in period t ignoring other periods.

    Any regulation value above this is infeasible no matter what the rest
    of the trajectory does; used to construct draws that must fail.
    """
    n = model.w_mat.shape[1]
    status, _, obj = scipy_solve_lp(
        -model.d_mat[t], model.w_mat, model.w_rhs)
    if status != "optimal":
        raise RuntimeError(f"import bound LP ended {status}")
    return -obj + model.g_vec[t]
