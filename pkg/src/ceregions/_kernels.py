"""Dense LP/QP kernels shared by the geometry and solver layers.

The functions here are written in a numba-compatible numpy style.  When numba
is importable (and not disabled via ``CEREGIONS_NUMBA=0``) they are compiled
with ``@njit``; otherwise the same code runs as plain numpy.  Status codes are
small ints so the kernels stay allocation-light:

    0 = optimal, 1 = infeasible, 2 = unbounded, 3 = iteration limit.
"""

from __future__ import annotations

import os

import numpy as np


def _flag_enabled() -> bool:
    val = os.environ.get("CEREGIONS_NUMBA", "1").strip().lower()
    return val not in ("0", "false", "off", "no")


NUMBA_ENABLED = False
if _flag_enabled():
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # type: ignore[no-redef]
        """No-op replacement for numba.njit on the fallback path."""

        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3

_PIVOT_TOL = 1e-10
_RCOST_TOL = 1e-9


@njit(cache=True)
def _pivot(T, basis, r, e):
    piv = T[r, e]
    T[r, :] /= piv
    nrow = T.shape[0]
    for i in range(nrow):
        if i != r:
            factor = T[i, e]
            if factor != 0.0:
                T[i, :] -= factor * T[r, :]
    basis[r] = e


@njit(cache=True)
def _bland_iterate(T, basis, m, ncols_enter, maxiter):
    """Run Bland-rule simplex iterations on tableau T (cost in last row).

    Entering columns are restricted to ``[0, ncols_enter)``.  Returns a status
    code; the tableau/basis are updated in place.
    """

    for _ in range(maxiter):
        enter = -1
        for j in range(ncols_enter):
            if T[m, j] < -_RCOST_TOL:
                enter = j
                break
        if enter < 0:
            return OPTIMAL
        # ratio test, ties by smallest basis index (anti-cycling)
        best_ratio = np.inf
        leave = -1
        for i in range(m):
            coef = T[i, enter]
            if coef > _PIVOT_TOL:
                rhs = T[i, -1]
                if rhs < 0.0:
                    rhs = 0.0
                ratio = rhs / coef
                if ratio < best_ratio - 1e-12:
                    best_ratio = ratio
                    leave = i
                elif ratio < best_ratio + 1e-12 and leave >= 0:
                    if basis[i] < basis[leave]:
                        leave = i
        if leave < 0:
            return UNBOUNDED
        _pivot(T, basis, leave, enter)
    return ITERATION_LIMIT


@njit(cache=True)
def lp_dense(c, A_ub, b_ub, A_eq, b_eq):
    """Solve min c'x s.t. A_ub x <= b_ub, A_eq x = b_eq with x free.

    Two-phase dense simplex on the split-variable standard form.  Returns
    ``(status, x)``.
    """

    n = c.shape[0]
    m1 = A_ub.shape[0]
    m2 = A_eq.shape[0]
    m = m1 + m2

    if m == 0:
        x = np.zeros(n)
        for j in range(n):
            if abs(c[j]) > _RCOST_TOL:
                return UNBOUNDED, x
        return OPTIMAL, x

    nv = 2 * n + m1          # x+, x-, slacks
    ntot = nv + m            # + artificials
    T = np.zeros((m + 1, ntot + 1))

    for i in range(m1):
        for j in range(n):
            T[i, j] = A_ub[i, j]
            T[i, n + j] = -A_ub[i, j]
        T[i, 2 * n + i] = 1.0
        T[i, -1] = b_ub[i]
    for i2 in range(m2):
        i = m1 + i2
        for j in range(n):
            T[i, j] = A_eq[i2, j]
            T[i, n + j] = -A_eq[i2, j]
        T[i, -1] = b_eq[i2]

    bscale = 1.0
    for i in range(m):
        if abs(T[i, -1]) > bscale:
            bscale = abs(T[i, -1])

    # make rhs nonnegative, install artificial basis
    basis = np.empty(m, np.int64)
    for i in range(m):
        if T[i, -1] < 0.0:
            T[i, :] = -T[i, :]
        T[i, nv + i] = 1.0
        basis[i] = nv + i

    # phase-1 reduced costs: minimize the artificial sum
    for j in range(ntot + 1):
        s = 0.0
        for i in range(m):
            s += T[i, j]
        if j < nv or j == ntot:
            T[m, j] = -s
        else:
            T[m, j] = 0.0

    maxiter = 200 + 40 * (m + nv)
    status = _bland_iterate(T, basis, m, nv, maxiter)
    if status == ITERATION_LIMIT:
        return ITERATION_LIMIT, np.zeros(n)
    if -T[m, -1] > 1e-9 * bscale:
        return INFEASIBLE, np.zeros(n)

    # drive artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= nv:
            enter = -1
            for j in range(nv):
                if abs(T[i, j]) > 1e-9:
                    enter = j
                    break
            if enter >= 0:
                _pivot(T, basis, i, enter)

    # phase-2 cost row (artificial columns stay barred)
    T[m, :] = 0.0
    for j in range(n):
        T[m, j] = c[j]
        T[m, n + j] = -c[j]
    for i in range(m):
        bj = basis[i]
        if bj < nv:
            cb = 0.0
            if bj < n:
                cb = c[bj]
            elif bj < 2 * n:
                cb = -c[bj - n]
            if cb != 0.0:
                T[m, :] -= cb * T[i, :]

    status = _bland_iterate(T, basis, m, nv, maxiter)
    x = np.zeros(n)
    if status == OPTIMAL:
        for i in range(m):
            bj = basis[i]
            val = T[i, -1]
            if bj < n:
                x[bj] += val
            elif bj < 2 * n:
                x[bj - n] -= val
    return status, x


@njit(cache=True)
def lp_feasible_point(A, b):
    """Phase-1 only: return (status, x) with A x <= b if feasible."""

    c = np.zeros(A.shape[1])
    empty_a = np.zeros((0, A.shape[1]))
    empty_b = np.zeros(0)
    return lp_dense(c, A, b, empty_a, empty_b)


@njit(cache=True)
def qp_active_set(H, f, A, b, z0, maxiter):
    """Primal active-set method for min 1/2 z'Hz + f'z s.t. A z <= b.

    ``z0`` must be feasible.  Returns ``(status, z, lam, niter)`` where ``lam``
    holds one multiplier per row (zero off the final working set).  Constraint
    selection uses smallest-index (Bland-style) tie-breaking so repeated solves
    are deterministic.
    """

    n = H.shape[0]
    m = A.shape[0]
    z = z0.copy()
    lam = np.zeros(m)
    in_w = np.zeros(m, np.bool_)
    n_w = 0

    if m == 0:
        z = np.linalg.solve(H, -f)
        return OPTIMAL, z, lam, 0

    for it in range(maxiter):
        idx = np.empty(n_w, np.int64)
        k = 0
        for i in range(m):
            if in_w[i]:
                idx[k] = i
                k += 1
        K = np.zeros((n + n_w, n + n_w))
        K[:n, :n] = H
        for j in range(n_w):
            row = idx[j]
            for col in range(n):
                K[col, n + j] = A[row, col]
                K[n + j, col] = A[row, col]
        rhs = np.zeros(n + n_w)
        g = H @ z + f
        rhs[:n] = -g
        sol = np.linalg.solve(K, rhs)
        p = sol[:n]

        pmax = 0.0
        zmax = 1.0
        for i in range(n):
            if abs(p[i]) > pmax:
                pmax = abs(p[i])
            if abs(z[i]) > zmax:
                zmax = abs(z[i])

        if pmax <= 1e-10 * zmax:
            drop = -1
            for j in range(n_w):
                if sol[n + j] < -1e-9:
                    drop = idx[j]
                    break
            if drop < 0:
                for j in range(n_w):
                    lam[idx[j]] = sol[n + j]
                return OPTIMAL, z, lam, it
            in_w[drop] = False
            n_w -= 1
            continue

        alpha = 1.0
        block = -1
        for i in range(m):
            if not in_w[i]:
                aip = 0.0
                for col in range(n):
                    aip += A[i, col] * p[col]
                if aip > 1e-12:
                    resid = b[i]
                    for col in range(n):
                        resid -= A[i, col] * z[col]
                    if resid < 0.0:
                        resid = 0.0
                    ratio = resid / aip
                    if ratio < alpha - 1e-12:
                        alpha = ratio
                        block = i
        z = z + alpha * p
        if block >= 0 and alpha < 1.0:
            in_w[block] = True
            n_w += 1

    return ITERATION_LIMIT, z, lam, maxiter


@njit(cache=True)
def dual_projected_gradient(H, f, A, b, maxiter, tol):
    """FISTA-accelerated projected gradient on the QP dual.

    Independent reference route used by tests: iterates on lam >= 0 with the
    dual objective of min 1/2 z'Hz + f'z s.t. Az <= b and recovers
    z = -H^(-1)(f + A'lam).  Returns (z, lam, gap_est).
    """

    m = A.shape[0]
    Hinv_At = np.linalg.solve(H, A.T.copy())
    Hinv_f = np.linalg.solve(H, f)
    M = A @ Hinv_At
    d = A @ Hinv_f + b
    # Lipschitz constant via power iteration
    v = np.ones(m)
    L = 1.0
    for _ in range(200):
        w = M @ v
        nw = np.sqrt((w * w).sum())
        if nw < 1e-300:
            break
        v = w / nw
        L = nw
    step = 1.0 / (L + 1e-12)

    lam = np.zeros(m)
    y = lam.copy()
    t_acc = 1.0
    for _ in range(maxiter):
        grad = M @ y + d
        lam_new = y - step * grad
        for i in range(m):
            if lam_new[i] < 0.0:
                lam_new[i] = 0.0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        y = lam_new + ((t_acc - 1.0) / t_new) * (lam_new - lam)
        diff = 0.0
        for i in range(m):
            if abs(lam_new[i] - lam[i]) > diff:
                diff = abs(lam_new[i] - lam[i])
        lam = lam_new
        t_acc = t_new
        if diff < tol:
            break
    z = -(Hinv_f + Hinv_At @ lam)
    return z, lam, diff


@njit(cache=True)
def dp_stage_1d(
    xg,
    ug,
    a11,
    b11,
    atoms_state,
    weights,
    mean_state,
    xt_a,
    xt_b,
    xn_a,
    xn_b,
    u_a,
    u_b,
    q11,
    r11,
    next_lo,
    next_h,
    j_next,
    ce_mode,
):
    """One backward step of the scalar brute-force DP on a state grid.

    ``atoms_state`` are disturbance atoms already mapped to state space (G d + c
    folded in); ``mean_state`` likewise.  The robust constraint is enforced for
    every atom; the cost-to-go term uses the atom average, or the mean-only
    lookup when ``ce_mode`` is true.  Returns (values, laws, feasible).
    """

    nx = xg.shape[0]
    nu = ug.shape[0]
    natoms = atoms_state.shape[0]
    nnext = j_next.shape[0]

    values = np.full(nx, np.inf)
    laws = np.full(nx, np.nan)
    feas = np.zeros(nx, np.bool_)

    for ix in range(nx):
        x = xg[ix]
        ok = True
        for r in range(xt_a.shape[0]):
            if xt_a[r] * x > xt_b[r] + 1e-9:
                ok = False
                break
        if not ok:
            continue
        best = np.inf
        best_u = np.nan
        for iu in range(nu):
            u = ug[iu]
            ok_u = True
            for r in range(u_a.shape[0]):
                if u_a[r] * u > u_b[r] + 1e-9:
                    ok_u = False
                    break
            if not ok_u:
                continue
            base = a11 * x + b11 * u
            robust = True
            for ia in range(natoms):
                y = base + atoms_state[ia]
                for r in range(xn_a.shape[0]):
                    if xn_a[r] * y > xn_b[r] + 1e-9:
                        robust = False
                        break
                if not robust:
                    break
            if not robust:
                continue
            if ce_mode:
                y = base + mean_state
                pos = (y - next_lo) / next_h
                if pos < -1e-9 or pos > nnext - 1 + 1e-9:
                    continue
                i0 = int(pos)
                if i0 > nnext - 2:
                    i0 = nnext - 2
                frac = pos - i0
                v0 = j_next[i0]
                v1 = j_next[i0 + 1]
                if not (np.isfinite(v0) and np.isfinite(v1)):
                    continue
                jterm = (1.0 - frac) * v0 + frac * v1
            else:
                jterm = 0.0
                bad = False
                for ia in range(natoms):
                    y = base + atoms_state[ia]
                    pos = (y - next_lo) / next_h
                    if pos < -1e-9 or pos > nnext - 1 + 1e-9:
                        bad = True
                        break
                    i0 = int(pos)
                    if i0 > nnext - 2:
                        i0 = nnext - 2
                    frac = pos - i0
                    v0 = j_next[i0]
                    v1 = j_next[i0 + 1]
                    if not (np.isfinite(v0) and np.isfinite(v1)):
                        bad = True
                        break
                    jterm += weights[ia] * ((1.0 - frac) * v0 + frac * v1)
                if bad:
                    continue
            total = q11 * x * x + r11 * u * u + jterm
            if total < best - 1e-15:
                best = total
                best_u = u
        if np.isfinite(best):
            values[ix] = best
            laws[ix] = best_u
            feas[ix] = True
    return values, laws, feas


def warmup():
    """Force-compile the jitted kernels (no-op on the numpy path)."""

    c = np.array([1.0, 0.0])
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.ones(4)
    lp_dense(c, A, b, np.zeros((0, 2)), np.zeros(0))
    lp_feasible_point(A, b)
    H = np.eye(2)
    qp_active_set(H, np.zeros(2), A, b, np.zeros(2), 50)
    dual_projected_gradient(H, np.zeros(2), A, b, 50, 1e-9)
