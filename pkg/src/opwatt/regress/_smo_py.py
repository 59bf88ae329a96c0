"""Pure-Python SMO solver for the epsilon-SVR dual (fallback backend).

Solves::

    min  1/2 a^T Q a + p^T a
    s.t. sum_t s_t a_t = 0,  0 <= a_t <= C

over ``a = [alpha; alpha*]`` (length ``2n``) with signs ``s = [+1; -1]``,
``Q_st = s_s s_t K[s mod n, t mod n]`` and ``p = [eps - y; eps + y]``.
Working pairs are chosen by maximal violation for ``i`` and second-order
gain for ``j``. Iteration stops when the maximal KKT violation
``m(a) - M(a)`` drops below ``tol`` or after ``max_iter`` pair updates.

Returns ``(a, G, rho, iterations, converged, gap)``; the regression
function is ``f(x) = sum_i (a_i - a_{i+n}) K(x_i, x) - rho``.
"""

import numpy as np

TAU = 1e-12


def solve(K, y, C, eps, tol, max_iter):
    K = np.ascontiguousarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    sgn = np.concatenate([np.ones(n), -np.ones(n)])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    a = np.zeros(2 * n)
    G = np.concatenate([eps - y, eps + y])
    kd = np.diag(K).copy()

    it = 0
    converged = False
    gap = np.inf
    while it < max_iter:
        v = -sgn * G
        up = np.where(sgn > 0, a < C, a > 0)
        low = np.where(sgn > 0, a > 0, a < C)
        if not up.any() or not low.any():
            converged = True
            break
        vu = np.where(up, v, -np.inf)
        # last index among ties, matching the compiled backend
        i = 2 * n - 1 - int(np.argmax(vu[::-1]))
        Gmax = vu[i]
        Gmin = float(np.min(v[low]))
        gap = Gmax - Gmin
        b = Gmax - v
        cand = low & (b > 0)
        if gap < tol or not cand.any():
            converged = True
            break
        ii = idx[i]
        quad = kd[ii] + kd[idx] - 2.0 * K[ii, idx]
        quad = np.where(quad <= 0, TAU, quad)
        obj = np.where(cand, -(b * b) / np.where(cand, quad, 1.0), np.inf)
        j = 2 * n - 1 - int(np.argmin(obj[::-1]))
        it += 1

        jj = idx[j]
        yi, yj = sgn[i], sgn[j]
        Qij = yi * yj * K[ii, jj]
        ai_old, aj_old = a[i], a[j]
        ai, aj = ai_old, aj_old
        if yi != yj:
            q = kd[ii] + kd[jj] + 2.0 * Qij
            q = q if q > 0 else TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            q = kd[ii] + kd[jj] - 2.0 * Qij
            q = q if q > 0 else TAU
            delta = (G[i] - G[j]) / q
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        a[i], a[j] = ai, aj
        dai, daj = ai - ai_old, aj - aj_old
        G += sgn * (yi * K[idx, ii] * dai + yj * K[idx, jj] * daj)

    return a, G, _rho(a, G, sgn, C), it, converged, float(gap)


def _rho(a, G, sgn, C):
    yG = sgn * G
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(np.sum(yG[free]) / np.count_nonzero(free))
    ub_mask = (at_upper & (sgn < 0)) | (at_lower & (sgn > 0))
    lb_mask = (at_upper & (sgn > 0)) | (at_lower & (sgn < 0))
    ub = float(np.min(yG[ub_mask])) if ub_mask.any() else np.inf
    lb = float(np.max(yG[lb_mask])) if lb_mask.any() else -np.inf
    return (ub + lb) / 2.0
