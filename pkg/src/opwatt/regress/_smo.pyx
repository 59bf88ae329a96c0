# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled SMO solver for the epsilon-SVR dual.

Same contract as :func:`opwatt.regress._smo_py.solve`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef cnp.float64_t DTYPE_t

cdef double TAU = 1e-12


def solve(cnp.ndarray[DTYPE_t, ndim=2] K not None,
          cnp.ndarray[DTYPE_t, ndim=1] y not None,
          double C, double eps, double tol, long max_iter):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t l = 2 * n
    cdef cnp.ndarray[DTYPE_t, ndim=1] a_arr = np.zeros(l)
    cdef cnp.ndarray[DTYPE_t, ndim=1] G_arr = np.empty(l)
    cdef cnp.ndarray[DTYPE_t, ndim=1] diag_arr = np.empty(n)
    cdef double[:, ::1] Kv = np.ascontiguousarray(K)
    cdef double[::1] a = a_arr
    cdef double[::1] G = G_arr
    cdef double[::1] kd = diag_arr
    cdef signed char* sgn
    cdef Py_ssize_t t, i, j, ii, jj, si
    cdef long it = 0
    cdef double Gmax, Gmin, obj_min, v, b, quad, delta, diff, s, ai_old, aj_old, dai, daj
    cdef double yi, yj, Qij, gap = INFINITY
    cdef bint converged = False
    cdef cnp.ndarray[cnp.int8_t, ndim=1] sgn_arr = np.empty(l, dtype=np.int8)

    sgn = <signed char*> sgn_arr.data
    for t in range(n):
        sgn[t] = 1
        sgn[t + n] = -1
        G[t] = eps - y[t]
        G[t + n] = eps + y[t]
        kd[t] = Kv[t, t]

    while it < max_iter:
        # first-order pick of i over I_up
        Gmax = -INFINITY
        i = -1
        for t in range(l):
            if sgn[t] == 1:
                if a[t] < C:
                    v = -G[t]
                    if v >= Gmax:
                        Gmax = v
                        i = t
            else:
                if a[t] > 0:
                    v = G[t]
                    if v >= Gmax:
                        Gmax = v
                        i = t
        # second-order pick of j over I_low
        Gmin = INFINITY
        j = -1
        obj_min = INFINITY
        if i >= 0:
            ii = i % n
            yi = sgn[i]
            for t in range(l):
                if sgn[t] == 1:
                    if a[t] <= 0:
                        continue
                    v = -G[t]
                else:
                    if a[t] >= C:
                        continue
                    v = G[t]
                if v < Gmin:
                    Gmin = v
                b = Gmax - v
                if b > 0:
                    jj = t % n
                    quad = kd[ii] + kd[jj] - 2.0 * Kv[ii, jj]
                    if quad <= 0:
                        quad = TAU
                    if -(b * b) / quad <= obj_min:
                        obj_min = -(b * b) / quad
                        j = t
        gap = Gmax - Gmin
        if i < 0 or j < 0 or gap < tol:
            converged = True
            break
        it += 1

        ii = i % n
        jj = j % n
        yi = sgn[i]
        yj = sgn[j]
        Qij = yi * yj * Kv[ii, jj]
        ai_old = a[i]
        aj_old = a[j]
        if yi != yj:
            quad = kd[ii] + kd[jj] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = kd[ii] + kd[jj] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if s > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = s - C
            else:
                if a[j] < 0:
                    a[j] = 0
                    a[i] = s
            if s > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = s - C
            else:
                if a[i] < 0:
                    a[i] = 0
                    a[j] = s

        dai = a[i] - ai_old
        daj = a[j] - aj_old
        for t in range(l):
            si = t % n
            G[t] += sgn[t] * (yi * Kv[si, ii] * dai + yj * Kv[si, jj] * daj)

    return a_arr, G_arr, _rho(a_arr, G_arr, sgn_arr, C), it, bool(converged), float(gap)


cdef double _rho(cnp.ndarray[DTYPE_t, ndim=1] a, cnp.ndarray[DTYPE_t, ndim=1] G,
                 cnp.ndarray[cnp.int8_t, ndim=1] sgn, double C):
    cdef Py_ssize_t t, l = a.shape[0]
    cdef double ub = INFINITY, lb = -INFINITY, sum_free = 0.0, yG
    cdef long nr_free = 0
    for t in range(l):
        yG = sgn[t] * G[t]
        if a[t] >= C:
            if sgn[t] == -1:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif a[t] <= 0:
            if sgn[t] == 1:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            nr_free += 1
            sum_free += yG
    if nr_free > 0:
        return sum_free / nr_free
    return (ub + lb) / 2.0
