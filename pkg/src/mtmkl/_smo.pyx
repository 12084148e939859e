# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled SMO kernel for the box- and equality-constrained SVM dual.

Minimizes ``f(a) = a'Qa/2 - 1'a`` with ``Q = diag(y) K diag(y)`` subject to
``0 <= a <= C`` and ``y'a = 0`` using maximal-violating-pair working sets.
Ties in the pair selection go to the lowest index.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _pair_update(const double[:, ::1] K, const double[::1] y, double[::1] a,
                              double[::1] G, double C, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t n = y.shape[0], t
    cdef double ai = a[i], aj = a[j], quad, delta, diff, total
    cdef double qii = K[i, i], qjj = K[j, j], qij = y[i] * y[j] * K[i, j]
    if y[i] != y[j]:
        quad = qii + qjj + 2.0 * qij
        if quad <= 0:
            quad = 1e-12
        delta = (-G[i] - G[j]) / quad
        diff = ai - aj
        a[i] += delta
        a[j] += delta
        if diff > 0:
            if a[j] < 0:
                a[j] = 0.0
                a[i] = diff
        elif a[i] < 0:
            a[i] = 0.0
            a[j] = -diff
        if diff > 0:
            if a[i] > C:
                a[i] = C
                a[j] = C - diff
        elif a[j] > C:
            a[j] = C
            a[i] = C + diff
    else:
        quad = qii + qjj - 2.0 * qij
        if quad <= 0:
            quad = 1e-12
        delta = (G[i] - G[j]) / quad
        total = ai + aj
        a[i] -= delta
        a[j] += delta
        if total > C:
            if a[i] > C:
                a[i] = C
                a[j] = total - C
        elif a[j] < 0:
            a[j] = 0.0
            a[i] = total
        if total > C:
            if a[j] > C:
                a[j] = C
                a[i] = total - C
        elif a[i] < 0:
            a[i] = 0.0
            a[j] = total
    cdef double di = a[i] - ai, dj = a[j] - aj
    for t in range(n):
        G[t] += y[t] * y[i] * K[t, i] * di + y[t] * y[j] * K[t, j] * dj


def smo(K, y, double C, double tol, long max_iter, alpha0=None, bint record=False):
    cdef const double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], t, i, j
    alpha_arr = np.zeros(n) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    cdef double[::1] a = alpha_arr
    Q = (np.asarray(yv)[:, None] * np.asarray(yv)[None, :]) * np.asarray(Kv)
    G_arr = Q @ alpha_arr - 1.0
    cdef double[::1] G = G_arr
    cdef long it = 0
    cdef int status = 0
    cdef bint up, low
    cdef double gmax, gmin, v, obj
    history = [] if record else None
    while status == 0:
        if record:
            obj = 0.0
            for t in range(n):
                obj += a[t] * (1.0 - G[t])
            history.append(0.5 * obj)
        with nogil:
            gmax = -1e300
            gmin = 1e300
            i = -1
            j = -1
            for t in range(n):
                if yv[t] > 0:
                    up = a[t] < C
                    low = a[t] > 0
                else:
                    up = a[t] > 0
                    low = a[t] < C
                v = -yv[t] * G[t]
                if up and (i < 0 or v > gmax):
                    gmax = v
                    i = t
                if low and (j < 0 or v < gmin):
                    gmin = v
                    j = t
            if i < 0 or j < 0 or gmax - gmin <= tol:
                status = 1
            elif it >= max_iter:
                status = 2
            else:
                it += 1
                _pair_update(Kv, yv, a, G, C, i, j)
    return alpha_arr, G_arr, it, status == 1, (np.array(history) if record else None)
