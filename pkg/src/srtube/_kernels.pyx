# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""RK4 for the sub-Riemannian Hamiltonian of an affine frame X_a(x) = b_a + A_a x."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, fabs, sqrt

cnp.import_array()

DEF MAXD = 4


cdef inline void _rhs(int dim, const double[:, ::1] b, const double[:, :, ::1] A,
                      const double* x, const double* p, double* dx, double* dp) noexcept nogil:
    cdef double X[2][MAXD]
    cdef double h[2]
    cdef int a, i, j
    cdef double s
    for a in range(2):
        h[a] = 0.0
        for i in range(dim):
            s = b[a, i]
            for j in range(dim):
                s += A[a, i, j] * x[j]
            X[a][i] = s
            h[a] += p[i] * s
    for i in range(dim):
        dx[i] = h[0] * X[0][i] + h[1] * X[1][i]
    for j in range(dim):
        s = 0.0
        for a in range(2):
            for i in range(dim):
                s += h[a] * p[i] * A[a, i, j]
        dp[j] = -s


cdef inline void _project(int dim, int mode, double* x) noexcept nogil:
    cdef double nrm, g, gg
    cdef double grad[MAXD]
    cdef int i
    if mode == 1:
        nrm = 0.0
        for i in range(dim):
            nrm += x[i] * x[i]
        nrm = sqrt(nrm)
        for i in range(dim):
            x[i] /= nrm
    elif mode == 2:
        g = x[0] * x[3] - x[1] * x[2] - 1.0
        grad[0] = x[3]
        grad[1] = -x[2]
        grad[2] = -x[1]
        grad[3] = x[0]
        gg = 0.0
        for i in range(4):
            gg += grad[i] * grad[i]
        for i in range(4):
            x[i] -= g / gg * grad[i]


cdef void _integrate_one(int dim, const double[:, ::1] b, const double[:, :, ::1] A,
                         double* x, double* p, const double[::1] times, double step,
                         int proj, double[:, ::1] xs, double[:, ::1] ps) noexcept nogil:
    cdef double k1x[MAXD], k2x[MAXD], k3x[MAXD], k4x[MAXD]
    cdef double k1p[MAXD], k2p[MAXD], k3p[MAXD], k4p[MAXD]
    cdef double tx[MAXD], tp[MAXD]
    cdef double t = 0.0, dt, hstep
    cdef int m, s, nsub, i
    for m in range(times.shape[0]):
        dt = times[m] - t
        nsub = 0
        if dt != 0.0:
            nsub = <int>ceil(fabs(dt) / step - 1e-9)
            if nsub < 1:
                nsub = 1
        for s in range(nsub):
            hstep = dt / nsub
            _rhs(dim, b, A, x, p, k1x, k1p)
            for i in range(dim):
                tx[i] = x[i] + 0.5 * hstep * k1x[i]
                tp[i] = p[i] + 0.5 * hstep * k1p[i]
            _rhs(dim, b, A, tx, tp, k2x, k2p)
            for i in range(dim):
                tx[i] = x[i] + 0.5 * hstep * k2x[i]
                tp[i] = p[i] + 0.5 * hstep * k2p[i]
            _rhs(dim, b, A, tx, tp, k3x, k3p)
            for i in range(dim):
                tx[i] = x[i] + hstep * k3x[i]
                tp[i] = p[i] + hstep * k3p[i]
            _rhs(dim, b, A, tx, tp, k4x, k4p)
            for i in range(dim):
                x[i] += hstep / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
                p[i] += hstep / 6.0 * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i])
            _project(dim, proj, x)
        t = times[m]
        for i in range(dim):
            xs[m, i] = x[i]
            ps[m, i] = p[i]


def rk4_affine(b, A, x0, p0, times, double step, int proj=0):
    """Integrate n extremals; returns xs, ps of shape (n, len(times), dim).

    b (2, dim) and A (2, dim, dim) describe X1, X2.  proj: 0 none, 1 unit
    sphere, 2 the quadric xw - yz = 1.  Times are visited in order from t = 0.
    """
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] xv = np.array(x0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] pv = np.array(p0, dtype=np.float64, order="C", copy=True)
    cdef const double[::1] tv = np.ascontiguousarray(times, dtype=np.float64)
    cdef int n = xv.shape[0], dim = xv.shape[1], m = tv.shape[0], k
    if dim > MAXD:
        raise ValueError("dimension above 4 is not supported")
    if step <= 0:
        raise ValueError("step must be positive")
    xs = np.empty((n, m, dim))
    ps = np.empty((n, m, dim))
    cdef double[:, :, ::1] xsv = xs
    cdef double[:, :, ::1] psv = ps
    with nogil:
        for k in range(n):
            _integrate_one(dim, bv, Av, &xv[k, 0], &pv[k, 0], tv, step, proj, xsv[k], psv[k])
    return xs, ps
