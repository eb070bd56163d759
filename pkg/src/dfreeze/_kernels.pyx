"""Compiled step loops for quantum-jump trajectories.

Complex arrays are reinterpreted as interleaved float64 so the inner loops use
plain real arithmetic. Semantics match ``_kernels_py`` exactly.
"""
import numpy as np
from libc.math cimport sqrt, isfinite


cdef int _dense_loop(double[::1] psi, const double[:, ::1] U, const double[:, ::1] L,
                     const double[:, ::1] LdL, double dt, double cap,
                     const double[::1] uniforms, long long[::1] jumps,
                     double[::1] tmp, Py_ssize_t* njumps, Py_ssize_t* fail) noexcept nogil:
    cdef Py_ssize_t d = psi.shape[0] // 2
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double ar, ai, pr, pi_, mr, mi, e, dp, nrm
    cdef const double* M
    cdef const double* Up = &U[0, 0]
    cdef const double* Lp = &L[0, 0]
    njumps[0] = 0
    for i in range(n):
        e = 0.0
        for j in range(d):
            ar = 0.0
            ai = 0.0
            for k in range(d):
                mr = LdL[j, 2 * k]
                mi = LdL[j, 2 * k + 1]
                pr = psi[2 * k]
                pi_ = psi[2 * k + 1]
                ar = ar + mr * pr - mi * pi_
                ai = ai + mr * pi_ + mi * pr
            e = e + psi[2 * j] * ar + psi[2 * j + 1] * ai
        dp = dt * e
        if dp > cap:
            fail[0] = i
            return 1
        if uniforms[i] < dp:
            M = Lp
            jumps[njumps[0]] = i
            njumps[0] += 1
        else:
            M = Up
        nrm = 0.0
        for j in range(d):
            ar = 0.0
            ai = 0.0
            for k in range(d):
                mr = M[2 * (j * d + k)]
                mi = M[2 * (j * d + k) + 1]
                pr = psi[2 * k]
                pi_ = psi[2 * k + 1]
                ar = ar + mr * pr - mi * pi_
                ai = ai + mr * pi_ + mi * pr
            tmp[2 * j] = ar
            tmp[2 * j + 1] = ai
            nrm = nrm + ar * ar + ai * ai
        if not (nrm > 0.0 and isfinite(nrm)):
            fail[0] = i
            return 2
        nrm = 1.0 / sqrt(nrm)
        for j in range(2 * d):
            psi[j] = tmp[j] * nrm
    fail[0] = -1
    return 0


cdef int _diag_loop(double[::1] psi, const double[::1] u, const double[::1] l,
                    const double[::1] ldl, double dt, double cap,
                    const double[::1] uniforms, long long[::1] jumps,
                    Py_ssize_t* njumps, Py_ssize_t* fail) noexcept nogil:
    cdef Py_ssize_t d = psi.shape[0] // 2
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t i, j
    cdef double pr, pi_, mr, mi, e, dp, nrm
    cdef const double* m
    cdef const double* up = &u[0]
    cdef const double* lp = &l[0]
    njumps[0] = 0
    for i in range(n):
        e = 0.0
        for j in range(d):
            e = e + ldl[j] * (psi[2 * j] * psi[2 * j] + psi[2 * j + 1] * psi[2 * j + 1])
        dp = dt * e
        if dp > cap:
            fail[0] = i
            return 1
        if uniforms[i] < dp:
            m = lp
            jumps[njumps[0]] = i
            njumps[0] += 1
        else:
            m = up
        nrm = 0.0
        for j in range(d):
            mr = m[2 * j]
            mi = m[2 * j + 1]
            pr = psi[2 * j]
            pi_ = psi[2 * j + 1]
            psi[2 * j] = mr * pr - mi * pi_
            psi[2 * j + 1] = mr * pi_ + mi * pr
            nrm = nrm + psi[2 * j] * psi[2 * j] + psi[2 * j + 1] * psi[2 * j + 1]
        if not (nrm > 0.0 and isfinite(nrm)):
            fail[0] = i
            return 2
        nrm = 1.0 / sqrt(nrm)
        for j in range(2 * d):
            psi[j] = psi[j] * nrm
    fail[0] = -1
    return 0


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.complex128).view(np.float64)


def propagate_dense(psi, U, L, LdL, double dt, double cap, uniforms, jumps):
    """Advance ``psi`` in place by ``len(uniforms)`` steps; see ``_kernels_py``."""
    cdef double[::1] p = psi.view(np.float64)
    cdef const double[:, ::1] u_ = _f64(U)
    cdef const double[:, ::1] l_ = _f64(L)
    cdef const double[:, ::1] q_ = _f64(LdL)
    cdef const double[::1] r = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef long long[::1] jb = jumps
    cdef double[::1] tmp = np.empty(p.shape[0])
    cdef Py_ssize_t nj = 0, fail = -1
    cdef int status
    with nogil:
        status = _dense_loop(p, u_, l_, q_, dt, cap, r, jb, tmp, &nj, &fail)
    return nj, status, fail


def propagate_diagonal(psi, u, l, ldl, double dt, double cap, uniforms, jumps):
    cdef double[::1] p = psi.view(np.float64)
    cdef const double[::1] u_ = _f64(u)
    cdef const double[::1] l_ = _f64(l)
    cdef const double[::1] q_ = np.ascontiguousarray(ldl, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef long long[::1] jb = jumps
    cdef Py_ssize_t nj = 0, fail = -1
    cdef int status
    with nogil:
        status = _diag_loop(p, u_, l_, q_, dt, cap, r, jb, &nj, &fail)
    return nj, status, fail
