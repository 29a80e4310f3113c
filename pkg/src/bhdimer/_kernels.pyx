# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`bhdimer._fallback` exactly."""

import numpy as np
cimport numpy as cnp

ctypedef double complex cplx


cdef inline void _hs_row(double[:, ::1] out, double[:, ::1] x, double[:, ::1] sub,
                         double[::1] dd, double[::1] ee, double scale, bint first,
                         double cr, double ci, double[:, ::1] acc,
                         Py_ssize_t n, Py_ssize_t w) noexcept nogil:
    """out = scale*Hs x (- sub unless first); acc += c*out.

    Rows hold interleaved (re, im) pairs, so Hs acts on 2m real columns and
    only the accumulation mixes the two parts.
    """
    cdef Py_ssize_t i, j, k
    cdef double di, el, er, vr, vi
    cdef double s2 = 0.0 if first else 1.0
    if w == 2 and n > 2:
        # single column: branch-free interior rows
        for i in range(1, n - 1):
            di = scale * dd[i]
            el = scale * ee[i - 1]
            er = scale * ee[i]
            vr = di * x[i, 0] + el * x[i - 1, 0] + er * x[i + 1, 0] - s2 * sub[i, 0]
            vi = di * x[i, 1] + el * x[i - 1, 1] + er * x[i + 1, 1] - s2 * sub[i, 1]
            out[i, 0] = vr
            out[i, 1] = vi
            acc[i, 0] = acc[i, 0] + cr * vr - ci * vi
            acc[i, 1] = acc[i, 1] + cr * vi + ci * vr
        for k in range(2):
            i = 0 if k == 0 else n - 1
            di = scale * dd[i]
            vr = di * x[i, 0] - s2 * sub[i, 0]
            vi = di * x[i, 1] - s2 * sub[i, 1]
            if i == 0:
                vr = vr + scale * ee[0] * x[1, 0]
                vi = vi + scale * ee[0] * x[1, 1]
            else:
                vr = vr + scale * ee[i - 1] * x[i - 1, 0]
                vi = vi + scale * ee[i - 1] * x[i - 1, 1]
            out[i, 0] = vr
            out[i, 1] = vi
            acc[i, 0] = acc[i, 0] + cr * vr - ci * vi
            acc[i, 1] = acc[i, 1] + cr * vi + ci * vr
        return
    for i in range(n):
        di = scale * dd[i]
        el = scale * ee[i - 1] if i > 0 else 0.0
        er = scale * ee[i] if i < n - 1 else 0.0
        for j in range(0, w, 2):
            vr = di * x[i, j]
            vi = di * x[i, j + 1]
            if i > 0:
                vr = vr + el * x[i - 1, j]
                vi = vi + el * x[i - 1, j + 1]
            if i < n - 1:
                vr = vr + er * x[i + 1, j]
                vi = vi + er * x[i + 1, j + 1]
            if not first:
                vr = vr - sub[i, j]
                vi = vi - sub[i, j + 1]
            out[i, j] = vr
            out[i, j + 1] = vi
            acc[i, j] = acc[i, j] + cr * vr - ci * vi
            acc[i, j + 1] = acc[i, j + 1] + cr * vi + ci * vr


cdef void _cheb_apply(double[:, ::1] psi, double[::1] dd, double[::1] ee,
                      const double[:, ::1] coeffs,
                      double[:, ::1] prev, double[:, ::1] cur, double[:, ::1] nxt,
                      double[:, ::1] acc) noexcept nogil:
    """psi <- sum_k coeffs[k] T_k(Hs) psi in place, Hs = tridiag(ee, dd, ee) scaled to [-1, 1]."""
    cdef Py_ssize_t n = psi.shape[0], w = psi.shape[1]
    cdef Py_ssize_t nterm = coeffs.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double cr = coeffs[0, 0], ci = coeffs[0, 1]
    cdef double[:, ::1] tmp

    for i in range(n):
        for j in range(0, w, 2):
            prev[i, j] = psi[i, j]
            prev[i, j + 1] = psi[i, j + 1]
            acc[i, j] = cr * psi[i, j] - ci * psi[i, j + 1]
            acc[i, j + 1] = cr * psi[i, j + 1] + ci * psi[i, j]
    if nterm > 1:
        _hs_row(cur, prev, prev, dd, ee, 1.0, True, coeffs[1, 0], coeffs[1, 1], acc, n, w)
    for k in range(2, nterm):
        _hs_row(nxt, cur, prev, dd, ee, 2.0, False, coeffs[k, 0], coeffs[k, 1], acc, n, w)
        tmp = prev
        prev = cur
        cur = nxt
        nxt = tmp
    psi[:, :] = acc


def cf4_steps(cplx[:, ::1] psi, double[::1] diag0, double[::1] pdiag,
              double[::1] offd, double delta_start, double delta_slope,
              double dt, Py_ssize_t nsteps, double center, double radius,
              const cplx[::1] coeffs):
    """Advance ``psi`` (dim x ncols) by ``nsteps`` fourth-order commutator-free
    Magnus steps. Detuning is ``delta_start + delta_slope * s`` at elapsed time s.
    ``coeffs`` are Chebyshev weights of exp(-i (dt/2) H) on [center - radius, center + radius]."""
    cdef Py_ssize_t n = psi.shape[0], m = psi.shape[1]
    cdef Py_ssize_t step, i, half
    cdef double d
    cdef double inv = 1.0 / radius
    cdef double[:, ::1] x = np.asarray(psi).view(np.float64)
    cdef double[:, ::1] cf = np.ascontiguousarray(np.asarray(coeffs)).view(np.float64).reshape(-1, 2)
    cdef double[::1] dd = np.empty(n)
    cdef double[::1] ee = np.zeros(max(n - 1, 1))
    cdef double[:, ::1] prev = np.empty((n, 2 * m))
    cdef double[:, ::1] cur = np.empty((n, 2 * m))
    cdef double[:, ::1] nxt = np.empty((n, 2 * m))
    cdef double[:, ::1] acc = np.empty((n, 2 * m))
    with nogil:
        for i in range(n - 1):
            ee[i] = offd[i] * inv
        for step in range(nsteps):
            for half in range(2):
                if half == 0:
                    d = delta_start + delta_slope * dt * (step + 1.0 / 6.0)
                else:
                    d = delta_start + delta_slope * dt * (step + 5.0 / 6.0)
                for i in range(n):
                    dd[i] = (diag0[i] + d * pdiag[i] - center) * inv
                _cheb_apply(x, dd, ee, cf, prev, cur, nxt, acc)


cdef inline void _mf_rhs(cplx a1, cplx a2, double U, double om, double d,
                         cplx* r1, cplx* r2) noexcept nogil:
    cdef double n1 = a1.real * a1.real + a1.imag * a1.imag
    cdef double n2 = a2.real * a2.real + a2.imag * a2.imag
    cdef cplx g1 = -0.5 * om * a2 + (U * n1 + 0.5 * d) * a1
    cdef cplx g2 = -0.5 * om * a1 + (U * n2 - 0.5 * d) * a2
    # multiply by -i
    r1[0] = g1.imag - 1j * g1.real
    r2[0] = g2.imag - 1j * g2.real


def rk4_mean_field(cplx[::1] a1, cplx[::1] a2, double U, double omega,
                   double delta_start, double delta_slope, double dt,
                   Py_ssize_t nsteps):
    """Classical RK4 on the mean-field amplitude equations, in place, for every trajectory."""
    cdef Py_ssize_t n = a1.shape[0]
    cdef Py_ssize_t i, s
    cdef double d0, dm, d1
    cdef cplx x1, x2, k11, k12, k21, k22, k31, k32, k41, k42
    with nogil:
        for i in range(n):
            x1 = a1[i]
            x2 = a2[i]
            for s in range(nsteps):
                d0 = delta_start + delta_slope * dt * s
                dm = d0 + 0.5 * delta_slope * dt
                d1 = d0 + delta_slope * dt
                _mf_rhs(x1, x2, U, omega, d0, &k11, &k12)
                _mf_rhs(x1 + 0.5 * dt * k11, x2 + 0.5 * dt * k12, U, omega, dm, &k21, &k22)
                _mf_rhs(x1 + 0.5 * dt * k21, x2 + 0.5 * dt * k22, U, omega, dm, &k31, &k32)
                _mf_rhs(x1 + dt * k31, x2 + dt * k32, U, omega, d1, &k41, &k42)
                x1 = x1 + dt / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
                x2 = x2 + dt / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
            a1[i] = x1
            a2[i] = x2


def cascade(double[::1] prob, const long[::1] lower, const double[::1] pswap):
    """Apply the doubly stochastic 2x2 mixes in order, in place."""
    cdef Py_ssize_t k, i
    cdef double a, b, P
    with nogil:
        for k in range(lower.shape[0]):
            i = lower[k]
            P = pswap[k]
            a = prob[i]
            b = prob[i + 1]
            prob[i] = a + P * (b - a)
            prob[i + 1] = b - P * (b - a)
