"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and in-place semantics; used when the extension is not built
or when ``BHDIMER_PURE=1`` is set.
"""

import numpy as np


def _cheb_apply(psi, diag, offd, center, radius, coeffs):
    inv = 1.0 / radius
    d = (diag - center) * inv
    e = offd * inv

    def hs(x):
        y = d[:, None] * x
        y[:-1] += e[:, None] * x[1:]
        y[1:] += e[:, None] * x[:-1]
        return y

    prev = psi.copy()
    acc = coeffs[0] * prev
    if len(coeffs) == 1:
        psi[...] = acc
        return
    cur = hs(prev)
    acc += coeffs[1] * cur
    for c in coeffs[2:]:
        nxt = 2.0 * hs(cur) - prev
        acc += c * nxt
        prev, cur = cur, nxt
    psi[...] = acc


def cf4_steps(psi, diag0, pdiag, offd, delta_start, delta_slope, dt, nsteps,
              center, radius, coeffs):
    coeffs = np.asarray(coeffs)
    for step in range(nsteps):
        for frac in (1.0 / 6.0, 5.0 / 6.0):
            d = delta_start + delta_slope * dt * (step + frac)
            _cheb_apply(psi, diag0 + d * pdiag, offd, center, radius, coeffs)


def _mf_rhs(a1, a2, U, om, d):
    g1 = -0.5 * om * a2 + (U * (a1.real**2 + a1.imag**2) + 0.5 * d) * a1
    g2 = -0.5 * om * a1 + (U * (a2.real**2 + a2.imag**2) - 0.5 * d) * a2
    return -1j * g1, -1j * g2


def rk4_mean_field(a1, a2, U, omega, delta_start, delta_slope, dt, nsteps):
    x1 = np.array(a1)
    x2 = np.array(a2)
    for s in range(nsteps):
        d0 = delta_start + delta_slope * dt * s
        dm = d0 + 0.5 * delta_slope * dt
        d1 = d0 + delta_slope * dt
        k11, k12 = _mf_rhs(x1, x2, U, omega, d0)
        k21, k22 = _mf_rhs(x1 + 0.5 * dt * k11, x2 + 0.5 * dt * k12, U, omega, dm)
        k31, k32 = _mf_rhs(x1 + 0.5 * dt * k21, x2 + 0.5 * dt * k22, U, omega, dm)
        k41, k42 = _mf_rhs(x1 + dt * k31, x2 + dt * k32, U, omega, d1)
        x1 = x1 + dt / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
        x2 = x2 + dt / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
    a1[...] = x1
    a2[...] = x2


def cascade(prob, lower, pswap):
    # works for any element type supporting + - *, including Fraction
    for i, P in zip(lower, pswap):
        a, b = prob[i], prob[i + 1]
        prob[i] = a + P * (b - a)
        prob[i + 1] = b - P * (b - a)
