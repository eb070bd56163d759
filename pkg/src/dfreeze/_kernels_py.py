"""Pure-Python step loops, used when the compiled extension is unavailable.

One uniform variate is consumed per step. With psi normalised, the jump
probability of the step is dp = dt <psi|L^dag L|psi>; the step jumps
(psi <- L psi) if the uniform is below dp and otherwise applies the
non-Hermitian propagator (psi <- U psi). psi is renormalised after every step.

Return value of both functions: ``(n_jumps, status, fail_step)`` with status
0 on success, 1 when dp exceeded ``cap`` and 2 when the norm became zero or
non-finite. Jump step indices are written to ``jumps[:n_jumps]``.
"""
import math

import numpy as np


def propagate_dense(psi, U, L, LdL, dt, cap, uniforms, jumps):
    nj = 0
    for i, r in enumerate(uniforms):
        dp = dt * np.vdot(psi, LdL @ psi).real
        if dp > cap:
            return nj, 1, i
        if r < dp:
            phi = L @ psi
            jumps[nj] = i
            nj += 1
        else:
            phi = U @ psi
        nrm = np.vdot(phi, phi).real
        if not (nrm > 0.0 and math.isfinite(nrm)):
            return nj, 2, i
        psi[:] = phi / math.sqrt(nrm)
    return nj, 0, -1


def propagate_diagonal(psi, u, l, ldl, dt, cap, uniforms, jumps):
    nj = 0
    for i, r in enumerate(uniforms):
        dp = dt * float(np.dot(ldl, psi.real**2 + psi.imag**2))
        if dp > cap:
            return nj, 1, i
        if r < dp:
            phi = l * psi
            jumps[nj] = i
            nj += 1
        else:
            phi = u * psi
        nrm = np.vdot(phi, phi).real
        if not (nrm > 0.0 and math.isfinite(nrm)):
            return nj, 2, i
        psi[:] = phi / math.sqrt(nrm)
    return nj, 0, -1
