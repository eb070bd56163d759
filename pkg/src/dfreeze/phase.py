"""Steady-state order parameters across the (Omega, theta) plane."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DfreezeError, ValidationError
from .liouvillian import build_liouvillian, evolve_density, spectrum, unique_steady_state, vec
from .spin import ModelParams, SpinOperators, build_spin_operators

NEAR_DEGENERATE = 1e-6  # |Re adr| below this (units of Gamma) is treated as a closing gap
UNDEFINED_ALIGNMENT = 1e-8  # |<S>|^2 / J^2 below this leaves squeezing undefined
RESIDUAL_TOL = 1e-8
GAP_RESOLUTION = 1e-12  # relative to ||L||_F


def critical_line(theta, Gamma: float = 1.0):
    """Omega_c(theta) = Gamma (cos^2 theta - sin^2 theta)."""
    return Gamma * np.cos(2 * np.asarray(theta, dtype=float))


def _expect(rho, op) -> float:
    return float(np.trace(rho @ op).real)


def magnetization(rho: np.ndarray, ops: SpinOperators) -> float:
    J = (ops.dim - 1) / 2
    return _expect(rho, ops.Sz) / J


def spin_squeezing(rho: np.ndarray, ops: SpinOperators) -> float:
    """N Var(S_perp) / |<S>|^2 with S_perp = S_x, or NaN when the mean spin nearly vanishes."""
    J = (ops.dim - 1) / 2
    mean2 = sum(_expect(rho, op) ** 2 for op in (ops.Sx, ops.Sy, ops.Sz))
    if mean2 < UNDEFINED_ALIGNMENT * J * J:
        return math.nan
    sx = _expect(rho, ops.Sx)
    var = _expect(rho, ops.Sx @ ops.Sx) - sx * sx
    return 2 * J * var / mean2


@dataclass
class PhasePoint:
    Omega: float
    theta: float
    Mz: float = math.nan
    xi2: float = math.nan
    purity: float = math.nan
    meanSpinNorm: float = math.nan
    adr: complex = complex("nan")
    flags: tuple = ()
    error: str | None = None
    rho: np.ndarray | None = field(default=None, repr=False)

    @property
    def squeezing_defined(self) -> bool:
        return not math.isnan(self.xi2)


def _default_initial(ops: SpinOperators) -> np.ndarray:
    J = (ops.dim - 1) / 2
    psi = ops.sz_state(-J)
    return np.outer(psi, psi.conj())


def _solve_point(params: ModelParams, rho0: np.ndarray, keep_rho: bool) -> PhasePoint:
    ops = build_spin_operators(params)
    point = PhasePoint(params.Omega, params.theta)
    flags = []
    if params.is_symmetric:
        # every S_x projector is conserved, so the long-time state is the
        # initial state dephased in the S_x basis
        V = ops.sxBasis
        r = V.conj().T @ rho0 @ V
        rho = V @ np.diag(np.diag(r)) @ V.conj().T
        point.adr = 0j
        flags.append("symmetry-line")
    else:
        L = build_liouvillian(params)
        sp = spectrum(L)
        point.adr = sp.adr
        gap = abs(sp.adr.real)
        if gap < NEAR_DEGENERATE * params.Gamma:
            # a gap below the eigensolver's resolution is noise (possibly of
            # either sign); evolving for 1/noise would amplify it
            floor = GAP_RESOLUTION * np.linalg.norm(L.mat)
            if gap < floor:
                flags.append("gap-unresolved")
            t = 20 * max(1.0 / max(gap, floor), params.J / params.Gamma)
            rho = evolve_density(L, rho0, t)
            rho = rho / np.trace(rho).real
            if np.linalg.eigvalsh(rho)[0] < -1e-8:
                raise DfreezeError("long-time evolution lost positivity")
            flags.append("near-degenerate")
        else:
            rho = unique_steady_state(L)
            res = np.linalg.norm(L.mat @ vec(rho))
            if res > RESIDUAL_TOL * params.Gamma:
                flags.append("residual")
    point.Mz = magnetization(rho, ops)
    point.xi2 = spin_squeezing(rho, ops)
    point.purity = float(np.trace(rho @ rho).real)
    point.meanSpinNorm = math.sqrt(sum(_expect(rho, op) ** 2 for op in (ops.Sx, ops.Sy, ops.Sz)))
    if math.isnan(point.xi2):
        flags.append("squeezing-undefined")
    point.flags = tuple(flags)
    if keep_rho:
        point.rho = rho
    return point


def scan(
    omegas,
    thetas,
    J: float,
    Gamma: float = 1.0,
    initial: np.ndarray | None = None,
    keep_rho: bool = False,
) -> list[PhasePoint]:
    """Order parameters on the grid, Omega-major.

    ``initial`` (S_z basis, vector or density matrix) fixes the branch on
    the symmetry line and for nearly closed gaps; it defaults to |J, -J>.
    A failing point is reported in its row rather than aborting the scan.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    ops = build_spin_operators(ModelParams(J=J, Omega=0.0, theta=0.0, Gamma=Gamma))
    if initial is None:
        rho0 = _default_initial(ops)
    else:
        initial = np.asarray(initial, dtype=complex)
        rho0 = np.outer(initial, initial.conj()) if initial.ndim == 1 else initial
        if rho0.shape != (ops.dim, ops.dim):
            raise ValidationError("initial state has the wrong dimension")
    out = []
    for W in omegas:
        for th in thetas:
            try:
                params = ModelParams(J=J, Omega=float(W), theta=float(th), Gamma=Gamma)
                out.append(_solve_point(params, rho0, keep_rho))
            except DfreezeError as exc:
                out.append(PhasePoint(float(W), float(th), error=f"{type(exc).__name__}: {exc}"))
    return out
