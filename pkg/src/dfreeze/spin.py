"""Collective spin operators for the maximal-J sector.

Matrices are stored in the S_z basis ordered |J, J>, |J, J-1>, ..., |J, -J>,
so that for J = 1/2 the first basis vector is spin up. The S_x eigenbasis is
computed once per J and cached.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NumericalError, ValidationError

#: |theta - pi/4| below this selects the symmetry-exact code paths.
SYMMETRY_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    """Parameters (J, Omega, Gamma, theta) of the squeezed-superradiance model.

    Rates and times are in units where Gamma sets the scale; Omega is an
    absolute drive amplitude, not a ratio.
    """

    J: float
    Omega: float
    theta: float
    Gamma: float = 1.0

    def __post_init__(self):
        two_j = 2.0 * self.J
        if not math.isfinite(two_j) or abs(two_j - round(two_j)) > 1e-9:
            raise ValidationError(f"J must be a half-integer, got {self.J!r}")
        if round(two_j) < 1:
            raise ValidationError(f"J must be at least 1/2, got {self.J!r}")
        object.__setattr__(self, "J", round(two_j) / 2.0)
        if not (self.Gamma > 0 and math.isfinite(self.Gamma)):
            raise ValidationError(f"Gamma must be positive, got {self.Gamma!r}")
        if not (self.Omega >= 0 and math.isfinite(self.Omega)):
            raise ValidationError(f"Omega must be non-negative, got {self.Omega!r}")
        if not (-SYMMETRY_TOL <= self.theta <= math.pi / 2 + SYMMETRY_TOL):
            raise ValidationError(f"theta must lie in [0, pi/2], got {self.theta!r}")

    @property
    def N(self) -> int:
        return int(round(2 * self.J))

    @property
    def dim(self) -> int:
        return self.N + 1

    @property
    def is_symmetric(self) -> bool:
        """True on the strong-symmetry line theta = pi/4."""
        return abs(self.theta - math.pi / 4) <= SYMMETRY_TOL

    def replace(self, **changes) -> "ModelParams":
        fields = {"J": self.J, "Omega": self.Omega, "theta": self.theta, "Gamma": self.Gamma}
        fields.update(changes)
        return ModelParams(**fields)


@dataclass(frozen=True)
class SpinOperators:
    dim: int
    Sz: np.ndarray
    Sp: np.ndarray
    Sm: np.ndarray
    Sx: np.ndarray
    Sy: np.ndarray
    Dtheta: np.ndarray
    sxBasis: np.ndarray = field(repr=False)
    sxEigs: np.ndarray = field(repr=False)

    def to_sx_basis(self, op: np.ndarray) -> np.ndarray:
        """Express an S_z-basis operator in the S_x eigenbasis."""
        V = self.sxBasis
        return V.conj().T @ op @ V

    def sx_state(self, m: float) -> np.ndarray:
        """S_z-basis components of the S_x eigenstate with eigenvalue m."""
        idx = int(np.argmin(np.abs(self.sxEigs - m)))
        if abs(self.sxEigs[idx] - m) > 1e-9:
            raise ValidationError(f"{m!r} is not an S_x eigenvalue for J={(self.dim - 1) / 2}")
        return self.sxBasis[:, idx].copy()

    def sz_state(self, m: float) -> np.ndarray:
        J = (self.dim - 1) / 2
        i = J - m
        if abs(i - round(i)) > 1e-9 or not 0 <= round(i) < self.dim:
            raise ValidationError(f"{m!r} is not an S_z eigenvalue for J={J}")
        psi = np.zeros(self.dim, dtype=complex)
        psi[int(round(i))] = 1.0
        return psi


@lru_cache(maxsize=64)
def _ladder(two_j: int):
    J = two_j / 2
    m = J - np.arange(two_j + 1)
    Sz = np.diag(m).astype(complex)
    Sp = np.zeros((two_j + 1, two_j + 1), dtype=complex)
    # <m+1|S+|m> sits one row above the column of m
    for i in range(1, two_j + 1):
        mi = m[i]
        Sp[i - 1, i] = math.sqrt(J * (J + 1) - mi * (mi + 1))
    Sm = Sp.conj().T.copy()
    Sx = 0.5 * (Sp + Sm)
    Sy = -0.5j * (Sp - Sm)
    return tuple(_readonly(a) for a in (Sz, Sp, Sm, Sx, Sy))


@lru_cache(maxsize=64)
def _sx_eigensystem(two_j: int):
    Sx = _ladder(two_j)[3]
    eigs, vecs = np.linalg.eigh(Sx)
    if two_j > 0 and np.min(np.diff(eigs)) < 1e-8:
        raise NumericalError("S_x eigenvalues collide; cannot index eigenstates by m")
    # phase convention: largest-magnitude component real and positive
    for k in range(vecs.shape[1]):
        v = vecs[:, k]
        j = int(np.argmax(np.abs(v)))
        vecs[:, k] = v * (abs(v[j]) / v[j])
    # eigenvalues are exactly -J..J; remove solver noise
    exact = np.arange(two_j + 1) - two_j / 2
    if np.max(np.abs(eigs - exact)) > 1e-8:
        raise NumericalError("S_x spectrum deviates from -J..J")
    return _readonly(vecs.astype(complex)), _readonly(exact.astype(float))


def build_spin_operators(params: ModelParams) -> SpinOperators:
    """Collective spin matrices, the squeezed jump operator and the S_x eigenbasis."""
    two_j = params.N
    Sz, Sp, Sm, Sx, Sy = _ladder(two_j)
    c, s = math.cos(params.theta), math.sin(params.theta)
    if params.is_symmetric:
        c = s = math.sqrt(0.5)
    D = _readonly(c * Sm + s * Sp)
    V, eigs = _sx_eigensystem(two_j)
    return SpinOperators(two_j + 1, Sz, Sp, Sm, Sx, Sy, D, V, eigs)


def hamiltonian(params: ModelParams, ops: SpinOperators | None = None) -> np.ndarray:
    ops = ops or build_spin_operators(params)
    return params.Omega * ops.Sx


def jump_operator(params: ModelParams, ops: SpinOperators | None = None) -> np.ndarray:
    """Single jump operator L = sqrt(Gamma/J) * D_theta."""
    ops = ops or build_spin_operators(params)
    return math.sqrt(params.Gamma / params.J) * ops.Dtheta


def sector_rate(params: ModelParams) -> float:
    """Rate kappa with L = sqrt(kappa/J) * S_x on the symmetry line.

    D_{pi/4} = sqrt(2) S_x, so kappa = Gamma (cos theta + sin theta)^2 = 2 Gamma.
    An S_x eigenstate |m> then emits at rate kappa m^2 / J.
    """
    if not params.is_symmetric:
        raise ValidationError("sector rate is defined only on the line theta = pi/4")
    return 2.0 * params.Gamma


@dataclass(frozen=True)
class SymmetryCheck:
    is_symmetry: bool
    hamiltonian_residual: float
    jump_residual: float
    tol: float

    def __bool__(self):
        return self.is_symmetry


def check_strong_symmetry(params: ModelParams, candidate: np.ndarray) -> SymmetryCheck:
    """Test whether ``candidate`` commutes with both H and L (Frobenius norms)."""
    A = np.asarray(candidate, dtype=complex)
    if A.shape != (params.dim, params.dim):
        raise ValidationError(f"candidate has shape {A.shape}, expected {(params.dim, params.dim)}")
    ops = build_spin_operators(params)
    H = hamiltonian(params, ops)
    L = jump_operator(params, ops)
    rh = float(np.linalg.norm(H @ A - A @ H))
    rl = float(np.linalg.norm(L @ A - A @ L))
    tol = 1e-10 * float(np.linalg.norm(A)) * max(np.linalg.norm(H), np.linalg.norm(L))
    return SymmetryCheck(bool(rh <= tol and rl <= tol), rh, rl, float(tol))
