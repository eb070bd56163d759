"""Dense Liouvillian superoperators, spectra, steady states and time evolution.

Density matrices are vectorised by column stacking, ``vec(rho) =
rho.reshape(-1, order="F")``, so that ``vec(A rho B) = kron(B.T, A) @ vec(rho)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SpectrumError, SteadyStateError, StepSizeError, ValidationError
from .spin import ModelParams, build_spin_operators, hamiltonian, jump_operator

MAX_J = 25


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if dim is None:
        dim = math.isqrt(v.size)
    return v.reshape((dim, dim), order="F")


def spre(A: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> A rho."""
    return np.kron(np.eye(A.shape[0]), A)


def spost(B: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> rho B."""
    return np.kron(B.T, np.eye(B.shape[0]))


def sprepost(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> A rho B."""
    return np.kron(B.T, A)


def lindblad_generator(H: np.ndarray, Ls) -> np.ndarray:
    """-i[H, .] + sum_k (L rho L^dag - {L^dag L, rho}/2)."""
    out = -1j * (spre(H) - spost(H))
    for L in Ls:
        LdL = L.conj().T @ L
        out = out + sprepost(L, L.conj().T) - 0.5 * (spre(LdL) + spost(LdL))
    return out


@dataclass(frozen=True)
class Superoperator:
    dim: int
    mat: np.ndarray = field(repr=False)
    kind: str
    params: ModelParams | None = None

    @property
    def hilbert_dim(self) -> int:
        return math.isqrt(self.dim)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.mat @ vec(rho), self.hilbert_dim)


def build_liouvillian(params: ModelParams) -> Superoperator:
    if params.J > MAX_J:
        raise ValidationError(f"dense Liouvillian supports J <= {MAX_J}, got {params.J}")
    ops = build_spin_operators(params)
    mat = lindblad_generator(hamiltonian(params, ops), [jump_operator(params, ops)])
    mat.setflags(write=False)
    d = params.dim
    # trace preservation: vec(1)^T is a left null vector
    left = vec(np.eye(d)) @ mat
    if np.linalg.norm(left) > 1e-10 * np.linalg.norm(mat):
        raise SpectrumError("assembled Liouvillian is not trace preserving")
    return Superoperator(d * d, mat, "liouvillian", params)


def default_null_tol(superop: Superoperator) -> float:
    gamma = superop.params.Gamma if superop.params is not None else 1.0
    return 1e-8 * gamma


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray = field(repr=False)
    adr: complex
    tau: float
    nullDim: int
    nullTol: float


def _sorted_eigenvalues(mat: np.ndarray) -> np.ndarray:
    try:
        w = sla.eigvals(mat, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectrumError(f"dense eigensolver failed: {exc}") from exc
    order = np.lexsort((w.imag, -w.real))
    return w[order]


def spectrum(superop: Superoperator, nullTol: float | None = None) -> SpectrumResult:
    """Full dense spectrum sorted by descending real part, with gap and null dimension."""
    if superop.kind != "liouvillian":
        raise ValidationError("spectrum() expects an untilted Liouvillian")
    tol = default_null_tol(superop) if nullTol is None else nullTol
    w = _sorted_eigenvalues(superop.mat)
    if w[0].real > 1e-9 * np.linalg.norm(superop.mat):
        raise SpectrumError(f"growing mode with Re(lambda) = {w[0].real:.3e}")
    adr = complex(w[1]) if w.size > 1 else complex("nan")
    if w.size < 2 or abs(adr.real) < tol:
        tau = math.inf
    else:
        tau = -(1.0 / adr).real
    null_dim = int(np.sum(np.abs(w) < tol))
    return SpectrumResult(w, adr, tau, null_dim, tol)


def _hermitian_basis(mats, dim):
    """Orthonormal (Hilbert-Schmidt) Hermitian basis spanning ``mats`` and their adjoints."""
    herm = []
    for X in mats:
        herm.append(0.5 * (X + X.conj().T))
        herm.append(-0.5j * (X - X.conj().T))
    # real coordinates of Hermitian matrices
    R = np.array([np.concatenate([h.real.ravel(), h.imag.ravel()]) for h in herm]).T
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    rank = int(np.sum(s > 1e-8 * s[0]))
    out = []
    for k in range(rank):
        u = U[:, k]
        out.append(u[: dim * dim].reshape(dim, dim) + 1j * u[dim * dim :].reshape(dim, dim))
    return out


def _normalise_state(X: np.ndarray) -> np.ndarray:
    X = 0.5 * (X + X.conj().T)
    tr = np.trace(X).real
    if abs(tr) < 1e-10:
        raise SteadyStateError("null vector is traceless; cannot normalise to a state")
    return X / tr


def steady_states(
    superop: Superoperator,
    nullTol: float | None = None,
    symmetry: np.ndarray | None = None,
    rel_threshold: float = 1e-8,
) -> list[np.ndarray]:
    """Basis of the steady-state manifold as Hermitian, unit-trace, PSD matrices.

    The null space is taken from the singular vectors below ``rel_threshold``
    times the largest singular value. When it is degenerate the basis is
    rotated to diagonalise rho -> {A, rho}/2 for the symmetry operator A
    (S_x by default on the line theta = pi/4), which recovers the family of
    projectors onto eigenstates of A.
    """
    if superop.kind != "liouvillian":
        raise ValidationError("steady_states() expects an untilted Liouvillian")
    d = superop.hilbert_dim
    try:
        _, s, vh = np.linalg.svd(superop.mat)
    except np.linalg.LinAlgError as exc:
        raise SteadyStateError(f"SVD failed: {exc}") from exc
    null = vh[s < rel_threshold * s[0]].conj()
    if null.shape[0] == 0:
        raise SteadyStateError("Liouvillian has no null space within threshold")
    basis = _hermitian_basis([unvec(v, d) for v in null], d)
    if len(basis) == 1:
        states = [_normalise_state(basis[0])]
    else:
        if symmetry is None:
            p = superop.params
            if p is None or not p.is_symmetric:
                raise SteadyStateError(
                    f"{len(basis)}-dimensional null space and no symmetry operator to resolve it"
                )
            symmetry = build_spin_operators(p).Sx
        A = np.asarray(symmetry, dtype=complex)
        M = np.empty((len(basis), len(basis)))
        for j, Bj in enumerate(basis):
            act = 0.5 * (A @ Bj + Bj @ A)
            for i, Bi in enumerate(basis):
                M[i, j] = np.trace(Bi @ act).real
        _, coeffs = np.linalg.eigh(0.5 * (M + M.T))
        states = [_normalise_state(sum(c * B for c, B in zip(coeffs[:, k], basis))) for k in range(len(basis))]
    for rho in states:
        lo = np.linalg.eigvalsh(rho)[0]
        if lo < -1e-8:
            raise SteadyStateError(
                f"null space is not spanned by states (min eigenvalue {lo:.2e})"
            )
    return states


def unique_steady_state(superop: Superoperator) -> np.ndarray:
    """Steady state by a direct linear solve, assuming a one-dimensional null space.

    The equation for d(rho_00)/dt is replaced by the trace condition; this is
    valid because the diagonal rows of the Liouvillian sum to zero.
    """
    d = superop.hilbert_dim
    A = np.array(superop.mat, dtype=complex)
    A[0, :] = vec(np.eye(d))
    b = np.zeros(superop.dim, dtype=complex)
    b[0] = 1.0
    try:
        x = sla.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SteadyStateError(f"steady-state solve failed: {exc}") from exc
    rho = _normalise_state(unvec(x, d))
    return rho


def _check_density(rho: np.ndarray, dim: int, tol: float = 1e-10):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValidationError(f"density matrix has shape {rho.shape}, expected {(dim, dim)}")
    if np.linalg.norm(rho - rho.conj().T) > tol:
        raise ValidationError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValidationError("density matrix does not have unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -tol:
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


def _rk4(mat, v, t, dt):
    n = max(1, math.ceil(t / dt - 1e-12))
    h = t / n
    for _ in range(n):
        k1 = mat @ v
        k2 = mat @ (v + 0.5 * h * k1)
        k3 = mat @ (v + 0.5 * h * k2)
        k4 = mat @ (v + h * k3)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return v


def evolve_density(
    superop: Superoperator,
    rho0: np.ndarray,
    t: float,
    method: str = "expm",
    dt: float | None = None,
) -> np.ndarray:
    """rho(t) = exp(L t) rho0, by matrix exponential or fixed-step RK4.

    The RK4 route exists for cross-validation; a trace drift above 1e-8 means
    the step is too coarse and raises ``StepSizeError``.
    """
    d = superop.hilbert_dim
    rho0 = _check_density(rho0, d)
    if t < 0:
        raise ValidationError("t must be non-negative")
    if t == 0:
        return rho0.copy()
    v0 = vec(rho0)
    if method == "expm":
        v = sla.expm(superop.mat * t) @ v0
    elif method == "rk4":
        if dt is None or dt <= 0:
            raise ValidationError("rk4 evolution needs a positive dt")
        v = _rk4(superop.mat, v0, t, dt)
        drift = abs(np.trace(unvec(v, d)) - 1)
        if not np.isfinite(drift) or drift > 1e-8:
            raise StepSizeError(f"rk4 trace drift {drift:.2e} exceeds 1e-8; reduce dt")
    else:
        raise ValidationError(f"unknown evolution method {method!r}")
    rho = unvec(v, d)
    return 0.5 * (rho + rho.conj().T)


@dataclass(frozen=True)
class AnalyticSpectrum:
    entries: list  # (q, k, sign, lambda)
    gammaTheta: float
    chiTheta: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([e[3] for e in self.entries], dtype=complex)


def analytic_spectrum(params: ModelParams) -> AnalyticSpectrum:
    """Large-drive closed-form eigenvalues lambda_{q,k}^{+/-}."""
    G, J, W = params.Gamma, params.J, params.Omega
    if params.is_symmetric:
        g_theta, chi_theta = 2.0 * G, 0.0
    else:
        c, s = math.cos(params.theta), math.sin(params.theta)
        g_theta, chi_theta = G * (c + s) ** 2, G * (c - s) ** 2
    entries = []
    for q in range(params.N + 1):
        for k in range(params.N - q + 1):
            re = -g_theta / (2 * J) * q * q - chi_theta / (4 * J) * (q + k * (1 + k + 2 * q))
            signs = (1,) if q == 0 else (1, -1)
            for sgn in signs:
                entries.append((q, k, sgn, complex(re, sgn * q * W)))
    return AnalyticSpectrum(entries, g_theta, chi_theta)


@dataclass(frozen=True)
class MatchReport:
    numeric: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    max_distance: float

    @property
    def n_pairs(self) -> int:
        return self.distances.size


def match_analytic(numeric: SpectrumResult | np.ndarray, analytic: AnalyticSpectrum | np.ndarray) -> MatchReport:
    """Greedy nearest-neighbour pairing of two eigenvalue sets in the complex plane."""
    a = np.asarray(getattr(numeric, "eigenvalues", numeric), dtype=complex)
    b = np.asarray(getattr(analytic, "eigenvalues", analytic), dtype=complex)
    D = np.abs(a[:, None] - b[None, :])
    order = np.argsort(D, axis=None, kind="stable")
    used_a = np.zeros(a.size, bool)
    used_b = np.zeros(b.size, bool)
    ia, ib = [], []
    target = min(a.size, b.size)
    for flat in order:
        i, j = divmod(int(flat), b.size)
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        ia.append(i)
        ib.append(j)
        if len(ia) == target:
            break
    ia, ib = np.array(ia, int), np.array(ib, int)
    dist = D[ia, ib]
    return MatchReport(a[ia], b[ib], dist, float(dist.max()) if dist.size else 0.0)


def eq2_convergence(params: ModelParams, omegas) -> list[float]:
    """Maximum matched distance to the closed-form spectrum for each drive in ``omegas``."""
    out = []
    for W in omegas:
        p = params.replace(Omega=float(W))
        out.append(match_analytic(spectrum(build_liouvillian(p)), analytic_spectrum(p)).max_distance)
    return out
