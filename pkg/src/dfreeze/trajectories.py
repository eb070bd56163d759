"""Quantum-jump unraveling of the master equation.

Every trajectory is simulated in the S_x eigenbasis (index k <-> m = -J + k).
On the line theta = pi/4 the effective Hamiltonian and jump operator are
exactly diagonal there, and the diagonal kernel is used; elsewhere the dense
kernel applies the precomputed step propagator exp(-i H_eff dt).

Seeds: trajectory ``i`` of an ensemble with master seed ``s`` uses
``child_seed(s, i)``, the first 64-bit word of ``SeedSequence(s,
spawn_key=(i,))``. The trajectory's generator is ``default_rng(child_seed)``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import NumericalError, StepSizeError, TrajectoryError, ValidationError
from .spin import ModelParams, build_spin_operators, jump_operator, sector_rate


@dataclass(frozen=True)
class TrajectoryConfig:
    params: ModelParams
    tFinal: float
    dt: float
    sampleEvery: int = 100
    seed: int = 0
    maxJumpProb: float = 0.01
    store: str = "populations"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.tFinal >= 0:
            raise ValidationError("tFinal must be non-negative")
        if not 0 < self.maxJumpProb <= 0.1:
            raise ValidationError("maxJumpProb must lie in (0, 0.1]")
        if int(self.sampleEvery) < 1:
            raise ValidationError("sampleEvery must be a positive number of steps")
        if self.store not in ("populations", "states"):
            raise ValidationError("store must be 'populations' or 'states'")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        nsteps = round(self.tFinal / self.dt)
        if abs(nsteps * self.dt - self.tFinal) > 1e-9 * max(1.0, self.tFinal):
            raise ValidationError("tFinal must be an integer multiple of dt")

    @property
    def nsteps(self) -> int:
        return int(round(self.tFinal / self.dt))

    def snapshot_steps(self) -> np.ndarray:
        steps = list(range(0, self.nsteps + 1, int(self.sampleEvery)))
        if steps[-1] != self.nsteps:
            steps.append(self.nsteps)
        return np.array(steps, dtype=np.int64)

    def replace(self, **changes) -> "TrajectoryConfig":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return TrajectoryConfig(**kw)


@dataclass
class TrajectoryRecord:
    """One realisation. ``snapshots[i]`` is taken at ``times[i]``.

    For ``store="populations"`` a snapshot holds the S_x-basis populations
    ordered m = -J..J; for ``store="states"`` it holds the S_z-basis state.
    """

    seed: int
    jumpTimes: np.ndarray
    n: int
    times: np.ndarray
    snapshots: np.ndarray = field(repr=False)
    finalState: np.ndarray = field(repr=False)
    store: str = "populations"
    initialIndex: int = -1

    def sx_populations(self, ops=None) -> np.ndarray:
        if self.store == "populations":
            return self.snapshots
        V = ops.sxBasis
        return np.abs(self.snapshots @ V.conj()) ** 2


def effective_hamiltonian(params: ModelParams) -> np.ndarray:
    """H_eff = Omega S_x - (i/2) L^dag L with L = sqrt(Gamma/J) D_theta (S_z basis)."""
    ops = build_spin_operators(params)
    L = jump_operator(params, ops)
    return params.Omega * ops.Sx - 0.5j * (L.conj().T @ L)


def jump_rate_bound(params: ModelParams) -> float:
    """Largest eigenvalue of L^dag L, the maximal instantaneous jump rate."""
    if params.is_symmetric:
        return sector_rate(params) * params.J
    L = jump_operator(params)
    return float(np.linalg.eigvalsh(L.conj().T @ L)[-1])


def suggest_dt(params: ModelParams, maxJumpProb: float = 0.01, safety: float = 0.5, unit: float = 1.0) -> float:
    """Largest step dividing ``unit`` with dt * max rate <= safety * maxJumpProb."""
    rate = jump_rate_bound(params)
    if rate == 0:
        return unit / 100
    return unit / math.ceil(unit * rate / (safety * maxJumpProb))


@dataclass(frozen=True)
class _Propagators:
    diagonal: bool
    U: np.ndarray
    L: np.ndarray
    LdL: np.ndarray
    V: np.ndarray  # S_z-basis columns of the working basis


@lru_cache(maxsize=32)
def _propagators(params: ModelParams, dt: float) -> _Propagators:
    ops = build_spin_operators(params)
    V = ops.sxBasis
    if params.is_symmetric:
        m = ops.sxEigs
        kappa = sector_rate(params)
        rate = kappa * m**2 / params.J
        h = params.Omega * m - 0.5j * rate
        U = np.exp(-1j * h * dt)
        L = np.sqrt(kappa / params.J) * m + 0j
        return _Propagators(True, U, L, rate.astype(float), V)
    L = ops.to_sx_basis(jump_operator(params, ops))
    Heff = ops.to_sx_basis(effective_hamiltonian(params))
    U = sla.expm(-1j * Heff * dt)
    LdL = L.conj().T @ L
    return _Propagators(False, np.ascontiguousarray(U), np.ascontiguousarray(L), np.ascontiguousarray(LdL), V)


def child_seed(master: int, index: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _draw_initial(initial: np.ndarray, dim: int, rng: np.random.Generator):
    """Return (S_z-basis pure state, component index); mixtures are sampled."""
    a = np.asarray(initial, dtype=complex)
    if a.shape == (dim,):
        nrm = np.linalg.norm(a)
        if abs(nrm - 1) > 1e-10:
            raise ValidationError(f"initial state norm is {nrm:.12g}, expected 1")
        return a.copy(), -1
    if a.shape == (dim, dim):
        w, vecs = np.linalg.eigh(0.5 * (a + a.conj().T))
        w = np.clip(w, 0, None)
        if abs(w.sum() - 1) > 1e-10:
            raise ValidationError("initial density matrix must have unit trace")
        k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        k = min(k, dim - 1)
        return vecs[:, k].copy(), k
    raise ValidationError(f"initial state has shape {a.shape}; expected ({dim},) or ({dim}, {dim})")


def run_trajectory(config: TrajectoryConfig, psi0: np.ndarray, backend: str | None = None) -> TrajectoryRecord:
    """Simulate one trajectory.

    ``psi0`` is an S_z-basis state vector, or a density matrix whose spectral
    decomposition is sampled to pick the starting pure state.
    """
    p = config.params
    d = p.dim
    rng = np.random.default_rng(int(config.seed))
    psi_z, k0 = _draw_initial(psi0, d, rng)
    prop = _propagators(p, float(config.dt))
    kern = kernels if backend is None else kernels.get_backend(backend)
    psi = np.ascontiguousarray(prop.V.conj().T @ psi_z)

    snap_steps = config.snapshot_steps()
    times = snap_steps * config.dt
    if config.store == "populations":
        snaps = np.empty((snap_steps.size, d))
    else:
        snaps = np.empty((snap_steps.size, d), dtype=complex)

    def take(i):
        if config.store == "populations":
            snaps[i] = psi.real**2 + psi.imag**2
        else:
            snaps[i] = prop.V @ psi

    take(0)
    jump_steps = []
    buf = np.empty(max(1, int(config.sampleEvery)), dtype=np.int64)
    for i in range(1, snap_steps.size):
        start, stop = int(snap_steps[i - 1]), int(snap_steps[i])
        uniforms = rng.random(stop - start)
        if buf.size < uniforms.size:
            buf = np.empty(uniforms.size, dtype=np.int64)
        if prop.diagonal:
            nj, status, fail = kern.propagate_diagonal(
                psi, prop.U, prop.L, prop.LdL, config.dt, config.maxJumpProb, uniforms, buf
            )
        else:
            nj, status, fail = kern.propagate_dense(
                psi, prop.U, prop.L, prop.LdL, config.dt, config.maxJumpProb, uniforms, buf
            )
        if status == 1:
            raise StepSizeError(
                f"jump probability exceeded {config.maxJumpProb} at t={(start + fail) * config.dt:.6g}; reduce dt"
            )
        if status == 2:
            raise NumericalError(f"state norm vanished or overflowed at t={(start + fail) * config.dt:.6g}")
        jump_steps.extend((start + buf[:nj] + 1).tolist())
        take(i)

    jt = np.array(jump_steps, dtype=np.int64) * config.dt
    return TrajectoryRecord(
        seed=int(config.seed),
        jumpTimes=jt,
        n=len(jump_steps),
        times=times,
        snapshots=snaps,
        finalState=prop.V @ psi,
        store=config.store,
        initialIndex=k0,
    )


@dataclass
class EnsembleSummary:
    """Ensemble means and standard errors of observables versus time."""

    times: np.ndarray
    mean: dict = field(default_factory=dict, repr=False)
    stderr: dict = field(default_factory=dict, repr=False)
    mean_rho: np.ndarray | None = field(default=None, repr=False)


@dataclass
class EnsembleResult:
    records: list
    summary: EnsembleSummary

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.n for r in self.records], dtype=np.int64)

    def __len__(self):
        return len(self.records)


def _mean_se(x: np.ndarray):
    n = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def summarize(records, params: ModelParams) -> EnsembleSummary:
    """Order-independent reduction of a list of records indexed by trajectory."""
    ops = build_spin_operators(params)
    m = ops.sxEigs
    times = records[0].times
    summary = EnsembleSummary(times)
    if records[0].store == "populations":
        pops = np.stack([r.snapshots for r in records])
    else:
        states = np.stack([r.snapshots for r in records])  # (n, t, d)
        pops = np.abs(states @ ops.sxBasis.conj()) ** 2
        summary.mean_rho = np.einsum("ntk,ntl->tkl", states, states.conj()) / len(records)
        for name, op in (("Sx", ops.Sx), ("Sy", ops.Sy), ("Sz", ops.Sz)):
            vals = np.einsum("ntk,kl,ntl->nt", states.conj(), op, states).real
            summary.mean[name], summary.stderr[name] = _mean_se(vals)
    summary.mean["populations"], summary.stderr["populations"] = _mean_se(pops)
    if "Sx" not in summary.mean:
        summary.mean["Sx"], summary.stderr["Sx"] = _mean_se(pops @ m)
    summary.mean["Sx2"], summary.stderr["Sx2"] = _mean_se(pops @ m**2)
    return summary


def run_ensemble(
    config: TrajectoryConfig,
    psi0: np.ndarray,
    nTraj: int,
    threads: int = 1,
    backend: str | None = None,
) -> EnsembleResult:
    """Run ``nTraj`` independent trajectories with per-index child seeds.

    Results do not depend on ``threads``: every trajectory owns its generator
    and the reduction runs over records in index order.
    """
    if int(nTraj) < 1:
        raise ValidationError("nTraj must be at least 1")
    workers = (os.cpu_count() or 1) if threads == 0 else max(1, int(threads))
    _propagators(config.params, float(config.dt))  # build once before fan-out

    def one(i):
        try:
            return run_trajectory(config.replace(seed=child_seed(config.seed, i)), psi0, backend)
        except ValidationError:
            raise
        except Exception as exc:
            raise TrajectoryError(i, exc) from exc

    if workers == 1:
        records = [one(i) for i in range(int(nTraj))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(int(nTraj))))
    return EnsembleResult(records, summarize(records, config.params))
