"""Dissipative freezing: the closed-form sector distribution and trajectory diagnostics.

On the symmetry line a trajectory that has recorded n jumps by time t holds
S_x eigenstate |m> with probability proportional to

    exp(-kappa t m^2 / J) * (m^2)^n * |c_m(0)|^2,

kappa being the sector rate (``spin.sector_rate``). Written with
alpha = n J / (t kappa) this is (exp(-m^2) |m|^(2 alpha))^(t kappa / J).
Sectors are labelled by |m|, the eigenvalue of sqrt(S_x^2), because the
weights cannot tell +m from -m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .spin import ModelParams, build_spin_operators, sector_rate


def _m_values(dim: int) -> np.ndarray:
    J = (dim - 1) / 2
    return np.arange(dim) - J


def eigenspace_labels(dim: int) -> np.ndarray:
    """Distinct |m| values, ascending."""
    return np.unique(np.abs(_m_values(dim)))


def eigenspace_populations(pops: np.ndarray) -> np.ndarray:
    """Sum populations (last axis, m = -J..J) over each {+|m|, -|m|} pair."""
    pops = np.asarray(pops)
    absm = np.abs(_m_values(pops.shape[-1]))
    labels = np.unique(absm)
    return np.stack([pops[..., absm == a].sum(axis=-1) for a in labels], axis=-1)


@dataclass(frozen=True)
class FreezingDistribution:
    t: float
    n: int
    alpha: float
    probs: np.ndarray  # over m = -J..J
    mTilde: float
    m: np.ndarray = field(repr=False)

    def eigenspace_probs(self) -> dict:
        labels = eigenspace_labels(self.m.size)
        return dict(zip(labels.tolist(), eigenspace_populations(self.probs).tolist()))


def freezing_log_weights(c0, t, n, params: ModelParams, rate: float | None = None) -> np.ndarray:
    """Unnormalised log weights over m = -J..J."""
    c0 = np.asarray(c0, dtype=complex)
    if c0.shape != (params.dim,):
        raise ValidationError(f"c0 must have length {params.dim}")
    kappa = sector_rate(params) if rate is None else float(rate)
    m2 = _m_values(params.dim) ** 2
    with np.errstate(divide="ignore"):
        logc = np.log(np.abs(c0) ** 2)
        logm2 = np.where(m2 > 0, np.log(np.where(m2 > 0, m2, 1.0)), -np.inf)
    jump_term = np.zeros_like(m2) if n == 0 else n * logm2
    return -kappa * t * m2 / params.J + jump_term + logc


def freezing_probability(c0, t: float, n: int, params: ModelParams, rate: float | None = None) -> FreezingDistribution:
    """Probability of each S_x eigenstate after n jumps in time t.

    ``c0`` are the initial amplitudes over m = -J..J. ``rate`` overrides the
    sector rate kappa (default: the model's value on the symmetry line).
    """
    c0 = np.asarray(c0, dtype=complex)
    if abs(np.sum(np.abs(c0) ** 2) - 1) > 1e-10:
        raise ValidationError("initial amplitudes must be normalised")
    if not t > 0:
        raise ValidationError("t must be positive")
    if int(n) != n or n < 0:
        raise ValidationError("n must be a non-negative integer")
    n = int(n)
    kappa = sector_rate(params) if rate is None else float(rate)
    logw = freezing_log_weights(c0, t, n, params, kappa)
    if not np.any(np.isfinite(logw)):
        raise ValidationError(
            f"all sector weights vanish for n={n}: the initial state has no support able to emit {n} jumps"
        )
    probs = np.exp(logw - logsumexp(logw))
    probs /= probs.sum()
    alpha = n * params.J / (t * kappa)
    labels = eigenspace_labels(params.dim)
    m_tilde = float(labels[np.argmin(np.abs(labels - math.sqrt(alpha)))])
    return FreezingDistribution(float(t), n, alpha, probs, m_tilde, _m_values(params.dim))


@dataclass(frozen=True)
class FreezingVerdict:
    selectedEigenspace: float
    freezeTime: float
    decayRate: float
    frozen: bool
    finalPopulation: float


def detect_freezing(record, threshold: float = 0.999, ops=None) -> FreezingVerdict:
    """Classify a trajectory by the |m| sector holding its final population.

    ``freezeTime`` is the first snapshot time after which the selected sector
    stays above ``threshold``. ``decayRate`` is minus the least-squares slope
    of log(largest competing sector population) over the final half of the
    record; competitors that have underflowed to exactly zero are dropped, and
    if fewer than two points remain the rate is reported as infinite.
    """
    if not 0.5 < threshold < 1:
        raise ValidationError("threshold must lie in (0.5, 1)")
    times = np.asarray(record.times)
    if times.size < 4:
        raise ValidationError("record has too few snapshots to fit a decay rate")
    pops = record.snapshots if record.store == "populations" else record.sx_populations(ops)
    sector = eigenspace_populations(pops)
    labels = eigenspace_labels(pops.shape[-1])
    sel = int(np.argmax(sector[-1]))
    final = float(sector[-1, sel])
    frozen = final > threshold
    freeze_time = math.nan
    if frozen:
        below = np.nonzero(sector[:, sel] <= threshold)[0]
        freeze_time = float(times[0] if below.size == 0 else times[below[-1] + 1])
    others = np.delete(sector, sel, axis=1)
    half = times.size // 2
    if others.shape[1] == 0:
        rate = math.inf
    else:
        comp = others[half:].max(axis=1)
        tt = times[half:]
        ok = comp > 0
        if ok.sum() < 2:
            rate = math.inf
        else:
            slope = np.polyfit(tt[ok], np.log(comp[ok]), 1)[0]
            rate = float(-slope)
    return FreezingVerdict(float(labels[sel]), freeze_time, rate, bool(frozen), final)


@dataclass
class SelectionStatistics:
    eigenspaces: np.ndarray
    fractions: np.ndarray
    stderr: np.ndarray
    expected: np.ndarray | None
    nFrozen: int
    nTotal: int
    verdicts: list = field(repr=False)
    times: np.ndarray = field(repr=False)
    sxMean: np.ndarray = field(repr=False)
    sxStderr: np.ndarray = field(repr=False)
    sxInitial: float
    maxDeviationInSE: float
    finalSx: np.ndarray = field(repr=False)
    finalSxStd: float

    def within_binomial(self, nsigma: float = 3.0) -> np.ndarray:
        """Per-sector check of the frozen fraction against ``expected``."""
        if self.expected is None:
            raise ValidationError("no expected fractions available")
        sigma = np.sqrt(self.expected * (1 - self.expected) / self.nTotal)
        return np.abs(self.fractions - self.expected) <= nsigma * sigma


def selection_statistics(ensemble, psi0=None, threshold: float = 0.999) -> SelectionStatistics:
    """Frozen fractions per |m| sector and the S_x conservation report.

    When ``psi0`` (S_z basis) is given, the expected trapping fractions are its
    initial sector populations: each sector projector commutes with the
    dynamics, so its expectation is a martingale along trajectories.
    """
    records = ensemble.records
    d = records[0].snapshots.shape[-1]
    J = (d - 1) / 2
    labels = eigenspace_labels(d)
    ops = None
    if records[0].store == "states":
        ops = build_spin_operators(ModelParams(J=J, Omega=0.0, theta=0.0))
    verdicts = [detect_freezing(r, threshold, ops) for r in records]
    n = len(records)
    counts = np.array([sum(1 for v in verdicts if v.frozen and v.selectedEigenspace == a) for a in labels])
    frac = counts / n
    se = np.sqrt(frac * (1 - frac) / n)
    expected = None
    if psi0 is not None:
        ops = ops or build_spin_operators(ModelParams(J=J, Omega=0.0, theta=0.0))
        amp = ops.sxBasis.conj().T @ np.asarray(psi0, dtype=complex)
        expected = eigenspace_populations(np.abs(amp) ** 2)
    summ = ensemble.summary
    mean, err = summ.mean["Sx"], summ.stderr["Sx"]
    dev = np.abs(mean - mean[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(dev == 0, 0.0, dev / err)
    m = _m_values(d)
    pops_final = np.stack([r.sx_populations(ops)[-1] for r in records])
    final_sx = pops_final @ m
    return SelectionStatistics(
        eigenspaces=labels,
        fractions=frac,
        stderr=se,
        expected=expected,
        nFrozen=int(sum(v.frozen for v in verdicts)),
        nTotal=n,
        verdicts=verdicts,
        times=summ.times,
        sxMean=mean,
        sxStderr=err,
        sxInitial=float(mean[0]),
        maxDeviationInSE=float(np.max(z)),
        finalSx=final_sx,
        finalSxStd=float(final_sx.std(ddof=1)) if n > 1 else 0.0,
    )
