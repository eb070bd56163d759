"""Jump-count statistics: the counting distribution and the large-deviation curve.

On the symmetry line the number of jumps in [0, T] is a mixture of Poisson
laws, one per S_x eigenstate, with means kappa T m^2 / J weighted by the
initial populations. The tilted generator
W_s = L + (e^s - 1) L . L^dag counts jumps; its leading real eigenvalue is the
scaled cumulant generating function lambda(s).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.signal import find_peaks
from scipy.special import gammaln, logsumexp, xlogy

from .errors import SpectrumError, ValidationError
from .liouvillian import Superoperator, build_liouvillian, sprepost
from .spin import ModelParams, build_spin_operators, jump_operator, sector_rate

DEFAULT_PROMINENCE = 1e-3


@dataclass(frozen=True)
class Peak:
    K: int
    height: float
    prominence: float


@dataclass
class CountingDistribution:
    K: np.ndarray
    probs: np.ndarray
    T: float
    modeCenters: list  # (|m|, kappa T m^2 / J) for each populated sector
    stderr: np.ndarray | None = None
    peaks: list = field(default_factory=list)


def _mode_centers(pops_absm: dict, T: float, kappa: float, J: float) -> list:
    return [(a, kappa * T * a * a / J) for a, w in sorted(pops_absm.items()) if w > 0]


def _sector_weights(c0diag: np.ndarray) -> dict:
    J = (c0diag.size - 1) / 2
    m = np.arange(c0diag.size) - J
    out: dict = {}
    for mi, w in zip(np.abs(m), c0diag):
        out[float(mi)] = out.get(float(mi), 0.0) + float(w)
    return out


def counting_distribution_analytic(c0diag, T: float, params: ModelParams, rate: float | None = None) -> CountingDistribution:
    """Exact P(K) on the symmetry line from initial S_x populations ``c0diag`` (m = -J..J)."""
    c0diag = np.asarray(c0diag, dtype=float)
    if c0diag.shape != (params.dim,):
        raise ValidationError(f"c0diag must have length {params.dim}")
    if np.any(c0diag < -1e-12) or abs(c0diag.sum() - 1) > 1e-10:
        raise ValidationError("c0diag must be a probability vector")
    if not T > 0:
        raise ValidationError("T must be positive")
    kappa = sector_rate(params) if rate is None else float(rate)
    c0diag = np.clip(c0diag, 0, None)
    m = np.arange(params.dim) - params.J
    keep = c0diag > 0
    mu = kappa * T * m[keep] ** 2 / params.J
    mu_max = float(mu.max())
    kmax = math.ceil(mu_max + 10 * math.sqrt(mu_max)) + 10
    K = np.arange(kmax + 1)
    logp = xlogy(K[:, None], mu[None, :]) - mu[None, :] - gammaln(K + 1)[:, None]
    logp = logsumexp(logp, b=c0diag[keep][None, :], axis=1)
    probs = np.exp(logp)
    dist = CountingDistribution(K, probs, float(T), _mode_centers(_sector_weights(c0diag), T, kappa, params.J))
    dist.peaks = find_counting_peaks(dist)
    return dist


def counting_distribution_mc(ensemble, params: ModelParams | None = None, c0diag=None) -> CountingDistribution:
    """Empirical P(K) with binomial standard errors from an ensemble's jump counts."""
    counts = np.asarray(ensemble.counts, dtype=int)
    if counts.size == 0:
        raise ValidationError("empty ensemble")
    n = counts.size
    probs = np.bincount(counts) / n
    K = np.arange(probs.size)
    T = float(ensemble.records[0].times[-1])
    centers = []
    if params is not None and params.is_symmetric and c0diag is not None:
        centers = _mode_centers(_sector_weights(np.asarray(c0diag, float)), T, sector_rate(params), params.J)
    dist = CountingDistribution(K, probs, T, centers, stderr=np.sqrt(probs * (1 - probs) / n))
    dist.peaks = find_counting_peaks(dist)
    return dist


def mode_bin_edges(dist: CountingDistribution) -> np.ndarray:
    """Bin edges on K splitting at midpoints between successive mode centres."""
    c = sorted({kc for _, kc in dist.modeCenters})
    if not c:
        raise ValidationError("distribution carries no mode centres")
    mids = [(a + b) / 2 for a, b in zip(c[:-1], c[1:])]
    return np.array([-0.5, *mids, np.inf])


def _binned(dist: CountingDistribution, edges) -> np.ndarray:
    return np.histogram(dist.K, bins=edges, weights=dist.probs)[0]


def total_variation(a: CountingDistribution, b: CountingDistribution, edges=None) -> float:
    """Half the L1 distance, on the raw K grid or on the given bins."""
    if edges is not None:
        edges = np.asarray(edges, float)
        pa, pb = _binned(a, edges), _binned(b, edges)
    else:
        size = max(a.probs.size, b.probs.size)
        pa = np.zeros(size)
        pb = np.zeros(size)
        pa[: a.probs.size] = a.probs
        pb[: b.probs.size] = b.probs
    return 0.5 * float(np.abs(pa - pb).sum())


def find_counting_peaks(dist: CountingDistribution, prominence: float = DEFAULT_PROMINENCE) -> list:
    # zero padding lets a maximum at K = 0 register as a peak
    padded = np.concatenate([[0.0], dist.probs, [0.0]])
    idx, props = find_peaks(padded, prominence=prominence)
    return [Peak(int(dist.K[i - 1]), float(padded[i]), float(p)) for i, p in zip(idx, props["prominences"])]


@dataclass(frozen=True)
class PeakReport:
    count: int
    peaks: list
    matchedSector: list  # nearest |m| for each peak, or None
    offsets: list  # peak K minus nearest predicted centre


def multimodality(dist: CountingDistribution, prominence: float = DEFAULT_PROMINENCE) -> PeakReport:
    peaks = find_counting_peaks(dist, prominence)
    matched, offsets = [], []
    for p in peaks:
        if dist.modeCenters:
            a, kc = min(dist.modeCenters, key=lambda mc: abs(mc[1] - p.K))
            matched.append(a)
            offsets.append(p.K - kc)
        else:
            matched.append(None)
            offsets.append(None)
    return PeakReport(len(peaks), peaks, matched, offsets)


def tilted_liouvillian(params: ModelParams, s: float) -> Superoperator:
    base = build_liouvillian(params)
    L = jump_operator(params, build_spin_operators(params))
    mat = base.mat + (math.exp(s) - 1.0) * sprepost(L, L.conj().T)
    return Superoperator(base.dim, mat, "tilted", params)


@dataclass(frozen=True)
class SCGFValue:
    s: float
    lam: float
    imagResidual: float
    gap: float  # real-part distance to the next eigenvalue


def scgf_value(params: ModelParams, s: float) -> SCGFValue:
    W = tilted_liouvillian(params, s)
    try:
        w = sla.eigvals(W.mat)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectrumError(f"eigensolver failed at s = {s}: {exc}") from exc
    order = np.argsort(-w.real)
    top = w[order[0]]
    gap = float(top.real - w[order[1]].real) if w.size > 1 else math.inf
    return SCGFValue(float(s), float(top.real), float(abs(top.imag)), gap)


def _one_sided(params, h, sign):
    """One-sided derivative at 0: second-order stencils at h and 2h, Richardson-combined."""
    f = {k: scgf_value(params, sign * k * h).lam for k in (0, 1, 2, 4)}
    d_h = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    d_2h = (-3 * f[0] + 4 * f[2] - f[4]) / (4 * h)
    return sign * (4 * d_h - d_2h) / 3


@dataclass
class LargeDeviationCurve:
    sGrid: np.ndarray
    lam: np.ndarray
    activity: np.ndarray
    imagResidual: np.ndarray
    nearDegenerate: np.ndarray
    activityLeft0: float
    activityRight0: float
    legendre: "LegendreResult | None" = None
    errors: dict = field(default_factory=dict)  # s -> message, for points that failed

    def convexity_defect(self) -> float:
        """Most negative second difference, scaled to a uniform step."""
        s, lam = self.sGrid, self.lam
        if s.size < 3:
            return 0.0
        slopes = np.diff(lam) / np.diff(s)
        h = np.diff(s)
        d2 = np.diff(slopes) * 0.5 * (h[:-1] + h[1:])
        return float(min(0.0, d2.min()))

    def is_convex(self, tol: float = 1e-8) -> bool:
        return self.convexity_defect() >= -tol

    def is_real(self, tol: float = 1e-9) -> np.ndarray:
        return self.imagResidual <= tol


def scgf(
    params: ModelParams,
    sGrid,
    derivative_step: float = 1e-4,
    degeneracy_tol: float = 1e-6,
    strict: bool = True,
) -> LargeDeviationCurve:
    """lambda(s) on ``sGrid`` with centred-difference activity.

    On the symmetry line lambda is not analytic at s = 0, so no difference
    is taken across it there; both one-sided derivatives at 0 are always
    computed with second-order stencils of step ``derivative_step``.
    With ``strict=False`` a failing grid point becomes NaN and its message is
    kept in ``errors``.
    """
    s = np.asarray(sGrid, dtype=float)
    if s.ndim != 1 or s.size < 3 or np.any(np.diff(s) <= 0):
        raise ValidationError("sGrid must be increasing with at least 3 points")
    nan = SCGFValue(math.nan, math.nan, math.nan, math.nan)
    vals, errors = [], {}
    for si in s:
        try:
            vals.append(scgf_value(params, si))
        except SpectrumError as exc:
            if strict:
                raise
            errors[float(si)] = str(exc)
            vals.append(nan)
    lam = np.array([v.lam for v in vals])
    imag = np.array([v.imagResidual for v in vals])
    near = np.array([v.gap < degeneracy_tol * params.Gamma for v in vals])
    act = np.gradient(lam, s)
    if params.is_symmetric:
        act[np.abs(s) < 1e-14] = np.nan
    try:
        left = _one_sided(params, derivative_step, -1)
        right = _one_sided(params, derivative_step, +1)
    except SpectrumError as exc:
        if strict:
            raise
        errors[0.0] = str(exc)
        left = right = math.nan
    curve = LargeDeviationCurve(s, lam, act, imag, near, left, right, errors=errors)
    finite = act[np.isfinite(act)]
    if finite.size >= 2 and finite.max() > finite.min():
        curve.legendre = legendre(curve, np.linspace(finite.min(), finite.max(), 201))
    return curve


def activity_jump(params: ModelParams, steps=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> np.ndarray:
    """Centred-difference activity at s = +h minus that at s = -h, for each h.

    For analytic lambda this vanishes linearly in h; a kink at s = 0 leaves a
    finite limit.
    """
    out = []
    for h in steps:
        d = h / 4
        a_plus = (scgf_value(params, h + d).lam - scgf_value(params, h - d).lam) / (2 * d)
        a_minus = (scgf_value(params, -h + d).lam - scgf_value(params, -h - d).lam) / (2 * d)
        out.append(a_plus - a_minus)
    return np.array(out)


@dataclass
class LegendreResult:
    kGrid: np.ndarray
    phi: np.ndarray  # +inf where the supremum is not attained inside the s range
    phiRaw: np.ndarray
    argmax: np.ndarray
    extrapolated: np.ndarray
    flatSegments: list = field(default_factory=list)


def legendre(curve: LargeDeviationCurve, kGrid, flat_tol: float = 1e-9) -> LegendreResult:
    """Discrete phi(k) = max_s [k s - lambda(s)] over the sampled curve."""
    k = np.asarray(kGrid, dtype=float)
    s, lam = curve.sGrid, curve.lam
    vals = k[:, None] * s[None, :] - lam[None, :]
    arg = np.argmax(vals, axis=1)
    raw = vals[np.arange(k.size), arg]
    # ties are common (flat or linear lambda); only flag k when no interior point attains the max
    tol = 1e-12 * np.maximum(1.0, np.abs(raw))
    interior = vals[:, 1:-1] >= (raw - tol)[:, None]
    extrap = ~interior.any(axis=1)
    arg = np.where(extrap, arg, 1 + np.argmax(interior, axis=1))
    phi = np.where(extrap, np.inf, raw)
    flats = []
    start = None
    for i in range(1, k.size + 1):
        same = (
            i < k.size
            and np.isfinite(phi[i])
            and np.isfinite(phi[i - 1])
            and abs(phi[i] - phi[i - 1]) <= flat_tol * max(1.0, abs(phi[i]))
        )
        if same:
            start = i - 1 if start is None else start
        elif start is not None:
            if i - 1 - start >= 2:
                flats.append((float(k[start]), float(k[i - 1]), float(phi[start])))
            start = None
    return LegendreResult(k, phi, raw, arg, extrap, flats)


def legendre_roundtrip(result: LegendreResult, sGrid) -> np.ndarray:
    """max_k [k s - phi(k)] over the finite entries."""
    s = np.asarray(sGrid, dtype=float)
    ok = np.isfinite(result.phi)
    if not ok.any():
        raise ValidationError("no finite rate-function values to invert")
    k, phi = result.kGrid[ok], result.phi[ok]
    return np.max(s[:, None] * k[None, :] - phi[None, :], axis=1)
