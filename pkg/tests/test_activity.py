import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dfreeze import ModelParams, ValidationError, build_spin_operators
from dfreeze.activity import (
    CountingDistribution,
    LargeDeviationCurve,
    counting_distribution_analytic,
    counting_distribution_mc,
    legendre,
    legendre_roundtrip,
    mode_bin_edges,
    multimodality,
    scgf,
    scgf_value,
    tilted_liouvillian,
    total_variation,
)
from dfreeze.liouvillian import build_liouvillian, unique_steady_state
from dfreeze.spin import jump_operator, sector_rate
from dfreeze.trajectories import TrajectoryConfig, run_ensemble, suggest_dt

QUARTER = math.pi / 4


def line(J, W=0.8):
    return ModelParams(J=J, Omega=W, theta=QUARTER)


def test_two_level_tilt_sign_by_hand():
    # J = 1/2, theta = 0: L rho L^dag = 2 Gamma rho_uu |d><d|, i.e. vec entry (dd) <- (uu).
    G, s = 0.7, 0.3
    p = ModelParams(J=0.5, Omega=1.1, theta=0.0, Gamma=G)
    diff = tilted_liouvillian(p, s).mat - build_liouvillian(p).mat
    expected = np.zeros((4, 4), complex)
    expected[3, 0] = (math.exp(s) - 1) * 2 * G
    assert np.allclose(diff, expected, atol=1e-15)
    assert tilted_liouvillian(p, s).kind == "tilted"


def test_untilted_equals_liouvillian():
    p = ModelParams(J=2, Omega=0.4, theta=0.9)
    assert np.array_equal(tilted_liouvillian(p, 0.0).mat, build_liouvillian(p).mat)


@pytest.mark.parametrize("s", [-0.7, -0.01, 0.02, 0.5])
def test_tilted_populations_on_line(s):
    p = line(2)
    o = build_spin_operators(p)
    W = tilted_liouvillian(p, s)
    kappa = sector_rate(p)
    for k, m in enumerate(o.sxEigs):
        P = np.outer(o.sxBasis[:, k], o.sxBasis[:, k].conj())
        assert np.linalg.norm(W.apply(P) - (math.exp(s) - 1) * kappa * m * m / p.J * P) < 1e-12
    lam = scgf_value(p, s).lam
    assert lam == pytest.approx(max(0.0, (math.exp(s) - 1) * kappa * p.J), abs=1e-10)
    if s < 0:
        assert lam <= 1e-12


def test_scgf_on_line_has_a_kink():
    p = line(3)
    kappa = sector_rate(p)
    grid = np.linspace(-0.5, 0.5, 21)
    cv = scgf(p, grid)
    want = np.maximum(0, (np.exp(grid) - 1) * kappa * p.J)
    assert np.max(np.abs(cv.lam - want)) < 1e-9
    assert math.isnan(cv.activity[10])
    assert abs(cv.activityLeft0) < 1e-6
    assert cv.activityRight0 == pytest.approx(kappa * p.J, abs=1e-6)
    # s = 0: the whole projector family; s > 0: the m = +-J pair; s < 0: m = 0 alone
    assert cv.nearDegenerate[10] and cv.nearDegenerate[15] and not cv.nearDegenerate[5]


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.floats(0, 2), st.floats(0, math.pi / 2), st.floats(0.3, 2))
def test_scgf_invariants(n, W, th, G):
    p = ModelParams(J=n / 2, Omega=W, theta=th, Gamma=G)
    cv = scgf(p, np.linspace(-1, 1, 21))
    assert abs(cv.lam[10]) < 1e-9 * G
    assert cv.is_convex(1e-8)
    assert np.all(cv.is_real(1e-9 * G))


@pytest.mark.parametrize("th,W", [(0.3, 0.5), (0.6, 1.5), (1.1, 0.2)])
def test_activity_at_zero_is_steady_state_rate(th, W):
    p = ModelParams(J=1.5, Omega=W, theta=th)
    L = jump_operator(p)
    rho = unique_steady_state(build_liouvillian(p))
    rate = np.trace(L @ rho @ L.conj().T).real
    cv = scgf(p, np.linspace(-0.1, 0.1, 5), derivative_step=1e-4)
    assert abs(cv.activityLeft0 - rate) < 1e-6 and abs(cv.activityRight0 - rate) < 1e-6


def test_scgf_grid_validation():
    with pytest.raises(ValidationError):
        scgf(line(1), [0.0, 0.1])
    with pytest.raises(ValidationError):
        scgf(line(1), [0.1, 0.0, 0.2])


# counting distribution


def test_dark_initial_gives_no_jumps():
    p = line(2)
    c = np.zeros(5)
    c[2] = 1
    d = counting_distribution_analytic(c, 50.0, p)
    assert d.probs[0] == pytest.approx(1.0, abs=1e-15)
    assert len(multimodality(d).peaks) == 1


@pytest.mark.parametrize("m", [1, 2])
def test_single_sector_is_poisson(m):
    p = line(2)
    c = np.zeros(5)
    c[m + 2] = 1
    T = 37.0
    d = counting_distribution_analytic(c, T, p)
    mu = sector_rate(p) * T * m * m / p.J
    assert np.allclose(d.probs, stats.poisson.pmf(d.K, mu), atol=1e-14, rtol=1e-10)
    rep = multimodality(d)
    assert rep.count == 1 and abs(rep.peaks[0].K - mu) <= 1
    assert d.modeCenters == [(float(m), mu)]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0.1, 300), st.integers(0, 2**32 - 1))
def test_counting_mean_and_mass(n2j, T, seed):
    p = line(n2j / 2)
    c = np.random.default_rng(seed).dirichlet(np.ones(p.dim))
    d = counting_distribution_analytic(c, T, p)
    m = np.arange(p.dim) - p.J
    mean = float(np.sum(c * sector_rate(p) * T * m * m / p.J))
    assert np.sum(d.K * d.probs) == pytest.approx(mean, rel=1e-9, abs=1e-12)
    assert d.probs.sum() >= 1 - 1e-8 and np.all(d.probs >= 0)


def test_counting_rejections():
    with pytest.raises(ValidationError):
        counting_distribution_analytic(np.ones(5) / 5, 10.0, ModelParams(J=2, Omega=1, theta=0.5))
    with pytest.raises(ValidationError):
        counting_distribution_analytic(np.ones(5), 10.0, line(2))
    with pytest.raises(ValidationError):
        counting_distribution_analytic(np.ones(4) / 4, 10.0, line(2))


def test_peak_count_falls_as_window_shrinks():
    p = line(2)
    c = np.ones(5) / 5
    counts = [multimodality(counting_distribution_analytic(c, T, p)).count for T in (100, 30, 10, 3, 1, 0.3)]
    assert counts[0] == 3
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 1


def _mc(p, c_state, T, n, seed):
    dt = suggest_dt(p)
    cfg = TrajectoryConfig(p, tFinal=T, dt=dt, sampleEvery=int(round(T / dt)), seed=seed)
    return run_ensemble(cfg, c_state, n)


def test_mc_histograms():
    p = line(2)
    o = build_spin_operators(p)
    dark = counting_distribution_mc(_mc(p, o.sx_state(0), 5.0, 50, 1))
    assert dark.probs.tolist() == [1.0]
    T = 10.0
    ens = _mc(p, o.sx_state(1), T, 500, 2)
    d = counting_distribution_mc(ens)
    mu = sector_rate(p) * T / p.J
    edges = np.unique(stats.poisson.ppf(np.linspace(0, 1, 8)[1:-1], mu))
    obs = np.histogram(ens.counts, bins=np.concatenate([[-0.5], edges + 0.5, [np.inf]]))[0]
    cdf = stats.poisson.cdf(np.concatenate([edges, [np.inf]]), mu)
    expct = np.diff(np.concatenate([[0.0], cdf])) * 500
    assert stats.chi2.sf(((obs - expct) ** 2 / expct).sum(), obs.size - 1) > 0.01
    assert np.allclose(d.stderr, np.sqrt(d.probs * (1 - d.probs) / 500))


def test_mc_mixture_matches_analytic():
    p = line(2)
    rho0 = np.eye(5) / 5
    T = 20.0
    ana = counting_distribution_analytic(np.ones(5) / 5, T, p)
    mc = counting_distribution_mc(_mc(p, rho0, T, 2000, 3), p, np.ones(5) / 5)
    assert total_variation(ana, mc, mode_bin_edges(ana)) < 0.05
    assert mc.modeCenters == ana.modeCenters


@pytest.mark.slow
def test_mc_agreement_improves_with_ensemble_size():
    p = line(1)
    T = 5.0
    ana = counting_distribution_analytic(np.ones(3) / 3, T, p)
    ens = _mc(p, np.eye(3) / 3, T, 8000, 4)
    tv = []
    for n in (500, 2000, 8000):
        sub = type(ens)(ens.records[:n], ens.summary)
        tv.append(total_variation(ana, counting_distribution_mc(sub)))
    assert tv[0] > tv[1] > tv[2]
    assert tv[0] / tv[2] > 2  # 1/sqrt(n) predicts 4


def test_total_variation_helpers():
    a = CountingDistribution(np.arange(3), np.array([0.5, 0.5, 0.0]), 1.0, [(0.0, 0.0), (1.0, 2.0)])
    b = CountingDistribution(np.arange(4), np.array([0.0, 0.5, 0.25, 0.25]), 1.0, [])
    assert total_variation(a, b) == pytest.approx(0.5)
    edges = mode_bin_edges(a)
    assert edges.tolist() == [-0.5, 1.0, np.inf]
    assert total_variation(a, b, edges) == pytest.approx(0.5)


# Legendre transform


def curve_from(s, lam):
    s = np.asarray(s, float)
    lam = np.asarray(lam, float)
    z = np.zeros_like(s)
    return LargeDeviationCurve(s, lam, np.gradient(lam, s), z, z.astype(bool), math.nan, math.nan)


def test_legendre_of_a_line():
    s = np.linspace(-1, 1, 41)
    res = legendre(curve_from(s, 2.5 * s), np.array([1.0, 2.0, 2.5, 3.0]))
    assert res.phi[2] == pytest.approx(0.0, abs=1e-14)
    assert np.all(np.isinf(res.phi[[0, 1, 3]]))
    assert res.extrapolated.tolist() == [True, True, False, True]


def test_legendre_of_kinked_scgf_is_flat():
    J, kappa = 3.0, 2.0
    s = np.linspace(-1, 1, 201)
    lam = np.maximum(0, (np.exp(s) - 1) * kappa * J)
    k = np.linspace(-1, 10, 111)
    res = legendre(curve_from(s, lam), k)
    assert np.all(res.extrapolated[k < 0])
    inside = (k > 0) & (k <= kappa * J)
    assert np.allclose(res.phi[inside], 0, atol=1e-12)
    lo, hi, val = max(res.flatSegments, key=lambda f: f[1] - f[0])
    assert val == 0 and lo <= 0.1 + 1e-12 and hi >= kappa * J - 0.1


def test_legendre_roundtrip_smooth():
    p = ModelParams(J=2, Omega=1.0, theta=0.5)
    s = np.linspace(-1, 1, 81)
    cv = scgf(p, s)
    k = np.linspace(cv.activity.min(), cv.activity.max(), 400)
    res = legendre(cv, k)
    back = legendre_roundtrip(res, s)
    interior = slice(2, -2)
    err = np.max(np.abs(back[interior] - cv.lam[interior]))
    assert err < (s[1] - s[0]) * np.max(np.abs(k))
    assert cv.legendre is not None and cv.legendre.kGrid.size == 201
