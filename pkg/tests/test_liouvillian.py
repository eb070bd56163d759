import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfreeze import ModelParams, ValidationError, build_spin_operators
from dfreeze.errors import StepSizeError
from dfreeze.liouvillian import (
    analytic_spectrum,
    build_liouvillian,
    eq2_convergence,
    evolve_density,
    match_analytic,
    spectrum,
    spost,
    spre,
    sprepost,
    steady_states,
    unique_steady_state,
    unvec,
    vec,
)
from dfreeze.spin import sector_rate

from conftest import random_density

QUARTER = math.pi / 4


def master_rhs(params, rho):
    """Right-hand side written directly from the model, without superoperators."""
    o = build_spin_operators(params)
    H = params.Omega * o.Sx
    D = o.Dtheta
    Dd = D.conj().T
    pref = params.Gamma / (2 * params.J)
    return -1j * (H @ rho - rho @ H) + pref * (2 * D @ rho @ Dd - Dd @ D @ rho - rho @ Dd @ D)


def test_column_stacking_convention_2x2():
    X = np.array([[1, 2], [3, 4]])
    assert vec(X).tolist() == [1, 3, 2, 4]
    assert np.array_equal(unvec(vec(X)), X)
    rng = np.random.default_rng(1)
    A, B, R = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(3))
    assert np.allclose(sprepost(A, B) @ vec(R), vec(A @ R @ B))
    assert np.allclose(spre(A) @ vec(R), vec(A @ R))
    assert np.allclose(spost(B) @ vec(R), vec(R @ B))


def test_two_level_amplitude_damping_by_hand():
    # J = 1/2, Omega = 0, theta = 0: L = sqrt(2 Gamma) sigma_-, population decay rate 2 Gamma.
    G = 0.8
    g = 2 * G
    # basis index 0 = up; vec = (rho_uu, rho_du, rho_ud, rho_dd)
    expected = np.array(
        [
            [-g, 0, 0, 0],
            [0, -g / 2, 0, 0],
            [0, 0, -g / 2, 0],
            [g, 0, 0, 0],
        ],
        dtype=complex,
    )
    L = build_liouvillian(ModelParams(J=0.5, Omega=0.0, theta=0.0, Gamma=G))
    assert np.allclose(L.mat, expected, atol=1e-15)
    sp = spectrum(L)
    assert np.allclose(sorted(sp.eigenvalues.real), [-2 * G, -G, -G, 0], atol=1e-14)
    assert sp.nullDim == 1


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 6),
    st.floats(0, 3),
    st.floats(0, math.pi / 2),
    st.floats(0.2, 2),
)
def test_matrix_matches_direct_master_equation(n, W, th, G):
    p = ModelParams(J=n / 2, Omega=W, theta=th, Gamma=G)
    L = build_liouvillian(p)
    rng = np.random.default_rng(n)
    rho = random_density(rng, p.dim)
    assert np.allclose(L.apply(rho), master_rhs(p, rho), atol=1e-12)
    left = vec(np.eye(p.dim)) @ L.mat
    assert np.linalg.norm(left) < 1e-10 * np.linalg.norm(L.mat)


@pytest.mark.parametrize("J", [0.5, 1, 1.5, 2, 5])
@pytest.mark.parametrize("W", [0.0, 0.8, 2.0])
def test_coherences_are_eigenvectors_on_line(J, W):
    p = ModelParams(J=J, Omega=W, theta=QUARTER, Gamma=1.3)
    o = build_spin_operators(p)
    L = build_liouvillian(p)
    kappa = sector_rate(p)
    V, m = o.sxBasis, o.sxEigs
    for a in range(p.dim):
        for b in range(p.dim):
            E = np.outer(V[:, a], V[:, b].conj())
            dm = m[a] - m[b]
            lam = -1j * W * dm - kappa * dm**2 / (2 * J)
            assert np.linalg.norm(L.apply(E) - lam * E) < 1e-10 * p.Gamma


@pytest.mark.parametrize("J", [1, 1.5, 2, 5])
def test_gap_closing(J):
    on = spectrum(build_liouvillian(ModelParams(J=J, Omega=0.9, theta=QUARTER)))
    assert on.nullDim == int(2 * J + 1)
    assert on.tau == math.inf
    for th, W in ((0.0, 0.5), (0.3, 2.0), (1.2, 0.3)):
        off = spectrum(build_liouvillian(ModelParams(J=J, Omega=W, theta=th)))
        assert off.nullDim == 1
        assert off.adr.real < -1e-6 and math.isfinite(off.tau) and off.tau > 0


def test_spectrum_examples():
    sp = spectrum(build_liouvillian(ModelParams(J=2, Omega=1.0, theta=QUARTER)))
    assert sp.nullDim == 5 and abs(sp.adr.real) < sp.nullTol
    # first nonzero coherence rate: kappa/(2J) for |m - m'| = 1
    nz = sp.eigenvalues[np.abs(sp.eigenvalues) > 1e-6]
    assert abs(np.max(nz.real) + 2.0 / 4) < 1e-10
    sp0 = spectrum(build_liouvillian(ModelParams(J=2, Omega=0.5, theta=0.0)))
    assert sp0.nullDim == 1
    assert sp0.eigenvalues[0].real <= 1e-9 * np.linalg.norm(build_liouvillian(ModelParams(J=2, Omega=0.5, theta=0.0)).mat)
    assert np.all(np.diff(sp0.eigenvalues.real) <= 1e-12)


def test_steady_states_on_line_are_sx_projectors():
    p = ModelParams(J=1, Omega=0.6, theta=QUARTER)
    o = build_spin_operators(p)
    states = steady_states(build_liouvillian(p))
    assert len(states) == 3
    projectors = [np.outer(o.sxBasis[:, k], o.sxBasis[:, k].conj()) for k in range(3)]
    for P in projectors:
        assert min(np.linalg.norm(P - s) for s in states) < 1e-8


def test_steady_state_dark_state_and_thermal_phase():
    p = ModelParams(J=2, Omega=0.0, theta=0.0)
    (rho,) = steady_states(build_liouvillian(p))
    dark = np.zeros((5, 5))
    dark[-1, -1] = 1
    assert np.linalg.norm(rho - dark) < 1e-8
    p = ModelParams(J=5, Omega=2.0, theta=0.0)
    L = build_liouvillian(p)
    (rho,) = steady_states(L)
    # a quarter of the distance separating any pure state from the maximally mixed one
    pure_distance = math.sqrt(1 - 1 / 11)
    assert np.linalg.norm(rho - np.eye(11) / 11) < 0.25 * pure_distance
    assert abs(np.trace(rho @ build_spin_operators(p).Sz).real) / 5 < 0.1
    assert np.linalg.norm(unique_steady_state(L) - rho) < 1e-9


def test_evolve_density_basics(rng):
    p = ModelParams(J=1.5, Omega=0.7, theta=0.4)
    L = build_liouvillian(p)
    rho0 = random_density(rng, 4)
    assert np.array_equal(evolve_density(L, rho0, 0.0), rho0)
    a = evolve_density(L, rho0, 2.5)
    b = evolve_density(L, evolve_density(L, rho0, 1.0), 1.5)
    assert np.linalg.norm(a - b) < 1e-9
    c = evolve_density(L, rho0, 2.5, method="rk4", dt=1e-3)
    assert np.linalg.norm(a - c) < 1e-9
    with pytest.raises(StepSizeError):
        evolve_density(L, rho0, 50.0, method="rk4", dt=0.9)
    with pytest.raises(ValidationError):
        evolve_density(L, rho0 * 2, 1.0)
    with pytest.raises(ValidationError):
        evolve_density(L, rho0, 1.0, method="euler")


def test_evolve_density_fixed_points():
    p = ModelParams(J=2, Omega=1.1, theta=QUARTER)
    o = build_spin_operators(p)
    L = build_liouvillian(p)
    v = o.sx_state(1)
    P = np.outer(v, v.conj())
    assert np.linalg.norm(evolve_density(L, P, 7.0) - P) < 1e-10
    q = ModelParams(J=2, Omega=0.0, theta=0.0)
    up = np.zeros((5, 5))
    up[0, 0] = 1
    out = evolve_density(build_liouvillian(q), up, 200.0)
    assert abs(out[-1, -1] - 1) < 1e-8


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 3),
    st.floats(0, 3),
    st.floats(0, math.pi / 2),
    st.floats(0.2, 2),
    st.floats(0, 10),
    st.integers(0, 2**32 - 1),
)
def test_evolution_preserves_states(n, W, th, G, t, seed):
    p = ModelParams(J=n / 2, Omega=W, theta=th, Gamma=G)
    rho0 = random_density(np.random.default_rng(seed), p.dim)
    rho = evolve_density(build_liouvillian(p), rho0, t / G)
    assert abs(np.trace(rho) - 1) < 1e-9
    assert np.linalg.norm(rho - rho.conj().T) < 1e-10
    assert np.linalg.eigvalsh(rho)[0] > -1e-8


def test_analytic_spectrum_formula():
    p = ModelParams(J=2, Omega=1.5, theta=0.0, Gamma=0.9)
    an = analytic_spectrum(p)
    assert an.gammaTheta == pytest.approx(0.9) and an.chiTheta == pytest.approx(0.9)
    got = {(q, k, s): lam for q, k, s, lam in an.entries}
    assert got[(0, 0, +1)] == 0
    expected = 1.5j - 0.9 / 4 - 0.9 / 8
    assert abs(got[(1, 0, +1)] - expected) < 1e-14
    assert abs(got[(1, 0, -1)] - expected.conjugate()) < 1e-14
    for q, k, _, _ in an.entries:
        assert 0 <= q <= 4 and 0 <= k <= 4 - q
    on = analytic_spectrum(p.replace(theta=QUARTER))
    assert on.chiTheta == 0 and on.gammaTheta == 2 * 0.9
    for q, k, s, lam in on.entries:
        assert abs(lam - (s * 1j * q * 1.5 - 0.9 * q * q / 2)) < 1e-13


@pytest.mark.parametrize("J", [0.5, 1, 2, 3])
def test_analytic_spectrum_exact_on_line(J):
    p = ModelParams(J=J, Omega=1.7, theta=QUARTER)
    rep = match_analytic(spectrum(build_liouvillian(p)), analytic_spectrum(p))
    assert rep.max_distance < 1e-8


def test_match_is_bijection_for_spin_half():
    p = ModelParams(J=0.5, Omega=0.4, theta=0.3)
    rep = match_analytic(spectrum(build_liouvillian(p)), analytic_spectrum(p))
    assert rep.n_pairs == 4
    assert len({complex(x) for x in rep.numeric}) == len(set(map(complex, rep.numeric)))


def test_eq2_convergence_off_line():
    d = eq2_convergence(ModelParams(J=3, Omega=1.0, theta=0.6), [10, 40])
    assert d[1] < d[0]


def test_size_limit():
    with pytest.raises(ValidationError):
        build_liouvillian(ModelParams(J=25.5, Omega=1, theta=0))
