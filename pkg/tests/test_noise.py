import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochwave.grid import Grid
from stochwave.noise import (CoarsenedNoise, CovarianceKernel, NoiseSampler, NotPositiveSemidefinite,
                             basis_eigendata, circular_convolve, convolve_q, kernel_fourier, kmax_for,
                             realization_seed, sqrt_kernel)

G = Grid(40.0, 2048)


def test_gaussian_kernel_values_and_symmetry():
    k = CovarianceKernel.gaussian(G, 1.0)
    assert k.q_at_zero == pytest.approx(0.5)
    x = np.linspace(0, 5, 11)
    np.testing.assert_allclose(k.q(x), k.q(-x))
    np.testing.assert_allclose(k.q(x), np.exp(-np.pi * x**2 / 4) / 2)


def test_gaussian_transform_matches_closed_form():
    k = CovarianceKernel.gaussian(G, 1.0)
    kk = k.wavenumbers()
    sel = np.abs(kk) <= np.pi / (4 * G.dx)
    np.testing.assert_allclose(kernel_fourier(k)[sel], np.exp(-kk[sel] ** 2 / np.pi), atol=1e-6)


def test_tent_transform_nonnegative_and_narrow_gaussian_flat():
    tent = CovarianceKernel("tent", G, 2.0)
    assert kernel_fourier(tent).min() >= 0
    narrow = CovarianceKernel.gaussian(G, 0.05)
    kk = narrow.wavenumbers()
    qh = kernel_fourier(narrow)[np.abs(kk) < 1.0]
    assert np.ptp(qh) < 1e-3


def test_non_psd_table_rejected(tmp_path):
    f = tmp_path / "box.txt"
    lags = np.linspace(0, 5, 51)
    np.savetxt(f, np.column_stack([lags, (lags <= 2.0).astype(float)]))
    k = CovarianceKernel.from_file(G, f)
    with pytest.raises(NotPositiveSemidefinite):
        kernel_fourier(k)


def test_sqrt_kernel_squares_to_q():
    k = CovarianceKernel.gaussian(G, 1.0)
    p = sqrt_kernel(k)
    pp = circular_convolve(p, p, G.dx)
    assert np.abs(pp - k.q_values).max() <= 1e-10


@pytest.mark.parametrize("zeta", [0.5, 1.0, 2.0])
def test_sqrt_kernel_exponent(zeta):
    # p(x) ∝ exp(-π x² / (2 ζ²)); the prefactor is computed, not assumed
    k = CovarianceKernel.gaussian(G, zeta)
    p = sqrt_kernel(k)
    lags = np.arange(40) * G.dx
    sel = p[:40] > 1e-8 * p[0]
    slope = np.polyfit(lags[sel] ** 2, np.log(p[:40][sel]), 1)[0]
    assert slope == pytest.approx(-np.pi / (2 * zeta**2), rel=1e-3)


def test_impulse_kernel_sqrt_is_impulse():
    # grid delta: q = 1/dx at lag 0 and zero at every other node
    k = CovarianceKernel("tabulated", G, table=((0.0, G.dx), (1 / G.dx, 0.0)))
    p = sqrt_kernel(k)
    assert p[0] == pytest.approx(1 / G.dx) and np.abs(p[1:]).max() < 1e-10 * p[0]
    v = np.sin(G.x / 3)[None]
    np.testing.assert_allclose(convolve_q(k, v), v, atol=1e-6)


def test_sampler_point_variance_and_lag_covariance():
    k = CovarianceKernel.gaussian(Grid(10.0, 201), 1.0)
    s = NoiseSampler(k, 7)
    dt = 0.01
    draws = np.array([s.sample_increment(dt)[0] for _ in range(20000)])
    i = 100
    for lag in (0, 2, 5):
        prod = draws[:, i] * draws[:, i + lag]
        target = k.q(lag * k.grid.dx) * dt
        assert abs(prod.mean() - target) <= 3 * prod.std() / np.sqrt(len(prod))


def test_sampler_determinism_and_independent_components():
    k = CovarianceKernel.gaussian(Grid(10.0, 101), 1.0)
    a = NoiseSampler(k, (3, 1), m_components=2)
    b = NoiseSampler(k, (3, 1), m_components=2)
    xa = np.array([a.sample_increment(0.1) for _ in range(5)])
    xb = np.array([b.sample_increment(0.1) for _ in range(5)])
    np.testing.assert_array_equal(xa, xb)
    assert xa.shape == (5, 2, 101)
    c = NoiseSampler(k, (3, 2), m_components=2)
    assert not np.array_equal(c.sample_increment(0.1), xa[0])
    many = NoiseSampler(k, [realization_seed(0, i) for i in range(400)], m_components=2)
    w = np.concatenate([many.sample_increment(1.0) for _ in range(10)])
    corr = np.mean(w[:, 0, 50] * w[:, 1, 50])
    assert abs(corr) < 4 * k.q_at_zero / np.sqrt(w.shape[0])


def test_batched_sampler_matches_single_streams():
    k = CovarianceKernel.gaussian(Grid(10.0, 101), 1.0)
    seeds = [realization_seed(5, i) for i in range(3)]
    batch = NoiseSampler(k, seeds)
    singles = [NoiseSampler(k, [s]) for s in seeds]
    for _ in range(3):
        xb = batch.sample_increment(0.1)
        xs = np.concatenate([s.sample_increment(0.1) for s in singles])
        np.testing.assert_array_equal(xb, xs)


def test_increment_additivity():
    k = CovarianceKernel.gaussian(Grid(10.0, 101), 1.0)
    fine = NoiseSampler(k, [realization_seed(1, i) for i in range(4000)])
    coarse = CoarsenedNoise(fine, 2).sample_increment(0.2)
    direct = NoiseSampler(k, [realization_seed(2, i) for i in range(4000)]).sample_increment(0.2)
    v1, v2 = coarse[:, 0, 50].var(), direct[:, 0, 50].var()
    se = 0.2 * k.q_at_zero * np.sqrt(2 / 4000)
    assert abs(v1 - v2) < 4 * np.sqrt(2) * se


def test_basis_eigendata():
    k = CovarianceKernel.gaussian(G, 1.0)
    E, lam, labels = basis_eigendata(G, k, 150)
    assert lam[0] == 1.0
    for i in (0, 1, 2, 101, 300):
        assert G.inner_product(E[i], E[i]) == pytest.approx(1.0, abs=5e-3)
    Q = convolve_q(k, E[:, None, :])[:, 0]
    inner = Q[:, 200:-200]
    target = (lam[:, None] * E)[:, 200:-200]
    # zero extension outside [-L, L] only matters near the ends; the FFT
    # convolution reaches the float64 floor everywhere else
    assert np.abs(inner - target).max() <= 1e-13
    with pytest.raises(ValueError):
        basis_eigendata(G, k, 0)


def test_kmax_tail():
    assert kmax_for(40.0, 1.0) == 150
    k = kmax_for(100.0, 1.0)
    assert np.exp(-np.pi * k**2 / 100.0**2) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_convolution_psd_and_symmetric(seed):
    g = Grid(10.0, 128)
    k = CovarianceKernel.gaussian(g, 0.7)
    r = np.random.default_rng(seed)
    v, w = r.standard_normal((2, 1, 128))
    Qv, Qw = convolve_q(k, v), convolve_q(k, w)
    assert g.inner_product(Qv, v) >= -1e-10 * g.inner_product(v, v)
    assert abs(g.inner_product(Qv, w) - g.inner_product(v, Qw)) <= 1e-12 * (1 + g.norm(v) * g.norm(w))
