import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowtie.fieldmath import (
    Grid2,
    fft2,
    fresnel_propagate,
    poisson_solve,
    spectral_divergence,
    spectral_gradient,
    spectral_laplacian,
)


def direct_dft(f):
    """O(n^4) unitary DFT with kernel exp(-i 2 pi (ky y / ny + kx x / nx))."""
    ny, nx = f.shape
    out = np.zeros((ny, nx), complex)
    for ky in range(ny):
        for kx in range(nx):
            acc = 0j
            for y in range(ny):
                for x in range(nx):
                    acc += f[y, x] * np.exp(-2j * np.pi * (ky * y / ny + kx * x / nx))
            out[ky, kx] = acc / np.sqrt(nx * ny)
    return out


def band_limited(grid, rng, kmax=3):
    """Random real field built from low-order Fourier modes."""
    y, x = grid.coords()
    ly, lx = grid.extent
    phi = np.zeros(grid.shape)
    for ky in range(-kmax, kmax + 1):
        for kx in range(-kmax, kmax + 1):
            a, b = rng.standard_normal(2)
            arg = 2 * np.pi * (ky * y / ly + kx * x / lx)
            phi += a * np.cos(arg) + b * np.sin(arg)
    return phi


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid2(1, 4)
    with pytest.raises(ValueError):
        Grid2(4, 4, 0.0, 1.0)


def test_frequency_axis_ordering():
    g = Grid2(4, 5, 0.5, 2.0)
    qy, qx = g.freqs()
    np.testing.assert_allclose(qy.ravel(), [0, 0.5, -1.0, -0.5])
    np.testing.assert_allclose(qx.ravel(), [0, 0.1, 0.2, -0.2, -0.1])


def test_fft_constant_field_dc():
    out = fft2(np.ones((4, 4)))
    expected = np.zeros((4, 4))
    expected[0, 0] = 4.0
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_fft_roundtrip_and_parseval():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    y = fft2(x)
    back = fft2(y, "inverse")
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-12
    assert abs(np.sum(abs(y) ** 2) - np.sum(abs(x) ** 2)) / np.sum(abs(x) ** 2) < 1e-12


@pytest.mark.parametrize("shape", [(8, 8), (6, 5)])
def test_fft_matches_direct_sum(shape):
    rng = np.random.default_rng(1)
    f = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    np.testing.assert_allclose(fft2(f), direct_dft(f), atol=1e-12)


def test_fft_plane_wave_single_bin():
    g = Grid2.square(8, 0.7)
    y, x = g.coords()
    f = np.exp(2j * np.pi * x / (8 * 0.7)) * np.ones((8, 1))
    out = fft2(f)
    ref = direct_dft(f)
    np.testing.assert_allclose(out, ref, atol=1e-12)
    mags = np.abs(out)
    assert mags[0, 1] == pytest.approx(np.sqrt(64))
    mags[0, 1] = 0
    assert mags.max() < 1e-12


def test_fft_rejects_nonfinite():
    x = np.ones((4, 4))
    x[1, 1] = np.nan
    with pytest.raises(ValueError):
        fft2(x)
    with pytest.raises(ValueError):
        fft2(np.ones((4, 4)), "sideways")


def test_gradient_of_constant_and_sine():
    g = Grid2(16, 16, 0.3, 0.3)
    assert np.abs(spectral_gradient(np.full(g.shape, 2.5), g)).max() < 1e-14
    y, x = g.coords()
    length = 16 * 0.3
    phi = np.sin(2 * np.pi * x / length) * np.ones((16, 1))
    v = spectral_gradient(phi, g)
    np.testing.assert_allclose(v[1], (2 * np.pi / length) * np.cos(2 * np.pi * x / length) * np.ones((16, 1)),
                               atol=1e-10)
    assert np.abs(v[0]).max() < 1e-10


def test_gradient_matches_finite_differences():
    # central difference error of a mode with wavenumber k is ~ (k h)^2 / 6 of its amplitude
    rng = np.random.default_rng(2)
    g = Grid2(64, 64, 0.1, 0.1)
    phi = band_limited(g, rng, kmax=2)
    v = spectral_gradient(phi, g)
    fd_y = (np.roll(phi, -1, 0) - np.roll(phi, 1, 0)) / (2 * 0.1)
    fd_x = (np.roll(phi, -1, 1) - np.roll(phi, 1, 1)) / (2 * 0.1)
    kh = 2 * np.pi * 2 / 64
    bound = kh**2 / 6 * 1.05
    assert np.abs(fd_y - v[0]).max() <= bound * np.abs(v[0]).max() + 1e-12
    assert np.abs(fd_x - v[1]).max() <= bound * np.abs(v[1]).max() + 1e-12


def test_divergence_of_constant_and_laplacian_eigenfunction():
    g = Grid2(16, 16, 0.25, 0.25)
    assert np.abs(spectral_divergence(np.ones((2, 16, 16)) * 3.0, g)).max() < 1e-14
    y, x = g.coords()
    length = 4.0
    mode = np.sin(2 * np.pi * x / length) * np.ones((16, 1))
    div = spectral_divergence(spectral_gradient(mode, g), g)
    np.testing.assert_allclose(div, -(2 * np.pi / length) ** 2 * mode, atol=1e-10)


def test_divergence_matches_finite_differences():
    rng = np.random.default_rng(3)
    g = Grid2(64, 64, 0.1, 0.1)
    v = np.stack([band_limited(g, rng, 2), band_limited(g, rng, 2)])
    div = spectral_divergence(v, g)
    fd = (np.roll(v[0], -1, 0) - np.roll(v[0], 1, 0)) / 0.2 + (np.roll(v[1], -1, 1) - np.roll(v[1], 1, 1)) / 0.2
    kh = 2 * np.pi * 2 / 64
    assert np.abs(fd - div).max() <= kh**2 / 6 * 1.05 * np.abs(div).max() * 2


def test_divergence_rejects_bad_shapes():
    g = Grid2.square(8)
    with pytest.raises(ValueError):
        spectral_divergence(np.zeros((3, 8, 8)), g)
    with pytest.raises(ValueError):
        spectral_divergence(np.zeros((2, 8, 6)), g)


@pytest.mark.parametrize("shape", [(8, 8), (7, 10), (16, 12)])
def test_gradient_divergence_adjointness(shape):
    rng = np.random.default_rng(4)
    g = Grid2(*shape, 0.37, 0.61)
    phi = rng.standard_normal(shape)
    v = rng.standard_normal((2, *shape))
    lhs = np.sum(spectral_gradient(phi, g) * v)
    rhs = -np.sum(phi * spectral_divergence(v, g))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_poisson_zero_and_eigenmode():
    g = Grid2.square(16, 0.5)
    assert np.abs(poisson_solve(np.zeros(g.shape), g)).max() == 0
    y, x = g.coords()
    length = 8.0
    mode = np.cos(2 * np.pi * x / length) * np.ones((16, 1))
    phi = poisson_solve(-(2 * np.pi / length) ** 2 * mode, g)
    np.testing.assert_allclose(phi, mode - mode.mean(), atol=1e-10)


def test_poisson_roundtrip_random():
    rng = np.random.default_rng(5)
    g = Grid2(12, 10, 0.4, 0.3)
    r = rng.standard_normal(g.shape)
    r -= r.mean()
    back = spectral_laplacian(poisson_solve(r, g), g)
    assert np.linalg.norm(back - r) / np.linalg.norm(r) < 1e-9


def test_poisson_of_laplacian_is_mean_removal():
    rng = np.random.default_rng(6)
    g = Grid2.square(16, 0.2)
    phi = rng.standard_normal(g.shape)
    back = poisson_solve(spectral_laplacian(phi, g), g)
    np.testing.assert_allclose(back, phi - phi.mean(), atol=1e-10)


def test_poisson_tikhonov_shrinks():
    rng = np.random.default_rng(7)
    g = Grid2.square(16, 0.2)
    r = rng.standard_normal(g.shape)
    norms = [np.linalg.norm(poisson_solve(r, g, eps)) for eps in (0, 1, 10, 100)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    with pytest.raises(ValueError):
        poisson_solve(r, g, -1.0)


def test_fresnel_identity_unitarity_composition():
    rng = np.random.default_rng(8)
    g = Grid2(16, 16, 0.3, 0.3)
    w = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    lam = 0.0197
    np.testing.assert_array_equal(fresnel_propagate(w, g, 0.0, lam), w)
    fwd = fresnel_propagate(w, g, 37.0, lam)
    assert abs(np.sum(abs(fwd) ** 2) - np.sum(abs(w) ** 2)) / np.sum(abs(w) ** 2) < 1e-12
    back = fresnel_propagate(fwd, g, -37.0, lam)
    assert np.linalg.norm(back - w) / np.linalg.norm(w) < 1e-12
    ab = fresnel_propagate(fresnel_propagate(w, g, 11.0, lam), g, 26.0, lam)
    assert np.linalg.norm(ab - fwd) / np.linalg.norm(fwd) < 1e-12


def test_fresnel_sign_obeys_intensity_transport():
    # dI/dz = -(lambda / 2 pi) div(I grad phi) for a smooth, weakly varying wave
    g = Grid2(64, 64, 0.5, 0.5)
    rng = np.random.default_rng(9)
    amp = 1.0 + 0.1 * band_limited(g, rng, 1) / 10
    phi = 0.2 * band_limited(g, rng, 1)
    w = amp * np.exp(1j * phi)
    lam, dz = 0.02, 0.5
    didz = (np.abs(fresnel_propagate(w, g, dz, lam)) ** 2 - np.abs(fresnel_propagate(w, g, -dz, lam)) ** 2) / (2 * dz)
    i0 = np.abs(w) ** 2
    rhs = -(lam / (2 * np.pi)) * spectral_divergence(i0 * spectral_gradient(phi, g), g)
    assert np.linalg.norm(didz - rhs) / np.linalg.norm(rhs) < 1e-3


@settings(max_examples=25, deadline=None)
@given(n=st.integers(4, 12), m=st.integers(4, 12), seed=st.integers(0, 10_000))
def test_parseval_property(n, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    y = fft2(x)
    assert abs(np.sum(abs(y) ** 2) - np.sum(abs(x) ** 2)) <= 1e-12 * np.sum(abs(x) ** 2)
