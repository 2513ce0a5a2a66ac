import numpy as np
import pytest

from flowtie.fieldmath import Grid2, fresnel_propagate, spectral_divergence, spectral_gradient
from flowtie.microscope import simulate_4d
from flowtie.recon import gd_reconstruct
from flowtie.specimen import potential_slices, preset_structure
from flowtie.tie import tie_phase, tie_reconstruct

LAM = 0.019687


def cos_stack(grid, length, channels=3):
    y, x = grid.coords()
    mode = np.cos(2 * np.pi * x / length) * np.ones((grid.n_y, 1))
    return np.broadcast_to(mode, (channels, *grid.shape)).copy(), mode


def test_zero_derivative_gives_zero_phase():
    g = Grid2.square(16, 0.3)
    i0 = np.random.default_rng(0).uniform(0.5, 1.5, (4, 16, 16))
    assert np.all(tie_phase(i0, np.zeros_like(i0), LAM, g) == 0)


def test_eigenmode_channel():
    g = Grid2.square(16, 0.3)
    length = 16 * 0.3 / 2
    stack, mode = cos_stack(g, length)
    i_bar = np.array([0.2, 1.0, 3.5])
    i0 = np.ones_like(stack) * i_bar[:, None, None]
    # d I / dz = (lambda / 2 pi) I (2 pi / L)^2 cos  <=>  phi = cos
    i_deriv = (LAM / (2 * np.pi)) * i0 * (2 * np.pi / length) ** 2 * stack
    phi = tie_phase(i0, i_deriv, LAM, g)
    assert np.abs(phi - (mode - mode.mean())).max() < 1e-9


def test_dark_channels_are_flagged():
    g = Grid2.square(8, 0.3)
    rng = np.random.default_rng(1)
    i0 = rng.uniform(0.5, 1.5, (3, 8, 8))
    i0[1] = 1e-14
    phi, dark = tie_phase(i0, rng.standard_normal(i0.shape), LAM, g, return_dark=True)
    assert dark.tolist() == [False, True, False]
    assert np.all(phi[1] == 0)


@pytest.mark.parametrize("variant", ["poisson", "teague"])
def test_linearity_and_gauge(variant):
    g = Grid2(12, 10, 0.3, 0.4)
    rng = np.random.default_rng(2)
    i0 = rng.uniform(0.5, 1.5, (2, 12, 10))
    a, b = rng.standard_normal((2, 2, 12, 10))
    pa, pb = tie_phase(i0, a, LAM, g, variant=variant), tie_phase(i0, b, LAM, g, variant=variant)
    np.testing.assert_allclose(tie_phase(i0, 3 * a - b, LAM, g, variant=variant), 3 * pa - pb, atol=1e-9)
    assert np.abs(pa.mean(axis=(1, 2))).max() < 1e-12


def test_eps_monotonicity():
    g = Grid2.square(16, 0.3)
    rng = np.random.default_rng(3)
    i0 = rng.uniform(0.5, 1.5, (2, 16, 16))
    d = rng.standard_normal(i0.shape)
    norms = [np.linalg.norm(tie_phase(i0, d, LAM, g, eps)) for eps in (0.0, 0.1, 1.0, 10.0, 1e3)]
    assert all(x >= y for x, y in zip(norms, norms[1:]))


def test_errors():
    g = Grid2.square(8)
    with pytest.raises(ValueError):
        tie_phase(np.ones((1, 8, 8)), np.ones((2, 8, 8)), LAM, g)
    with pytest.raises(ValueError):
        tie_phase(np.ones((1, 8, 8)), np.ones((1, 8, 8)), LAM, g, eps=-1)
    with pytest.raises(ValueError, match="variant"):
        tie_phase(np.ones((1, 8, 8)), np.ones((1, 8, 8)), LAM, g, variant="iterative")


def test_recovers_phase_of_propagated_wave():
    """Free-space propagation oracle: the TIE inverts the measured defocus derivative."""
    g = Grid2.square(64, 0.5)
    y, x = g.coords()
    phi = 0.3 * np.cos(2 * np.pi * x / 16) * np.cos(2 * np.pi * y / 32)
    w = np.exp(1j * phi)
    dz = 1.0
    i_d = (np.abs(fresnel_propagate(w, g, dz, 0.02)) ** 2 - np.abs(fresnel_propagate(w, g, -dz, 0.02)) ** 2) / (2 * dz)
    out = tie_phase(np.ones((1, 64, 64)), i_d[None], 0.02, g)[0]
    ref = phi - phi.mean()
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-2


def test_teague_matches_poisson_for_flat_intensity():
    g = Grid2.square(16, 0.3)
    rng = np.random.default_rng(4)
    i0 = np.full((2, 16, 16), 0.7)
    # band-limited: the gradient-divergence pair drops the Nyquist row the Laplacian keeps
    d = np.fft.ifft2(np.fft.fft2(rng.standard_normal(i0.shape)) * (np.abs(np.fft.fftfreq(16)) < 0.5)[:, None]
                     * (np.abs(np.fft.fftfreq(16)) < 0.5)[None, :]).real
    np.testing.assert_allclose(tie_phase(i0, d, LAM, g, variant="teague"), tie_phase(i0, d, LAM, g), atol=1e-9)


def test_teague_solves_full_equation():
    g = Grid2.square(32, 0.3)
    y, x = g.coords()
    i0 = (1.0 + 0.2 * np.cos(2 * np.pi * x / 9.6) * np.ones((32, 1)))[None]
    phi = (0.4 * np.sin(2 * np.pi * x / 4.8) * np.ones((32, 1)))[None]
    i_deriv = -(LAM / (2 * np.pi)) * spectral_divergence(i0[0] * spectral_gradient(phi[0], g), g)[None]
    # the flux I grad(phi) is curl-free when both vary along one axis, so the two solves are exact
    out = tie_phase(i0, i_deriv, LAM, g, variant="teague")
    assert np.abs(out - (phi - phi.mean())).max() < 1e-12
    poisson = tie_phase(i0, i_deriv, LAM, g)
    assert np.abs(poisson - (phi - phi.mean())).max() > 1e-2


@pytest.fixture(scope="module")
def gaas_pair():
    gaas = preset_structure("GaAs")
    return [simulate_4d(potential_slices(gaas, n=16, n_cells_z=c), 20.0, None, 50.0) for c in (1, 5)]


def test_thin_gaas_correlation(gaas_pair):
    res = tie_reconstruct(gaas_pair[0])
    r = np.corrcoef(res.phase_proj.ravel(), gaas_pair[0].proj_phase_gt.ravel())[0, 1]
    assert r > 0.8


def test_thickness_ordering_and_runtime(gaas_pair):
    thin, thick = (tie_reconstruct(d) for d in gaas_pair)
    assert thick.mse > thin.mse
    assert thin.wall_time < gd_reconstruct(gaas_pair[0]).wall_time
    assert thin.diagnostics["dark_channels"] == 0
