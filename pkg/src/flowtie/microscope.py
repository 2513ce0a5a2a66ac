"""Probe formation, multislice scattering and 4D-STEM defocus-triplet datasets.

Diffraction stacks are laid out ``(N*N, S_y, S_x)``: the first axis is the
detector pixel in (unshifted) DFT order, flattened row-major, and the last two
axes index the scan position.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fieldmath import Grid2, fresnel_kernel
from .specimen import PotentialSlices

DENSE_LIMIT = 32


@dataclass
class Probe:
    grid: Grid2
    semi_angle: float  # mrad
    defocus: float  # Angstrom
    wavelength: float  # Angstrom
    values: np.ndarray = field(repr=False)

    @property
    def spectrum(self) -> np.ndarray:
        return np.fft.fft2(self.values, norm="ortho")


@dataclass(frozen=True)
class ScanGrid:
    """Pixel-aligned raster scan: ``s_y x s_x`` positions ``step`` pixels apart."""

    s_y: int
    s_x: int
    step_y: int = 1
    step_x: int = 1
    offset_y: int = 0
    offset_x: int = 0

    @classmethod
    def tiling(cls, grid: Grid2, s: int) -> "ScanGrid":
        """Square scan covering the periodic cell with ``s`` positions per axis."""
        if grid.n_y % s or grid.n_x % s:
            raise ValueError(f"scan of {s} positions does not tile a {grid.shape} grid")
        return cls(s, s, grid.n_y // s, grid.n_x // s)

    @property
    def n_positions(self) -> int:
        return self.s_y * self.s_x

    def check_covers(self, grid: Grid2):
        if self.s_y * self.step_y != grid.n_y or self.s_x * self.step_x != grid.n_x:
            raise ValueError(f"scan {self.s_y}x{self.s_x} step ({self.step_y},{self.step_x}) px "
                             f"does not tile grid {grid.shape}")

    def pixel_positions(self) -> np.ndarray:
        """``(S, 2)`` integer (row, col) probe positions, scan-major row-major order."""
        iy = self.offset_y + self.step_y * np.arange(self.s_y)
        ix = self.offset_x + self.step_x * np.arange(self.s_x)
        yy, xx = np.meshgrid(iy, ix, indexing="ij")
        return np.stack([yy.ravel(), xx.ravel()], axis=1)

    def step_angstrom(self, grid: Grid2) -> tuple[float, float]:
        return self.step_y * grid.pitch_y, self.step_x * grid.pitch_x


def make_probe(grid: Grid2, semi_angle: float, defocus: float, wavelength: float) -> Probe:
    """Aberration-free probe with a hard aperture, centred on pixel (0, 0).

    ``semi_angle`` is in mrad. The spectrum is the aperture disc times the
    defocus phase ``exp(-i pi lambda defocus |q|^2)``; the real-space probe is
    normalised to unit total intensity.
    """
    if semi_angle <= 0:
        raise ValueError("semi_angle must be positive")
    q_cut = semi_angle * 1e-3 / wavelength
    nyquist = min(0.5 / grid.pitch_y, 0.5 / grid.pitch_x)
    if q_cut > nyquist:
        raise ValueError(f"aperture cutoff {q_cut:.4g} 1/A exceeds Nyquist {nyquist:.4g} 1/A (aliased probe)")
    aperture = grid.q2() <= q_cut**2
    if aperture.sum() < 4:
        raise ValueError("aperture contains fewer than 4 spectral samples")
    spectrum = aperture * fresnel_kernel(grid, defocus, wavelength)
    values = np.fft.ifft2(spectrum, norm="ortho")
    values /= np.sqrt(np.sum(np.abs(values) ** 2))
    return Probe(grid, semi_angle, defocus, wavelength, values)


def shifted_probes(probe: Probe, scan: ScanGrid) -> np.ndarray:
    """``(S, N, N)`` copies of the probe rolled onto every scan position."""
    return np.stack([np.roll(probe.values, tuple(p), axis=(0, 1)) for p in scan.pixel_positions()])


def _run_slices(waves: np.ndarray, transmission: np.ndarray, propagator: np.ndarray) -> np.ndarray:
    m = transmission.shape[0]
    for k in range(m):
        waves = waves * transmission[k]
        if k < m - 1:
            waves = np.fft.ifft2(propagator * np.fft.fft2(waves))
    return waves


def multislice_exitwave(probe: Probe, shift, slices: PotentialSlices) -> np.ndarray:
    """Exit wave for the probe placed at pixel ``shift = (row, col)``."""
    if probe.grid.shape != slices.grid.shape:
        raise ValueError("probe and potential grids differ")
    wave = np.roll(probe.values, tuple(int(s) for s in shift), axis=(0, 1))
    prop = fresnel_kernel(slices.grid, slices.delta_z, slices.wavelength)
    return _run_slices(wave, slices.transmission(), prop)


def exit_waves(probe: Probe, slices: PotentialSlices, scan: ScanGrid) -> np.ndarray:
    """Lab-frame exit waves for every scan position, shape ``(S, N, N)``."""
    if probe.grid.shape != slices.grid.shape:
        raise ValueError("probe and potential grids differ")
    prop = fresnel_kernel(slices.grid, slices.delta_z, slices.wavelength)
    return _run_slices(shifted_probes(probe, scan), slices.transmission(), prop)


def recentre(waves: np.ndarray, scan: ScanGrid, inverse: bool = False) -> np.ndarray:
    """Roll each lab-frame wave so its probe position sits at pixel (0, 0).

    ``inverse=True`` undoes the roll (probe frame -> lab frame).
    """
    sign = 1 if inverse else -1
    out = np.empty_like(waves)
    for i, p in enumerate(scan.pixel_positions()):
        out[i] = np.roll(waves[i], (sign * int(p[0]), sign * int(p[1])), axis=(0, 1))
    return out


def wrapped_scan_gradient(e: np.ndarray, step: tuple[float, float]) -> np.ndarray:
    """Phase gradient over the scan axes from arg of neighbour products.

    ``e`` has shape ``(C, S_y, S_x)``; returns ``(2, C, S_y, S_x)`` ordered
    (y, x). Central differences with periodic wrap; free of 2 pi jumps.
    """
    gy = np.angle(np.roll(e, -1, axis=-2) * np.conj(np.roll(e, 1, axis=-2))) / (2.0 * step[0])
    gx = np.angle(np.roll(e, -1, axis=-1) * np.conj(np.roll(e, 1, axis=-1))) / (2.0 * step[1])
    return np.stack([gy, gx])


@dataclass
class FourDDataset:
    """Defocus-triplet 4D-STEM data plus ground-truth labels."""

    i_minus: np.ndarray
    i_zero: np.ndarray
    i_plus: np.ndarray
    phase_gt: np.ndarray
    vfield_gt: np.ndarray
    proj_phase_gt: np.ndarray
    grid: Grid2
    scan: ScanGrid
    wavelength: float
    sigma: float
    delta_z_defocus: float
    semi_angle: float
    thickness: float = 0.0
    n_slices: int = 1
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.i_zero.shape[0]

    @property
    def scan_step(self) -> tuple[float, float]:
        return self.scan.step_angstrom(self.grid)

    def i_deriv(self) -> np.ndarray:
        return axial_derivative(self.i_plus, self.i_minus, self.delta_z_defocus)

    def probe(self, defocus: float = 0.0) -> Probe:
        return make_probe(self.grid, self.semi_angle, defocus, self.wavelength)

    def intensity_matrix(self) -> np.ndarray:
        """In-focus intensities as an ``N^2 x S`` matrix."""
        return self.i_zero.reshape(self.n_channels, -1)


def axial_derivative(i_plus: np.ndarray, i_minus: np.ndarray, delta_z: float) -> np.ndarray:
    """Central difference ``(I(+dz) - I(-dz)) / (2 dz)``."""
    i_plus = np.asarray(i_plus, dtype=float)
    i_minus = np.asarray(i_minus, dtype=float)
    if i_plus.shape != i_minus.shape:
        raise ValueError(f"shape mismatch {i_plus.shape} vs {i_minus.shape}")
    if delta_z <= 0:
        raise ValueError("delta_z must be positive")
    return (i_plus - i_minus) / (2.0 * delta_z)


def diffraction(probe: Probe, slices: PotentialSlices, scan: ScanGrid) -> np.ndarray:
    """Probe-frame far-field exit waves ``(N*N, S_y, S_x)`` (complex)."""
    lab = exit_waves(probe, slices, scan)
    far = np.fft.fft2(recentre(lab, scan), norm="ortho")
    n2 = slices.grid.n_y * slices.grid.n_x
    return far.reshape(scan.s_y, scan.s_x, n2).transpose(2, 0, 1)


def simulate_4d(slices: PotentialSlices, semi_angle: float = 20.0, scan: ScanGrid | None = None,
                delta_z_defocus: float = 50.0) -> FourDDataset:
    """Simulate the defocus triplet and ground-truth labels.

    Exit waves are expressed in the probe frame (object shifted under a
    fixed probe), so a specimen-free run has scan-invariant diffraction phase.
    """
    grid = slices.grid
    if scan is None:
        scan = ScanGrid(grid.n_y, grid.n_x)
    scan.check_covers(grid)
    if delta_z_defocus <= 0:
        raise ValueError("delta_z_defocus must be positive")
    stacks = {}
    for tag, df in (("minus", -delta_z_defocus), ("zero", 0.0), ("plus", delta_z_defocus)):
        probe = make_probe(grid, semi_angle, df, slices.wavelength)
        far = diffraction(probe, slices, scan)
        stacks[tag] = np.abs(far) ** 2
        if tag == "zero":
            e_zero = far
    step = scan.step_angstrom(grid)
    pos = scan.pixel_positions()
    proj = slices.projected_phase()[pos[:, 0], pos[:, 1]].reshape(scan.s_y, scan.s_x)
    return FourDDataset(
        i_minus=stacks["minus"], i_zero=stacks["zero"], i_plus=stacks["plus"],
        phase_gt=np.angle(e_zero), vfield_gt=wrapped_scan_gradient(e_zero, step),
        proj_phase_gt=proj, grid=grid, scan=scan, wavelength=slices.wavelength,
        sigma=slices.sigma, delta_z_defocus=float(delta_z_defocus), semi_angle=float(semi_angle),
        thickness=slices.thickness, n_slices=slices.n_slices, name=slices.name,
    )


# --- dense matrix formulation ----------------------------------------------------

def dft_matrix(grid: Grid2) -> np.ndarray:
    """Unitary 2D DFT acting on row-major vectorised fields."""
    fy = np.fft.fft(np.eye(grid.n_y), norm="ortho", axis=0)
    fx = np.fft.fft(np.eye(grid.n_x), norm="ortho", axis=0)
    return np.kron(fy, fx)


def probe_matrix(probe: Probe, scan: ScanGrid) -> np.ndarray:
    """``N^2 x S`` matrix whose columns are the vectorised shifted probes."""
    return shifted_probes(probe, scan).reshape(scan.n_positions, -1).T


def matrix_potential(slices: PotentialSlices) -> np.ndarray:
    """Dense scattering operator ``D(O_m) V ... V D(O_1)``."""
    grid = slices.grid
    n2 = grid.n_y * grid.n_x
    if grid.n_y > DENSE_LIMIT or grid.n_x > DENSE_LIMIT:
        raise ValueError(f"dense matrix path limited to N <= {DENSE_LIMIT}")
    f = dft_matrix(grid)
    h = fresnel_kernel(grid, slices.delta_z, slices.wavelength).ravel()
    prop = f.conj().T @ (h[:, None] * f)
    trans = slices.transmission().reshape(slices.n_slices, n2)
    a = np.diag(trans[0])
    for k in range(1, slices.n_slices):
        a = trans[k][:, None] * (prop @ a)
    return a


def matrix_forward(slices: PotentialSlices, probe: Probe, scan: ScanGrid):
    """Return ``(I, A, P)`` with ``I = |F A P|^2`` in lab-frame column order."""
    a = matrix_potential(slices)
    p = probe_matrix(probe, scan)
    w = dft_matrix(slices.grid) @ (a @ p)
    return np.abs(w) ** 2, a, p
