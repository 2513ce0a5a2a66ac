"""Periodic 2D field arithmetic shared by every other module.

Arrays are indexed ``[..., y, x]``; all operators act on the last two axes so
a stack of channels can be processed in one call. Transforms are unitary
(``norm="ortho"``) and the forward kernel is ``exp(-i 2 pi q.r)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid2:
    """Regular periodic sampling grid.

    Parameters
    ----------
    n_y, n_x : int
        Pixel counts (>= 2).
    pitch_y, pitch_x : float
        Pixel spacing in Angstrom.
    """

    n_y: int
    n_x: int
    pitch_y: float = 1.0
    pitch_x: float = 1.0

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError(f"grid dimensions must be >= 2, got {self.shape}")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ValueError("grid pitch must be positive")

    @classmethod
    def square(cls, n: int, pitch: float = 1.0) -> "Grid2":
        return cls(n, n, pitch, pitch)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_y, self.n_x)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.n_y * self.pitch_y, self.n_x * self.pitch_x)

    def freqs(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable frequency axes ``(qy[:, None], qx[None, :])`` in 1/Angstrom."""
        qy = np.fft.fftfreq(self.n_y, d=self.pitch_y)
        qx = np.fft.fftfreq(self.n_x, d=self.pitch_x)
        return qy[:, None], qx[None, :]

    def q2(self) -> np.ndarray:
        qy, qx = self.freqs()
        return qy**2 + qx**2

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates ``(y[:, None], x[None, :])`` in Angstrom."""
        y = np.arange(self.n_y) * self.pitch_y
        x = np.arange(self.n_x) * self.pitch_x
        return y[:, None], x[None, :]


def _derivative_symbols(grid: Grid2) -> tuple[np.ndarray, np.ndarray]:
    """First-derivative multipliers ``i 2 pi q`` with the Nyquist bin zeroed.

    An odd derivative of a real field has no real-valued Nyquist component;
    zeroing it keeps gradient and divergence exact negative adjoints.
    """
    qy, qx = grid.freqs()
    qy = qy.copy()
    qx = qx.copy()
    if grid.n_y % 2 == 0:
        qy[grid.n_y // 2, 0] = 0.0
    if grid.n_x % 2 == 0:
        qx[0, grid.n_x // 2] = 0.0
    return 2j * np.pi * qy, 2j * np.pi * qx


def _check_finite(values: np.ndarray, what: str = "field"):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


def _check_grid(values: np.ndarray, grid: Grid2):
    if values.shape[-2:] != grid.shape:
        raise ValueError(f"array trailing shape {values.shape[-2:]} does not match grid {grid.shape}")


def fft2(values: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Unitary 2D DFT over the last two axes.

    ``direction`` is ``"forward"`` or ``"inverse"``; the pair is an exact
    inverse and preserves the L2 norm.
    """
    values = np.asarray(values)
    _check_finite(values)
    if values.ndim < 2 or min(values.shape[-2:]) < 2:
        raise ValueError("fft2 needs at least a 2x2 field")
    if direction == "forward":
        return np.fft.fft2(values, norm="ortho")
    if direction == "inverse":
        return np.fft.ifft2(values, norm="ortho")
    raise ValueError(f"unknown direction {direction!r}")


def spectral_gradient(phi: np.ndarray, grid: Grid2) -> np.ndarray:
    """Spectral gradient of a real periodic field.

    Returns an array with a new axis in front of the spatial axes holding
    ``(d/dy, d/dx)`` in units of ``phi`` per Angstrom. Leading batch axes of
    ``phi`` are kept before the component axis: ``(..., 2, n_y, n_x)``.
    """
    phi = np.asarray(phi, dtype=float)
    _check_finite(phi)
    _check_grid(phi, grid)
    dy, dx = _derivative_symbols(grid)
    spec = np.fft.fft2(phi)
    gy = np.fft.ifft2(dy * spec).real
    gx = np.fft.ifft2(dx * spec).real
    return np.stack([gy, gx], axis=-3)


def spectral_divergence(v: np.ndarray, grid: Grid2) -> np.ndarray:
    """Spectral divergence of a ``(..., 2, n_y, n_x)`` vector field ordered (y, x)."""
    v = np.asarray(v, dtype=float)
    _check_finite(v)
    if v.ndim < 3 or v.shape[-3] != 2:
        raise ValueError("vector field needs a component axis of length 2 at position -3")
    _check_grid(v, grid)
    dy, dx = _derivative_symbols(grid)
    out = np.fft.ifft2(dy * np.fft.fft2(v[..., 0, :, :]) + dx * np.fft.fft2(v[..., 1, :, :]))
    return out.real


def laplacian_symbol(grid: Grid2) -> np.ndarray:
    """Fourier multiplier ``-4 pi^2 |q|^2`` of the periodic Laplacian."""
    return -4.0 * np.pi**2 * grid.q2()


def spectral_laplacian(phi: np.ndarray, grid: Grid2) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    _check_grid(phi, grid)
    return np.fft.ifft2(laplacian_symbol(grid) * np.fft.fft2(phi)).real


def poisson_solve(rhs: np.ndarray, grid: Grid2, tikhonov_eps: float = 0.0) -> np.ndarray:
    """Solve ``laplacian(phi) = rhs`` on the periodic grid.

    Each non-DC Fourier mode is divided by ``-4 pi^2 |q|^2 - eps``; the DC mode
    is set to zero, so the result is zero-mean. With ``eps = 0`` this is the
    pseudo-inverse of the spectral Laplacian.
    """
    rhs = np.asarray(rhs, dtype=float)
    _check_finite(rhs, "rhs")
    _check_grid(rhs, grid)
    if tikhonov_eps < 0:
        raise ValueError("tikhonov_eps must be >= 0")
    denom = laplacian_symbol(grid) - tikhonov_eps
    denom[0, 0] = 1.0
    spec = np.fft.fft2(rhs) / denom
    spec[..., 0, 0] = 0.0
    return np.fft.ifft2(spec).real


def fresnel_kernel(grid: Grid2, dz: float, wavelength: float) -> np.ndarray:
    """Paraxial free-space transfer function ``exp(-i pi lambda |q|^2 dz)``."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return np.exp(-1j * np.pi * wavelength * dz * grid.q2())


def fresnel_propagate(wave: np.ndarray, grid: Grid2, dz: float, wavelength: float) -> np.ndarray:
    """Propagate a complex field by ``dz`` Angstrom (negative dz back-propagates)."""
    wave = np.asarray(wave)
    _check_grid(wave, grid)
    if dz == 0:
        return wave.astype(complex, copy=True)
    h = fresnel_kernel(grid, dz, wavelength)
    return np.fft.ifft2(h * np.fft.fft2(wave))
