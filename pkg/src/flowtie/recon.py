"""Shared inference tail, the gradient-descent baseline and phase metrics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .fieldmath import Grid2, _derivative_symbols
from .microscope import DENSE_LIMIT, ScanGrid, dft_matrix, probe_matrix

log = logging.getLogger(__name__)


@dataclass
class ReconResult:
    method: str
    phase_proj: np.ndarray
    mse: float
    wall_time: float
    matrix_potential: np.ndarray | None = None
    phase_stack: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def build(cls, method, ds, phase_proj, wall_time, matrix=None, phase_stack=None, config=None, diagnostics=None):
        return cls(method, phase_proj, phase_mse(phase_proj, ds.proj_phase_gt), max(wall_time, 1e-12),
                   matrix, phase_stack, dict(config or {}), dict(diagnostics or {}))


def integrate_vector_field(v: np.ndarray, grid: Grid2) -> np.ndarray:
    """Least-squares (Frankot-Chellappa) integral of ``(..., 2, H, W)`` gradients.

    Uses the same derivative symbols as ``spectral_gradient``, so the result is
    the exact minimiser of ``||grad(phi) - v||^2``; the curl part of ``v`` is
    discarded and the output is zero-mean.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim < 3 or v.shape[-3] != 2:
        raise ValueError("vector field needs a component axis of length 2 at position -3")
    if v.shape[-2:] != grid.shape:
        raise ValueError(f"field shape {v.shape[-2:]} does not match grid {grid.shape}")
    sy, sx = _integrator_symbols(grid, conj=True)
    return np.fft.ifft2(sy * np.fft.fft2(v[..., 0, :, :]) + sx * np.fft.fft2(v[..., 1, :, :])).real


def _integrator_symbols(grid: Grid2, conj: bool = True):
    dy, dx = _derivative_symbols(grid)
    norm = np.abs(dy) ** 2 + np.abs(dx) ** 2
    inv = np.zeros_like(norm)
    np.divide(1.0, norm, out=inv, where=norm > 0)
    if conj:
        return np.conj(dy) * inv, np.conj(dx) * inv
    return dy * inv, dx * inv


def integrate_vector_field_adjoint(g: np.ndarray, grid: Grid2) -> np.ndarray:
    """Adjoint of ``integrate_vector_field``: maps ``(..., H, W)`` to ``(..., 2, H, W)``."""
    sy, sx = _integrator_symbols(grid, conj=False)
    spec = np.fft.fft2(g)
    return np.stack([np.fft.ifft2(sy * spec).real, np.fft.ifft2(sx * spec).real], axis=-3)


def assemble_exit_wave(i_zero: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """``sqrt(I0) * exp(i phase)``."""
    i_zero = np.asarray(i_zero, dtype=float)
    if np.any(i_zero < 0):
        raise ValueError("negative intensity")
    return np.sqrt(i_zero) * np.exp(1j * np.asarray(phase, dtype=float))


def to_lab_frame(e_stack: np.ndarray, grid: Grid2, scan: ScanGrid) -> np.ndarray:
    """Probe-frame far-field stack ``(N^2, S_y, S_x)`` -> lab-frame ``N^2 x S`` matrix.

    A real-space roll by the probe position is a linear phase ramp on the
    detector, so this is exact for pixel-aligned scans.
    """
    qy, qx = grid.freqs()
    pos = scan.pixel_positions()
    y = pos[:, 0] * grid.pitch_y
    x = pos[:, 1] * grid.pitch_x
    ramp = np.exp(-2j * np.pi * (np.broadcast_to(qy, grid.shape).ravel()[:, None] * y[None, :]
                                 + np.broadcast_to(qx, grid.shape).ravel()[:, None] * x[None, :]))
    return e_stack.reshape(e_stack.shape[0], -1) * ramp


def estimate_matrix_potential(e_pred: np.ndarray, probe_mat: np.ndarray, grid: Grid2,
                              ridge: float | None = None) -> np.ndarray:
    """``A ~ F^-1 E P^H diag(1 / (diag(P P^H) + ridge))``.

    ``ridge=None`` uses ``1e-6 * max(diag(P P^H))``.
    """
    if grid.n_y > DENSE_LIMIT or grid.n_x > DENSE_LIMIT:
        raise ValueError(f"dense matrix path limited to N <= {DENSE_LIMIT}")
    if e_pred.shape != probe_mat.shape:
        raise ValueError(f"exit-wave matrix {e_pred.shape} and probe matrix {probe_mat.shape} differ")
    d = np.sum(np.abs(probe_mat) ** 2, axis=1)
    if np.all(d < 1e-12):
        raise ValueError("probe never illuminates the grid")
    if ridge is None:
        ridge = 1e-6 * d.max()
    n_cols = e_pred.shape[1]
    real_space = np.fft.ifft2(e_pred.T.reshape(n_cols, *grid.shape), norm="ortho").reshape(n_cols, -1).T
    m = real_space @ probe_mat.conj().T
    return m / (d + ridge)[None, :]


def project_phase(a_pred: np.ndarray, grid: Grid2, scan: ScanGrid, return_mask: bool = False):
    """Zero-mean phase of ``diag(A)`` sampled at the scan positions."""
    a_pred = np.asarray(a_pred)
    n2 = grid.n_y * grid.n_x
    if a_pred.shape != (n2, n2):
        raise ValueError(f"expected a {n2}x{n2} matrix, got {a_pred.shape}")
    diag = np.diagonal(a_pred).reshape(grid.shape)
    dead = np.abs(diag) < 1e-300
    phase = np.where(dead, 0.0, np.angle(diag))
    pos = scan.pixel_positions()
    out = phase[pos[:, 0], pos[:, 1]].reshape(scan.s_y, scan.s_x)
    mask = dead[pos[:, 0], pos[:, 1]].reshape(scan.s_y, scan.s_x)
    out = out - out.mean()
    if return_mask:
        return out, mask
    return out


def inference_tail(ds, phase_stack: np.ndarray, ridge: float | None = None):
    """Exit wave -> matrix potential -> projected phase, shared by all methods."""
    e = assemble_exit_wave(ds.i_zero, phase_stack)
    e_lab = to_lab_frame(e, ds.grid, ds.scan)
    p = probe_matrix(ds.probe(0.0), ds.scan)
    a_pred = estimate_matrix_potential(e_lab, p, ds.grid, ridge)
    phase_proj, dead = project_phase(a_pred, ds.grid, ds.scan, return_mask=True)
    return a_pred, phase_proj, {"off_diagonal_fraction": off_diagonal_fraction(a_pred),
                                "dead_pixels": int(dead.sum())}


def off_diagonal_fraction(a: np.ndarray) -> float:
    total = np.sum(np.abs(a) ** 2)
    if total == 0:
        return 0.0
    return float(1.0 - np.sum(np.abs(np.diagonal(a)) ** 2) / total)


def phase_mse(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared error after removing the mean difference."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"grid mismatch {pred.shape} vs {gt.shape}")
    diff = pred - gt
    return float(np.mean((diff - diff.mean()) ** 2))


# --- gradient-descent baseline ------------------------------------------------------

def spectral_norm_sq(p: np.ndarray, n_iter: int = 20, seed: int = 0) -> float:
    """Largest eigenvalue of ``P P^H`` by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(p.shape[0]) + 1j * rng.standard_normal(p.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = p @ (p.conj().T @ x)
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return lam


def amplitude_objective(sqrt_i: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum((sqrt_i - np.abs(w)) ** 2))


def gd_reconstruct(ds, iters: int = 100, step: float | None = None, keep_matrix: bool = False,
                   max_halvings: int = 30) -> "ReconResult":
    """Amplitude-flow gradient descent on ``|| sqrt(I) - |F A P| ||_F^2`` from ``A = I``.

    The step starts at ``1 / ||P||_2^2``. A step that would raise the
    objective is rejected and retried with half the step size.
    """
    t0 = time.perf_counter()
    grid, scan = ds.grid, ds.scan
    sqrt_i = np.sqrt(ds.intensity_matrix())
    p = probe_matrix(ds.probe(0.0), scan)
    f = dft_matrix(grid)
    fh = f.conj().T
    ph = p.conj().T
    eta = step if step is not None else 1.0 / spectral_norm_sq(p)
    a = np.eye(p.shape[0], dtype=complex)
    w = f @ (a @ p)
    obj = amplitude_objective(sqrt_i, w)
    history = [obj]
    halvings = 0
    for it in range(iters):
        mag = np.abs(w)
        resid = (sqrt_i - mag) * w / np.maximum(mag, 1e-12)
        grad = -(fh @ resid) @ ph
        for _ in range(max_halvings + 1):
            a_new = a - eta * grad
            w_new = f @ (a_new @ p)
            obj_new = amplitude_objective(sqrt_i, w_new)
            if obj_new <= obj:
                break
            eta *= 0.5
            halvings += 1
            log.info("gd iteration %d: objective rose, step halved to %.3g", it, eta)
        else:
            history.append(obj)
            continue
        a, w, obj = a_new, w_new, obj_new
        history.append(obj)
    phase_proj = project_phase(a, grid, scan)
    wall = time.perf_counter() - t0
    return ReconResult.build("gd", ds, phase_proj, wall, a if keep_matrix else None, None,
                             {"iters": iters, "step": eta},
                             {"objective": history, "halvings": halvings,
                              "off_diagonal_fraction": off_diagonal_fraction(a)})


def flowtie_reconstruct(ds, model, keep_matrix: bool = False) -> ReconResult:
    """Predict per-channel flow, integrate it to phases and run the shared tail."""
    from .tie import scan_grid_of

    c, sy, sx = ds.i_zero.shape
    if model.channels != c:
        raise ValueError(f"model expects {model.channels} channels, dataset has {c}")
    if sy < model.kernel or sx < model.kernel:
        raise ValueError("scan grid smaller than the model kernel")
    t0 = time.perf_counter()
    model.eval()
    v_pred = model.forward(ds.i_deriv()[None])[0]
    phi = integrate_vector_field(np.moveaxis(v_pred, 0, -3), scan_grid_of(ds))
    a_pred, phase_proj, diag = inference_tail(ds, phi)
    wall = time.perf_counter() - t0
    return ReconResult.build("flowtie", ds, phase_proj, wall, a_pred if keep_matrix else None, phi,
                             {"model": model.config()}, diag)
