"""FlowTIE training losses, each returning ``(value, d value / d v_pred)``.

Vector fields are ``(B, 2, C, H, W)`` with components ordered (y, x) and H, W
the scan axes. ``scan_step`` is either one ``(step_y, step_x)`` pair in
Angstrom or a ``(B, 2)`` array of per-sample steps.
"""
from __future__ import annotations

import numpy as np

from ..fieldmath import Grid2
from ..recon import integrate_vector_field, integrate_vector_field_adjoint


def _steps(scan_step, batch: int) -> np.ndarray:
    s = np.asarray(scan_step, dtype=float)
    if s.ndim == 1:
        s = np.broadcast_to(s, (batch, 2))
    if s.shape != (batch, 2) or np.any(s <= 0):
        raise ValueError(f"scan_step must be positive with shape (2,) or ({batch}, 2)")
    return s


def central_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Periodic central difference ``(f[i+1] - f[i-1]) / 2h``. Its adjoint is its negative."""
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)


def stencil_divergence(flux: np.ndarray, step) -> np.ndarray:
    """Divergence of a ``(2, C, H, W)`` field with periodic central differences."""
    return central_diff(flux[0], -2, step[0]) + central_diff(flux[1], -1, step[1])


def loss_vf(v_pred: np.ndarray, v_gt: np.ndarray):
    if v_pred.shape != v_gt.shape:
        raise ValueError(f"shape mismatch {v_pred.shape} vs {v_gt.shape}")
    d = v_pred - v_gt
    return float(np.mean(d * d)), 2.0 * d / d.size


def loss_cont(i_deriv: np.ndarray, i_zero: np.ndarray, v_pred: np.ndarray, wavelength: float, scan_step):
    """Mean squared residual of ``dI/dz + (lambda / 2 pi) div(I0 v)``."""
    b = v_pred.shape[0]
    if i_deriv.shape != i_zero.shape or v_pred.shape != (b, 2, *i_zero.shape[1:]) or i_zero.shape[0] != b:
        raise ValueError(f"inconsistent shapes {i_deriv.shape}, {i_zero.shape}, {v_pred.shape}")
    steps = _steps(scan_step, b)
    k = wavelength / (2.0 * np.pi)
    resid = np.empty_like(i_deriv, dtype=float)
    for n in range(b):
        resid[n] = i_deriv[n] + k * stencil_divergence(i_zero[n][None] * v_pred[n], steps[n])
    value = float(np.mean(resid**2))
    g = 2.0 * resid / resid.size
    grad = np.empty_like(v_pred, dtype=float)
    for n in range(b):
        grad[n, 0] = -k * central_diff(g[n], -2, steps[n, 0]) * i_zero[n]
        grad[n, 1] = -k * central_diff(g[n], -1, steps[n, 1]) * i_zero[n]
    return value, grad


def loss_phase(v_pred: np.ndarray, phase_gt: np.ndarray, scan_step):
    """Mean squared error between the integrated field and the zero-mean phase."""
    b = v_pred.shape[0]
    if v_pred.shape != (b, 2, *phase_gt.shape[1:]) or phase_gt.shape[0] != b:
        raise ValueError(f"inconsistent shapes {v_pred.shape}, {phase_gt.shape}")
    steps = _steps(scan_step, b)
    h, w = phase_gt.shape[-2:]
    target = phase_gt - phase_gt.mean(axis=(-2, -1), keepdims=True)
    err = np.empty_like(phase_gt, dtype=float)
    grids = [Grid2(h, w, steps[n, 0], steps[n, 1]) for n in range(b)]
    for n in range(b):
        err[n] = integrate_vector_field(np.moveaxis(v_pred[n], 0, -3), grids[n]) - target[n]
    value = float(np.mean(err**2))
    g = 2.0 * err / err.size
    grad = np.empty_like(v_pred, dtype=float)
    for n in range(b):
        grad[n] = np.moveaxis(integrate_vector_field_adjoint(g[n], grids[n]), -3, 0)
    return value, grad


def loss_total(v_pred, batch, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the three losses for a batch dict.

    ``batch`` holds ``v_gt``, ``i_deriv``, ``i_zero``, ``phase_gt``,
    ``wavelength`` and ``scan_step``. Returns ``(total, parts, grad)`` where
    ``parts`` maps ``vf``/``cont``/``phase`` to their unweighted values.
    """
    alpha, beta, gamma = weights
    vf, g_vf = loss_vf(v_pred, batch["v_gt"])
    cont, g_cont = loss_cont(batch["i_deriv"], batch["i_zero"], v_pred, batch["wavelength"], batch["scan_step"])
    ph, g_ph = loss_phase(v_pred, batch["phase_gt"], batch["scan_step"])
    total = alpha * vf + beta * cont + gamma * ph
    grad = alpha * g_vf + beta * g_cont + gamma * g_ph
    return total, {"vf": vf, "cont": cont, "phase": ph}, grad
