from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; zero when both vanish."""
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def gradcheck(f, x: np.ndarray, analytic: np.ndarray, h: float = 1e-5, max_checks: int | None = None,
              seed: int = 0) -> float:
    """Relative error between ``analytic`` and a finite-difference gradient of ``f``.

    With ``max_checks`` only that many randomly chosen entries are compared.
    """
    indices = None
    if max_checks is not None and max_checks < x.size:
        indices = np.random.default_rng(seed).choice(x.size, max_checks, replace=False)
    num = numerical_grad(f, x, h, indices)
    if indices is None:
        return rel_error(analytic, num)
    return rel_error(analytic.reshape(-1)[indices], num.reshape(-1)[indices])
