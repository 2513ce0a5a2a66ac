from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay (Loshchilov & Hutter), bias-corrected."""

    def __init__(self, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.step_count = 0
        self.exp_avg: dict[str, np.ndarray] = {}
        self.exp_avg_sq: dict[str, np.ndarray] = {}
        self.rejected = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> bool:
        """Update ``params`` in place. Returns False (and leaves everything untouched) on a non-finite gradient."""
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                self.rejected += 1
                log.warning("non-finite gradient in %s; step rejected", name)
                return False
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in params.items():
            g = grads[name]
            m = self.exp_avg.setdefault(name, np.zeros_like(p))
            v = self.exp_avg_sq.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True

    def state(self) -> dict:
        tensors = {}
        for name in self.exp_avg:
            tensors[f"exp_avg.{name}"] = self.exp_avg[name]
            tensors[f"exp_avg_sq.{name}"] = self.exp_avg_sq[name]
        meta = {"lr": self.lr, "betas": list(self.betas), "eps": self.eps,
                "weight_decay": self.weight_decay, "step": self.step_count}
        return {"meta": meta, "tensors": tensors}

    @classmethod
    def from_state(cls, state: dict) -> "AdamW":
        meta = state["meta"]
        opt = cls(meta["lr"], meta["betas"], meta["eps"], meta["weight_decay"])
        opt.step_count = int(meta["step"])
        for key, value in state["tensors"].items():
            kind, name = key.split(".", 1)
            target = opt.exp_avg if kind == "exp_avg" else opt.exp_avg_sq
            target[name] = np.array(value)
        return opt
