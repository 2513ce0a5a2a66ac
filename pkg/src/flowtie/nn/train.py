"""Training loop for the flow predictor."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .losses import loss_total
from .model import FlowModel
from .optim import AdamW

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    weight_decay: float = 0.01
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    width: int = 32
    kernel: int = 3
    batch_size: int = 1
    seed: int = 0
    normalization: str = "sample"

    @property
    def weights(self):
        return (self.alpha, self.beta, self.gamma)

    def to_dict(self):
        return asdict(self)


def sample_from_dataset(ds) -> dict:
    """Training tensors of one FourDDataset (no batch axis)."""
    return {
        "x": ds.i_deriv(),
        "i_deriv": ds.i_deriv(),
        "i_zero": ds.i_zero,
        "v_gt": ds.vfield_gt,
        "phase_gt": ds.phase_gt,
        "scan_step": np.array(ds.scan_step),
        "wavelength": ds.wavelength,
        "name": ds.name,
    }


def collate(samples: list[dict]) -> dict:
    lam = {s["wavelength"] for s in samples}
    if len(lam) != 1:
        raise ValueError("a batch must share one wavelength")
    batch = {k: np.stack([s[k] for s in samples]) for k in ("x", "i_deriv", "i_zero", "v_gt", "phase_gt", "scan_step")}
    batch["wavelength"] = lam.pop()
    return batch


class Trainer:
    """Holds model, optimiser and loss history; one ``run_epoch`` per epoch."""

    def __init__(self, train_samples: list[dict], val_samples: list[dict], config: TrainConfig,
                 model: FlowModel | None = None, optimizer: AdamW | None = None):
        if not train_samples:
            raise ValueError("need at least one training sample")
        self.train_samples, self.val_samples, self.config = train_samples, val_samples, config
        shapes = {s["x"].shape for s in train_samples + val_samples}
        if len(shapes) != 1:
            raise ValueError(f"all samples must share one geometry, got {shapes}")
        channels = train_samples[0]["x"].shape[0]
        if model is None:
            model = FlowModel(channels, config.width, config.kernel, seed=config.seed,
                              normalization=config.normalization)
            model.set_normalization(np.stack([s["x"] for s in train_samples]))
        elif model.channels != channels:
            raise ValueError(f"model expects {model.channels} channels, data has {channels}")
        self.model = model
        self.optimizer = optimizer or AdamW(config.lr, weight_decay=config.weight_decay)
        self.epoch = 0
        self.history: list[dict] = []
        self.best_state = copy.deepcopy(model.state())
        self.best_val = np.inf
        self.best_epoch = 0

    def _batches(self, epoch: int):
        rng = np.random.default_rng([self.config.seed, epoch])
        order = rng.permutation(len(self.train_samples))
        bs = self.config.batch_size
        for start in range(0, len(order), bs):
            yield [self.train_samples[i] for i in order[start:start + bs]]

    def evaluate(self, samples: list[dict]) -> dict:
        """Mean losses over ``samples`` with the model in eval mode."""
        if not samples:
            return {}
        self.model.eval()
        acc = {"vf": 0.0, "cont": 0.0, "phase": 0.0, "total": 0.0}
        for s in samples:
            batch = collate([s])
            total, parts, _ = loss_total(self.model.forward(batch["x"]), batch, self.config.weights)
            acc["total"] += total
            for k, v in parts.items():
                acc[k] += v
        self.model.train()
        return {k: v / len(samples) for k, v in acc.items()}

    def run_epoch(self) -> dict:
        epoch = self.epoch + 1
        self.model.train()
        acc = {"vf": 0.0, "cont": 0.0, "phase": 0.0, "total": 0.0}
        n_batches = 0
        for b_idx, samples in enumerate(self._batches(epoch)):
            batch = collate(samples)
            self.model.zero_grad()
            v_pred = self.model.forward(batch["x"])
            total, parts, grad = loss_total(v_pred, batch, self.config.weights)
            if not np.isfinite(total):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b_idx}: {parts}")
            self.model.backward(grad)
            if not self.optimizer.step(self.model.params(), self.model.grads()):
                raise FloatingPointError(f"non-finite gradient at epoch {epoch}, batch {b_idx}")
            acc["total"] += total
            for k, v in parts.items():
                acc[k] += v
            n_batches += 1
        record = {"epoch": epoch}
        record.update({f"train_{k}": v / n_batches for k, v in acc.items()})
        val = self.evaluate(self.val_samples)
        record.update({f"val_{k}": v for k, v in val.items()})
        score = val.get("total", record["train_total"])
        if score < self.best_val:
            self.best_val, self.best_epoch = score, epoch
            self.best_state = copy.deepcopy(self.model.state())
        self.history.append(record)
        self.epoch = epoch
        return record

    def fit(self, epochs: int | None = None, log_every: int = 0) -> "Trainer":
        target = self.config.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            rec = self.run_epoch()
            if log_every and rec["epoch"] % log_every == 0:
                log.info("epoch %d train %.4g val %.4g", rec["epoch"], rec["train_total"], rec.get("val_total", np.nan))
        return self

    def best_model(self) -> FlowModel:
        model = FlowModel(**self.model.config())
        model.load_state(self.best_state)
        return model.eval()


def train_flowtie(train_datasets, val_datasets, config: TrainConfig | None = None, log_every: int = 0):
    """Train on lists of FourDDataset; returns ``(best_model, trainer)``."""
    config = config or TrainConfig()
    trainer = Trainer([sample_from_dataset(d) for d in train_datasets],
                      [sample_from_dataset(d) for d in val_datasets], config)
    trainer.fit(log_every=log_every)
    return trainer.best_model(), trainer
