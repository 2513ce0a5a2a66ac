"""Binary tensor container (``NTC1``) and JSON manifests for datasets and checkpoints.

Tensor file layout, all little-endian::

    b"NTC1" | dtype code u8 | ndim u8 | shape: ndim x u64 | row-major payload

dtype codes: 1 = f32, 2 = f64, 3 = c64 (interleaved re/im f32), 4 = c128.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .fieldmath import Grid2

MAGIC = b"NTC1"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<c8"), 4: np.dtype("<c16")}
CODE_OF = {np.dtype(v).newbyteorder("="): k for k, v in DTYPE_CODES.items()}
MANIFEST = "manifest.json"


class ContainerError(ValueError):
    pass


def _code(dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("=")
    if dt not in CODE_OF:
        raise ContainerError(f"unsupported dtype {dtype}")
    return CODE_OF[dt]


def tensor_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype.kind in "iub":
        array = array.astype(np.float64)
    code = _code(array.dtype)
    if array.ndim > 255:
        raise ContainerError("too many dimensions")
    head = MAGIC + struct.pack("<BB", code, array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return head + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()


def write_tensor(path, array: np.ndarray):
    Path(path).write_bytes(tensor_bytes(array))


def parse_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ContainerError("bad magic; not an NTC1 tensor file")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in DTYPE_CODES:
        raise ContainerError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 6)
    offset = 6 + 8 * ndim
    dt = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - offset != expected:
        raise ContainerError(f"payload is {len(buf) - offset} bytes, header implies {expected}")
    return np.frombuffer(buf, dtype=dt, offset=offset).reshape(shape).astype(dt.newbyteorder("="))


def read_tensor(path) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes())


def read_header(path) -> tuple[int, tuple[int, ...]]:
    with open(path, "rb") as fh:
        head = fh.read(6)
        if head[:4] != MAGIC:
            raise ContainerError(f"{path}: bad magic")
        code, ndim = struct.unpack("<BB", head[4:])
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    return code, tuple(shape)


def write_bundle(directory, tensors: dict[str, np.ndarray], meta: dict, kind: str):
    """Write ``tensors`` as one ``.ntc`` file each plus a manifest echoing shapes and dtypes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        fname = f"{name}.ntc"
        blob = tensor_bytes(arr)
        (directory / fname).write_bytes(blob)
        code, ndim = struct.unpack_from("<BB", blob, 4)
        entries[name] = {"file": fname, "shape": list(struct.unpack_from(f"<{ndim}Q", blob, 6)), "dtype": code}
    manifest = {"format": "NTC1", "kind": kind, "version": __version__, "tensors": entries, "meta": meta}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ContainerError(f"no manifest at {path}")
    return json.loads(path.read_text())


def read_bundle(directory, names=None) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors listed in the manifest, verifying header echoes."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    out = {}
    for name, entry in manifest["tensors"].items():
        if names is not None and name not in names:
            continue
        arr = read_tensor(directory / entry["file"])
        if list(arr.shape) != entry["shape"] or _code(arr.dtype) != entry["dtype"]:
            raise ContainerError(f"{name}: manifest echo does not match file header")
        out[name] = arr
    if names is not None:
        missing = set(names) - set(out)
        if missing:
            raise ContainerError(f"missing tensors: {', '.join(sorted(missing))}")
    return out, manifest


# --- datasets -------------------------------------------------------------------

DATASET_TENSORS = ("i_minus", "i_zero", "i_plus", "phase_gt", "vfield_gt", "proj_phase_gt")


def save_dataset(ds, directory, extra_meta: dict | None = None):
    from dataclasses import asdict

    meta = {
        "name": ds.name,
        "grid": asdict(ds.grid),
        "scan": asdict(ds.scan),
        "wavelength": ds.wavelength,
        "sigma": ds.sigma,
        "delta_z_defocus": ds.delta_z_defocus,
        "semi_angle": ds.semi_angle,
        "thickness": ds.thickness,
        "n_slices": ds.n_slices,
        **ds.meta,
        **(extra_meta or {}),
    }
    return write_bundle(directory, {k: getattr(ds, k) for k in DATASET_TENSORS}, meta, "dataset")


def load_dataset(directory):
    from .microscope import FourDDataset, ScanGrid

    tensors, manifest = read_bundle(directory)
    if manifest.get("kind") != "dataset":
        raise ContainerError(f"{directory} is not a dataset container")
    meta = dict(manifest["meta"])
    known = {"name", "grid", "scan", "wavelength", "sigma", "delta_z_defocus", "semi_angle", "thickness", "n_slices"}
    return FourDDataset(
        **{k: tensors[k] for k in DATASET_TENSORS},
        grid=Grid2(**meta["grid"]), scan=ScanGrid(**meta["scan"]),
        wavelength=meta["wavelength"], sigma=meta["sigma"], delta_z_defocus=meta["delta_z_defocus"],
        semi_angle=meta["semi_angle"], thickness=meta["thickness"], n_slices=meta["n_slices"],
        name=meta["name"], meta={k: v for k, v in meta.items() if k not in known},
    )


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(trainer, directory):
    """Persist best and last model states, optimiser moments and loss history."""
    directory = Path(directory)
    model = trainer.model
    tensors = {f"last.{k}": v for k, v in model.state().items()}
    tensors.update({f"best.{k}": v for k, v in trainer.best_state.items()})
    opt = trainer.optimizer.state()
    tensors.update({f"opt.{k}": v for k, v in opt["tensors"].items()})
    meta = {
        "architecture": model.config(),
        "train_config": trainer.config.to_dict(),
        "optimizer": opt["meta"],
        "epoch": trainer.epoch,
        "best_epoch": trainer.best_epoch,
        "best_val": None if not np.isfinite(trainer.best_val) else trainer.best_val,
        "history": trainer.history,
    }
    return write_bundle(directory, tensors, meta, "checkpoint")


def _split_state(tensors: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}


def load_model(directory, which: str = "best"):
    """Load the ``best`` (default) or ``last`` model from a checkpoint."""
    from .nn.model import FlowModel

    tensors, manifest = read_bundle(directory)
    if manifest.get("kind") != "checkpoint":
        raise ContainerError(f"{directory} is not a checkpoint")
    arch = manifest["meta"]["architecture"]
    model = FlowModel(**arch)
    model.load_state(_split_state(tensors, which))
    return model.eval()


def load_trainer(directory, train_samples, val_samples):
    """Rebuild a Trainer from a checkpoint so training can resume exactly."""
    from .nn.optim import AdamW
    from .nn.train import TrainConfig, Trainer

    tensors, manifest = read_bundle(directory)
    meta = manifest["meta"]
    config = TrainConfig(**meta["train_config"])
    model = load_model(directory, "last").train()
    optimizer = AdamW.from_state({"meta": meta["optimizer"], "tensors": _split_state(tensors, "opt")})
    trainer = Trainer(train_samples, val_samples, config, model, optimizer)
    trainer.epoch = meta["epoch"]
    trainer.history = list(meta["history"])
    trainer.best_state = _split_state(tensors, "best")
    trainer.best_epoch = meta["best_epoch"]
    trainer.best_val = np.inf if meta["best_val"] is None else meta["best_val"]
    return trainer
