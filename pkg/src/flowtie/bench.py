"""Experiment harness behind the command-line verbs.

Every function here takes plain arguments and writes plain files, so the
notebooks and the CLI share one code path.

Corpus layout written by :func:`gen_data`::

    corpus/
      manifest.json            kind "corpus": structures, split, geometry
      structures/s000-<name>/  one directory per random structure
        structure.json
        c1/ c5/ ...            one dataset container per thickness (unit cells)
      test/GaAs-c1/ ...        held-out preset datasets
"""
from __future__ import annotations

import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .container import (
    ContainerError,
    load_dataset,
    load_model,
    load_trainer,
    read_bundle,
    save_checkpoint,
    save_dataset,
    write_bundle,
)
from .microscope import ScanGrid, simulate_4d
from .specimen import potential_slices, preset_structure, random_cubic, save_structure

log = logging.getLogger(__name__)

METHODS = ("tie", "flowtie", "gd")


@dataclass
class GenConfig:
    structures: int = 10
    n: int = 16
    scan: int = 16
    seed: int = 7
    accel_kv: float = 300.0
    semi_angle: float = 20.0
    delta_z_defocus: float = 50.0
    cells: tuple[int, ...] = (1, 3, 5)
    val_fraction: float = 0.1
    presets: tuple[str, ...] = ("GaAs", "SrTiO3")
    test_cells: tuple[int, ...] = (1, 5)


def split_assignment(n_structures: int, seed: int, val_fraction: float = 0.1) -> list[str]:
    """Deterministic train/val labels; at least one validation structure when n > 1."""
    if n_structures < 1:
        raise ValueError("need at least one structure")
    n_val = 0 if n_structures == 1 else max(1, int(round(val_fraction * n_structures)))
    order = np.random.default_rng([seed, 1]).permutation(n_structures)
    labels = ["train"] * n_structures
    for i in order[:n_val]:
        labels[i] = "val"
    return labels


def _simulate(structure, cfg: GenConfig, cells: int):
    slices = potential_slices(structure, n=cfg.n, n_cells_z=cells, accel_kv=cfg.accel_kv)
    scan = ScanGrid.tiling(slices.grid, cfg.scan)
    return simulate_4d(slices, cfg.semi_angle, scan, cfg.delta_z_defocus)


def gen_data(out_dir, cfg: GenConfig | None = None) -> dict:
    """Simulate a random training corpus plus the preset test datasets."""
    cfg = cfg or GenConfig()
    out = Path(out_dir)
    if cfg.n % cfg.scan:
        raise ValueError(f"scan size {cfg.scan} does not tile the {cfg.n}-pixel cell")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot create output directory {out}: {exc}") from exc
    seeds = np.random.default_rng([cfg.seed, 0]).integers(0, 2**31 - 1, cfg.structures)
    split = split_assignment(cfg.structures, cfg.seed, cfg.val_fraction)
    entries = []
    for i, (s_seed, label) in enumerate(zip(seeds, split)):
        structure = random_cubic(int(s_seed))
        sdir = Path("structures") / f"s{i:03d}-{structure.name}"
        (out / sdir).mkdir(parents=True, exist_ok=True)
        save_structure(structure, out / sdir / "structure.json")
        datasets = []
        for c in cfg.cells:
            ds = _simulate(structure, cfg, c)
            save_dataset(ds, out / sdir / f"c{c}", {"cells": c, "structure_seed": int(s_seed)})
            datasets.append(str(sdir / f"c{c}"))
        entries.append({"name": structure.name, "seed": int(s_seed), "split": label, "datasets": datasets})
        log.info("structure %d/%d %s -> %s", i + 1, cfg.structures, structure.name, label)
    tests = []
    for name in cfg.presets:
        for c in cfg.test_cells:
            ds = _simulate(preset_structure(name), cfg, c)
            rel = f"test/{name}-c{c}"
            save_dataset(ds, out / rel, {"cells": c, "material": name})
            tests.append({"material": name, "cells": c, "thickness": ds.thickness, "path": rel})
    manifest = {"format": "NTC1", "kind": "corpus", "version": __version__, "config": _jsonable(asdict(cfg)),
                "structures": entries, "test": tests}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def read_corpus(corpus_dir) -> dict:
    path = Path(corpus_dir) / "manifest.json"
    if not path.exists():
        raise ContainerError(f"no corpus manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("kind") != "corpus":
        raise ContainerError(f"{corpus_dir} is not a corpus")
    return manifest


def corpus_datasets(corpus_dir, split: str) -> list:
    root = Path(corpus_dir)
    manifest = read_corpus(root)
    return [load_dataset(root / p) for e in manifest["structures"] if e["split"] == split for p in e["datasets"]]


# --- training -------------------------------------------------------------------------

def loss_table(history: list[dict]) -> str:
    """Tab-separated loss curves, one row per (epoch, split)."""
    rows = ["epoch\tsplit\tvf\tcont\tphase\ttotal"]
    for rec in history:
        for split in ("train", "val"):
            if f"{split}_total" in rec:
                vals = [rec[f"{split}_{k}"] for k in ("vf", "cont", "phase", "total")]
                rows.append(f"{rec['epoch']}\t{split}\t" + "\t".join(repr(float(v)) for v in vals))
    return "\n".join(rows) + "\n"


def train(corpus_dir, out_dir, config=None, resume: bool = False, log_every: int = 0):
    """Train on a corpus; with ``resume`` continue from the checkpoint in ``out_dir``."""
    from .nn.train import TrainConfig, Trainer, sample_from_dataset

    train_samples = [sample_from_dataset(d) for d in corpus_datasets(corpus_dir, "train")]
    val_samples = [sample_from_dataset(d) for d in corpus_datasets(corpus_dir, "val")]
    out = Path(out_dir)
    if resume and (out / "manifest.json").exists():
        trainer = load_trainer(out, train_samples, val_samples)
        if config is not None:
            trainer.config.epochs = config.epochs
    else:
        trainer = Trainer(train_samples, val_samples, config or TrainConfig())
    trainer.fit(epochs=max(trainer.config.epochs - trainer.epoch, 0), log_every=log_every)
    save_checkpoint(trainer, out)
    (out / "loss_curve.tsv").write_text(loss_table(trainer.history))
    return trainer


# --- reconstruction ---------------------------------------------------------------------

def reconstruct(dataset, method: str, checkpoint=None, tie_eps: float = 0.0, tie_variant: str = "poisson",
                gd_iters: int = 100):
    """Run one method on a dataset (object or container path)."""
    from .recon import flowtie_reconstruct, gd_reconstruct
    from .tie import tie_reconstruct

    ds = load_dataset(dataset) if isinstance(dataset, (str, os.PathLike)) else dataset
    if method == "tie":
        return tie_reconstruct(ds, tie_eps, tie_variant)
    if method == "gd":
        return gd_reconstruct(ds, gd_iters)
    if method == "flowtie":
        if checkpoint is None:
            raise ValueError("flowtie needs a checkpoint")
        model = load_model(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
        return flowtie_reconstruct(ds, model)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def save_result(result, out_dir):
    tensors = {"phase_proj": result.phase_proj}
    if result.phase_stack is not None:
        tensors["phase_stack"] = result.phase_stack
    meta = {"method": result.method, "mse": result.mse, "wall_time": result.wall_time, "config": result.config,
            "diagnostics": {k: v for k, v in result.diagnostics.items() if k != "objective"},
            "mse_reference": "projected phase sigma * sum(V_z) at the scan positions, mean-aligned"}
    if "objective" in result.diagnostics:
        tensors["objective"] = np.asarray(result.diagnostics["objective"])
    return write_bundle(out_dir, tensors, meta, "result")


# --- benchmark -----------------------------------------------------------------------------

@dataclass
class BenchRow:
    material: str
    cells: int
    thickness: float
    method: str
    mse: float | None
    time_mean: float | None
    time_std: float | None
    repeats: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    environment: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "environment": self.environment}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        doc = json.loads(text)
        return cls([BenchRow(**r) for r in doc["rows"]], doc["environment"])

    def cell(self, material: str, cells: int, method: str) -> BenchRow:
        for r in self.rows:
            if (r.material, r.cells, r.method) == (material, cells, method):
                return r
        raise KeyError((material, cells, method))

    def to_text(self) -> str:
        fmt = lambda v: "absent" if v is None else f"{v:.6e}"
        lines = ["Phase estimation error (MSE, rad^2) and wall time (s, mean +- std)",
                 f"{'material':<10}{'cells':>6}{'thick_A':>10}  {'method':<8}{'mse':>14}{'time_mean':>14}"
                 f"{'time_std':>14}{'repeats':>8}"]
        for r in self.rows:
            lines.append(f"{r.material:<10}{r.cells:>6}{r.thickness:>10.4f}  {r.method:<8}{fmt(r.mse):>14}"
                         f"{fmt(r.time_mean):>14}{fmt(r.time_std):>14}{r.repeats:>8}")
        return "\n".join(lines) + "\n"


def parse_text_report(text: str) -> list[dict]:
    """Inverse of :meth:`BenchReport.to_text` (values at the printed precision)."""
    rows = []
    for line in text.splitlines()[2:]:
        f = line.split()
        val = lambda s: None if s == "absent" else float(s)
        rows.append({"material": f[0], "cells": int(f[1]), "thickness": float(f[2]), "method": f[3],
                     "mse": val(f[4]), "time_mean": val(f[5]), "time_std": val(f[6]), "repeats": int(f[7])})
    return rows


def environment() -> dict:
    import scipy

    from .cli import THREAD_VARS

    return {"python": sys.version.split()[0], "numpy": np.__version__, "scipy": scipy.__version__,
            "platform": platform.platform(), "processor": platform.processor() or platform.machine(),
            "cpu_count": os.cpu_count(), "threads": {v: os.environ.get(v, "") for v in THREAD_VARS},
            "flowtie": __version__}


def benchmark(test_sets: list[tuple[str, int, object]], checkpoint=None, repeats: int = 3,
              methods=METHODS, tie_variant: str = "poisson", gd_iters: int = 100) -> BenchReport:
    """Time every method on every test set; ``test_sets`` holds ``(material, cells, dataset)``.

    Methods run one after another per dataset so that only one pipeline is
    active inside a timed region. A method that cannot run is reported absent.
    """
    if repeats < 3:
        raise ValueError("timing needs at least 3 repeats")
    model = None
    if checkpoint is not None:
        model = load_model(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
    rows = []
    for material, cells, ds in test_sets:
        ds = load_dataset(ds) if isinstance(ds, (str, os.PathLike)) else ds
        for method in methods:
            if method == "flowtie" and model is None:
                rows.append(BenchRow(material, cells, ds.thickness, method, None, None, None, 0))
                continue
            times, mse = [], None
            for _ in range(repeats):
                res = reconstruct(ds, method, model, tie_variant=tie_variant, gd_iters=gd_iters)
                times.append(res.wall_time)
                mse = res.mse
            rows.append(BenchRow(material, cells, ds.thickness, method, mse, float(np.mean(times)),
                                 float(np.std(times)), repeats))
            log.info("%s c%d %s mse %.3e time %.3g", material, cells, method, mse, np.mean(times))
    return BenchReport(rows, environment())


def corpus_test_sets(corpus_dir) -> list[tuple[str, int, Path]]:
    root = Path(corpus_dir)
    return [(t["material"], t["cells"], root / t["path"]) for t in read_corpus(root)["test"]]


# --- visualisation export ------------------------------------------------------------------

def to_gray(field: np.ndarray) -> tuple[np.ndarray, dict]:
    """Min-max scale to 0..255; a constant field maps to mid-gray."""
    field = np.asarray(field, dtype=float)
    lo, hi = float(field.min()), float(field.max())
    if hi == lo:
        return np.full(field.shape, 128, np.uint8), {"min": lo, "max": hi, "degenerate": True}
    return np.rint((field - lo) / (hi - lo) * 255).astype(np.uint8), {"min": lo, "max": hi, "degenerate": False}


def write_pgm(path, field: np.ndarray, note: str = "") -> dict:
    """Binary PGM plus a ``.txt`` sidecar recording the intensity mapping."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise ValueError(f"PGM export needs a 2D field, got shape {field.shape}")
    pix, info = to_gray(field)
    path = Path(path)
    h, w = pix.shape
    path.write_bytes(f"P5 {w} {h} 255\n".encode() + pix.tobytes())
    lines = [f"min {info['min']!r}", f"max {info['max']!r}",
             "mapping round((value - min) / (max - min) * 255)"]
    if info["degenerate"]:
        lines.append("degenerate range: constant field written as mid-gray 128")
    if note:
        lines.append(note)
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    return info


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    head, _, rest = data.partition(b"\n")
    magic, w, h, maxval = head.split()
    if magic != b"P5" or maxval != b"255":
        raise ValueError("not an 8-bit P5 file")
    return np.frombuffer(rest, np.uint8).reshape(int(h), int(w))


def arrow_list(v: np.ndarray, step: int = 4) -> str:
    """Downsampled ``y x v_y v_x`` rows for a ``(2, H, W)`` field."""
    lines = ["# y x v_y v_x"]
    for i in range(0, v.shape[1], step):
        for j in range(0, v.shape[2], step):
            lines.append(f"{i} {j} {float(v[0, i, j])!r} {float(v[1, i, j])!r}")
    return "\n".join(lines) + "\n"


def export_viz(input_dir, what: str, out_path, channel: int = 0, position=(0, 0), arrow_step: int = 4,
               log_scale: bool = False) -> list[Path]:
    """Export a projected phase, a flow field or a diffraction pattern as PGM files."""
    tensors, manifest = read_bundle(input_dir)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    if what == "proj-phase":
        name = "phase_proj" if "phase_proj" in tensors else "proj_phase_gt"
        if name not in tensors:
            raise ContainerError(f"{input_dir} holds no projected phase")
        write_pgm(stem.with_suffix(".pgm"), tensors[name], f"tensor {name}")
        return [stem.with_suffix(".pgm")]
    if what == "vfield":
        if "vfield_gt" not in tensors:
            raise ContainerError(f"{input_dir} holds no vfield_gt tensor")
        v = tensors["vfield_gt"][:, channel]
        paths = [Path(f"{stem}_vy.pgm"), Path(f"{stem}_vx.pgm")]
        for comp, p in zip(v, paths):
            write_pgm(p, comp, f"tensor vfield_gt channel {channel}")
        arrows = Path(f"{stem}_arrows.txt")
        arrows.write_text(arrow_list(v, arrow_step))
        return paths + [arrows]
    if what == "diffraction":
        if "i_zero" not in tensors:
            raise ContainerError(f"{input_dir} holds no i_zero tensor")
        grid = manifest["meta"]["grid"]
        pattern = tensors["i_zero"][:, position[0], position[1]].reshape(grid["n_y"], grid["n_x"])
        pattern = np.fft.fftshift(pattern)
        if log_scale:
            pattern = np.log10(pattern + 1e-12 * pattern.max())
        write_pgm(stem.with_suffix(".pgm"), pattern, f"i_zero at scan {tuple(position)}, centred"
                  + (", log10" if log_scale else ""))
        return [stem.with_suffix(".pgm")]
    raise ValueError(f"unknown export {what!r}; choose proj-phase, vfield or diffraction")
