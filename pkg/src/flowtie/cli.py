"""Command-line entry point: ``flowtie <verb> [options]``.

Options may also come from a flat ``key = value`` file passed with
``--config``; keys use the long option names with dashes or underscores,
and flags given on the command line win.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS",
               "NUMEXPR_NUM_THREADS")


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> Parser:
    p = Parser(prog="flowtie", description="4D-STEM phase retrieval: simulation, training and benchmarks.")
    p.add_argument("--config", help="flat key = value file; command-line flags take precedence")
    p.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bit-reproducible runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", help="simulate a training corpus and the preset test datasets")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--structures", type=int, default=10)
    g.add_argument("--n", type=int, default=16, help="real-space pixels per cell edge")
    g.add_argument("--scan", type=int, default=16, help="scan positions per axis")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--kv", type=float, default=300.0, help="accelerating voltage in kV")
    g.add_argument("--semi-angle", type=float, default=20.0, help="probe semi-angle in mrad")
    g.add_argument("--defocus-step", type=float, default=50.0, help="defocus offset of the triplet in A")
    g.add_argument("--cells", type=int_list, default=(1, 3, 5), help="training thicknesses in unit cells")
    g.add_argument("--test-cells", type=int_list, default=(1, 5), help="preset test thicknesses in unit cells")

    t = sub.add_parser("train", help="train the flow predictor on a corpus")
    t.add_argument("--corpus", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--alpha", type=float, default=1.0, help="weight of the vector-field loss")
    t.add_argument("--beta", type=float, default=1.0, help="weight of the continuity loss")
    t.add_argument("--gamma", type=float, default=1.0, help="weight of the integrated-phase loss")
    t.add_argument("--width", type=int, default=32)
    t.add_argument("--batch-size", type=int, default=1)
    t.add_argument("--normalization", choices=("sample", "corpus"), default="sample")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    t.add_argument("--log-every", type=int, default=10)

    r = sub.add_parser("reconstruct", help="run one method on one dataset container")
    r.add_argument("--dataset", required=True, type=Path)
    r.add_argument("--method", choices=("tie", "flowtie", "gd"), default="tie")
    r.add_argument("--checkpoint", type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--tie-variant", choices=("poisson", "teague"), default="poisson")
    r.add_argument("--tie-eps", type=float, default=0.0)
    r.add_argument("--gd-iters", type=int, default=100)
    r.add_argument("--seed", type=int, default=0, help="accepted for uniformity; reconstruction is deterministic")

    b = sub.add_parser("benchmark", help="accuracy and timing table over the corpus test sets")
    b.add_argument("--corpus", required=True, type=Path)
    b.add_argument("--checkpoint", type=Path)
    b.add_argument("--out", required=True, type=Path, help="report prefix; writes .txt and .json")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--tie-variant", choices=("poisson", "teague"), default="poisson")
    b.add_argument("--gd-iters", type=int, default=100)
    b.add_argument("--seed", type=int, default=0, help="accepted for uniformity; benchmarks are deterministic")

    e = sub.add_parser("export-viz", help="write PGM images of a stored field")
    e.add_argument("--input", required=True, type=Path, help="dataset or result container")
    e.add_argument("--what", choices=("proj-phase", "vfield", "diffraction"), required=True)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--channel", type=int, default=0, help="diffraction channel for vfield")
    e.add_argument("--position", type=int_list, default=(0, 0), help="scan position y,x for diffraction")
    e.add_argument("--arrow-step", type=int, default=4)
    e.add_argument("--log", action="store_true", help="log-scale diffraction intensities")
    return p


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.verb]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise CliError(f"unknown config keys for {args.verb}: {', '.join(unknown)}")
        # string defaults pass through each option's type, so the file behaves like flags
        sub.set_defaults(**{k: _flag_value(sub, k, v) for k, v in values.items()})
        args = parser.parse_args(argv)
    return args


def _flag_value(sub, dest, value):
    action = next(a for a in sub._actions if a.dest == dest)
    if isinstance(action, argparse._StoreTrueAction):
        return value.lower() in ("1", "true", "yes", "on")
    if action.choices is not None and value not in action.choices:
        raise CliError(f"config value {dest} = {value!r} not in {sorted(action.choices)}")
    return value


def run(args) -> int:
    from . import bench

    if args.verb == "gen-data":
        cfg = bench.GenConfig(args.structures, args.n, args.scan, args.seed, args.kv, args.semi_angle,
                              args.defocus_step, tuple(args.cells), test_cells=tuple(args.test_cells))
        manifest = bench.gen_data(args.out, cfg)
        n_val = sum(e["split"] == "val" for e in manifest["structures"])
        print(f"wrote {len(manifest['structures'])} structures ({len(manifest['structures']) - n_val} train, "
              f"{n_val} val) and {len(manifest['test'])} test datasets to {args.out}")
    elif args.verb == "train":
        from .nn.train import TrainConfig

        cfg = TrainConfig(args.epochs, args.lr, args.weight_decay, args.alpha, args.beta, args.gamma, args.width,
                          3, args.batch_size, args.seed, args.normalization)
        trainer = bench.train(args.corpus, args.out, cfg, resume=args.resume, log_every=args.log_every)
        h = trainer.history
        if h:
            print(f"epochs {trainer.epoch}: train total {h[0]['train_total']:.4g} -> {h[-1]['train_total']:.4g}; "
                  f"best validation epoch {trainer.best_epoch}; checkpoint {args.out}")
    elif args.verb == "reconstruct":
        res = bench.reconstruct(args.dataset, args.method, args.checkpoint, args.tie_eps, args.tie_variant,
                                args.gd_iters)
        bench.save_result(res, args.out)
        print(f"{res.method}: mse {res.mse:.6e} wall {res.wall_time:.4g} s -> {args.out}")
    elif args.verb == "benchmark":
        report = bench.benchmark(bench.corpus_test_sets(args.corpus), args.checkpoint, args.repeats,
                                 tie_variant=args.tie_variant, gd_iters=args.gd_iters)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        text = report.to_text()
        Path(f"{args.out}.txt").write_text(text)
        Path(f"{args.out}.json").write_text(report.to_json())
        print(text, end="")
    elif args.verb == "export-viz":
        paths = bench.export_viz(args.input, args.what, args.out, args.channel, tuple(args.position),
                                 args.arrow_step, args.log)
        print("\n".join(str(p) for p in paths))
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        if args.deterministic:
            # only effective before the BLAS pool starts, hence before importing the numeric modules
            for var in THREAD_VARS:
                os.environ.setdefault(var, "1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return run(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
