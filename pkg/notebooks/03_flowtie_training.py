# %% [markdown]
# # FlowTIE end to end on a tiny corpus
#
# The same verbs as the command line, called in-process: generate a
# corpus, train for a handful of epochs, reconstruct and benchmark.
# The full desk run (10 structures, 200 epochs) is `flowtie train` with
# defaults and takes a few minutes.

# %%
import tempfile
from pathlib import Path

from flowtie import bench
from flowtie.nn import TrainConfig

work = Path(tempfile.mkdtemp(prefix="flowtie-"))
cfg = bench.GenConfig(structures=4, n=8, scan=8, semi_angle=10.0, cells=(1, 2), test_cells=(1, 2), seed=3)
manifest = bench.gen_data(work / "corpus", cfg)
print([(s["name"], s["split"]) for s in manifest["structures"]])

# %% [markdown]
# Training logs the three loss terms per epoch for both splits.

# %%
trainer = bench.train(work / "corpus", work / "ckpt", TrainConfig(epochs=5, width=8))
print((work / "ckpt" / "loss_curve.tsv").read_text())

# %% [markdown]
# Reconstruct one test preset with each method.

# %%
ds_dir = work / "corpus" / "test" / "GaAs-c2"
for method in ("tie", "flowtie", "gd"):
    res = bench.reconstruct(ds_dir, method, work / "ckpt", gd_iters=20)
    print(f"{method:8s} mse {res.mse:.3e}  {res.wall_time * 1e3:.1f} ms")

# %% [markdown]
# The benchmark table repeats every timing three times.

# %%
report = bench.benchmark(bench.corpus_test_sets(work / "corpus"), work / "ckpt", repeats=3, gd_iters=20)
print(report.to_text())
bench.export_viz(ds_dir, "proj-phase", work / "proj.pgm")
print("wrote", work / "proj.pgm")
