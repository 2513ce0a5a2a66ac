# %% [markdown]
# # Forward model: from a crystal to a defocus-triplet 4D dataset
#
# Build the GaAs preset, slice it into projected potentials, scan a probe
# across it and look at what the simulator stores.

# %%
import numpy as np

from flowtie.microscope import ScanGrid, exit_waves, make_probe, simulate_4d
from flowtie.specimen import CrystalStructure, potential_slices, preset_structure

gaas = preset_structure("GaAs")
print(gaas.name, gaas.cell, gaas.composition())

# %% [markdown]
# One slab per unit cell; 16 pixels per cell edge.

# %%
slices = potential_slices(gaas, n=16, n_cells_z=5)
print("slabs", slices.slabs.shape, "thickness %.4f A" % slices.thickness)
print("lambda %.5f A, sigma %.3e rad/(V A)" % (slices.wavelength, slices.sigma))
proj = slices.projected_phase()
print("projected phase range %.3f .. %.3f rad" % (proj.min(), proj.max()))

# %% [markdown]
# The probe is normalised to unit energy and multislice keeps it that way.

# %%
probe = make_probe(slices.grid, 20.0, 30.0, slices.wavelength)
e = exit_waves(probe, slices, ScanGrid.tiling(slices.grid, 16))
energy = np.sum(abs(e) ** 2, axis=(1, 2))
print("energy per scan position: max |1 - E| = %.2e" % np.abs(energy - 1).max())

# %% [markdown]
# The dataset holds intensities at three defocus planes plus the labels
# the network is trained on: per-channel phase and its scan gradient.

# %%
ds = simulate_4d(slices, semi_angle=20.0, delta_z_defocus=50.0)
print("i_zero", ds.i_zero.shape, "vfield_gt", ds.vfield_gt.shape)
bright = ds.i_zero.mean(axis=(1, 2))
order = np.argsort(bright)[::-1]
print("brightest channels carry %.1f%% of the intensity" % (100 * bright[order[:20]].sum() / bright.sum()))
print("|dI/dz| max %.3e" % np.abs(ds.i_deriv()).max())

# %% [markdown]
# Vacuum check: no specimen, so every diffraction pattern is the probe
# spectrum and the scan gradients vanish.

# %%
vac = simulate_4d(potential_slices(CrystalStructure.vacuum((5.0, 5.0, 5.0)), n=16))
print("vacuum: max |v| on bright channels %.1e" % np.abs(vac.vfield_gt[:, vac.i_zero.mean(axis=(1, 2)) > 1e-12]).max())
