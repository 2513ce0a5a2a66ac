"""Crystal structures and their sliced projected potentials."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .fieldmath import Grid2

# Gaussian terms (c_i in Angstrom, d_i in Angstrom^2) of Kirkland's
# electron scattering factor fit, f(q) = ... + sum_i c_i exp(-d_i q^2).
KIRKLAND_GAUSSIAN = {
    "O": ((0.0883326058, 0.1965867, 0.00099622), (0.760635525, 2.07401094, 0.0303266869)),
    "Ti": ((0.362555269, 1.4915939, 0.0161659509), (0.955524906, 16.2221677, 0.0733140839)),
    "Ga": ((0.207910594, 0.345079617, 0.006556343), (0.327807224, 0.743139061, 0.0309411369)),
    "As": ((0.179880226, 0.863267222, 0.0095905343), (0.331800852, 5.85490274, 0.0233777569)),
    "Sr": ((0.173263882, 4.66280378, 0.0016126506), (0.201624958, 25.3027803, 0.0153610568)),
}
SUPPORTED_ELEMENTS = tuple(KIRKLAND_GAUSSIAN)

# Bohr radius times elementary charge, a0 * e, in V Angstrom^2.
A0_E = 0.52917721 * 14.399645

PRESETS = ("GaAs", "SrTiO3")
MOTIFS = ("rocksalt", "zincblende", "perovskite")

_FCC = np.array([[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])


@dataclass
class CrystalStructure:
    """Orthogonal periodic unit cell.

    ``atoms`` is a list of ``(element, (fx, fy, fz))`` with fractional
    coordinates in [0, 1).
    """

    cell: tuple[float, float, float]
    atoms: list[tuple[str, tuple[float, float, float]]] = field(default_factory=list)
    name: str = "structure"

    def __post_init__(self):
        self.cell = tuple(float(c) for c in self.cell)
        if len(self.cell) != 3 or min(self.cell) <= 0:
            raise ValueError(f"cell must be three positive lengths, got {self.cell}")
        atoms = []
        for element, frac in self.atoms:
            if element not in KIRKLAND_GAUSSIAN:
                raise ValueError(f"unsupported element {element!r}; supported: {', '.join(SUPPORTED_ELEMENTS)}")
            frac = tuple(float(f) for f in frac)
            if len(frac) != 3 or not all(0.0 <= f < 1.0 for f in frac):
                raise ValueError(f"fractional position {frac} outside [0, 1)")
            atoms.append((element, frac))
        self.atoms = atoms

    @classmethod
    def vacuum(cls, cell=(4.0, 4.0, 4.0), name="vacuum") -> "CrystalStructure":
        return cls(cell, [], name)

    @property
    def frac_positions(self) -> np.ndarray:
        return np.array([f for _, f in self.atoms], dtype=float).reshape(-1, 3)

    @property
    def elements(self) -> list[str]:
        return [e for e, _ in self.atoms]

    def composition(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.elements:
            counts[e] = counts.get(e, 0) + 1
        return counts

    def translated(self, shift) -> "CrystalStructure":
        """Copy with every atom shifted by ``shift`` (fractional) and wrapped into the cell."""
        shift = np.asarray(shift, dtype=float)
        atoms = []
        for e, f in self.atoms:
            g = np.mod(np.asarray(f) + shift, 1.0)
            g[g >= 1.0] = 0.0
            atoms.append((e, tuple(g)))
        return CrystalStructure(self.cell, atoms, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cell": list(self.cell),
            "atoms": [{"element": e, "frac": list(f)} for e, f in self.atoms],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CrystalStructure":
        try:
            atoms = [(a["element"], tuple(a["frac"])) for a in doc["atoms"]]
            return cls(tuple(doc["cell"]), atoms, doc.get("name", "structure"))
        except KeyError as exc:
            raise ValueError(f"structure document missing key {exc}") from None


def load_structure(path) -> CrystalStructure:
    return CrystalStructure.from_dict(json.loads(Path(path).read_text()))


def save_structure(structure: CrystalStructure, path):
    Path(path).write_text(json.dumps(structure.to_dict(), indent=2))


def _motif_atoms(motif: str, a_el: str, b_el: str, c_el: str | None = None):
    if motif == "zincblende":
        return [(a_el, tuple(p)) for p in _FCC] + [(b_el, tuple(p + 0.25)) for p in _FCC]
    if motif == "rocksalt":
        return [(a_el, tuple(p)) for p in _FCC] + [(b_el, tuple(np.mod(p + [0.5, 0, 0], 1.0))) for p in _FCC]
    if motif == "perovskite":
        return [
            (a_el, (0.0, 0.0, 0.0)),
            (b_el, (0.5, 0.5, 0.5)),
            (c_el, (0.5, 0.5, 0.0)),
            (c_el, (0.5, 0.0, 0.5)),
            (c_el, (0.0, 0.5, 0.5)),
        ]
    raise ValueError(f"unknown motif {motif!r}; choose from {MOTIFS}")


def preset_structure(name: str) -> CrystalStructure:
    """Test-set crystals: zinc-blende GaAs (a = 5.6533 A) and cubic perovskite SrTiO3 (a = 3.905 A)."""
    if name == "GaAs":
        a = 5.6533
        return CrystalStructure((a, a, a), _motif_atoms("zincblende", "Ga", "As"), "GaAs")
    if name == "SrTiO3":
        a = 3.905
        return CrystalStructure((a, a, a), _motif_atoms("perovskite", "Sr", "Ti", "O"), "SrTiO3")
    raise ValueError(f"unknown preset {name!r}; available presets: {', '.join(PRESETS)}")


def random_cubic(seed: int, lattice_range=(3.5, 6.5), motif: str | None = None, elements=SUPPORTED_ELEMENTS) -> CrystalStructure:
    """Seeded random cubic crystal on one of the rocksalt/zincblende/perovskite motifs.

    ``motif=None`` draws the motif as well. Elements are drawn without
    replacement from ``elements``.
    """
    lo, hi = lattice_range
    if not (3.0 <= lo <= hi <= 7.0):
        raise ValueError(f"lattice range {lattice_range} must lie within [3.0, 7.0] A")
    elements = list(elements)
    if not elements:
        raise ValueError("element set is empty")
    for e in elements:
        if e not in KIRKLAND_GAUSSIAN:
            raise ValueError(f"unsupported element {e!r}")
    rng = np.random.default_rng(seed)
    if motif is None:
        motif = MOTIFS[rng.integers(len(MOTIFS))]
    a = float(rng.uniform(lo, hi))
    need = 3 if motif == "perovskite" else 2
    replace = len(elements) < need
    picks = [elements[i] for i in rng.choice(len(elements), size=need, replace=replace)]
    atoms = _motif_atoms(motif, *picks)
    name = f"{motif}-{''.join(picks)}-{seed}"
    return CrystalStructure((a, a, a), atoms, name)


# --- electron optics constants -------------------------------------------------

def electron_wavelength(accel_kv: float) -> float:
    """Relativistic electron wavelength in Angstrom."""
    v = accel_kv * 1e3
    return 12.2639 / np.sqrt(v * (1.0 + 0.97845e-6 * v))


def interaction_constant(accel_kv: float) -> float:
    """Interaction constant sigma in rad/(V Angstrom)."""
    v = accel_kv * 1e3
    mc2 = 510998.95  # electron rest energy, eV
    return 2.0 * np.pi / (electron_wavelength(accel_kv) * v) * (mc2 + v) / (2.0 * mc2 + v)


# --- rasterisation ---------------------------------------------------------------

def gaussian_kernel_integral(element: str) -> float:
    """Plane integral of one atom's projected potential, in V Angstrom^3."""
    c, _ = KIRKLAND_GAUSSIAN[element]
    return 2.0 * np.pi * A0_E * float(np.sum(c))


def _pixel_profile(centre: float, n: int, pitch: float, d: float) -> np.ndarray:
    """Pixel-averaged, periodically wrapped 1D factor of exp(-pi^2 x^2 / d).

    Returns the integral over each pixel divided by the pitch; the 2D kernel is
    the outer product of two such profiles.
    """
    period = n * pitch
    s = np.pi / np.sqrt(d)
    width = 6.0 / s
    n_img = int(np.ceil(width / period)) + 1
    edges = np.arange(n + 1) * pitch - 0.5 * pitch
    out = np.zeros(n)
    for k in range(-n_img, n_img + 1):
        e = erf(s * (edges - centre + k * period))
        out += np.diff(e)
    return out * (np.sqrt(np.pi) / (2.0 * s)) / pitch


@dataclass
class PotentialSlices:
    """Projected potential per slab (V Angstrom) on a lateral grid."""

    grid: Grid2
    slabs: np.ndarray
    delta_z: float
    sigma: float
    wavelength: float
    name: str = ""

    def __post_init__(self):
        self.slabs = np.asarray(self.slabs, dtype=float)
        if self.slabs.ndim == 2:
            self.slabs = self.slabs[None]
        if self.slabs.shape[0] < 1 or self.slabs.shape[1:] != self.grid.shape:
            raise ValueError(f"slabs shape {self.slabs.shape} inconsistent with grid {self.grid.shape}")
        if self.delta_z <= 0:
            raise ValueError("slab thickness must be positive")

    @property
    def n_slices(self) -> int:
        return self.slabs.shape[0]

    @property
    def thickness(self) -> float:
        return self.n_slices * self.delta_z

    def transmission(self) -> np.ndarray:
        return np.exp(1j * self.sigma * self.slabs)

    def projected_phase(self) -> np.ndarray:
        """Total phase ``sigma * sum_k V_z,k`` imparted by the whole specimen."""
        return self.sigma * self.slabs.sum(axis=0)


def rasterize_slab(structure: CrystalStructure, atoms_idx, grid: Grid2) -> np.ndarray:
    """Sum of pixel-averaged projected-potential kernels of the selected atoms."""
    a, b, _ = structure.cell
    out = np.zeros(grid.shape)
    frac = structure.frac_positions
    for i in atoms_idx:
        element = structure.atoms[i][0]
        x0, y0 = frac[i, 0] * a, frac[i, 1] * b
        c, d = KIRKLAND_GAUSSIAN[element]
        for ci, di in zip(c, d):
            amp = 2.0 * np.pi**2 * A0_E * ci / di
            py = _pixel_profile(y0, grid.n_y, grid.pitch_y, di)
            px = _pixel_profile(x0, grid.n_x, grid.pitch_x, di)
            out += amp * np.outer(py, px)
    return out


def potential_slices(structure: CrystalStructure, n: int = 16, delta_z: float | None = None,
                     n_cells_z: int = 1, accel_kv: float = 300.0) -> PotentialSlices:
    """Slice ``n_cells_z`` stacked unit cells into slabs of thickness ``delta_z``.

    The lateral grid covers exactly one unit cell with ``n x n`` pixels. The
    default slab thickness is one unit cell. Atoms are assigned to slabs by
    ``floor(z / delta_z)``.
    """
    if n < 8:
        raise ValueError("n must be >= 8")
    if n_cells_z < 1:
        raise ValueError("n_cells_z must be >= 1")
    a, b, c = structure.cell
    if delta_z is None:
        delta_z = c
    if delta_z <= 0:
        raise ValueError("slab thickness must be positive")
    grid = Grid2(n, n, b / n, a / n)
    total = n_cells_z * c
    m = int(round(total / delta_z))
    if m < 1 or abs(m * delta_z - total) > 1e-9 * total:
        raise ValueError(f"thickness {total} A is not an integer multiple of delta_z={delta_z}")

    z_abs = []
    for cell_k in range(n_cells_z):
        for i in range(len(structure.atoms)):
            z_abs.append((i, (cell_k + structure.frac_positions[i, 2]) * c))
    slabs = np.zeros((m, n, n))
    cache: dict[tuple[int, ...], np.ndarray] = {}
    for k in range(m):
        members = tuple(sorted(i for i, z in z_abs if k * delta_z <= z < (k + 1) * delta_z))
        if members not in cache:
            cache[members] = rasterize_slab(structure, members, grid)
        slabs[k] = cache[members]
    return PotentialSlices(grid, slabs, float(delta_z), interaction_constant(accel_kv),
                           electron_wavelength(accel_kv), structure.name)
