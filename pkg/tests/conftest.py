"""Shared fixtures: lattices, synthetic molecular crystals, RNG helpers."""

import numpy as np
import pytest

from xtalkit.lattice import AtomSite, Crystal, Lattice, MolecularGraph


def random_rotation(rng):
    """Uniform proper rotation via QR with sign fix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_unimodular(rng, n_steps=6, max_coeff=2):
    """Random integer matrix with det +1 built from elementary operations."""
    v = np.eye(3, dtype=np.int64)
    for _ in range(n_steps):
        i, j = rng.choice(3, size=2, replace=False)
        m = np.eye(3, dtype=np.int64)
        m[i, j] = rng.integers(-max_coeff, max_coeff + 1)
        v = v @ m
    return v


def random_lattice(rng, scale=8.0, min_det=30.0):
    """Random reasonably conditioned right-handed lattice."""
    while True:
        m = np.diag(rng.uniform(0.6, 1.4, size=3) * scale)
        m[1, 0] = rng.uniform(-0.4, 0.4) * scale
        m[2, 0] = rng.uniform(-0.4, 0.4) * scale
        m[2, 1] = rng.uniform(-0.4, 0.4) * scale
        if np.linalg.det(m) > min_det:
            return Lattice(m)


def brute_force_min_image(lattice, x1, x2, reach=3):
    """Exhaustive minimum-image distance over images in {-reach..reach}^3.

    Exact whenever the optimal image shift lies within the reach, which holds
    for Niggli-reduced cells and the moderately skewed fixtures used here.
    """
    delta = np.asarray(x1, float) - np.asarray(x2, float)
    r = np.arange(-reach, reach + 1)
    shifts = np.array(np.meshgrid(r, r, r)).reshape(3, -1).T @ lattice.vectors
    return float(np.min(np.linalg.norm(delta + shifts, axis=1)))


def build_p1_crystal(lattice, molecule_defs, asu=None):
    """Assemble a P1 crystal from per-molecule (species, frac, bonds, entity).

    ``frac`` rows may lie outside [0,1); sites wrap, molecule graphs keep
    the atoms together.
    """
    sites = []
    molecules = []
    offset = 0
    for species, frac, bonds, entity in molecule_defs:
        frac = np.atleast_2d(np.asarray(frac, float))
        for z, u in zip(species, frac):
            sites.append(AtomSite(int(z), tuple(u)))
        molecules.append(MolecularGraph(
            atom_indices=tuple(range(offset, offset + len(species))),
            edges=tuple((offset + i, offset + j, o) for i, j, o in bonds),
            entity_id=entity,
        ))
        offset += len(species)
    if asu is None:
        asu = tuple(range(len(molecules)))
    return Crystal(lattice, tuple(sites), tuple(molecules), tuple(asu))


def _template_molecule():
    """Rigid 9-heavy-atom asymmetric molecule (cartesian, angstrom)."""
    ring = [
        [1.39 * np.cos(k * np.pi / 3), 1.39 * np.sin(k * np.pi / 3), 0.0]
        for k in range(6)
    ]
    extra = [[2.85, 0.0, 0.55], [-2.20, 1.15, -0.40], [3.95, 0.85, 0.9]]
    coords = np.array(ring + extra)
    species = [6, 6, 6, 6, 6, 6, 6, 8, 8]
    bonds = [(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 5, 1),
             (5, 0, 1), (0, 6, 1), (3, 7, 1), (6, 8, 1)]
    return species, coords, bonds


def make_molecular_crystal():
    """Four copies of a rigid organic-like molecule in a monoclinic cell.

    Placements were screened so intermolecular heavy-atom contacts fall in
    4.2-5.6 angstrom: physically sensible packing, free of van der Waals
    collisions, with close contacts available below 6 angstrom.
    """
    lattice = Lattice([[14.0, 0.0, 0.0], [0.0, 13.0, 0.0], [2.0, 0.0, 12.5]])
    species, coords, bonds = _template_molecule()
    rng = np.random.default_rng(0)
    centers = np.array([
        [0.25, 0.25, 0.25],
        [0.75, 0.30, 0.75],
        [0.30, 0.75, 0.70],
        [0.72, 0.78, 0.22],
    ])
    defs = []
    for c in centers:
        rot = random_rotation(rng)
        cart = coords @ rot.T
        frac = cart @ lattice.inverse + c
        defs.append((species, frac, bonds, "1"))
    return build_p1_crystal(lattice, defs)


def make_cocrystal_2to1():
    """2:1 two-component cell: two 4-atom A molecules, one 4-atom B molecule."""
    lattice = Lattice(np.eye(3) * 9.5)
    sq = np.array([[0, 0, 0], [1.5, 0, 0], [1.5, 1.5, 0], [0, 1.5, 0.0]])
    bonds = [(0, 1, 1), (1, 2, 1), (2, 3, 1)]
    defs = [
        ([6, 6, 6, 6], sq @ lattice.inverse + [0.15, 0.15, 0.25], bonds, "A"),
        ([6, 6, 6, 6], sq @ lattice.inverse + [0.60, 0.55, 0.25], bonds, "A"),
        ([7, 7, 7, 7], sq @ lattice.inverse + [0.35, 0.35, 0.70], bonds, "B"),
    ]
    return build_p1_crystal(lattice, defs)


def make_rod_crystal():
    """Elongated rigid rods (20 angstrom long) in a large box.

    The box is wide enough that periodic images never come closer than any
    intra-box contact, so crops behave like a finite cluster. One rod is
    offset along its axis so its nearest atom to the central rod is ~3
    angstrom away while the centroids are > 15 angstrom apart.
    """
    lattice = Lattice(np.eye(3) * 80.0)
    n = 11
    axis = np.array([[0.0, 0.0, 2.0 * k - 10.0] for k in range(n)])
    bonds = [(k, k + 1, 1) for k in range(n - 1)]
    species = [6] * n
    center = np.array([40.0, 40.0, 40.0])
    defs = []
    # central rod
    defs.append((species, (axis + center) @ lattice.inverse, bonds, "R"))
    # parallel rod, displaced along the axis: nearest atom 3 A, centroid 16.3 A
    defs.append((species, (axis + center + [3.0, 0.0, 16.0]) @ lattice.inverse,
                 bonds, "R"))
    # a ring of ordinary side-by-side neighbors
    for dx, dy in [(4.0, 0.0), (-4.0, 0.0), (0.0, 4.0), (0.0, -4.0),
                   (4.0, 4.0), (-4.0, -4.0)]:
        defs.append((species, (axis + center + [dx, dy, 0.0]) @ lattice.inverse,
                     bonds, "R"))
    return build_p1_crystal(lattice, defs, asu=(0,))


@pytest.fixture(scope="session")
def triclinic_lattice():
    return Lattice([[4.0, 0.0, 0.0], [1.2, 5.0, 0.0], [0.8, 1.1, 6.0]])


@pytest.fixture(scope="session")
def molecular_crystal():
    return make_molecular_crystal()


@pytest.fixture(scope="session")
def cocrystal_2to1():
    return make_cocrystal_2to1()


@pytest.fixture(scope="session")
def rod_crystal():
    return make_rod_crystal()
