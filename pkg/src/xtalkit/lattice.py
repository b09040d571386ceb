"""Periodic-crystal data model and geometric kernels.

Convention used throughout the package: the rows of a lattice matrix are the
lattice vectors ``a``, ``b``, ``c`` (angstrom), matching pymatgen and ASE.

- Cartesian from fractional: ``x = u @ L``
- Fractional from Cartesian: ``u = x @ inv(L)``
- Lattice translations: ``{n @ L : n integer triple}``

Minimum-image searches first reduce the cell to its Niggli form, where a
single layer of periodic images is provably sufficient, and map the winning
image shift back to the original basis. This keeps distance kernels exact for
arbitrarily skewed cells without a wide brute-force image loop.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

__all__ = [
    "Lattice",
    "AtomSite",
    "MolecularGraph",
    "Crystal",
    "SupercellSpec",
    "SupercellPolicy",
    "frac_to_cart",
    "cart_to_frac",
    "wrap_to_cell",
    "min_image_distance",
    "min_image_shift",
    "molecular_min_distance",
    "build_supercell",
    "niggli_reduce",
    "apply_rigid_motion",
    "unwrap_molecule_frac",
]

# Fractional components this close to 1.0 snap to 0 so [0, 1) stays closed
# under floating-point noise.
WRAP_SNAP = 1e-12

MIN_CELL_DETERMINANT = 1e-8

# One layer of neighbor images; sufficient for Niggli-reduced cells.
_IMAGE_SHIFTS = np.array(
    list(itertools.product((-1, 0, 1), repeat=3)), dtype=float
)


def wrap_to_cell(u) -> np.ndarray:
    """Wrap fractional coordinates onto the half-open cube [0, 1)^3.

    The output differs from the input by an integer triple. Components
    within ``WRAP_SNAP`` of 1.0 are snapped to 0.
    """
    u = np.asarray(u, dtype=float)
    w = u - np.floor(u)
    w = np.where(w > 1.0 - WRAP_SNAP, 0.0, w)
    return w


class Lattice:
    """A 3x3 matrix of row lattice vectors with an invertibility contract.

    The determinant must be strictly positive (right-handed basis) and at
    least ``MIN_CELL_DETERMINANT`` cubic angstrom.
    """

    __slots__ = ("vectors", "__dict__")

    def __init__(self, vectors):
        m = np.array(vectors, dtype=float).reshape(3, 3)
        det = float(np.linalg.det(m))
        if det < MIN_CELL_DETERMINANT:
            raise ValueError(
                f"lattice determinant {det:.3e} is not strictly positive "
                f"(>= {MIN_CELL_DETERMINANT:g} required)"
            )
        m.setflags(write=False)
        self.vectors = m

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = np.linalg.inv(self.vectors)
        inv.setflags(write=False)
        return inv

    @cached_property
    def volume(self) -> float:
        return float(np.linalg.det(self.vectors))

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @cached_property
    def metric_tensor(self) -> np.ndarray:
        g = self.vectors @ self.vectors.T
        g.setflags(write=False)
        return g

    @cached_property
    def _reduced_basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(reduced row matrix R, its inverse, integer C with R = C @ vectors)."""
        reduced, change = niggli_reduce(self)
        return reduced.vectors, reduced.inverse, change

    def __repr__(self):
        rows = ", ".join(str(list(r)) for r in np.round(self.vectors, 6))
        return f"Lattice([{rows}])"

    def __eq__(self, other):
        return isinstance(other, Lattice) and np.array_equal(
            self.vectors, other.vectors
        )

    def __hash__(self):
        return hash(self.vectors.tobytes())


def frac_to_cart(lattice: Lattice, u) -> np.ndarray:
    """Cartesian coordinates (angstrom) of fractional coordinates ``u``."""
    return np.asarray(u, dtype=float) @ lattice.vectors


def cart_to_frac(lattice: Lattice, x) -> np.ndarray:
    """Fractional coordinates of Cartesian ``x`` (inverse of frac_to_cart)."""
    return np.asarray(x, dtype=float) @ lattice.inverse


def min_image_shift(lattice: Lattice, delta_frac) -> tuple[np.ndarray, np.ndarray]:
    """Optimal periodic image shifts for fractional displacement rows.

    For each row ``d`` of ``delta_frac`` returns the integer triple ``n``
    minimizing ``|(d + n) @ L|`` together with that minimal distance.
    """
    d = np.atleast_2d(np.asarray(delta_frac, dtype=float))
    reduced, reduced_inv, change = lattice._reduced_basis
    # Work in the reduced basis, where round() plus one image layer is exact.
    f_red = d @ lattice.vectors @ reduced_inv
    base = -np.round(f_red)
    cands = f_red[:, None, :] + base[:, None, :] + _IMAGE_SHIFTS[None, :, :]
    dists = np.linalg.norm(cands @ reduced, axis=2)
    best = np.argmin(dists, axis=1)
    shifts_red = base + _IMAGE_SHIFTS[best]
    # Map the reduced-basis shift back to an original-basis integer triple.
    shifts = np.rint(shifts_red @ change).astype(int)
    return shifts, dists[np.arange(len(d)), best]


def min_image_distance(lattice: Lattice, x1, x2) -> float:
    """Minimum distance between x1 and any periodic image of x2 (angstrom)."""
    delta = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    delta_frac = delta @ lattice.inverse
    _, dist = min_image_shift(lattice, delta_frac)
    return float(dist[0]) if dist.shape == (1,) else dist


def _min_image_pair_distances(lattice: Lattice, xs_a, xs_b) -> np.ndarray:
    """All-pairs minimum-image distance matrix between two Cartesian sets."""
    a = np.atleast_2d(np.asarray(xs_a, dtype=float))
    b = np.atleast_2d(np.asarray(xs_b, dtype=float))
    delta = a[:, None, :] - b[None, :, :]
    flat = delta.reshape(-1, 3) @ lattice.inverse
    _, dist = min_image_shift(lattice, flat)
    return dist.reshape(len(a), len(b))


def molecular_min_distance(lattice, mol_a, mol_b, periodic: bool = False) -> float:
    """Smallest pairwise distance between two atom coordinate sets.

    Callers are responsible for excluding hydrogens when the molecular
    contact metric is wanted. ``lattice`` may be None when ``periodic`` is
    False.
    """
    a = np.atleast_2d(np.asarray(mol_a, dtype=float))
    b = np.atleast_2d(np.asarray(mol_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty molecule")
    if periodic:
        return float(np.min(_min_image_pair_distances(lattice, a, b)))
    delta = a[:, None, :] - b[None, :, :]
    return float(np.min(np.linalg.norm(delta, axis=2)))


@dataclass(frozen=True)
class AtomSite:
    """One atom in the unit cell: species ``z`` and fractional position."""

    z: int
    frac: tuple[float, float, float]

    def __post_init__(self):
        if not 1 <= int(self.z) <= 118:
            raise ValueError(f"atomic number out of range: {self.z}")
        wrapped = tuple(float(v) for v in wrap_to_cell(np.asarray(self.frac)))
        object.__setattr__(self, "z", int(self.z))
        object.__setattr__(self, "frac", wrapped)

    @property
    def is_hydrogen(self) -> bool:
        return self.z == 1


@dataclass(frozen=True)
class MolecularGraph:
    """Connected bond graph of one molecule, indexing into a crystal's sites.

    ``edges`` are canonicalized unordered pairs ``(i, j, bond_order)`` with
    ``i < j``. ``entity_id`` labels the chemical identity; all copies of the
    same compound share it.
    """

    atom_indices: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...]
    entity_id: str = "1"

    def __post_init__(self):
        atoms = tuple(int(i) for i in self.atom_indices)
        if len(set(atoms)) != len(atoms):
            raise ValueError("duplicate atom index in molecule")
        if not atoms:
            raise ValueError("molecule has no atoms")
        canon = []
        atom_set = set(atoms)
        for i, j, order in self.edges:
            i, j, order = int(i), int(j), int(order)
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if i not in atom_set or j not in atom_set:
                raise ValueError(f"bond ({i},{j}) references atom outside molecule")
            canon.append((min(i, j), max(i, j), order))
        canon = tuple(sorted(set(canon)))
        object.__setattr__(self, "atom_indices", atoms)
        object.__setattr__(self, "edges", canon)
        object.__setattr__(self, "entity_id", str(self.entity_id))
        if not self._is_connected():
            raise ValueError("molecule bond graph is not connected")

    def _is_connected(self) -> bool:
        if len(self.atom_indices) == 1:
            return True
        adj: dict[int, list[int]] = {i: [] for i in self.atom_indices}
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {self.atom_indices[0]}
        stack = [self.atom_indices[0]]
        while stack:
            for nbr in adj[stack.pop()]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        return len(seen) == len(self.atom_indices)

    def __len__(self):
        return len(self.atom_indices)


@dataclass(frozen=True)
class Crystal:
    """A periodic crystal: lattice, unit-cell sites, molecule partition.

    ``asu_molecule_indices`` marks the molecules forming the asymmetric
    unit. The molecule atom-index sets must partition the site list.
    """

    lattice: Lattice
    sites: tuple[AtomSite, ...]
    molecules: tuple[MolecularGraph, ...]
    asu_molecule_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "molecules", tuple(self.molecules))
        object.__setattr__(
            self,
            "asu_molecule_indices",
            tuple(int(i) for i in self.asu_molecule_indices),
        )
        n = len(self.sites)
        covered: list[int] = []
        for mol in self.molecules:
            covered.extend(mol.atom_indices)
        if sorted(covered) != list(range(n)):
            raise ValueError("molecule atom indices do not partition the site list")
        z = len(self.molecules)
        if not self.asu_molecule_indices:
            raise ValueError("asymmetric unit is empty")
        if any(not 0 <= i < z for i in self.asu_molecule_indices):
            raise ValueError("asymmetric-unit molecule index out of range")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_molecules(self) -> int:
        return len(self.molecules)

    @cached_property
    def frac_coords(self) -> np.ndarray:
        arr = np.array([s.frac for s in self.sites], dtype=float).reshape(-1, 3)
        arr.setflags(write=False)
        return arr

    @cached_property
    def cart_coords(self) -> np.ndarray:
        arr = self.frac_coords @ self.lattice.vectors
        arr.setflags(write=False)
        return arr

    @cached_property
    def species(self) -> np.ndarray:
        arr = np.array([s.z for s in self.sites], dtype=int)
        arr.setflags(write=False)
        return arr

    def molecule_heavy_indices(self, mol_index: int) -> np.ndarray:
        mol = self.molecules[mol_index]
        idx = np.array(mol.atom_indices, dtype=int)
        return idx[self.species[idx] != 1]

    def molecule_token_count(self, mol_index: int) -> int:
        """Number of non-hydrogen atoms in a molecule."""
        return int(len(self.molecule_heavy_indices(mol_index)))

    @cached_property
    def molecule_token_counts(self) -> np.ndarray:
        arr = np.array([self.molecule_token_count(i)
                        for i in range(self.n_molecules)], dtype=int)
        arr.setflags(write=False)
        return arr

    @cached_property
    def molecule_cart_coords(self) -> tuple[np.ndarray, ...]:
        """Whole-molecule Cartesian coordinates, one array per molecule.

        Each molecule is unwrapped to a contiguous placement and translated
        (by a lattice vector) so its centroid lies inside the unit cell.
        This is the canonical finite view of the crystal used by cropping
        and evaluation code; arrays are indexed like ``atom_indices``.
        """
        out = []
        for mol in self.molecules:
            if len(mol.atom_indices) == 1:
                u = wrap_to_cell(self.frac_coords[mol.atom_indices[0]]).reshape(1, 3)
            else:
                u = unwrap_molecule_frac(self.lattice, self.frac_coords, mol)
                centroid = u.mean(axis=0)
                u = u - np.round(centroid - wrap_to_cell(centroid))
            arr = u @ self.lattice.vectors
            arr.setflags(write=False)
            out.append(arr)
        return tuple(out)

    def molecule_heavy_cart(self, mol_index: int) -> np.ndarray:
        """Whole-molecule Cartesian coordinates restricted to heavy atoms."""
        mol = self.molecules[mol_index]
        coords = self.molecule_cart_coords[mol_index]
        mask = self.species[np.array(mol.atom_indices, dtype=int)] != 1
        return coords[mask]

    def molecule_centroid(self, mol_index: int) -> np.ndarray:
        """Centroid of a molecule's heavy atoms in the canonical finite view."""
        return self.molecule_heavy_cart(mol_index).mean(axis=0)


def unwrap_molecule_frac(lattice: Lattice, frac_coords: np.ndarray,
                         graph: MolecularGraph) -> np.ndarray:
    """Contiguous fractional coordinates for one molecule.

    Walks the bond graph from its first atom, moving each neighbor to the
    periodic image closest to the atom it bonds to, so molecules straddling
    the cell boundary come out whole. Returns coordinates indexed like
    ``graph.atom_indices``; they may lie outside [0, 1)^3.

    Raises ValueError("polymeric") when the bond graph is inconsistent with
    any finite placement, i.e. some bond cycle carries a net lattice
    translation.
    """
    index_of = {atom: k for k, atom in enumerate(graph.atom_indices)}
    adj: dict[int, list[int]] = {i: [] for i in graph.atom_indices}
    for i, j, _ in graph.edges:
        adj[i].append(j)
        adj[j].append(i)

    out = np.full((len(graph.atom_indices), 3), np.nan)
    start = graph.atom_indices[0]
    out[index_of[start]] = wrap_to_cell(frac_coords[start])
    stack = [start]
    seen = {start}
    while stack:
        cur = stack.pop()
        cur_u = out[index_of[cur]]
        for nbr in adj[cur]:
            delta = frac_coords[nbr] - cur_u
            shift, _ = min_image_shift(lattice, delta.reshape(1, 3))
            candidate = frac_coords[nbr] + shift[0]
            if nbr in seen:
                if not np.allclose(candidate, out[index_of[nbr]], atol=1e-6):
                    raise ValueError("polymeric")
            else:
                out[index_of[nbr]] = candidate
                seen.add(nbr)
                stack.append(nbr)
    if np.any((out.max(axis=0) - out.min(axis=0)) > 3.0):
        raise ValueError("polymeric")
    return out


class SupercellPolicy(Enum):
    """Molecule retention rule for supercell construction.

    CentroidInside keeps molecules whole and retains each copy with its
    centroid wrapped into the supercell (the convention used by cropping
    pipelines). AllCosets wraps every site individually, the raw periodic
    expansion used by invariance tests.
    """

    CENTROID_INSIDE = "centroid_inside"
    ALL_COSETS = "all_cosets"


def _adjugate_int(u: np.ndarray) -> np.ndarray:
    """Exact integer adjugate of an integer 3x3 matrix."""
    a = u.astype(np.int64)
    cof = np.empty((3, 3), dtype=np.int64)
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            cof[i, j] = (-1) ** (i + j) * (
                minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0]
            )
    return cof.T


@dataclass(frozen=True)
class SupercellSpec:
    """Integer change of cell with the coset representatives it induces.

    ``U`` maps the old row basis to the new one (``new_vectors = U @ old``),
    ``m = |det U|`` counts unit-cell copies, and ``coset_reps`` holds the m
    integer translations enumerating Z^3 modulo the sublattice {n @ U}.
    """

    U: np.ndarray
    m: int = field(init=False)
    coset_reps: np.ndarray = field(init=False)

    def __post_init__(self):
        u = np.array(self.U, dtype=np.int64).reshape(3, 3)
        det = int(round(np.linalg.det(u)))
        m = abs(det)
        if m == 0:
            raise ValueError("singular supercell matrix (det U == 0)")
        adj = _adjugate_int(u)
        # v and v' share a coset iff (v - v') @ inv(U) is integer; since
        # m * Z^3 lies inside the sublattice, scanning [0, m)^3 finds all.
        reps: list[tuple[int, int, int]] = []
        found: set[tuple[int, int, int]] = set()
        for v in itertools.product(range(m), repeat=3):
            key = tuple((np.array(v, dtype=np.int64) @ adj) % m)
            if key not in found:
                found.add(key)
                reps.append(v)
            if len(reps) == m:
                break
        reps_arr = np.array(reps, dtype=np.int64).reshape(m, 3)
        reps_arr.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "U", u)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "coset_reps", reps_arr)

    @classmethod
    def diagonal(cls, k: int) -> "SupercellSpec":
        return cls(np.diag([k, k, k]))


def _central_rep_index(spec: SupercellSpec) -> int:
    """Coset representative whose cell copy sits closest to the supercell center."""
    inv_u = np.linalg.inv(spec.U.astype(float))
    centers = (spec.coset_reps + 0.5) @ inv_u
    dist = np.linalg.norm(centers - 0.5, axis=1)
    order = np.lexsort((spec.coset_reps[:, 2], spec.coset_reps[:, 1],
                        spec.coset_reps[:, 0], np.round(dist, 12)))
    return int(order[0])


def build_supercell(crystal: Crystal, spec: SupercellSpec,
                    policy: SupercellPolicy = SupercellPolicy.CENTROID_INSIDE) -> Crystal:
    """Expand a crystal to the supercell described by ``spec``.

    The output lattice is ``spec.U @ crystal.lattice.vectors``; every
    molecule is replicated once per coset representative. The asymmetric
    unit of the result marks the images belonging to the most central cell
    copy.
    """
    new_lattice = Lattice(spec.U.astype(float) @ crystal.lattice.vectors)
    inv_u = np.linalg.inv(spec.U.astype(float))
    central = _central_rep_index(spec)

    unwrapped = [
        unwrap_molecule_frac(crystal.lattice, crystal.frac_coords, mol)
        for mol in crystal.molecules
    ]
    # Center molecules so every copy starts from a canonical in-cell position.
    centered = []
    for coords in unwrapped:
        centroid = coords.mean(axis=0)
        centered.append(coords - np.round(centroid - wrap_to_cell(centroid)))

    sites: list[AtomSite] = []
    molecules: list[MolecularGraph] = []
    asu: list[int] = []
    offset = 0
    for rep_idx in range(spec.m):
        rep = spec.coset_reps[rep_idx].astype(float)
        for mol_idx, mol in enumerate(crystal.molecules):
            coords = (centered[mol_idx] + rep) @ inv_u
            if policy is SupercellPolicy.CENTROID_INSIDE:
                # Translate the whole copy so its centroid falls inside the
                # supercell; sites of straddling molecules then wrap
                # individually and the contiguous view is recovered by
                # Crystal.molecule_cart_coords.
                centroid = coords.mean(axis=0)
                coords = coords - np.round(centroid - wrap_to_cell(centroid))
            new_frac = wrap_to_cell(coords)
            remap = {atom: offset + k for k, atom in enumerate(mol.atom_indices)}
            for k, atom in enumerate(mol.atom_indices):
                sites.append(AtomSite(crystal.sites[atom].z, tuple(new_frac[k])))
            molecules.append(MolecularGraph(
                atom_indices=tuple(remap[a] for a in mol.atom_indices),
                edges=tuple((remap[i], remap[j], o) for i, j, o in mol.edges),
                entity_id=mol.entity_id,
            ))
            if rep_idx == central and mol_idx in crystal.asu_molecule_indices:
                asu.append(len(molecules) - 1)
            offset += len(mol.atom_indices)
    return Crystal(new_lattice, tuple(sites), tuple(molecules), tuple(asu))


# Krivy-Gruber step matrices act on column bases; we accumulate them and
# transpose at the end to express the change in the row convention.
_NIGGLI_MAX_ITER = 10_000


def niggli_reduce(lattice: Lattice, tol: float = 1e-5) -> tuple[Lattice, np.ndarray]:
    """Niggli-reduce a lattice, tracking the integer change of basis.

    Returns ``(reduced, change)`` with ``reduced.vectors == change @
    lattice.vectors`` (up to float rounding), ``det(change) == +1``.
    Implements the iterative Krivy-Gruber reduction with the epsilon
    stabilization of Grosse-Kunstleve et al.; ``tol`` is relative to the
    cell size.
    """
    g = lattice.metric_tensor.copy()
    eps = tol * lattice.volume ** (2.0 / 3.0)
    c_total = np.eye(3, dtype=np.int64)

    def apply(m_step: np.ndarray):
        nonlocal g, c_total
        m_step = np.asarray(m_step, dtype=np.int64)
        g = m_step.T @ g @ m_step
        c_total = c_total @ m_step

    for _ in range(_NIGGLI_MAX_ITER):
        a, b, c = g[0, 0], g[1, 1], g[2, 2]
        xi, eta, zeta = 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]

        if a > b + eps or (abs(a - b) < eps and abs(xi) > abs(eta) + eps):
            apply([[0, -1, 0], [-1, 0, 0], [0, 0, -1]])
        a, b, c = g[0, 0], g[1, 1], g[2, 2]
        xi, eta, zeta = 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]
        if b > c + eps or (abs(b - c) < eps and abs(eta) > abs(zeta) + eps):
            apply([[-1, 0, 0], [0, 0, -1], [0, -1, 0]])
            continue

        a, b, c = g[0, 0], g[1, 1], g[2, 2]
        xi, eta, zeta = 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]
        l = 0 if abs(xi) < eps else (1 if xi > 0 else -1)
        m = 0 if abs(eta) < eps else (1 if eta > 0 else -1)
        n = 0 if abs(zeta) < eps else (1 if zeta > 0 else -1)
        if l * m * n == 1:
            apply(np.diag([(-1 if l == -1 else 1),
                           (-1 if m == -1 else 1),
                           (-1 if n == -1 else 1)]))
        elif l * m * n in (0, -1):
            i = -1 if l == 1 else 1
            j = -1 if m == 1 else 1
            k = -1 if n == 1 else 1
            if i * j * k == -1:
                if n == 0:
                    k = -1
                elif m == 0:
                    j = -1
                elif l == 0:
                    i = -1
            apply(np.diag([i, j, k]))

        a, b, c = g[0, 0], g[1, 1], g[2, 2]
        xi, eta, zeta = 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]

        if (abs(xi) > b + eps
                or (abs(xi - b) < eps and 2 * eta < zeta - eps)
                or (abs(xi + b) < eps and zeta < -eps)):
            s = 1 if xi > 0 else -1
            apply([[1, 0, 0], [0, 1, -s], [0, 0, 1]])
            continue
        if (abs(eta) > a + eps
                or (abs(a - eta) < eps and 2 * xi < zeta - eps)
                or (abs(a + eta) < eps and zeta < -eps)):
            s = 1 if eta > 0 else -1
            apply([[1, 0, -s], [0, 1, 0], [0, 0, 1]])
            continue
        if (abs(zeta) > a + eps
                or (abs(a - zeta) < eps and 2 * xi < eta - eps)
                or (abs(a + zeta) < eps and eta < -eps)):
            s = 1 if zeta > 0 else -1
            apply([[1, -s, 0], [0, 1, 0], [0, 0, 1]])
            continue
        total = xi + eta + zeta + a + b
        if total < -eps or (abs(total) < eps and 2 * (a + eta) + zeta > eps):
            apply([[1, 0, 1], [0, 1, 1], [0, 0, 1]])
            continue
        break
    else:
        raise ValueError("niggli divergence")

    change = c_total.T
    reduced = Lattice(change.astype(float) @ lattice.vectors)
    return reduced, change


def niggli_canonicalize(crystal: Crystal) -> Crystal:
    """Express a crystal in its Niggli-reduced cell with centered molecules.

    Fractional coordinates are remapped to the reduced basis, each molecule
    is unwrapped and translated so its centroid lies inside the cell, and
    sites are stored wrapped.
    """
    reduced, change = niggli_reduce(crystal.lattice)
    inv_change = np.linalg.inv(change.astype(float))
    remapped = crystal.frac_coords @ inv_change
    interim_sites = tuple(
        AtomSite(s.z, tuple(wrap_to_cell(u)))
        for s, u in zip(crystal.sites, remapped)
    )
    interim = Crystal(reduced, interim_sites, crystal.molecules,
                      crystal.asu_molecule_indices)
    new_frac = np.empty((crystal.n_sites, 3))
    for mol in interim.molecules:
        coords = unwrap_molecule_frac(reduced, interim.frac_coords, mol)
        centroid = coords.mean(axis=0)
        coords = coords - np.round(centroid - wrap_to_cell(centroid))
        for local, atom in enumerate(mol.atom_indices):
            new_frac[atom] = coords[local]
    sites = tuple(
        AtomSite(s.z, tuple(wrap_to_cell(u)))
        for s, u in zip(crystal.sites, new_frac)
    )
    return Crystal(reduced, sites, crystal.molecules,
                   crystal.asu_molecule_indices)


def apply_rigid_motion(crystal: Crystal, rotation, translation) -> Crystal:
    """Apply a global rotation to the lattice and a fractional translation.

    The rotation must be proper orthogonal within 1e-8. Both actions leave
    every periodic distance unchanged.
    """
    r = np.asarray(rotation, dtype=float).reshape(3, 3)
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-8):
        raise ValueError("rotation must be orthogonal")
    if np.linalg.det(r) < 0:
        raise ValueError("rotation must be proper (det = +1)")
    t = np.asarray(translation, dtype=float).reshape(3)
    new_lattice = Lattice(crystal.lattice.vectors @ r.T)
    new_sites = tuple(
        AtomSite(s.z, tuple(wrap_to_cell(np.asarray(s.frac) + t)))
        for s in crystal.sites
    )
    return Crystal(new_lattice, new_sites, crystal.molecules,
                   crystal.asu_molecule_indices)
