"""Molecule perception: partition unit-cell sites into bonded molecules.

When a structure carries no explicit bond list, atoms are bonded whenever
their distance under some periodic image is below the sum of covalent radii
plus a slack of 0.4 angstrom (a common crystallographic heuristic). Bonds
carry the image shift that realizes them, so components can be unwrapped
into whole molecules and infinite (polymeric) networks detected: a molecule
is polymeric when an atom bonds its own periodic image, or when a bond cycle
carries a net lattice translation.
"""

from __future__ import annotations

import itertools

import numpy as np

from .elements import RadiiTable, covalent_radii
from .lattice import Crystal, Lattice, MolecularGraph, min_image_shift

__all__ = ["perceive_molecules", "infer_bonds", "assign_entities"]

BOND_SLACK = 0.4

_WIDE_SHIFTS = np.array(
    list(itertools.product((-2, -1, 0, 1, 2), repeat=3)), dtype=float
)


def _labeled_image_bonds(lattice: Lattice, sites, radii: RadiiTable,
                         slack: float):
    """All bonded (i, j, image shift) triples plus atoms bonded to themselves.

    Shifts are integer triples in the original basis: the bond connects atom
    i in the home cell to atom j translated by the shift. Enumerates two
    layers of reduced-basis images, enough for any covalent cutoff shorter
    than two reduced cell edges.
    """
    n = len(sites)
    if n == 0:
        return [], set()
    frac = np.array([s.frac for s in sites], dtype=float).reshape(-1, 3)
    r = np.array([radii.radius(s.z) for s in sites])
    reduced, reduced_inv, change = lattice._reduced_basis

    ii, jj = np.triu_indices(n)
    delta_red = (frac[jj] - frac[ii]) @ lattice.vectors @ reduced_inv
    base = -np.round(delta_red)
    cand = delta_red[:, None, :] + base[:, None, :] + _WIDE_SHIFTS[None, :, :]
    dist = np.linalg.norm(cand @ reduced, axis=2)
    cutoff = (r[ii] + r[jj] + slack)[:, None]
    hit_pair, hit_img = np.nonzero(dist < cutoff)

    labeled: list[tuple[int, int, tuple[int, int, int]]] = []
    self_bonded: set[int] = set()
    for p, img in zip(hit_pair, hit_img):
        i, j = int(ii[p]), int(jj[p])
        shift_red = base[p] + _WIDE_SHIFTS[img]
        shift = tuple(int(v) for v in np.rint(shift_red @ change))
        if i == j:
            if shift != (0, 0, 0):
                self_bonded.add(i)
            continue
        labeled.append((i, j, shift))
    return labeled, self_bonded


def _labeled_from_explicit(lattice: Lattice, sites, explicit_bonds):
    """Label explicit bonds with the minimum-image shift realizing them."""
    frac = np.array([s.frac for s in sites], dtype=float).reshape(-1, 3)
    labeled = []
    self_bonded: set[int] = set()
    for i, j, _ in explicit_bonds:
        if i == j:
            self_bonded.add(int(i))
            continue
        shift, _dist = min_image_shift(lattice, (frac[j] - frac[i]).reshape(1, 3))
        labeled.append((int(i), int(j), tuple(int(v) for v in shift[0])))
    return labeled, self_bonded


def infer_bonds(lattice: Lattice, sites, radii: RadiiTable | None = None,
                slack: float = BOND_SLACK) -> list[tuple[int, int, int]]:
    """Distance-based bond list over unit-cell sites (order always 1)."""
    radii = radii or covalent_radii()
    labeled, _ = _labeled_image_bonds(lattice, sites, radii, slack)
    return sorted({(i, j, 1) for i, j, _ in labeled})


def assign_entities(species_per_mol, bonds_per_mol) -> list[str]:
    """Entity labels by cheap chemical-identity key.

    Molecules with identical species multisets and bond-species multisets
    share a label; labels are '1', '2', ... in order of first appearance.
    """
    keys = []
    for species, bonds in zip(species_per_mol, bonds_per_mol):
        bond_key = tuple(sorted(
            (min(species[i], species[j]), max(species[i], species[j]), o)
            for i, j, o in bonds))
        keys.append((tuple(sorted(species)), bond_key))
    label_of: dict = {}
    labels = []
    for key in keys:
        if key not in label_of:
            label_of[key] = str(len(label_of) + 1)
        labels.append(label_of[key])
    return labels


def _components_with_offsets(n: int, labeled, self_bonded):
    """Connected components plus per-atom integer cell offsets.

    Returns (components, offsets, polymeric_components). A component is
    polymeric when offsets cannot be assigned consistently (a bond cycle
    with net translation) or one of its atoms bonds its own image.
    """
    adj: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(n)]
    for i, j, shift in labeled:
        s = np.array(shift, dtype=int)
        adj[i].append((j, s))
        adj[j].append((i, -s))

    offsets = np.zeros((n, 3), dtype=int)
    seen = [False] * n
    comps: list[list[int]] = []
    polymeric_flags: list[bool] = []
    for start in range(n):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        poly = start in self_bonded
        stack = [start]
        while stack:
            cur = stack.pop()
            for nbr, shift in adj[cur]:
                want = offsets[cur] + shift
                if seen[nbr]:
                    if nbr in comp and not np.array_equal(offsets[nbr], want):
                        poly = True
                    continue
                seen[nbr] = True
                offsets[nbr] = want
                comp.append(nbr)
                stack.append(nbr)
                if nbr in self_bonded:
                    poly = True
        comps.append(sorted(comp))
        polymeric_flags.append(poly)
    return comps, offsets, polymeric_flags


def perceive_molecules(lattice: Lattice, sites, explicit_bonds=None,
                       radii: RadiiTable | None = None,
                       on_polymeric: str = "raise"):
    """Partition sites into connected molecules.

    ``explicit_bonds`` (``(i, j, order)`` triples) short-circuits distance
    inference. Returns a list of MolecularGraph. A polymeric component (or
    one spanning more than 3 cell lengths) raises ValueError('polymeric');
    with ``on_polymeric='flag'`` the function returns ``(molecules,
    polymeric_flag)`` instead.
    """
    if on_polymeric not in ("raise", "flag"):
        raise ValueError("on_polymeric must be 'raise' or 'flag'")
    sites = tuple(sites)
    order_of: dict[tuple[int, int], int] = {}
    if explicit_bonds is not None:
        labeled, self_bonded = _labeled_from_explicit(lattice, sites,
                                                      explicit_bonds)
        for i, j, o in explicit_bonds:
            order_of[(min(i, j), max(i, j))] = int(o)
    else:
        labeled, self_bonded = _labeled_image_bonds(
            lattice, sites, radii or covalent_radii(), BOND_SLACK)

    comps, offsets, poly_flags = _components_with_offsets(
        len(sites), labeled, self_bonded)

    frac = np.array([s.frac for s in sites], dtype=float).reshape(-1, 3)
    polymeric = False
    for comp, poly in zip(comps, poly_flags):
        if poly:
            polymeric = True
            continue
        span = np.ptp(frac[comp] + offsets[comp], axis=0) if len(comp) > 1 else 0
        if np.any(span > 3.0):
            polymeric = True
    if polymeric and on_polymeric == "raise":
        raise ValueError("polymeric")

    pair_set = sorted({(i, j) for i, j, _ in labeled})
    bonds_by_comp: dict[int, list] = {ci: [] for ci in range(len(comps))}
    comp_of = {}
    for ci, comp in enumerate(comps):
        for a in comp:
            comp_of[a] = ci
    for i, j in pair_set:
        bonds_by_comp[comp_of[i]].append((i, j, order_of.get((i, j), 1)))

    species_per_mol = []
    local_bonds_per_mol = []
    for ci, comp in enumerate(comps):
        local = {a: k for k, a in enumerate(comp)}
        species_per_mol.append([sites[a].z for a in comp])
        local_bonds_per_mol.append(
            [(local[i], local[j], o) for i, j, o in bonds_by_comp[ci]])
    entities = assign_entities(species_per_mol, local_bonds_per_mol)

    molecules = [
        MolecularGraph(atom_indices=tuple(comp),
                       edges=tuple(bonds_by_comp[ci]),
                       entity_id=entities[ci])
        for ci, comp in enumerate(comps)
    ]

    if on_polymeric == "flag":
        return molecules, polymeric
    return molecules


def crystal_from_sites(lattice: Lattice, sites, explicit_bonds=None,
                       radii: RadiiTable | None = None) -> Crystal:
    """Convenience: perceive molecules and assemble an all-ASU P1 crystal."""
    molecules = perceive_molecules(lattice, sites, explicit_bonds, radii)
    return Crystal(lattice, tuple(sites), tuple(molecules),
                   tuple(range(len(molecules))))
