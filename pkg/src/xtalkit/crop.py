"""Training-crop construction over finite supercells.

Three crop methods share the same budget discipline (whole molecules only,
never exceed the token budget, tokens = non-hydrogen atoms):

- ``stochastic_shell_crop`` (method tag "S4"): concentric shells of the
  molecular contact graph around a random asymmetric-unit molecule, with a
  random shell-count truncation and stoichiometry-preserving subsampling of
  the first shell when no full shell fits.
- ``knn_crop``: molecules in ascending contact-distance order.
- ``centroid_radius_crop``: molecules whose centroid falls within a fixed
  radius of the center's centroid.

Every random decision draws from a named substream of the seed (streams
"center", "bmax", "kmax", "type", "molecule"), so individual decisions can
be pinned in tests and crops are reproducible byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .canonical import dump_deterministic
from .lattice import Crystal
from .rng import substream

__all__ = [
    "CropParams",
    "ShellDecomposition",
    "Crop",
    "ContactBoundary",
    "MoleculeBlock",
    "intermolecular_distance_matrix",
    "center_distance_row",
    "shell_decompose",
    "stochastic_shell_crop",
    "adaptive_stoichiometric_sample",
    "knn_crop",
    "centroid_radius_crop",
    "contact_boundary",
    "contact_pairs",
    "to_crop_json",
    "blocks_from_crop_json",
    "block_from_crystal",
]

CROP_SCHEMA = "xtal.crop.v1"

# Distances exactly on a shell boundary belong to the inner shell; this
# tolerance absorbs float noise in the ceiling.
_SHELL_EPS = 1e-9


@dataclass(frozen=True)
class CropParams:
    """Shell-crop hyperparameters (defaults follow the production recipe)."""

    r_cut: float = 4.5
    t_max: int = 640
    p_max: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.r_cut <= 0:
            raise ValueError("r_cut must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must lie in [0, 1]")


@dataclass(frozen=True)
class ShellDecomposition:
    """Concentric shells around a center molecule.

    ``shells[k]`` holds the molecule indices captured at the (k+1)-th radius
    step: shell i (1-based) contains the remaining molecules with contact
    distance ``d <= i * r_cut``. Boundary ties go inward. Empty intermediate
    shells are kept so shell indices track radii.
    """

    center: int
    shells: tuple[tuple[int, ...], ...]
    r_cut: float
    distances: np.ndarray

    @property
    def k_count(self) -> int:
        return sum(1 for s in self.shells if s)

    def annulus(self, k: int) -> tuple[int, ...]:
        """Molecules in the half-open band [k*r_cut, (k+1)*r_cut)."""
        d = self.distances
        picked = [
            m for m in range(len(d))
            if m != self.center and k * self.r_cut <= d[m] < (k + 1) * self.r_cut
        ]
        return tuple(picked)


@dataclass(frozen=True)
class Crop:
    """A finite training crop: whole molecules under a token budget."""

    method: str
    center: int
    molecule_indices: tuple[int, ...]
    shell_of: tuple[int, ...]
    token_count: int
    coordinates: np.ndarray
    seed: int | None = None
    params_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.center not in self.molecule_indices:
            raise ValueError("crop must contain its center molecule")


@dataclass(frozen=True)
class ContactBoundary:
    """Atom pairs crossing the crop boundary within the contact radius."""

    edges: tuple[tuple[int, int], ...]
    r0: float


def intermolecular_distance_matrix(supercell: Crystal) -> np.ndarray:
    """Symmetric matrix of minimal heavy-atom contact distances.

    Distances are minimum-image over the supercell lattice, which equals
    plain Euclidean for every contact shorter than half the supercell box
    (the designed operating regime) and keeps crop selection invariant
    under rigid motions of the stored cell. Diagonal is zero.
    """
    z = supercell.n_molecules
    out = np.zeros((z, z))
    for i in range(z):
        out[i] = center_distance_row(supercell, i)
    return np.minimum(out, out.T)


def center_distance_row(supercell: Crystal, center: int) -> np.ndarray:
    """Contact distances from one molecule to every molecule (heavy atoms).

    Minimum-image over the supercell lattice; see
    ``intermolecular_distance_matrix``.
    """
    from .lattice import _min_image_pair_distances

    ctr = supercell.molecule_heavy_cart(center)
    coords = []
    owner = []
    for j in range(supercell.n_molecules):
        c = supercell.molecule_heavy_cart(j)
        coords.append(c)
        owner.append(np.full(len(c), j))
    all_coords = np.concatenate(coords)
    owner = np.concatenate(owner)
    d = _min_image_pair_distances(supercell.lattice, ctr, all_coords)
    per_atom = d.min(axis=0)
    row = np.full(supercell.n_molecules, np.inf)
    np.minimum.at(row, owner, per_atom)
    row[center] = 0.0
    return row


def shell_decompose(supercell: Crystal, distances, center: int,
                    r_cut: float) -> ShellDecomposition:
    """Assign every non-center molecule to a concentric shell.

    ``distances`` is either the full matrix or the center's distance row.
    """
    d = np.asarray(distances)
    row = d[center] if d.ndim == 2 else d
    z = len(row)
    shell_index = np.maximum(
        1, np.ceil(row / r_cut - _SHELL_EPS).astype(int))
    n_shells = int(shell_index[np.arange(z) != center].max()) if z > 1 else 0
    shells = []
    for k in range(1, n_shells + 1):
        members = np.flatnonzero(shell_index == k)
        shells.append(tuple(int(m) for m in members if m != center))
    return ShellDecomposition(center=center, shells=tuple(shells),
                              r_cut=r_cut, distances=row)


def _crop_coordinates(supercell: Crystal, mol_indices) -> np.ndarray:
    return np.concatenate([supercell.molecule_heavy_cart(i)
                           for i in mol_indices])


def adaptive_stoichiometric_sample(supercell: Crystal, frontier, center: int,
                                   asu_indices, t_max: int, seed: int | None = None,
                                   _rng_type=None, _rng_mol=None) -> list[int]:
    """Subsample a shell to the token budget, preserving ASU stoichiometry.

    Per-type targets are ``round(p_t * |frontier|)`` with ``p_t`` the type's
    share of the asymmetric unit; the center's type starts one below its
    target because the center is pre-selected. Every frontier molecule of
    type t carries weight ``max(R_t, 0) / |bucket_t|``, renormalized after
    each draw; a type is therefore drawn proportionally to its remaining
    target and never once its target is met. Sampling stops at the first
    molecule that would exceed the budget. The returned list excludes the
    center.
    """
    rng_type = _rng_type if _rng_type is not None else substream(seed or 0, "type")
    rng_mol = _rng_mol if _rng_mol is not None else substream(seed or 0, "molecule")
    tokens_of = supercell.molecule_token_counts
    type_of = [supercell.molecules[m].entity_id for m in range(supercell.n_molecules)]

    asu_types = [type_of[m] for m in asu_indices]
    types = sorted(set(asu_types) | {type_of[m] for m in frontier})
    share = {t: asu_types.count(t) / len(asu_types) for t in types}
    target = {t: int(np.floor(share.get(t, 0.0) * len(frontier) + 0.5))
              for t in types}
    target[type_of[center]] -= 1

    remaining = sorted(frontier)
    tokens = int(tokens_of[center])
    picked: list[int] = []
    while tokens < t_max and remaining:
        buckets = {t: [m for m in remaining if type_of[m] == t] for t in types}
        live = [t for t in types if buckets[t]]
        # per-molecule weight R_t/|B_t| summed over a bucket leaves the type
        # drawn proportionally to its remaining target
        weights = np.array([float(max(target[t], 0)) for t in live])
        total = weights.sum()
        if total <= 0:
            break
        chosen_type = live[int(rng_type.choice(len(live), p=weights / total))]
        bucket = buckets[chosen_type]
        mol = bucket[int(rng_mol.integers(len(bucket)))]
        if tokens + tokens_of[mol] > t_max:
            break
        picked.append(mol)
        tokens += int(tokens_of[mol])
        remaining.remove(mol)
        target[chosen_type] -= 1
    return picked


def stochastic_shell_crop(supercell: Crystal, params: CropParams,
                          distances=None) -> Crop:
    """Shell-based stochastic crop (method tag "S4").

    Draws the center uniformly from the asymmetric unit, keeps all shells
    with probability ``p_max`` (otherwise truncates to a uniform shell
    count), then adds full shells while the next one still fits the budget.
    When not even the first shell fits, its molecules are subsampled
    stoichiometrically.
    """
    if not supercell.asu_molecule_indices:
        raise ValueError("supercell has no asymmetric-unit molecules")
    seed = params.seed
    asu = supercell.asu_molecule_indices
    center = asu[int(substream(seed, "center").integers(len(asu)))]

    tokens_of = supercell.molecule_token_counts
    if tokens_of[center] > params.t_max:
        raise ValueError(
            f"oversized molecule: center has {tokens_of[center]} tokens, "
            f"budget is {params.t_max}")

    if distances is None:
        distances = center_distance_row(supercell, center)
    decomp = shell_decompose(supercell, distances, center, params.r_cut)
    shells = list(decomp.shells)

    keep_all = bool(substream(seed, "bmax").random() < params.p_max)
    if not keep_all and len(shells) >= 1:
        k_max = int(substream(seed, "kmax").integers(1, len(shells) + 1))
        shells = shells[:k_max]

    chosen: list[int] = [center]
    shell_of: list[int] = [0]
    tokens = int(tokens_of[center])
    full_added = 0
    for i, shell in enumerate(shells, start=1):
        shell_tokens = int(tokens_of[list(shell)].sum()) if shell else 0
        if tokens + shell_tokens > params.t_max:
            break
        chosen.extend(shell)
        shell_of.extend([i] * len(shell))
        tokens += shell_tokens
        full_added += 1

    if full_added == 0 and shells:
        sampled = adaptive_stoichiometric_sample(
            supercell, shells[0], center, asu, params.t_max,
            _rng_type=substream(seed, "type"),
            _rng_mol=substream(seed, "molecule"))
        chosen.extend(sampled)
        shell_of.extend([1] * len(sampled))
        tokens += int(tokens_of[sampled].sum()) if sampled else 0

    return Crop(
        method="S4",
        center=int(center),
        molecule_indices=tuple(chosen),
        shell_of=tuple(shell_of),
        token_count=tokens,
        coordinates=_crop_coordinates(supercell, chosen),
        seed=seed,
        params_echo={"r_cut": params.r_cut, "t_max": params.t_max,
                     "p_max": params.p_max},
    )


def _budget_ordered_crop(supercell, center, ordered, t_max, method, echo,
                         seed=None):
    tokens_of = supercell.molecule_token_counts
    if tokens_of[center] > t_max:
        raise ValueError(
            f"oversized molecule: center has {tokens_of[center]} tokens, "
            f"budget is {t_max}")
    chosen = [int(center)]
    tokens = int(tokens_of[center])
    for m in ordered:
        if tokens + tokens_of[m] > t_max:
            break
        chosen.append(int(m))
        tokens += int(tokens_of[m])
    return Crop(
        method=method,
        center=int(center),
        molecule_indices=tuple(chosen),
        shell_of=tuple([0] + [-1] * (len(chosen) - 1)),
        token_count=tokens,
        coordinates=_crop_coordinates(supercell, chosen),
        seed=seed,
        params_echo=echo,
    )


def knn_crop(supercell: Crystal, center: int, t_max: int = 640,
             distances=None) -> Crop:
    """Whole molecules in ascending contact-distance order from the center.

    Ties break by ascending molecule index; the first molecule that does
    not fit the budget stops the crop.
    """
    if distances is None:
        distances = center_distance_row(supercell, center)
    row = np.asarray(distances)
    row = row[center] if row.ndim == 2 else row
    others = np.array([m for m in range(supercell.n_molecules) if m != center])
    order = others[np.lexsort((others, row[others]))]
    return _budget_ordered_crop(supercell, center, order, t_max, "KNN",
                                {"t_max": t_max})


def centroid_radius_crop(supercell: Crystal, center: int, radius: float = 15.0,
                         t_max: int = 640) -> Crop:
    """Whole molecules whose heavy-atom centroid lies within the radius.

    Centroid separations use the same minimum-image metric as the contact
    matrix; budget is enforced in ascending distance order (ties by index).
    """
    from .lattice import _min_image_pair_distances

    centroids = np.array([supercell.molecule_centroid(i)
                          for i in range(supercell.n_molecules)])
    dist = _min_image_pair_distances(
        supercell.lattice, centroids[center].reshape(1, 3), centroids)[0]
    dist[center] = 0.0
    others = np.array([m for m in range(supercell.n_molecules)
                       if m != center and dist[m] <= radius])
    if len(others):
        others = others[np.lexsort((others, dist[others]))]
    return _budget_ordered_crop(supercell, center, others, t_max,
                                "CentroidRadius",
                                {"radius": radius, "t_max": t_max})


def contact_pairs(supercell: Crystal, r0: float):
    """All heavy-atom pairs within r0 (site-index pairs), via a KD-tree."""
    site_idx = []
    coords = []
    for i in range(supercell.n_molecules):
        mol = supercell.molecules[i]
        heavy_mask = supercell.species[np.array(mol.atom_indices)] != 1
        site_idx.extend(np.array(mol.atom_indices)[heavy_mask])
        coords.append(supercell.molecule_heavy_cart(i))
    coords = np.concatenate(coords)
    site_idx = np.array(site_idx)
    tree = cKDTree(coords)
    pairs = tree.query_pairs(r0, output_type="ndarray")
    return site_idx, pairs


def contact_boundary(supercell: Crystal, crop: Crop, r0: float,
                     precomputed=None) -> ContactBoundary:
    """Heavy-atom pairs with one endpoint inside the crop, one outside,
    within the contact radius. Pair endpoints are site indices ordered
    (inside, outside)."""
    site_idx, pairs = (precomputed if precomputed is not None
                       else contact_pairs(supercell, r0))
    owner = np.empty(supercell.n_sites, dtype=int)
    for m in range(supercell.n_molecules):
        owner[list(supercell.molecules[m].atom_indices)] = m
    in_crop = np.zeros(supercell.n_molecules, dtype=bool)
    in_crop[list(crop.molecule_indices)] = True

    a = site_idx[pairs[:, 0]]
    b = site_idx[pairs[:, 1]]
    a_in = in_crop[owner[a]]
    b_in = in_crop[owner[b]]
    crossing = a_in ^ b_in
    edges = []
    for u, v, ui in zip(a[crossing], b[crossing], a_in[crossing]):
        edges.append((int(u), int(v)) if ui else (int(v), int(u)))
    return ContactBoundary(edges=tuple(sorted(edges)), r0=r0)


@dataclass(frozen=True)
class MoleculeBlock:
    """One finite molecule: heavy-atom species, coordinates, bonds, entity."""

    species: np.ndarray
    coords: np.ndarray
    entity: str
    bonds: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        species = np.asarray(self.species, dtype=int)
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 3)
        if len(species) != len(coords):
            raise ValueError("species/coords length mismatch")
        species.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "bonds", tuple(
            (min(int(i), int(j)), max(int(i), int(j)), int(o))
            for i, j, o in self.bonds))


def block_from_crystal(crystal: Crystal, mol_index: int) -> MoleculeBlock:
    """Heavy-atom MoleculeBlock for one molecule of a crystal."""
    mol = crystal.molecules[mol_index]
    atom_idx = np.array(mol.atom_indices)
    heavy_mask = crystal.species[atom_idx] != 1
    heavy_atoms = atom_idx[heavy_mask]
    local = {a: k for k, a in enumerate(heavy_atoms)}
    bonds = tuple((local[i], local[j], o) for i, j, o in mol.edges
                  if i in local and j in local)
    return MoleculeBlock(
        species=crystal.species[heavy_atoms],
        coords=crystal.molecule_cart_coords[mol_index][heavy_mask],
        entity=mol.entity_id,
        bonds=bonds,
    )


def to_crop_json(crop: Crop, supercell: Crystal) -> bytes:
    """Serialize a crop with enough context to evaluate it standalone."""
    mols = []
    for m, shell in zip(crop.molecule_indices, crop.shell_of):
        block = block_from_crystal(supercell, m)
        mols.append({
            "index": int(m),
            "shell": int(shell),
            "entity": block.entity,
            "species": [int(z) for z in block.species],
            "coords": [[float(v) for v in row] for row in block.coords],
            "bonds": [[int(i), int(j), int(o)] for i, j, o in block.bonds],
        })
    doc = {
        "schema": CROP_SCHEMA,
        "method": crop.method,
        "seed": crop.seed,
        "params": crop.params_echo,
        "center": int(crop.center),
        "token_count": int(crop.token_count),
        "molecules": mols,
    }
    return dump_deterministic(doc) + b"\n"


def blocks_from_crop_json(data: bytes | str) -> list[MoleculeBlock]:
    """Molecule blocks of a serialized crop (evaluation-side reader)."""
    import json

    doc = json.loads(data)
    if doc.get("schema") != CROP_SCHEMA:
        raise ValueError(f"expected schema {CROP_SCHEMA!r}")
    return [
        MoleculeBlock(
            species=np.array(m["species"], dtype=int),
            coords=np.array(m["coords"], dtype=float),
            entity=m["entity"],
            bonds=tuple(tuple(b) for b in m.get("bonds", ())),
        )
        for m in doc["molecules"]
    ]
