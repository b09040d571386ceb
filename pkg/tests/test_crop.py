"""Shell cropping, stoichiometric sampling, baselines, contact boundary."""

import numpy as np
import pytest

from conftest import build_p1_crystal, random_rotation
from xtalkit.lattice import (
    molecular_min_distance,
    Lattice,
    SupercellSpec,
    apply_rigid_motion,
    build_supercell,
)
from xtalkit.crop import (
    CropParams,
    adaptive_stoichiometric_sample,
    centroid_radius_crop,
    contact_boundary,
    intermolecular_distance_matrix,
    knn_crop,
    shell_decompose,
    stochastic_shell_crop,
    to_crop_json,
)
from xtalkit.rng import substream


def simple_cubic(extent=5, spacing=4.0, center_asu=True):
    """Grid of single-carbon molecules; ASU = molecule nearest the center."""
    lat = Lattice(np.eye(3) * spacing * extent)
    defs = []
    for i in range(extent):
        for j in range(extent):
            for k in range(extent):
                u = ((np.array([i, j, k]) + 0.5) / extent)
                defs.append(([6], [u], [], "A"))
    crystal = build_p1_crystal(lat, defs)
    if center_asu:
        centroids = np.array([crystal.molecule_centroid(i)
                              for i in range(crystal.n_molecules)])
        mid = np.argmin(np.linalg.norm(
            centroids - lat.vectors.sum(axis=0) / 2, axis=1))
        object.__setattr__(crystal, "asu_molecule_indices", (int(mid),))
    return crystal


def frontier_bag(n_a=12, n_b=12, tokens=4, asu_types=("A", "A", "B")):
    """ASU candidate molecules plus a widely spaced A/B frontier.

    Molecules 0..len(asu_types)-1 carry the ASU types; the frontier follows
    (n_a of type A then n_b of type B). Geometry is irrelevant to the
    stoichiometric sampler; only entities and token counts matter.
    """
    lat = Lattice(np.eye(3) * 600.0)
    chain = np.array([[k * 1.2, 0, 0] for k in range(tokens)])
    bonds = [(k, k + 1, 1) for k in range(tokens - 1)]
    defs = []
    placed = 0
    for ent in asu_types:
        z = 6 if ent == "A" else 7
        pos = np.array([20.0 + 12.0 * placed, 30.0, 30.0])
        defs.append(([z] * tokens, (chain + pos) @ lat.inverse, bonds, ent))
        placed += 1
    for n, z, ent in ((n_a, 6, "A"), (n_b, 7, "B")):
        for _ in range(n):
            pos = np.array([20.0 + 12.0 * placed, 100.0, 100.0])
            defs.append(([z] * tokens, (chain + pos) @ lat.inverse, bonds, ent))
            placed += 1
    asu = tuple(range(len(asu_types)))
    return build_p1_crystal(lat, defs, asu=asu)


class TestDistanceMatrix:
    def test_single_molecule(self):
        lat = Lattice(np.eye(3) * 10)
        crystal = build_p1_crystal(lat, [([6], [[0.5, 0.5, 0.5]], [], "A")])
        d = intermolecular_distance_matrix(crystal)
        assert d.shape == (1, 1) and d[0, 0] == 0.0

    def test_two_molecules(self):
        lat = Lattice(np.eye(3) * 20)
        defs = [([6, 6], [[0.1, 0.1, 0.1], [0.17, 0.1, 0.1]],
                 [(0, 1, 1)], "A"),
                ([6], [[0.26, 0.1, 0.1]], [], "B")]
        crystal = build_p1_crystal(lat, defs)
        d = intermolecular_distance_matrix(crystal)
        assert d[0, 1] == pytest.approx(1.8, abs=1e-9)

    def test_matches_double_loop(self, molecular_crystal):
        cell = build_supercell(molecular_crystal, SupercellSpec.diagonal(2))
        got = intermolecular_distance_matrix(cell)
        z = cell.n_molecules
        for i in range(0, z, 7):
            for j in range(0, z, 5):
                a = cell.molecule_heavy_cart(i)
                b = cell.molecule_heavy_cart(j)
                want = 0.0 if i == j else molecular_min_distance(
                    cell.lattice, a, b, periodic=True)
                assert got[i, j] == pytest.approx(want, abs=1e-10)

    def test_equals_plain_euclidean_for_interior_contacts(self, cocrystal_2to1):
        # within half the supercell box the min-image metric coincides with
        # the finite-cluster view
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(3))
        got = intermolecular_distance_matrix(cell)
        half_box = cell.lattice.lengths.min() / 2
        for i in (cell.asu_molecule_indices[0],):
            for j in range(cell.n_molecules):
                if i == j:
                    continue
                a = cell.molecule_heavy_cart(i)
                b = cell.molecule_heavy_cart(j)
                plain = float(np.min(np.linalg.norm(
                    a[:, None, :] - b[None, :, :], axis=2)))
                if plain < half_box:
                    assert got[i, j] == pytest.approx(plain, abs=1e-9)

    def test_hydrogens_excluded(self):
        lat = Lattice(np.eye(3) * 20)
        # hydrogen on molecule A sits closer to B than any heavy atom
        defs = [([6, 1], [[0.1, 0.1, 0.1], [0.15, 0.1, 0.1]],
                 [(0, 1, 1)], "A"),
                ([6], [[0.25, 0.1, 0.1]], [], "B")]
        crystal = build_p1_crystal(lat, defs)
        d = intermolecular_distance_matrix(crystal)
        assert d[0, 1] == pytest.approx(3.0, abs=1e-9)


class TestShellDecompose:
    def test_lonely_center(self):
        lat = Lattice(np.eye(3) * 10)
        crystal = build_p1_crystal(lat, [([6], [[0.5, 0.5, 0.5]], [], "A")])
        d = intermolecular_distance_matrix(crystal)
        decomp = shell_decompose(crystal, d, 0, 4.5)
        assert decomp.shells == ()
        assert decomp.k_count == 0

    def test_cubic_spectrum(self):
        crystal = simple_cubic(extent=7)
        center = crystal.asu_molecule_indices[0]
        d = intermolecular_distance_matrix(crystal)
        decomp = shell_decompose(crystal, d, center, 4.5)
        # enumerated cubic distance spectrum: shell 1 holds the 6 face
        # neighbors (4.0 A); shell 2 everything out to 9.0 A: 12 at 5.66,
        # 8 at 6.93, 6 at 8.0, 24 at 8.94
        assert len(decomp.shells[0]) == 6
        assert len(decomp.shells[1]) == 50
        row = decomp.distances
        np.testing.assert_allclose(sorted(row[list(decomp.shells[0])]),
                                   [4.0] * 6, atol=1e-9)

    def test_shells_partition_and_monotone(self, molecular_crystal):
        cell = build_supercell(molecular_crystal, SupercellSpec.diagonal(3))
        d = intermolecular_distance_matrix(cell)
        center = cell.asu_molecule_indices[0]
        decomp = shell_decompose(cell, d, center, 4.5)
        flat = [m for s in decomp.shells for m in s]
        assert sorted(flat) == [m for m in range(cell.n_molecules)
                                if m != center]
        # concatenated shells have non-decreasing distance blocks
        prev_max = 0.0
        for shell in decomp.shells:
            if not shell:
                continue
            ds = d[center, list(shell)]
            assert ds.min() >= prev_max - 1e-9
            prev_max = ds.max()

    def test_boundary_tie_goes_inward(self):
        lat = Lattice(np.eye(3) * 40)
        defs = [([6], [[0.5, 0.5, 0.5]], [], "A"),
                ([6], [[0.5 + 4.5 / 40, 0.5, 0.5]], [], "A")]
        crystal = build_p1_crystal(lat, defs)
        d = intermolecular_distance_matrix(crystal)
        decomp = shell_decompose(crystal, d, 0, 4.5)
        assert decomp.shells[0] == (1,)  # d == r_cut joins shell 1

    def test_annulus_view(self):
        crystal = simple_cubic(extent=5)
        center = crystal.asu_molecule_indices[0]
        d = intermolecular_distance_matrix(crystal)
        decomp = shell_decompose(crystal, d, center, 4.5)
        # half-open annuli: the 4.0 A neighbors fall in band 0
        assert len(decomp.annulus(0)) == 6
        assert set(decomp.annulus(1)) == set(decomp.shells[1])


class TestStochasticShellCrop:
    def test_unbounded_budget_takes_everything(self):
        crystal = simple_cubic(extent=3)
        params = CropParams(r_cut=4.5, t_max=10_000, p_max=1.0, seed=0)
        crop = stochastic_shell_crop(crystal, params)
        assert sorted(crop.molecule_indices) == list(range(27))
        assert crop.token_count == 27

    def test_budget_equal_center_keeps_center_only(self):
        crystal = simple_cubic(extent=3)
        params = CropParams(t_max=1, p_max=1.0, seed=3)
        crop = stochastic_shell_crop(crystal, params)
        assert crop.molecule_indices == (crop.center,)
        assert crop.token_count == 1

    def test_oversized_center_rejected(self, molecular_crystal):
        cell = build_supercell(molecular_crystal, SupercellSpec.diagonal(2))
        with pytest.raises(ValueError, match="oversized molecule"):
            stochastic_shell_crop(cell, CropParams(t_max=5, seed=0))

    def test_budget_safety_and_prefix_property(self, cocrystal_2to1):
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(3))
        d = intermolecular_distance_matrix(cell)
        for seed in range(300):
            params = CropParams(t_max=60, seed=seed)
            crop = stochastic_shell_crop(cell, params, distances=d[crop_center(cell, seed)])
            assert crop.token_count <= params.t_max
            check_shell_prefix(cell, crop, d)

    def test_determinism(self, cocrystal_2to1):
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(3))
        params = CropParams(t_max=96, seed=11)
        a = stochastic_shell_crop(cell, params)
        b = stochastic_shell_crop(cell, params)
        assert to_crop_json(a, cell) == to_crop_json(b, cell)
        c = stochastic_shell_crop(cell, CropParams(t_max=96, seed=12))
        assert to_crop_json(a, cell) != to_crop_json(c, cell)

    def test_center_uniform_over_asu(self, cocrystal_2to1):
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(2))
        d = intermolecular_distance_matrix(cell)
        n = 4000
        counts = np.zeros(cell.n_molecules)
        for seed in range(n):
            crop = stochastic_shell_crop(cell, CropParams(t_max=48, seed=seed),
                                         distances=d)
            counts[crop.center] += 1
        asu = list(cell.asu_molecule_indices)
        assert counts.sum() == n
        assert set(np.flatnonzero(counts)) == set(asu)
        p = 1 / len(asu)
        band = 3 * np.sqrt(p * (1 - p) / n)
        np.testing.assert_array_less(np.abs(counts[asu] / n - p), band)

    def test_se3_equivariant_selection(self, cocrystal_2to1):
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(3))
        rng = np.random.default_rng(21)
        moved = apply_rigid_motion(cell, random_rotation(rng),
                                   rng.uniform(0, 1, 3))
        for seed in (0, 5, 9):
            params = CropParams(t_max=72, seed=seed)
            a = stochastic_shell_crop(cell, params)
            b = stochastic_shell_crop(moved, params)
            assert a.molecule_indices == b.molecule_indices

    def test_rod_neighbor_in_first_shell(self, rod_crystal):
        # nearest-atom contact (3 A) puts the offset rod in shell 1 even
        # though its centroid is over 15 A away; budget covers the center
        # plus the full 5-rod first shell
        crop = stochastic_shell_crop(
            rod_crystal, CropParams(t_max=6 * 11, p_max=1.0, seed=1))
        assert 1 in crop.molecule_indices


def crop_center(cell, seed):
    asu = cell.asu_molecule_indices
    return asu[int(substream(seed, "center").integers(len(asu)))]


def check_shell_prefix(cell, crop, distances):
    """Partial shells only at the frontier: every earlier shell complete."""
    center = crop.center
    decomp = shell_decompose(cell, distances, center, 4.5)
    chosen = set(crop.molecule_indices)
    partial_seen = False
    for shell in decomp.shells:
        inside = sum(1 for m in shell if m in chosen)
        if partial_seen:
            assert inside == 0
        elif inside < len(shell):
            partial_seen = True
    assert True


class TestAdaptiveStoichiometricSample:
    def test_single_component_uniform_subset(self):
        crystal = frontier_bag(n_a=10, n_b=0, asu_types=("A",))
        frontier = list(range(1, 11))
        picked = adaptive_stoichiometric_sample(
            crystal, frontier, 0, (0,), t_max=4 * 6, seed=7)
        assert len(picked) == 5
        assert set(picked) <= set(frontier)

    def test_mean_composition_matches_independent_oracle(self):
        # 2:1 co-crystal ASU, frontier 12 A + 12 B, budget for 9 molecules
        crystal = frontier_bag(n_a=12, n_b=12)
        asu = crystal.asu_molecule_indices
        frontier = list(range(3, 27))
        lib = np.zeros(2)
        oracle = np.zeros(2)
        n = 4000
        for seed in range(n):
            center = asu[int(substream(seed, "center").integers(len(asu)))]
            picked = adaptive_stoichiometric_sample(
                crystal, frontier, center, asu, t_max=40, seed=seed)
            lib += count_types(picked, crystal)
            oracle += oracle_stoichiometric(seed)
        lib /= n
        oracle /= n
        np.testing.assert_allclose(lib, oracle, atol=0.15)
        np.testing.assert_allclose(lib, [6.0, 3.0], atol=0.15)

    def test_targets_never_exceeded(self):
        # exhaustive small case: 3 A + 3 B frontier, targets follow a 2:1 ASU
        crystal = frontier_bag(n_a=3, n_b=3)
        frontier = list(range(3, 9))
        for seed in range(500):
            picked = adaptive_stoichiometric_sample(
                crystal, frontier, 0, crystal.asu_molecule_indices,
                t_max=4 * 7, seed=seed)
            n_a, n_b = count_types(picked, crystal)
            r_a = round(2 / 3 * 6) - 1  # center is type A
            r_b = round(1 / 3 * 6)
            assert n_a <= r_a + 1
            assert n_b <= r_b + 1

    def test_budget_break_is_final(self):
        crystal = frontier_bag(n_a=4, n_b=4)
        frontier = list(range(3, 11))
        picked = adaptive_stoichiometric_sample(
            crystal, frontier, 0, crystal.asu_molecule_indices,
            t_max=4 + 4 * 2 + 2, seed=0)
        # budget allows exactly two draws; the third sampled molecule would
        # exceed it and sampling stops there
        assert len(picked) == 2


def count_types(picked, crystal):
    a = sum(1 for m in picked if crystal.molecules[m].entity_id == "A")
    b = sum(1 for m in picked if crystal.molecules[m].entity_id == "B")
    return np.array([a, b], dtype=float)


def oracle_stoichiometric(seed):
    """Independent transcription of the stoichiometric sampler.

    Center drawn uniformly from a 2:1 ASU, frontier 12 A + 12 B equal
    4-token molecules, budget 40 tokens. Molecules of type t carry weight
    R_t/|B_t|; normalizing over molecules leaves types drawn proportionally
    to remaining targets.
    """
    center_t = ("A", "A", "B")[int(substream(seed, "center").integers(3))]
    rng_type = substream(seed, "type")
    counts = {"A": 12, "B": 12}
    targets = {"A": round(2 / 3 * 24), "B": round(1 / 3 * 24)}
    targets[center_t] -= 1
    tokens, picked = 4, {"A": 0, "B": 0}
    while tokens < 40 and (counts["A"] or counts["B"]):
        live = [t for t in ("A", "B") if counts[t] > 0]
        w = np.array([max(targets[t], 0) for t in live], dtype=float)
        if w.sum() <= 0:
            break
        t = live[int(rng_type.choice(len(live), p=w / w.sum()))]
        if tokens + 4 > 40:
            break
        picked[t] += 1
        tokens += 4
        counts[t] -= 1
        targets[t] -= 1
    return np.array([picked["A"], picked["B"]], dtype=float)


class TestKnnCrop:
    def test_unbounded_takes_everything(self):
        crystal = simple_cubic(extent=3)
        crop = knn_crop(crystal, crystal.asu_molecule_indices[0], t_max=999)
        assert sorted(crop.molecule_indices) == list(range(27))

    def test_cubic_seven(self):
        crystal = simple_cubic(extent=7)
        center = crystal.asu_molecule_indices[0]
        crop = knn_crop(crystal, center, t_max=7)
        assert crop.token_count == 7
        d = intermolecular_distance_matrix(crystal)
        others = [m for m in crop.molecule_indices if m != center]
        np.testing.assert_allclose(d[center, others], 4.0, atol=1e-9)

    def test_tie_break_deterministic(self):
        crystal = simple_cubic(extent=5)
        center = crystal.asu_molecule_indices[0]
        a = knn_crop(crystal, center, t_max=4)
        b = knn_crop(crystal, center, t_max=4)
        assert a.molecule_indices == b.molecule_indices
        others = [m for m in a.molecule_indices if m != center]
        # all face neighbors tie at 4.0; the three lowest indices win
        d = intermolecular_distance_matrix(crystal)
        ties = sorted(np.flatnonzero(np.abs(d[center] - 4.0) < 1e-9))
        assert others == ties[:3]


class TestCentroidRadiusCrop:
    def test_radius_zero_center_only(self):
        crystal = simple_cubic(extent=5)
        center = crystal.asu_molecule_indices[0]
        crop = centroid_radius_crop(crystal, center, radius=0.0, t_max=99)
        assert crop.molecule_indices == (center,)

    def test_radius_infinite_takes_everything(self):
        crystal = simple_cubic(extent=3)
        center = crystal.asu_molecule_indices[0]
        crop = centroid_radius_crop(crystal, center, radius=np.inf, t_max=999)
        assert sorted(crop.molecule_indices) == list(range(27))

    def test_rod_anisotropy_failure(self, rod_crystal):
        # molecule 1: nearest atom 3 A away but centroid 16.3 A -> excluded
        crop = centroid_radius_crop(rod_crystal, 0, radius=15.0, t_max=999)
        assert 1 not in crop.molecule_indices
        assert 2 in crop.molecule_indices  # ordinary side-by-side neighbor


class TestContactBoundary:
    def test_whole_supercell_empty_boundary(self):
        crystal = simple_cubic(extent=3)
        crop = knn_crop(crystal, crystal.asu_molecule_indices[0], t_max=27)
        boundary = contact_boundary(crystal, crop, r0=4.5)
        assert boundary.edges == ()

    def test_single_molecule_six_edges(self):
        crystal = simple_cubic(extent=5)
        center = crystal.asu_molecule_indices[0]
        crop = centroid_radius_crop(crystal, center, radius=0.0, t_max=99)
        boundary = contact_boundary(crystal, crop, r0=4.5)
        assert len(boundary.edges) == 6

    def test_matches_brute_force(self, cocrystal_2to1):
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(2))
        crop = knn_crop(cell, cell.asu_molecule_indices[0], t_max=40)
        r0 = 5.0
        boundary = contact_boundary(cell, crop, r0)

        # O(N^2) oracle over heavy atoms
        coords, sites_idx, owner = [], [], []
        for m in range(cell.n_molecules):
            heavy = cell.molecule_heavy_indices(m)
            coords.append(cell.molecule_heavy_cart(m))
            sites_idx.extend(heavy)
            owner.extend([m] * len(heavy))
        coords = np.concatenate(coords)
        inside = set(crop.molecule_indices)
        count = 0
        for i in range(len(coords)):
            for j in range(i + 1, len(coords)):
                if (owner[i] in inside) == (owner[j] in inside):
                    continue
                if np.linalg.norm(coords[i] - coords[j]) <= r0:
                    count += 1
        assert len(boundary.edges) == count

    def test_edges_cross_exactly_once(self, cocrystal_2to1):
        cell = build_supercell(cocrystal_2to1, SupercellSpec.diagonal(2))
        crop = knn_crop(cell, cell.asu_molecule_indices[0], t_max=40)
        boundary = contact_boundary(cell, crop, r0=5.0)
        owner = np.empty(cell.n_sites, dtype=int)
        for m in range(cell.n_molecules):
            owner[list(cell.molecules[m].atom_indices)] = m
        inside = set(crop.molecule_indices)
        for u, v in boundary.edges:
            assert owner[u] in inside and owner[v] not in inside
