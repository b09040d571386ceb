"""CSP evaluation metrics: collisions, conformer recovery, packing match,
approximate solves, and sample/crystal aggregation.

Predictions are finite blocks (lists of MoleculeBlock); ground truth is a
reference cluster cut from the experimental crystal. The packing matcher is
a documented open approximation of cluster matching: anchor superposition
followed by greedy centroid/orientation extension, accepting a molecule
when its centroid deviates by at most half the ground-truth nearest-centroid
spacing and its orientation by at most the configured angle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .canonical import dump_deterministic
from .crop import MoleculeBlock, block_from_crystal
from .elements import RadiiTable, vdw_radii
from .lattice import Crystal, SupercellSpec, build_supercell
from .losses import kabsch_align

__all__ = [
    "MetricThresholds",
    "PackingMatch",
    "SampleFlags",
    "MetricRecord",
    "collision_check",
    "molecule_automorphisms",
    "conformer_rmsd1",
    "match_packing",
    "approximately_solved",
    "evaluate_sample",
    "aggregate",
    "reference_cluster",
    "report_json",
    "report_csv",
]

METRICS_SCHEMA = "xtal.metrics.v1"
CSV_HEADER = "col_s,pac_s,pac_c,rec_s,rec_c,sol_c"


@dataclass(frozen=True)
class MetricThresholds:
    """Evaluation thresholds (defaults follow common CSP practice)."""

    collision_slack: float = 0.7
    rec_rmsd1: float = 0.5
    sol_rmsd15: float = 2.0
    pac_min_matched: int = 8
    cluster_size: int = 15
    pac_distance_frac: float = 0.5
    pac_max_angle_deg: float = 45.0

    def __post_init__(self):
        for name in ("collision_slack", "rec_rmsd1", "sol_rmsd15",
                     "pac_min_matched", "cluster_size", "pac_distance_frac",
                     "pac_max_angle_deg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def collision_check(blocks, radii: RadiiTable | None = None,
                    slack: float = 0.7):
    """Detect intermolecular contacts shorter than the radii sum minus slack.

    Returns ``(collided, offending_pairs)`` with pairs as
    ``((mol_i, atom_i), (mol_j, atom_j))``. Intramolecular contacts are
    ignored; hydrogens are excluded by the block representation.
    """
    radii = radii or vdw_radii()
    offending = []
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            a, b = blocks[i], blocks[j]
            ra = np.array([radii.radius(int(z)) for z in a.species])
            rb = np.array([radii.radius(int(z)) for z in b.species])
            d = np.linalg.norm(a.coords[:, None, :] - b.coords[None, :, :],
                               axis=2)
            cutoff = ra[:, None] + rb[None, :] - slack
            for ai, bj in zip(*np.nonzero(d < cutoff)):
                offending.append(((i, int(ai)), (j, int(bj))))
    return bool(offending), offending


def _graph_identical(a: MoleculeBlock, b: MoleculeBlock) -> bool:
    return (len(a.species) == len(b.species)
            and np.array_equal(a.species, b.species)
            and a.bonds == b.bonds)


def molecule_automorphisms(block: MoleculeBlock, budget: int = 5000):
    """Species- and bond-preserving permutations of a molecule's atoms.

    Backtracking with species/degree pruning, capped at ``budget`` found
    automorphisms; hitting the cap returns only the identity and records a
    warning (silent wrong minima are worse than a coarser answer).
    """
    n = len(block.species)
    adj = {k: {} for k in range(n)}
    for i, j, o in block.bonds:
        adj[i][j] = o
        adj[j][i] = o
    degree = np.array([len(adj[k]) for k in range(n)])

    perms: list[np.ndarray] = []
    assignment = np.full(n, -1)
    used = np.zeros(n, dtype=bool)
    overflow = False

    def compatible(k, cand):
        if block.species[cand] != block.species[k] or degree[cand] != degree[k]:
            return False
        for nbr, order in adj[k].items():
            img = assignment[nbr]
            if img >= 0 and adj[cand].get(img) != order:
                return False
        return True

    def backtrack(k):
        nonlocal overflow
        if overflow:
            return
        if k == n:
            perms.append(assignment.copy())
            if len(perms) > budget:
                overflow = True
            return
        for cand in range(n):
            if not used[cand] and compatible(k, cand):
                assignment[k] = cand
                used[cand] = True
                backtrack(k + 1)
                used[cand] = False
                assignment[k] = -1
                if overflow:
                    return

    backtrack(0)
    if overflow:
        warnings.warn(
            f"automorphism budget ({budget}) exceeded; falling back to the "
            f"identity correspondence", RuntimeWarning, stacklevel=2)
        return [np.arange(n)]
    return perms


def conformer_rmsd1(pred: MoleculeBlock, gt: MoleculeBlock,
                    automorphism_budget: int = 5000) -> float:
    """Heavy-atom RMSD after optimal superposition, minimized over graph
    automorphisms of the shared molecular graph."""
    if not _graph_identical(pred, gt):
        raise ValueError("molecules are not graph-isomorphic "
                         "(species/bond mismatch under identity indexing)")
    best = np.inf
    for perm in molecule_automorphisms(gt, automorphism_budget):
        _, _, rmsd = kabsch_align(pred.coords[perm], gt.coords)
        best = min(best, rmsd)
    return float(best)


@dataclass(frozen=True)
class PackingMatch:
    """Result of matching a predicted block against a reference cluster."""

    n_matched: int
    rmsd_cluster: float
    correspondence: tuple[tuple[int, int], ...]  # (pred index, gt index)


def _centroids(blocks) -> np.ndarray:
    return np.array([b.coords.mean(axis=0) for b in blocks])


def _rotation_angle_deg(r: np.ndarray) -> float:
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def _orientation_ok(pred_coords, gt_coords, max_angle_deg) -> bool:
    if len(pred_coords) < 3:
        return True  # too few atoms to define an orientation
    try:
        rot, _, _ = kabsch_align(pred_coords, gt_coords)
    except ValueError:
        return True  # collinear molecules carry no orientation signal
    return _rotation_angle_deg(rot) <= max_angle_deg


def match_packing(pred_blocks, gt_blocks,
                  thresholds: MetricThresholds = MetricThresholds()
                  ) -> PackingMatch:
    """Best anchor-and-extend correspondence between block and cluster.

    Every same-entity (pred, gt) molecule pair serves as an anchor; the
    anchor superposition is extended greedily by ascending centroid
    deviation under the distance and orientation tolerances. The pairing
    maximizing the matched count wins, ties broken by lower joint RMSD.
    """
    gt_centroids = _centroids(gt_blocks)
    if len(gt_blocks) > 1:
        pair_d = np.linalg.norm(
            gt_centroids[:, None, :] - gt_centroids[None, :, :], axis=2)
        spacing = float(pair_d[~np.eye(len(gt_blocks), dtype=bool)].min())
    else:
        spacing = np.inf
    max_dev = thresholds.pac_distance_frac * spacing

    anchors = [
        (p, g)
        for p in range(len(pred_blocks))
        for g in range(len(gt_blocks))
        if _graph_identical(pred_blocks[p], gt_blocks[g])
    ]
    if not anchors:
        raise ValueError("no graph-compatible molecule between block and "
                         "reference cluster")

    best: PackingMatch | None = None
    for p0, g0 in anchors:
        try:
            rot, trans, _ = kabsch_align(pred_blocks[p0].coords,
                                         gt_blocks[g0].coords)
        except ValueError:
            continue
        moved = [b.coords @ rot.T + trans for b in pred_blocks]
        moved_centroids = np.array([c.mean(axis=0) for c in moved])

        candidates = []
        for g in range(len(gt_blocks)):
            for p in range(len(pred_blocks)):
                if not _graph_identical(pred_blocks[p], gt_blocks[g]):
                    continue
                dev = float(np.linalg.norm(moved_centroids[p]
                                           - gt_centroids[g]))
                if dev > max_dev:
                    continue
                if not _orientation_ok(moved[p], gt_blocks[g].coords,
                                       thresholds.pac_max_angle_deg):
                    continue
                candidates.append((dev, p, g))
        candidates.sort()
        used_p: set[int] = set()
        used_g: set[int] = set()
        pairs = []
        for dev, p, g in candidates:
            if p in used_p or g in used_g:
                continue
            used_p.add(p)
            used_g.add(g)
            pairs.append((p, g))
        if not pairs:
            continue

        pred_cat = np.concatenate([pred_blocks[p].coords for p, _ in pairs])
        gt_cat = np.concatenate([gt_blocks[g].coords for _, g in pairs])
        try:
            _, _, rmsd = kabsch_align(pred_cat, gt_cat)
        except ValueError:
            continue
        match = PackingMatch(n_matched=len(pairs), rmsd_cluster=rmsd,
                             correspondence=tuple(sorted(pairs)))
        if (best is None or match.n_matched > best.n_matched
                or (match.n_matched == best.n_matched
                    and match.rmsd_cluster < best.rmsd_cluster)):
            best = match
        if (best.n_matched == min(len(pred_blocks), len(gt_blocks))
                and best.rmsd_cluster < 1e-6):
            break  # cannot be beaten meaningfully
    if best is None:
        return PackingMatch(0, np.inf, ())
    return best


@dataclass(frozen=True)
class SampleFlags:
    """Per-sample evaluation outcome for one prediction of one target."""

    target_id: str
    collision: bool
    packing_similar: bool
    conformer_recovered: bool
    solved: bool
    n_matched: int = 0
    rmsd_cluster: float = float("inf")
    best_rmsd1: float = float("inf")


def evaluate_sample(pred_blocks, gt_cluster, gt_conformers, target_id: str,
                    thresholds: MetricThresholds = MetricThresholds(),
                    radii: RadiiTable | None = None) -> SampleFlags:
    """All per-sample flags for one predicted block.

    ``gt_conformers`` holds one reference molecule per distinct entity;
    conformer recovery requires every entity to be matched below the RMSD
    threshold by some predicted molecule.
    """
    collided, _ = collision_check(pred_blocks, radii=radii,
                                  slack=thresholds.collision_slack)

    try:
        match = match_packing(pred_blocks, gt_cluster, thresholds)
    except ValueError:
        match = PackingMatch(0, float("inf"), ())
    packing = match.n_matched >= thresholds.pac_min_matched

    worst_best = 0.0
    for ref in gt_conformers:
        best = np.inf
        for block in pred_blocks:
            if not _graph_identical(block, ref):
                continue
            best = min(best, conformer_rmsd1(block, ref))
        worst_best = max(worst_best, best)
    recovered = worst_best < thresholds.rec_rmsd1

    solved = ((not collided) and packing
              and match.rmsd_cluster < thresholds.sol_rmsd15)
    return SampleFlags(
        target_id=target_id,
        collision=collided,
        packing_similar=packing,
        conformer_recovered=recovered,
        solved=solved,
        n_matched=match.n_matched,
        rmsd_cluster=float(match.rmsd_cluster),
        best_rmsd1=float(worst_best),
    )


def approximately_solved(samples, gt_cluster,
                         thresholds: MetricThresholds = MetricThresholds(),
                         radii: RadiiTable | None = None) -> bool:
    """True when any sample is collision-free, packing-similar, and below
    the cluster-RMSD threshold."""
    for blocks in samples:
        collided, _ = collision_check(blocks, radii=radii,
                                      slack=thresholds.collision_slack)
        if collided:
            continue
        try:
            match = match_packing(blocks, gt_cluster, thresholds)
        except ValueError:
            continue
        if (match.n_matched >= thresholds.pac_min_matched
                and match.rmsd_cluster < thresholds.sol_rmsd15):
            return True
    return False


@dataclass(frozen=True)
class MetricRecord:
    """The six aggregates plus per-target crystal-level flags."""

    col_s: float
    pac_s: float
    pac_c: float
    rec_s: float
    rec_c: float
    sol_c: float
    per_target: dict = field(default_factory=dict)


def aggregate(flags: list[SampleFlags]) -> MetricRecord:
    """Sample-level means and crystal-level OR-aggregation over targets."""
    if not flags:
        raise ValueError("no samples to aggregate")
    by_target: dict[str, list[SampleFlags]] = {}
    for f in flags:
        by_target.setdefault(f.target_id, []).append(f)

    col_s = float(np.mean([f.collision for f in flags]))
    pac_s = float(np.mean([f.packing_similar for f in flags]))
    rec_s = float(np.mean([f.conformer_recovered for f in flags]))
    per_target = {
        t: {
            "pac": any(f.packing_similar for f in fs),
            "rec": any(f.conformer_recovered for f in fs),
            "sol": any(f.solved for f in fs),
            "n_samples": len(fs),
        }
        for t, fs in by_target.items()
    }
    n_targets = len(by_target)
    pac_c = sum(v["pac"] for v in per_target.values()) / n_targets
    rec_c = sum(v["rec"] for v in per_target.values()) / n_targets
    sol_c = sum(v["sol"] for v in per_target.values()) / n_targets
    return MetricRecord(col_s=col_s, pac_s=pac_s, pac_c=float(pac_c),
                        rec_s=rec_s, rec_c=float(rec_c), sol_c=float(sol_c),
                        per_target=per_target)


def reference_cluster(crystal: Crystal, size: int = 15,
                      center_molecule: int | None = None):
    """Cluster of ``size`` molecules around a canonical center.

    Builds a 3x3x3 supercell and takes the center (by default the image of
    the first asymmetric-unit molecule) plus its nearest molecules by
    centroid distance, ties by index.
    """
    if size < 1:
        raise ValueError("cluster size must be positive")
    cell = build_supercell(crystal, SupercellSpec.diagonal(3))
    center = (cell.asu_molecule_indices[0] if center_molecule is None
              else center_molecule)
    centroids = np.array([cell.molecule_centroid(i)
                          for i in range(cell.n_molecules)])
    dist = np.linalg.norm(centroids - centroids[center], axis=1)
    order = np.lexsort((np.arange(cell.n_molecules), dist))
    picked = order[:size]
    return [block_from_crystal(cell, int(i)) for i in picked]


def report_json(record: MetricRecord, rows: list[SampleFlags]) -> bytes:
    doc = {
        "schema": METRICS_SCHEMA,
        "aggregates": {
            "col_s": record.col_s, "pac_s": record.pac_s,
            "pac_c": record.pac_c, "rec_s": record.rec_s,
            "rec_c": record.rec_c, "sol_c": record.sol_c,
        },
        "samples": [
            {
                "target": f.target_id,
                "collision": f.collision,
                "packing_similar": f.packing_similar,
                "conformer_recovered": f.conformer_recovered,
                "solved": f.solved,
                "n_matched": f.n_matched,
                "rmsd_cluster": (f.rmsd_cluster
                                 if np.isfinite(f.rmsd_cluster) else None),
                "best_rmsd1": (f.best_rmsd1
                               if np.isfinite(f.best_rmsd1) else None),
            }
            for f in rows
        ],
    }
    return dump_deterministic(doc) + b"\n"


def report_csv(record: MetricRecord) -> str:
    """One CSV row in the conventional results-table column order."""
    vals = [record.col_s, record.pac_s, record.pac_c,
            record.rec_s, record.rec_c, record.sol_c]
    return CSV_HEADER + "\n" + ",".join(f"{v:.6f}" for v in vals) + "\n"
