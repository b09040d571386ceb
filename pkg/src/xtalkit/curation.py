"""Record types and acceptance filters for ingested structures."""

from __future__ import annotations

from dataclasses import dataclass

from .lattice import Crystal
from .symops import AffineSymOp

__all__ = ["CrystalRecord", "CurationPolicy", "CurationDecision", "curate"]


@dataclass(frozen=True)
class CrystalRecord:
    """A parsed structure plus the provenance facts curation needs.

    ``crystal`` is None when the source had no usable 3D coordinates;
    ``r_factor`` is a percentage in [0, 100] when present.
    """

    crystal: Crystal | None
    provenance: str
    r_factor: float | None = None
    raw_symops: tuple[AffineSymOp, ...] = ()
    polymeric: bool = False

    def __post_init__(self):
        if self.r_factor is not None and not 0.0 <= self.r_factor <= 100.0:
            raise ValueError(f"r_factor out of range: {self.r_factor}")


@dataclass(frozen=True)
class CurationPolicy:
    """Acceptance thresholds; defaults follow common CSD curation practice."""

    max_r_factor: float = 9.0
    max_heavy_atoms_per_cell: int = 250
    require_3d: bool = True
    require_single_molecule_sanity: bool = True

    def __post_init__(self):
        if self.max_r_factor <= 0 or self.max_heavy_atoms_per_cell <= 0:
            raise ValueError("curation thresholds must be positive")


@dataclass(frozen=True)
class CurationDecision:
    accepted: bool
    reason: str | None = None

    def __bool__(self):
        return self.accepted


def curate(record: CrystalRecord, policy: CurationPolicy = CurationPolicy()
           ) -> CurationDecision:
    """Accept or reject a record; the reason names the first failed check.

    Checks run in a fixed order: r_factor (exclusive bound: a value equal to
    the threshold is rejected), heavy-atom count per unit cell, polymeric
    perception, missing 3D coordinates.
    """
    if record.r_factor is not None and record.r_factor >= policy.max_r_factor:
        return CurationDecision(False, "r_factor")
    if record.crystal is not None:
        heavy = int((record.crystal.species != 1).sum())
        if heavy > policy.max_heavy_atoms_per_cell:
            return CurationDecision(False, "atom_count")
    if policy.require_single_molecule_sanity and record.polymeric:
        return CurationDecision(False, "polymeric")
    if policy.require_3d and (record.crystal is None
                              or record.crystal.n_sites == 0):
        return CurationDecision(False, "no_3d")
    return CurationDecision(True, None)
