"""Symmetry-operator strings and asymmetric-unit expansion.

Operators use the crystallographic 'x, y, z' notation: three comma-separated
components, each a signed sum of axis terms (x, y, z) and rational or decimal
constants, e.g. ``-x, y+1/2, -z+1/2``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .lattice import (
    AtomSite,
    Crystal,
    Lattice,
    MolecularGraph,
    _min_image_pair_distances,
    wrap_to_cell,
)

__all__ = [
    "AffineSymOp",
    "SymOpParseError",
    "parse_symop",
    "format_symop",
    "expand_asymmetric_unit",
]

# Two symmetry images of a molecule closer than this (all atoms pairwise,
# min-image) are treated as the same copy on a special position.
DEDUP_TOLERANCE = 1e-3
# Distinct molecules closer than this signal corrupt input.
CLASH_TOLERANCE = 0.5


class SymOpParseError(ValueError):
    """Unparseable operator text; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class AffineSymOp:
    """Affine symmetry action ``u -> u @ rot.T + trans`` on fractional coords."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rot, dtype=float).reshape(3, 3)
        trans = wrap_to_cell(np.array(self.trans, dtype=float).reshape(3))
        det = round(float(np.linalg.det(rot)))
        if det not in (-1, 1) or not np.allclose(
                rot, np.round(rot), atol=1e-9):
            raise ValueError("invalid symop: rotation part not unimodular")
        rot = np.round(rot)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    def apply(self, frac) -> np.ndarray:
        """Apply to fractional coordinates (rows), wrapping into [0,1)^3."""
        u = np.atleast_2d(np.asarray(frac, dtype=float))
        return wrap_to_cell(u @ self.rot.T + self.trans)

    def apply_unwrapped(self, frac) -> np.ndarray:
        u = np.atleast_2d(np.asarray(frac, dtype=float))
        return u @ self.rot.T + self.trans

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.rot, np.eye(3)) and np.allclose(
            self.trans, 0.0, atol=1e-12)

    @classmethod
    def identity(cls) -> "AffineSymOp":
        return cls(np.eye(3), np.zeros(3))


_TOKEN = re.compile(r"\s*([+-]?)\s*(\d+/\d+|\d+\.\d+|\.\d+|\d+|[xyzXYZ])")


def _parse_component(text: str, base_offset: int) -> tuple[np.ndarray, Fraction]:
    row = np.zeros(3)
    const = Fraction(0)
    pos = 0
    n_terms = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            raise SymOpParseError(
                f"unexpected token {text[pos:].strip()[:8]!r}",
                base_offset + pos)
        sign = -1 if m.group(1) == "-" else 1
        tok = m.group(2)
        if tok in "xyzXYZ":
            row["xyz".index(tok.lower())] += sign
        elif "/" in tok:
            num, den = tok.split("/")
            const += sign * Fraction(int(num), int(den))
        else:
            const += sign * Fraction(tok)
        pos = m.end()
        n_terms += 1
        if n_terms > 3:
            raise SymOpParseError("too many terms in component", base_offset + pos)
    if n_terms == 0:
        raise SymOpParseError("empty component", base_offset)
    return row, const


def parse_symop(text: str) -> AffineSymOp:
    """Parse 'x, y, z'-style operator text into an affine op.

    Raises SymOpParseError with the byte offset of the first bad token, or
    ValueError('invalid symop...') when the rotation part is not unimodular.
    """
    parts = text.split(",")
    if len(parts) != 3:
        raise SymOpParseError(
            f"expected 3 comma-separated components, got {len(parts)}", 0)
    rot = np.zeros((3, 3))
    trans = np.zeros(3)
    offset = 0
    for k, part in enumerate(parts):
        row, const = _parse_component(part, offset)
        rot[k] = row
        trans[k] = float(const)
        offset += len(part) + 1
    return AffineSymOp(rot, trans)


def _format_frac(value: float) -> str:
    frac = Fraction(value).limit_denominator(12)
    if frac.denominator == 1:
        return str(frac.numerator)
    return f"{frac.numerator}/{frac.denominator}"


def format_symop(op: AffineSymOp) -> str:
    """Canonical text for an operator; parse(format(op)) round-trips."""
    comps = []
    for k in range(3):
        terms = []
        for axis, name in enumerate("xyz"):
            coeff = int(op.rot[k, axis])
            if coeff == 0:
                continue
            prefix = "-" if coeff < 0 else ("+" if terms else "")
            terms.append(f"{prefix}{name}" if abs(coeff) == 1
                         else f"{prefix}{abs(coeff)}{name}")
        t = float(op.trans[k])
        if t != 0.0:
            text = _format_frac(t)
            terms.append(f"+{text}" if terms else text)
        comps.append("".join(terms) if terms else "0")
    return ", ".join(comps)


def _images_coincide(lattice: Lattice, species: np.ndarray,
                     cart_a: np.ndarray, cart_b: np.ndarray,
                     tol: float) -> bool:
    """True when the two images are the same molecule copy.

    Matches atoms by species and min-image proximity; the match must be a
    bijection. Handles stabilizer operators that permute equivalent atoms.
    """
    dists = _min_image_pair_distances(lattice, cart_a, cart_b)
    same_species = species[:, None] == species[None, :]
    ok = (dists <= tol) & same_species
    # greedy bijection; valid because tol is far below interatomic spacing
    used = np.zeros(len(cart_b), dtype=bool)
    for i in range(len(cart_a)):
        candidates = np.flatnonzero(ok[i] & ~used)
        if len(candidates) == 0:
            return False
        used[candidates[0]] = True
    return True


def expand_asymmetric_unit(asu_sites, asu_mols, ops, lattice) -> Crystal:
    """Generate the full unit cell from asymmetric-unit molecules.

    Applies every operator to every molecule, drops images that coincide
    (special positions), and errors with 'symmetry clash' when distinct
    retained molecules overlap within ``CLASH_TOLERANCE``.
    """
    if not ops:
        raise ValueError("operator list is empty")
    if not any(op.is_identity for op in ops):
        raise ValueError("operator list must include the identity")

    asu_sites = tuple(asu_sites)
    frac = np.array([s.frac for s in asu_sites], dtype=float).reshape(-1, 3)
    species_all = np.array([s.z for s in asu_sites], dtype=int)

    new_sites: list[AtomSite] = []
    new_mols: list[MolecularGraph] = []
    asu_indices: list[int] = []
    kept_carts: list[np.ndarray] = []

    for mol in asu_mols:
        idx = np.array(mol.atom_indices, dtype=int)
        species = species_all[idx]
        own_images: list[np.ndarray] = []
        first_image_of_mol = None
        for op in ops:
            image_frac = op.apply(frac[idx])
            image_cart = image_frac @ lattice.vectors
            # special positions: this operator maps the molecule onto an
            # image we already kept (possibly permuting equivalent atoms)
            if any(_images_coincide(lattice, species, image_cart, prev,
                                    DEDUP_TOLERANCE)
                   for prev in own_images):
                continue
            offset = len(new_sites)
            remap = {a: offset + k for k, a in enumerate(mol.atom_indices)}
            for z, u in zip(species, image_frac):
                new_sites.append(AtomSite(int(z), tuple(u)))
            new_mols.append(MolecularGraph(
                atom_indices=tuple(remap[a] for a in mol.atom_indices),
                edges=tuple((remap[i], remap[j], o) for i, j, o in mol.edges),
                entity_id=mol.entity_id,
            ))
            own_images.append(image_cart)
            kept_carts.append(image_cart)
            if first_image_of_mol is None:
                first_image_of_mol = len(new_mols) - 1
                asu_indices.append(first_image_of_mol)

    for i in range(len(kept_carts)):
        for j in range(i + 1, len(kept_carts)):
            d = _min_image_pair_distances(lattice, kept_carts[i], kept_carts[j])
            if np.min(d) < CLASH_TOLERANCE:
                raise ValueError(
                    f"symmetry clash: molecules {i} and {j} overlap "
                    f"({np.min(d):.3f} A)")

    return Crystal(lattice, tuple(new_sites), tuple(new_mols),
                   tuple(asu_indices))
