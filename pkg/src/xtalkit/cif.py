"""Parser for the CIF subset needed to build crystals.

Supported content: the six cell parameters, the atom-site loop (label, type
symbol, fractional coordinates, optional occupancy), the symmetry-operator
loop, the geometric bond loop, and the conventional R factor. Everything
else in a file is ignored. Semicolon text blocks are skipped.
"""

from __future__ import annotations

import math
import re

from .curation import CrystalRecord
from .elements import atomic_number
from .lattice import AtomSite, Crystal, Lattice
from .perception import perceive_molecules
from .symops import AffineSymOp, parse_symop

__all__ = ["parse_cif", "CifParseError", "lattice_from_parameters"]


class CifParseError(ValueError):
    pass


def lattice_from_parameters(a, b, c, alpha, beta, gamma) -> Lattice:
    """Standard crystallographic orientation: a along x, b in the xy-plane.

    Angles in degrees.
    """
    al, be, ga = (math.radians(x) for x in (alpha, beta, gamma))
    bx = b * math.cos(ga)
    by = b * math.sin(ga)
    cx = c * math.cos(be)
    cy = c * (math.cos(al) - math.cos(be) * math.cos(ga)) / math.sin(ga)
    cz_sq = c * c - cx * cx - cy * cy
    if cz_sq <= 0:
        raise CifParseError(
            f"impossible cell angles ({alpha}, {beta}, {gamma})")
    return Lattice([[a, 0.0, 0.0], [bx, by, 0.0], [cx, cy, math.sqrt(cz_sq)]])


_SU = re.compile(r"\(\d+\)$")


def _numeric(token: str) -> float | None:
    if token in ("?", "."):
        return None
    return float(_SU.sub("", token))


def _tokenize(text: str):
    """Yield CIF tokens line by line; quotes and comments handled."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if line.startswith(";"):
            # semicolon text block: skip to the closing ';'
            while i < len(lines) and not lines[i].startswith(";"):
                i += 1
            i += 1
            continue
        pos = 0
        n = len(line)
        while pos < n:
            ch = line[pos]
            if ch in " \t":
                pos += 1
                continue
            if ch == "#":
                break
            if ch in "'\"":
                end = line.find(ch, pos + 1)
                if end < 0:
                    raise CifParseError(f"unterminated quote: {line!r}")
                yield line[pos + 1:end]
                pos = end + 1
            else:
                m = re.match(r"\S+", line[pos:])
                yield m.group(0)
                pos += m.end()


def _collect(text: str):
    """Split the token stream into single items and loop tables."""
    single: dict[str, str] = {}
    loops: list[tuple[list[str], list[str]]] = []
    tokens = list(_tokenize(text))
    k = 0
    seen_data = False
    while k < len(tokens):
        tok = tokens[k]
        low = tok.lower()
        if low.startswith("data_"):
            if seen_data:
                break
            seen_data = True
            single.setdefault("__block__", tok[5:])
            k += 1
        elif low == "loop_":
            k += 1
            tags = []
            while k < len(tokens) and tokens[k].startswith("_"):
                tags.append(tokens[k].lower())
                k += 1
            values = []
            while k < len(tokens):
                t = tokens[k]
                tl = t.lower()
                if t.startswith("_") or tl == "loop_" or tl.startswith("data_"):
                    break
                values.append(t)
                k += 1
            loops.append((tags, values))
        elif tok.startswith("_"):
            if k + 1 >= len(tokens):
                raise CifParseError(f"tag {tok} has no value")
            single[low] = tokens[k + 1]
            k += 2
        else:
            k += 1
    return single, loops


def _loop_columns(loops, *wanted):
    """First loop containing all wanted tags, as {tag: [values...]}."""
    for tags, values in loops:
        if all(w in tags for w in wanted):
            ncol = len(tags)
            if ncol == 0 or len(values) % ncol != 0:
                raise CifParseError(
                    f"loop with tags {tags} has ragged rows")
            rows = [values[r:r + ncol] for r in range(0, len(values), ncol)]
            return {t: [row[c] for row in rows] for c, t in enumerate(tags)}
    return None


_CELL_TAGS = ("_cell_length_a", "_cell_length_b", "_cell_length_c",
              "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma")


def parse_cif(text: str, provenance: str | None = None) -> CrystalRecord:
    """Parse one CIF document into a CrystalRecord.

    The atom-site loop is the asymmetric unit; symmetry operators (P1 when
    absent) expand it to the full cell. Bonds come from the geometric bond
    loop when present, otherwise from covalent-radius perception. Duplicate
    site labels keep the highest-occupancy row (disorder pre-filter).
    """
    single, loops = _collect(text)
    if provenance is None:
        provenance = single.get("__block__", "unknown")

    missing = [t for t in _CELL_TAGS if t not in single]
    if missing:
        raise CifParseError(f"missing cell parameters: {', '.join(missing)}")
    cell = [_numeric(single[t]) for t in _CELL_TAGS]
    if any(v is None for v in cell):
        raise CifParseError("missing cell parameters: unreadable value")
    lattice = lattice_from_parameters(*cell)

    r_factor = None
    for tag in ("_refine_ls_r_factor_gt", "_refine_ls_r_factor_all"):
        if tag in single:
            val = _numeric(single[tag])
            if val is not None:
                r_factor = 100.0 * val  # CIF stores a fraction
                break

    ops: list[AffineSymOp] = []
    for tag in ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz"):
        cols = _loop_columns(loops, tag)
        if cols is not None:
            ops = [parse_symop(s) for s in cols[tag]]
            break
    if not any(op.is_identity for op in ops):
        ops.insert(0, AffineSymOp.identity())

    atom_cols = _loop_columns(
        loops, "_atom_site_label", "_atom_site_type_symbol",
        "_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")

    if atom_cols is None:
        return CrystalRecord(None, provenance, r_factor, tuple(ops))

    labels = atom_cols["_atom_site_label"]
    symbols = atom_cols["_atom_site_type_symbol"]
    fracs = [
        tuple(_numeric(atom_cols[f"_atom_site_fract_{ax}"][k])
              for ax in "xyz")
        for k in range(len(labels))
    ]
    occs = None
    if "_atom_site_occupancy" in atom_cols:
        occs = [_numeric(v) for v in atom_cols["_atom_site_occupancy"]]

    # disorder pre-filter: duplicate labels keep max occupancy, first wins ties
    chosen: dict[str, int] = {}
    for k, label in enumerate(labels):
        if any(v is None for v in fracs[k]):
            continue
        occ = occs[k] if occs is not None and occs[k] is not None else 1.0
        if label not in chosen:
            chosen[label] = k
        else:
            prev = chosen[label]
            prev_occ = (occs[prev] if occs is not None
                        and occs[prev] is not None else 1.0)
            if occ > prev_occ:
                chosen[label] = k

    keep = sorted(chosen.values())
    if not keep:
        return CrystalRecord(None, provenance, r_factor, tuple(ops))
    index_of_label = {labels[k]: n for n, k in enumerate(keep)}
    sites = tuple(
        AtomSite(atomic_number(symbols[k]), fracs[k]) for k in keep)

    bonds = None
    bond_cols = _loop_columns(loops, "_geom_bond_atom_site_label_1",
                              "_geom_bond_atom_site_label_2")
    if bond_cols is not None:
        bonds = []
        for l1, l2 in zip(bond_cols["_geom_bond_atom_site_label_1"],
                          bond_cols["_geom_bond_atom_site_label_2"]):
            if l1 not in index_of_label or l2 not in index_of_label:
                raise CifParseError(f"bond references unknown site: {l1}-{l2}")
            bonds.append((index_of_label[l1], index_of_label[l2], 1))

    molecules, polymeric = perceive_molecules(
        lattice, sites, explicit_bonds=bonds, on_polymeric="flag")

    if polymeric or all(op.is_identity for op in ops):
        crystal = Crystal(lattice, sites, tuple(molecules),
                          tuple(range(len(molecules))))
    else:
        from .symops import expand_asymmetric_unit
        crystal = expand_asymmetric_unit(sites, molecules, ops, lattice)

    return CrystalRecord(crystal, provenance, r_factor, tuple(ops),
                         polymeric=polymeric)
