"""Element symbols and per-element radius tables.

Radius tables ship as versioned JSON data files under ``xtalkit/data`` so the
provenance of the numbers is auditable and swappable. Two tables are bundled:
``covalent`` (used for bond perception) and ``vdw`` (used for collision
checks).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

SYMBOLS = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe",
    "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr",
    "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm",
    "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn",
    "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf",
    "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
]

ATOMIC_NUMBERS = {s: z for z, s in enumerate(SYMBOLS, start=1)}
# Accept all-caps / lowercase spellings as they appear in sloppy CIF files.
_NORMALIZED = {s.upper(): z for z, s in enumerate(SYMBOLS, start=1)}

HYDROGEN = 1


def atomic_number(symbol: str) -> int:
    """Map an element symbol (optionally with charge suffix like 'O2-') to Z."""
    stripped = symbol.strip().rstrip("+-0123456789")
    z = _NORMALIZED.get(stripped.upper())
    if z is None:
        raise ValueError(f"unknown element symbol: {symbol!r}")
    return z


def symbol_of(z: int) -> str:
    if not 1 <= z <= len(SYMBOLS):
        raise ValueError(f"atomic number out of range: {z}")
    return SYMBOLS[z - 1]


@dataclass(frozen=True)
class RadiiTable:
    """Per-element radii (angstrom) with a versioned source tag."""

    source: str
    radii: dict[int, float]

    def __post_init__(self):
        for z, r in self.radii.items():
            if r <= 0:
                raise ValueError(f"non-positive radius for Z={z}")

    def radius(self, z: int) -> float:
        try:
            return self.radii[z]
        except KeyError:
            raise KeyError(
                f"element {symbol_of(z)} (Z={z}) missing from radii table "
                f"{self.source!r}"
            ) from None

    def __contains__(self, z: int) -> bool:
        return z in self.radii


def _load_table(name: str) -> RadiiTable:
    text = resources.files("xtalkit.data").joinpath(name).read_text()
    raw = json.loads(text)
    radii = {ATOMIC_NUMBERS[sym]: float(r) for sym, r in raw["radii"].items()}
    return RadiiTable(source=raw["source"], radii=radii)


def covalent_radii() -> RadiiTable:
    return _load_table("covalent_radii.json")


def vdw_radii() -> RadiiTable:
    return _load_table("vdw_radii.json")


def load_radii(kind: str) -> RadiiTable:
    """Load a bundled radii table by kind: 'covalent' or 'vdw'."""
    if kind == "covalent":
        return covalent_radii()
    if kind == "vdw":
        return vdw_radii()
    raise ValueError(f"unknown radii table kind: {kind!r}")
