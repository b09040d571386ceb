"""Canonical JSON serialization (schema xtal.crystal.v1).

Field order and float formatting (17 significant digits) are fixed, so one
round trip through ``from_canonical_json`` reproduces the exact bytes. The
same float formatter backs the crop and metric report writers.
"""

from __future__ import annotations

import json

from .lattice import AtomSite, Crystal, Lattice, MolecularGraph

__all__ = ["SchemaError", "to_canonical_json", "from_canonical_json",
           "format_float", "dump_deterministic"]

SCHEMA_NAME = "xtal.crystal.v1"


class SchemaError(ValueError):
    """Schema violation; the message carries a JSON pointer to the problem."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def format_float(x: float) -> str:
    """Deterministic 17-significant-digit decimal text for a double."""
    return format(float(x), ".17g")


def dump_deterministic(obj) -> bytes:
    """JSON bytes with fixed key order and canonical float formatting.

    Floats must be pre-wrapped via :func:`format_float`; this helper walks
    the structure and emits floats through it.
    """

    def emit(node) -> str:
        if isinstance(node, dict):
            inner = ",".join(f"{json.dumps(k)}:{emit(v)}"
                             for k, v in node.items())
            return "{" + inner + "}"
        if isinstance(node, (list, tuple)):
            return "[" + ",".join(emit(v) for v in node) + "]"
        if isinstance(node, bool) or node is None:
            return json.dumps(node)
        if isinstance(node, int):
            return str(node)
        if isinstance(node, float):
            return format_float(node)
        return json.dumps(node)

    return emit(obj).encode()


def to_canonical_json(crystal: Crystal) -> bytes:
    doc = {
        "schema": SCHEMA_NAME,
        "lattice": [[float(v) for v in row] for row in crystal.lattice.vectors],
        "sites": [
            {"z": int(s.z), "frac": [float(v) for v in s.frac]}
            for s in crystal.sites
        ],
        "molecules": [
            {
                "atoms": [int(a) for a in m.atom_indices],
                "bonds": [[int(i), int(j), int(o)] for i, j, o in m.edges],
                "entity": m.entity_id,
            }
            for m in crystal.molecules
        ],
        "asu": [int(i) for i in crystal.asu_molecule_indices],
    }
    return dump_deterministic(doc) + b"\n"


def _expect(cond: bool, path: str, message: str):
    if not cond:
        raise SchemaError(path, message)


def _float3(node, path: str) -> tuple[float, float, float]:
    _expect(isinstance(node, list) and len(node) == 3, path,
            "expected an array of 3 numbers")
    for k, v in enumerate(node):
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool),
                f"{path}/{k}", "expected a number")
    return tuple(float(v) for v in node)


def from_canonical_json(data: bytes | str) -> Crystal:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as err:
        raise SchemaError("", f"invalid JSON: {err}") from None
    _expect(isinstance(doc, dict), "", "expected an object")
    if "schema" in doc:
        _expect(doc["schema"] == SCHEMA_NAME, "/schema",
                f"expected {SCHEMA_NAME!r}")
    for key in ("lattice", "sites", "molecules", "asu"):
        _expect(key in doc, f"/{key}", "missing required field")

    lat_node = doc["lattice"]
    _expect(isinstance(lat_node, list) and len(lat_node) == 3, "/lattice",
            "expected 3 rows")
    rows = [_float3(row, f"/lattice/{k}") for k, row in enumerate(lat_node)]
    try:
        lattice = Lattice(rows)
    except ValueError as err:
        raise SchemaError("/lattice", str(err)) from None

    _expect(isinstance(doc["sites"], list), "/sites", "expected an array")
    sites = []
    for k, s in enumerate(doc["sites"]):
        path = f"/sites/{k}"
        _expect(isinstance(s, dict), path, "expected an object")
        _expect("z" in s and "frac" in s, path, "missing z/frac")
        _expect(isinstance(s["z"], int) and not isinstance(s["z"], bool),
                f"{path}/z", "expected an integer")
        frac = _float3(s["frac"], f"{path}/frac")
        try:
            sites.append(AtomSite(s["z"], frac))
        except ValueError as err:
            raise SchemaError(path, str(err)) from None

    _expect(isinstance(doc["molecules"], list), "/molecules",
            "expected an array")
    molecules = []
    for k, m in enumerate(doc["molecules"]):
        path = f"/molecules/{k}"
        _expect(isinstance(m, dict), path, "expected an object")
        for key in ("atoms", "bonds", "entity"):
            _expect(key in m, f"{path}/{key}", "missing required field")
        _expect(isinstance(m["atoms"], list), f"{path}/atoms",
                "expected an array")
        _expect(isinstance(m["entity"], str), f"{path}/entity",
                "expected a string")
        bonds = []
        for b, edge in enumerate(m["bonds"]):
            _expect(isinstance(edge, list) and len(edge) == 3,
                    f"{path}/bonds/{b}", "expected [i, j, order]")
            bonds.append(tuple(edge))
        try:
            molecules.append(MolecularGraph(tuple(m["atoms"]), tuple(bonds),
                                            m["entity"]))
        except ValueError as err:
            raise SchemaError(path, str(err)) from None

    _expect(isinstance(doc["asu"], list), "/asu", "expected an array")
    try:
        return Crystal(lattice, tuple(sites), tuple(molecules),
                       tuple(doc["asu"]))
    except ValueError as err:
        raise SchemaError("", str(err)) from None
