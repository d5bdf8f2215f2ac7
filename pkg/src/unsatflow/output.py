"""Run artifacts: legacy-ASCII VTK snapshots, metrics CSV, JSON-lines log.

Files are written atomically (temp file in the target directory, then
rename) so concurrent sweep workers never expose partial output.
"""

from __future__ import annotations

import json
import os
import tempfile

__all__ = ["atomic_write_text", "write_vtk", "write_jsonl", "vtk_text"]


def atomic_write_text(path, text):
    """Write text to `path` via a temp file + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def vtk_text(mesh, point_data, title="unsatflow snapshot"):
    """Render mesh + nodal scalar fields as a legacy ASCII VTK grid."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.num_nodes} double"]
    for x, z in mesh.nodes:
        lines.append(f"{x:.17g} {z:.17g} 0")
    ne = mesh.num_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    for a, b, c in mesh.elements:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {ne}")
    lines.extend(["5"] * ne)
    lines.append(f"POINT_DATA {mesh.num_nodes}")
    for name, values in point_data.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.17g}" for v in values)
    return "\n".join(lines) + "\n"


def write_vtk(path, mesh, point_data, title="unsatflow snapshot"):
    atomic_write_text(path, vtk_text(mesh, point_data, title))


def write_jsonl(path, records):
    """Write an iterable of dicts as JSON lines (atomically)."""
    text = "\n".join(json.dumps(r, sort_keys=True) for r in records)
    atomic_write_text(path, text + "\n" if text else "")
