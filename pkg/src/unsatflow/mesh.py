"""Unstructured triangular meshes with boundary and region tagging.

A mesh holds node coordinates (x, z), counterclockwise triangles, tagged
boundary facets (edges), and one integer region tag per element so that
material properties can vary by subdomain. Meshes are immutable after
construction and safe for concurrent read-only use.
"""

from __future__ import annotations

import warnings

import numpy as np

__all__ = [
    "Mesh",
    "MeshFormatError",
    "generate_structured",
    "load_mesh",
    "save_mesh",
    "load_gmsh",
    "classify_lshape_region",
    "tag_lshape_regions",
    "DEFAULT_LSHAPE_POLYGON",
    "BOTTOM",
    "RIGHT",
    "TOP",
    "LEFT",
]

# Boundary tags used by generate_structured.
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4

# Vertices (x, z) of the higher-conductivity L-shaped subregion of the
# 100 cm heterogeneous test domain.  The published description is a
# schematic without numeric vertices, so this default is a configuration
# input; override it via the `polygon` argument / config key when a
# different geometry is wanted.
DEFAULT_LSHAPE_POLYGON = (
    (0.0, 0.0),
    (100.0, 0.0),
    (100.0, 40.0),
    (40.0, 40.0),
    (40.0, 100.0),
    (0.0, 100.0),
)


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class Mesh:
    """Immutable 2D triangular mesh.

    Parameters
    ----------
    nodes : (n, 2) float array
        Node coordinates (x, z).
    elements : (ne, 3) int array
        Node indices per triangle, counterclockwise.
    boundary_facets : (nf, 3) int array
        Rows (n0, n1, tag); each (n0, n1) must be an edge of exactly one
        element.
    element_region : (ne,) int array, optional
        Region tag per element. Defaults to all zeros.

    Raises
    ------
    ValueError
        On any invariant violation: clockwise or degenerate triangles,
        out-of-range indices, or facets that are not boundary edges.
    """

    def __init__(self, nodes, elements, boundary_facets, element_region=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.boundary_facets = np.ascontiguousarray(boundary_facets, dtype=np.int64)
        if element_region is None:
            element_region = np.zeros(len(self.elements), dtype=np.int64)
        self.element_region = np.ascontiguousarray(element_region, dtype=np.int64)

        self._validate()

        xz = self.nodes[self.elements]  # (ne, 3, 2)
        e1 = xz[:, 1] - xz[:, 0]
        e2 = xz[:, 2] - xz[:, 0]
        self.areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        d01 = np.linalg.norm(e1, axis=1)
        d02 = np.linalg.norm(e2, axis=1)
        d12 = np.linalg.norm(xz[:, 2] - xz[:, 1], axis=1)
        self.elem_diam = np.max(np.stack([d01, d02, d12]), axis=0)
        self.h = float(np.max(self.elem_diam)) if len(self.elem_diam) else 0.0

        if np.any(self.areas <= 0.0):
            bad = int(np.argmax(self.areas <= 0.0))
            raise ValueError(
                f"element {bad} is degenerate or clockwise "
                f"(signed area {self.areas[bad]:g})"
            )

        for arr in (self.nodes, self.elements, self.boundary_facets,
                    self.element_region, self.areas, self.elem_diam):
            arr.flags.writeable = False

    # -- basic queries ----------------------------------------------------

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_elements(self):
        return len(self.elements)

    def facets_with_tag(self, tag):
        """Return the (k, 2) node-pair array of boundary facets carrying `tag`."""
        sel = self.boundary_facets[:, 2] == tag
        return self.boundary_facets[sel, :2]

    def boundary_tags(self):
        """Sorted unique facet tags present in the mesh."""
        return sorted(int(t) for t in np.unique(self.boundary_facets[:, 2]))

    def element_centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    # -- validation --------------------------------------------------------

    def _validate(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (n, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise ValueError("elements must have shape (ne, 3)")
        if len(self.element_region) != len(self.elements):
            raise ValueError("element_region length must match element count")
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise ValueError("element node index out of range")
        if len(self.boundary_facets):
            f = self.boundary_facets[:, :2]
            if f.min() < 0 or f.max() >= n:
                raise ValueError("facet node index out of range")

        counts = self._edge_counts()
        for n0, n1, tag in self.boundary_facets:
            key = (min(n0, n1), max(n0, n1))
            if counts.get(key, 0) != 1:
                raise ValueError(
                    f"facet ({n0}, {n1}) tag {tag} is not a boundary edge "
                    f"(appears in {counts.get(key, 0)} elements)"
                )

    def _edge_counts(self):
        counts = {}
        for tri in self.elements:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        return counts


def generate_structured(nx, nz, lx, lz, diagonal="right"):
    """Build a structured triangulation of the rectangle [0, lx] x [0, lz].

    Each of the nx*nz quads is split into triangles.  With
    ``diagonal="right"`` (the default) every quad is cut along the
    bottom-left to top-right diagonal; ``"alternating"`` flips the
    diagonal on a checkerboard, which makes the mesh mirror-symmetric
    about the vertical centerline when nx is even; ``"crossed"`` splits
    every quad into four triangles around a center node (the layout used
    for the benchmark error reproductions, see README).

    Boundary facets are tagged bottom=1, right=2, top=3, left=4; all
    region tags are 0.

    Parameters
    ----------
    nx, nz : int
        Subdivisions along x and z (>= 1).
    lx, lz : float
        Domain extents (> 0).
    diagonal : {"right", "alternating", "crossed"}

    Returns
    -------
    Mesh
    """
    if nx < 1 or nz < 1:
        raise ValueError(f"nx and nz must be >= 1, got ({nx}, {nz})")
    if lx <= 0 or lz <= 0:
        raise ValueError(f"lx and lz must be > 0, got ({lx}, {lz})")
    if diagonal not in ("right", "alternating", "crossed"):
        raise ValueError(f"unknown diagonal mode {diagonal!r}")

    xs = np.linspace(0.0, lx, nx + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    xx, zz = np.meshgrid(xs, zs)  # row-major in z
    nodes = np.column_stack([xx.ravel(), zz.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    elements = []
    if diagonal == "crossed":
        centers = []
        cid = len(nodes)
        for j in range(nz):
            for i in range(nx):
                centers.append([0.5 * (xs[i] + xs[i + 1]),
                                0.5 * (zs[j] + zs[j + 1])])
                n00, n10 = nid(i, j), nid(i + 1, j)
                n01, n11 = nid(i, j + 1), nid(i + 1, j + 1)
                c = cid
                cid += 1
                elements += [(n00, n10, c), (n10, n11, c),
                             (n11, n01, c), (n01, n00, c)]
        nodes = np.vstack([nodes, centers])
    else:
        for j in range(nz):
            for i in range(nx):
                n00, n10 = nid(i, j), nid(i + 1, j)
                n01, n11 = nid(i, j + 1), nid(i + 1, j + 1)
                if diagonal == "right" or (i + j) % 2 == 0:
                    elements.append((n00, n10, n11))
                    elements.append((n00, n11, n01))
                else:
                    elements.append((n00, n10, n01))
                    elements.append((n10, n11, n01))

    facets = []
    for i in range(nx):
        facets.append((nid(i, 0), nid(i + 1, 0), BOTTOM))
        facets.append((nid(i, nz), nid(i + 1, nz), TOP))
    for j in range(nz):
        facets.append((nid(nx, j), nid(nx, j + 1), RIGHT))
        facets.append((nid(0, j), nid(0, j + 1), LEFT))

    return Mesh(nodes, np.array(elements), np.array(facets))


# -- ASCII mesh file format ---------------------------------------------
#
# Header line:  nodes N elements M facets F
# then N lines  "x z", M lines "n0 n1 n2 region", F lines "n0 n1 tag".
# All indices 0-based.


def save_mesh(mesh, path):
    """Write `mesh` in the ASCII format read by load_mesh.

    Coordinates are written with 17 significant digits so a round trip
    reproduces them bitwise.
    """
    lines = [f"nodes {mesh.num_nodes} elements {mesh.num_elements} "
             f"facets {len(mesh.boundary_facets)}"]
    for x, z in mesh.nodes:
        lines.append(f"{x:.17g} {z:.17g}")
    for (a, b, c), r in zip(mesh.elements, mesh.element_region):
        lines.append(f"{a} {b} {c} {r}")
    for a, b, tag in mesh.boundary_facets:
        lines.append(f"{a} {b} {tag}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Read a mesh from the ASCII format written by save_mesh.

    Clockwise triangles are reoriented (two indices swapped) with a
    warning; genuinely malformed lines raise MeshFormatError naming the
    line number.

    Returns
    -------
    Mesh
    """
    with open(path) as fh:
        raw = fh.read().splitlines()

    def fail(lineno, msg):
        raise MeshFormatError(f"{path}:{lineno}: {msg}")

    if not raw:
        fail(1, "empty mesh file")
    head = raw[0].split()
    if (len(head) != 6 or head[0] != "nodes" or head[2] != "elements"
            or head[4] != "facets"):
        fail(1, "expected header 'nodes N elements M facets F'")
    try:
        n, m, f = int(head[1]), int(head[3]), int(head[5])
    except ValueError:
        fail(1, "non-integer counts in header")
    if len(raw) < 1 + n + m + f:
        fail(len(raw), f"expected {1 + n + m + f} lines, file has {len(raw)}")

    nodes = np.empty((n, 2))
    for k in range(n):
        lineno = 2 + k
        parts = raw[1 + k].split()
        if len(parts) != 2:
            fail(lineno, f"node line needs 2 values, got {len(parts)}")
        try:
            nodes[k] = [float(parts[0]), float(parts[1])]
        except ValueError:
            fail(lineno, f"cannot parse node coordinates {raw[1 + k]!r}")

    elements = np.empty((m, 3), dtype=np.int64)
    regions = np.empty(m, dtype=np.int64)
    for k in range(m):
        lineno = 2 + n + k
        parts = raw[1 + n + k].split()
        if len(parts) != 4:
            fail(lineno, f"element line needs 4 values, got {len(parts)}")
        try:
            elements[k] = [int(parts[0]), int(parts[1]), int(parts[2])]
            regions[k] = int(parts[3])
        except ValueError:
            fail(lineno, f"cannot parse element line {raw[1 + n + k]!r}")

    facets = np.empty((f, 3), dtype=np.int64)
    for k in range(f):
        lineno = 2 + n + m + k
        parts = raw[1 + n + m + k].split()
        if len(parts) != 3:
            fail(lineno, f"facet line needs 3 values, got {len(parts)}")
        try:
            facets[k] = [int(parts[0]), int(parts[1]), int(parts[2])]
        except ValueError:
            fail(lineno, f"cannot parse facet line {raw[1 + n + m + k]!r}")

    elements = _fix_orientation(nodes, elements, path)
    return Mesh(nodes, elements, facets, regions)


def _fix_orientation(nodes, elements, origin):
    """Swap two indices of any clockwise triangle; warn about each fix."""
    xz = nodes[elements]
    areas = 0.5 * ((xz[:, 1, 0] - xz[:, 0, 0]) * (xz[:, 2, 1] - xz[:, 0, 1])
                   - (xz[:, 1, 1] - xz[:, 0, 1]) * (xz[:, 2, 0] - xz[:, 0, 0]))
    flipped = np.nonzero(areas < 0)[0]
    if len(flipped):
        elements = elements.copy()
        elements[flipped, 1], elements[flipped, 2] = (
            elements[flipped, 2].copy(), elements[flipped, 1].copy())
        warnings.warn(
            f"{origin}: reoriented {len(flipped)} clockwise triangle(s)",
            stacklevel=3)
    return elements


def load_gmsh(path):
    """Read a Gmsh MSH 2.2 ASCII mesh.

    2-node line elements become boundary facets (physical tag -> facet
    tag) and 3-node triangles become elements (physical tag -> region
    tag).  Node ids are compacted to 0-based indices.

    Returns
    -------
    Mesh
    """
    with open(path) as fh:
        lines = fh.read().splitlines()

    def fail(lineno, msg):
        raise MeshFormatError(f"{path}:{lineno}: {msg}")

    try:
        i_fmt = lines.index("$MeshFormat")
    except ValueError:
        fail(1, "missing $MeshFormat section")
    version = lines[i_fmt + 1].split()[0]
    if not version.startswith("2.2"):
        fail(i_fmt + 2, f"unsupported MSH version {version}, expected 2.2")

    i_nodes = lines.index("$Nodes")
    n = int(lines[i_nodes + 1])
    ids = np.empty(n, dtype=np.int64)
    coords = np.empty((n, 2))
    for k in range(n):
        parts = lines[i_nodes + 2 + k].split()
        if len(parts) < 4:
            fail(i_nodes + 3 + k, "node line needs 'id x y z'")
        ids[k] = int(parts[0])
        coords[k] = [float(parts[1]), float(parts[2])]
    id_map = {int(i): k for k, i in enumerate(ids)}

    i_elems = lines.index("$Elements")
    m = int(lines[i_elems + 1])
    elements, regions, facets = [], [], []
    for k in range(m):
        lineno = i_elems + 3 + k
        parts = [int(p) for p in lines[i_elems + 2 + k].split()]
        etype, ntags = parts[1], parts[2]
        phys = parts[3] if ntags >= 1 else 0
        conn = parts[3 + ntags:]
        if etype == 1:  # 2-node line
            if len(conn) != 2:
                fail(lineno, "line element needs 2 nodes")
            facets.append((id_map[conn[0]], id_map[conn[1]], phys))
        elif etype == 2:  # 3-node triangle
            if len(conn) != 3:
                fail(lineno, "triangle element needs 3 nodes")
            elements.append(tuple(id_map[c] for c in conn))
            regions.append(phys)
        # other element types (points, quads, ...) are ignored

    if not elements:
        fail(i_elems + 1, "no triangles found")
    elements = _fix_orientation(coords, np.array(elements, dtype=np.int64), path)
    return Mesh(coords, elements, np.array(facets, dtype=np.int64).reshape(-1, 3),
                np.array(regions, dtype=np.int64))


def classify_lshape_region(centroid, polygon=DEFAULT_LSHAPE_POLYGON):
    """Region tag for a point of the heterogeneous two-region square.

    Returns 1 when `centroid` lies strictly inside the L-shaped polygon
    (the higher-conductivity subregion), else 0.  Points exactly on the
    interface belong to region 0 (the closed set is region 0).
    """
    x, z = float(centroid[0]), float(centroid[1])
    poly = np.asarray(polygon, dtype=float)
    nv = len(poly)

    # On-edge check first: the interface is region 0 by convention.
    for k in range(nv):
        x0, z0 = poly[k]
        x1, z1 = poly[(k + 1) % nv]
        cross = (x1 - x0) * (z - z0) - (z1 - z0) * (x - x0)
        if abs(cross) < 1e-12 * max(1.0, abs(x1 - x0) + abs(z1 - z0)):
            if (min(x0, x1) - 1e-12 <= x <= max(x0, x1) + 1e-12
                    and min(z0, z1) - 1e-12 <= z <= max(z0, z1) + 1e-12):
                return 0

    inside = False
    for k in range(nv):
        x0, z0 = poly[k]
        x1, z1 = poly[(k + 1) % nv]
        if (z0 > z) != (z1 > z):
            x_cross = x0 + (z - z0) / (z1 - z0) * (x1 - x0)
            if x < x_cross:
                inside = not inside
    return 1 if inside else 0


def tag_lshape_regions(mesh, polygon=DEFAULT_LSHAPE_POLYGON):
    """Return a copy of `mesh` with element regions set by centroid location."""
    regions = np.array([classify_lshape_region(c, polygon)
                        for c in mesh.element_centroids()], dtype=np.int64)
    return Mesh(mesh.nodes, mesh.elements, mesh.boundary_facets, regions)
