"""Conforming 2D triangle meshes with facet topology and refinement.

Meshes are immutable after construction: every refinement operation
returns a new :class:`Triangulation`. Facets are stored as sorted vertex
pairs in lexicographic order; each facet knows its adjacent cells (owner
first, i.e. the lower cell index) and carries an integer boundary marker
(0 on interior facets).
"""

from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    """Invalid mesh input or operation."""


class MshFormatError(MeshError):
    """Malformed or unsupported MSH file content."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Triangulation:
    """Conforming triangle mesh.

    vertices : (V, 2) float array
    cells : (M, 3) int array, counterclockwise vertex order
    facets : (E, 2) int array, each row a sorted vertex pair, rows sorted
        lexicographically
    facet_cells : (E, 2) int array, adjacent cells sorted ascending, -1 in
        the second slot on boundary facets (owner = first entry)
    cell_facets : (M, 3) int array, facet index of the edge opposite local
        vertex i
    boundary_marker : (E,) int array, 0 on interior facets
    parent_cells : (M,) int array mapping each cell to the cell of the mesh
        it was refined from, or None for meshes built from scratch
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_cells: np.ndarray
    cell_facets: np.ndarray
    boundary_marker: np.ndarray
    cell_areas: np.ndarray
    cell_diameters: np.ndarray
    facet_diameters: np.ndarray
    facet_normals: np.ndarray
    facet_tangents: np.ndarray
    facet_midpoints: np.ndarray
    parent_cells: np.ndarray | None = field(default=None)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_facets(self):
        return self.facets.shape[0]

    @property
    def boundary_facets(self):
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def interior_facets(self):
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    def facet_geometry(self, facet):
        """Return (unit normal, unit tangent, midpoint, length) of a facet.

        The normal points from the first adjacent cell into the second
        (outward on boundary facets); the tangent is the normal rotated by
        +90 degrees, s = (-n2, n1).
        """
        return (
            self.facet_normals[facet],
            self.facet_tangents[facet],
            self.facet_midpoints[facet],
            self.facet_diameters[facet],
        )

    def min_angle(self):
        """Smallest interior angle over all cells, in radians."""
        p = self.vertices[self.cells]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.sum(a * b, axis=1) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(np.min(angles))

    def cell_local_edge(self, cell, facet):
        """Local edge index (opposite vertex) of `facet` within `cell`."""
        row = self.cell_facets[cell]
        loc = np.flatnonzero(row == facet)
        if loc.size != 1:
            raise MeshError(f"facet {facet} is not an edge of cell {cell}")
        return int(loc[0])


def _signed_areas(vertices, cells):
    p = vertices[cells]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def build_triangulation(vertices, cells, boundary_tags=None, parent_cells=None,
                        reorient=False):
    """Assemble a Triangulation from vertex coordinates and cell triples.

    boundary_tags, if given, maps sorted boundary vertex pairs to integer
    markers; untagged boundary facets default to marker 1.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (V, 2) array")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("cells must be an (M, 3) array")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise MeshError("cell refers to a nonexistent vertex")

    areas = _signed_areas(vertices, cells)
    if reorient:
        flipped = areas < 0
        cells = cells.copy()
        cells[flipped] = cells[flipped][:, [0, 2, 1]]
        areas = np.abs(areas)
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        raise MeshError(f"cell {bad} has non-positive area {areas[bad]:.3e}")

    # facet table: sorted vertex pairs in lexicographic order
    raw = np.concatenate([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]])
    raw_sorted = np.sort(raw, axis=1)
    facets, inverse = np.unique(raw_sorted, axis=0, return_inverse=True)
    E = len(facets)
    M = len(cells)
    cell_facets = inverse.reshape(3, M).T.copy()

    facet_cells = np.full((E, 2), -1, dtype=np.int64)
    counts = np.zeros(E, dtype=np.int64)
    for local in range(3):
        for cidx, f in enumerate(cell_facets[:, local]):
            k = counts[f]
            if k >= 2:
                raise MeshError(f"facet {f} adjacent to more than 2 cells")
            facet_cells[f, k] = cidx
            counts[f] += 1
    facet_cells = np.sort(facet_cells, axis=1)
    # sort moved -1 first on boundary rows; swap back so owner is first
    swap = facet_cells[:, 0] < 0
    facet_cells[swap] = facet_cells[swap][:, ::-1]

    boundary = facet_cells[:, 1] < 0
    marker = np.zeros(E, dtype=np.int64)
    marker[boundary] = 1
    if boundary_tags:
        for (a, b), tag in boundary_tags.items():
            key = (min(a, b), max(a, b))
            idx = np.flatnonzero((facets[:, 0] == key[0]) & (facets[:, 1] == key[1]))
            if idx.size == 1 and boundary[idx[0]]:
                marker[idx[0]] = tag

    pv = vertices[cells]
    edge_len = np.stack(
        [np.linalg.norm(pv[:, (i + 2) % 3] - pv[:, (i + 1) % 3], axis=1) for i in range(3)],
        axis=1,
    )
    cell_diam = edge_len.max(axis=1)
    fverts = vertices[facets]
    facet_diam = np.linalg.norm(fverts[:, 1] - fverts[:, 0], axis=1)
    facet_mid = 0.5 * (fverts[:, 0] + fverts[:, 1])

    # normal points out of the owner cell; tangent = rot90(normal) equals
    # the owner's counterclockwise traversal direction of the facet
    normals = np.empty((E, 2))
    tangents = np.empty((E, 2))
    for f in range(E):
        owner = facet_cells[f, 0]
        tri = cells[owner]
        a, b = facets[f]
        # traversal order of (a, b) within the owner's CCW cycle
        i = int(np.flatnonzero(tri == a)[0])
        if tri[(i + 1) % 3] == b:
            d = vertices[b] - vertices[a]
        else:
            d = vertices[a] - vertices[b]
        d = d / np.linalg.norm(d)
        normals[f] = (d[1], -d[0])
        tangents[f] = d

    if parent_cells is not None:
        parent_cells = np.asarray(parent_cells, dtype=np.int64)

    return Triangulation(
        vertices=vertices,
        cells=cells,
        facets=facets,
        facet_cells=facet_cells,
        cell_facets=cell_facets,
        boundary_marker=marker,
        cell_areas=areas,
        cell_diameters=cell_diam,
        facet_diameters=facet_diam,
        facet_normals=normals,
        facet_tangents=tangents,
        facet_midpoints=facet_mid,
        parent_cells=parent_cells,
    )


def build_rectangle(x0, y0, x1, y1, nx, ny):
    """Structured triangulation of [x0,x1] x [y0,y1], 2*nx*ny cells.

    Each grid square is split along its lower-left to upper-right diagonal.
    """
    if not (x1 > x0 and y1 > y0):
        raise MeshError("invalid extents: need x1 > x0 and y1 > y0")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return build_triangulation(vertices, np.array(cells))


def build_lshape(n):
    """L-shaped domain (-1,1)^2 minus the fourth quadrant, 6*n*n cells.

    Reentrant corner at the origin; the removed quadrant is x>0, y<0.
    """
    if n < 1:
        raise MeshError("n must be at least 1")
    h = 1.0 / n
    index = {}
    vertices = []

    def vid(i, j):
        key = (i, j)
        if key not in index:
            index[key] = len(vertices)
            vertices.append((i * h, j * h))
        return index[key]

    cells = []
    for i in range(-n, n):
        for j in range(-n, n):
            if i >= 0 and j < 0:
                continue
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return build_triangulation(np.array(vertices, dtype=float), np.array(cells))


def barycentric_refine(tri):
    """Alfeld split: each cell replaced by 3 cells joining its barycenter
    to its vertices. Returns a MeshHierarchy with children of macro cell m
    at indices 3m, 3m+1, 3m+2."""
    V = tri.num_vertices
    M = tri.num_cells
    bary = tri.vertices[tri.cells].mean(axis=1)
    vertices = np.vstack([tri.vertices, bary])
    cells = np.empty((3 * M, 3), dtype=np.int64)
    for m in range(M):
        a, b, c = tri.cells[m]
        g = V + m
        cells[3 * m + 0] = (a, b, g)
        cells[3 * m + 1] = (b, c, g)
        cells[3 * m + 2] = (c, a, g)
    tags = _boundary_tag_dict(tri)
    refined = build_triangulation(vertices, cells, boundary_tags=tags)
    child_of = np.repeat(np.arange(M, dtype=np.int64), 3)
    return MeshHierarchy(macro=tri, bary=refined, child_of=child_of)


@dataclass(frozen=True)
class MeshHierarchy:
    """Macro mesh with its barycentric refinement."""

    macro: Triangulation
    bary: Triangulation
    child_of: np.ndarray


def _boundary_tag_dict(tri):
    tags = {}
    for f in tri.boundary_facets:
        a, b = tri.facets[f]
        tags[(int(a), int(b))] = int(tri.boundary_marker[f])
    return tags


def refine_uniform_red(tri):
    """Regular 1->4 refinement: every edge split at its midpoint."""
    V = tri.num_vertices
    mid = 0.5 * (tri.vertices[tri.facets[:, 0]] + tri.vertices[tri.facets[:, 1]])
    vertices = np.vstack([tri.vertices, mid])
    cells = []
    parents = []
    for m in range(tri.num_cells):
        a, b, c = tri.cells[m]
        # cell_facets[m, i] is opposite local vertex i
        mbc = V + tri.cell_facets[m, 0]
        mca = V + tri.cell_facets[m, 1]
        mab = V + tri.cell_facets[m, 2]
        cells.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])
        parents.extend([m, m, m, m])
    tags = {}
    for f in tri.boundary_facets:
        a, b = tri.facets[f]
        t = int(tri.boundary_marker[f])
        mv = V + f
        tags[(min(int(a), mv), max(int(a), mv))] = t
        tags[(min(int(b), mv), max(int(b), mv))] = t
    return build_triangulation(vertices, np.array(cells), boundary_tags=tags,
                               parent_cells=np.array(parents))


def refine_marked(tri, marks):
    """Longest-edge bisection of the marked cells with conformity closure.

    Neighbors are bisected recursively (LEPP propagation) until no hanging
    nodes remain. Returns a new conforming Triangulation whose
    parent_cells maps each cell back to a cell of `tri`.
    """
    if tri.num_cells == 0:
        raise MeshError("cannot refine an empty mesh")
    marks = sorted(set(int(m) for m in marks))
    if marks and (marks[0] < 0 or marks[-1] >= tri.num_cells):
        raise MeshError("mark outside cell index range")
    if not marks:
        return build_triangulation(
            tri.vertices, tri.cells, boundary_tags=_boundary_tag_dict(tri),
            parent_cells=np.arange(tri.num_cells))

    verts = [tuple(v) for v in tri.vertices]
    cells = [tuple(int(v) for v in c) for c in tri.cells]
    ancestor = list(range(len(cells)))
    alive = [True] * len(cells)
    edge_cells = {}
    for cid, (a, b, c) in enumerate(cells):
        for e in ((a, b), (b, c), (c, a)):
            edge_cells.setdefault((min(e), max(e)), set()).add(cid)
    midpoint = {}
    boundary_tags = _boundary_tag_dict(tri)

    def edge_len2(a, b):
        dx = verts[a][0] - verts[b][0]
        dy = verts[a][1] - verts[b][1]
        return dx * dx + dy * dy

    def longest_edge(cid):
        a, b, c = cells[cid]
        # deterministic tie-break: larger length, then smaller sorted pair
        edges = [(min(a, b), max(a, b)), (min(b, c), max(b, c)), (min(c, a), max(c, a))]
        return min(edges, key=lambda e: (-edge_len2(*e), e))

    def neighbor(cid, edge):
        for other in edge_cells.get(edge, ()):
            if other != cid and alive[other]:
                return other
        return None

    def get_midpoint(edge):
        if edge not in midpoint:
            a, b = edge
            verts.append((0.5 * (verts[a][0] + verts[b][0]),
                          0.5 * (verts[a][1] + verts[b][1])))
            midpoint[edge] = len(verts) - 1
            if edge in boundary_tags:
                tag = boundary_tags.pop(edge)
                m = midpoint[edge]
                boundary_tags[(min(a, m), max(a, m))] = tag
                boundary_tags[(min(b, m), max(b, m))] = tag
        return midpoint[edge]

    def split_cell(cid, edge):
        a, b, c = cells[cid]
        m = get_midpoint(edge)
        # find the split edge's traversal order (u, v) in the CCW cycle;
        # children (o, u, m) and (o, m, v) stay CCW
        cyc = (a, b, c, a)
        for k in range(3):
            u, v = cyc[k], cyc[k + 1]
            if (min(u, v), max(u, v)) == edge:
                o = ({a, b, c} - {u, v}).pop()
                children = [(o, u, m), (o, m, v)]
                break
        alive[cid] = False
        for e in ((min(a, b), max(a, b)), (min(b, c), max(b, c)), (min(c, a), max(c, a))):
            edge_cells[e].discard(cid)
        out = []
        for ch in children:
            cells.append(ch)
            ancestor.append(ancestor[cid])
            alive.append(True)
            nid = len(cells) - 1
            x, y, z = ch
            for e in ((min(x, y), max(x, y)), (min(y, z), max(y, z)), (min(z, x), max(z, x))):
                edge_cells.setdefault(e, set()).add(nid)
            out.append(nid)
        return out

    def lepp_refine(cid):
        path = [cid]
        guard = 0
        while path:
            guard += 1
            if guard > 10 * len(cells) + 1000:
                raise MeshError("bisection closure failed to terminate")
            t = path[-1]
            if not alive[t]:
                path.pop()
                continue
            e = longest_edge(t)
            nb = neighbor(t, e)
            if nb is None:
                split_cell(t, e)
                path.pop()
            elif longest_edge(nb) == e:
                split_cell(t, e)
                split_cell(nb, e)
                path.pop()
            else:
                path.append(nb)

    for cid in marks:
        if alive[cid]:
            lepp_refine(cid)

    new_cells = [cells[i] for i in range(len(cells)) if alive[i]]
    parents = [ancestor[i] for i in range(len(cells)) if alive[i]]
    return build_triangulation(
        np.array(verts, dtype=float), np.array(new_cells),
        boundary_tags=boundary_tags, parent_cells=np.array(parents))


def load_msh(path):
    """Read a Gmsh ASCII v2.2 mesh: triangles, optional tagged boundary lines."""
    with open(path) as fh:
        lines = fh.read().splitlines()

    def fail(msg, i):
        raise MshFormatError(msg, line=i + 1)

    i = 0
    nodes = {}
    triangles = []
    boundary = {}
    seen_nodes = False
    seen_elements = False
    while i < len(lines):
        tok = lines[i].strip()
        if tok == "$MeshFormat":
            parts = lines[i + 1].split()
            if not parts or not parts[0].startswith("2.2"):
                fail(f"unsupported MSH version {parts[0] if parts else '?'}; need 2.2", i + 1)
            if lines[i + 2].strip() != "$EndMeshFormat":
                fail("missing $EndMeshFormat", i + 2)
            i += 3
        elif tok == "$Nodes":
            seen_nodes = True
            try:
                count = int(lines[i + 1])
            except (ValueError, IndexError):
                fail("bad node count", i + 1)
            for k in range(count):
                parts = lines[i + 2 + k].split()
                if len(parts) < 4:
                    fail("bad node line", i + 2 + k)
                nodes[int(parts[0])] = (float(parts[1]), float(parts[2]))
            if lines[i + 2 + count].strip() != "$EndNodes":
                fail("missing $EndNodes", i + 2 + count)
            i += 3 + count
        elif tok == "$Elements":
            seen_elements = True
            try:
                count = int(lines[i + 1])
            except (ValueError, IndexError):
                fail("bad element count", i + 1)
            for k in range(count):
                row = i + 2 + k
                parts = lines[row].split()
                if len(parts) < 3:
                    fail("bad element line", row)
                etype = int(parts[1])
                ntags = int(parts[2])
                tags = [int(t) for t in parts[3:3 + ntags]]
                conn = [int(t) for t in parts[3 + ntags:]]
                if etype == 2:
                    if len(conn) != 3:
                        fail("triangle with wrong node count", row)
                    triangles.append((conn, row))
                elif etype == 1:
                    if len(conn) != 2:
                        fail("line with wrong node count", row)
                    boundary[(min(conn), max(conn))] = tags[0] if tags else 1
                elif etype == 15:
                    pass  # isolated points carry no mesh information
                else:
                    fail(f"unsupported element type {etype}; only 1, 2, 15", row)
            if lines[i + 2 + count].strip() != "$EndElements":
                fail("missing $EndElements", i + 2 + count)
            i += 3 + count
        else:
            i += 1

    if not seen_nodes:
        raise MshFormatError("file has no $Nodes section")
    if not seen_elements or not triangles:
        raise MshFormatError("file has no triangles in $Elements")

    ids = sorted(nodes)
    remap = {nid: k for k, nid in enumerate(ids)}
    vertices = np.array([nodes[n] for n in ids])
    cells = []
    for conn, row in triangles:
        try:
            cells.append([remap[c] for c in conn])
        except KeyError as exc:
            raise MshFormatError(f"element references unknown node {exc}", line=row + 1)
    tags = {}
    for (a, b), tag in boundary.items():
        if a not in remap or b not in remap:
            raise MshFormatError(f"boundary line references unknown node ({a}, {b})")
        tags[(remap[a], remap[b])] = tag
    tags = {(min(a, b), max(a, b)): t for (a, b), t in tags.items()}
    return build_triangulation(vertices, np.array(cells), boundary_tags=tags,
                               reorient=True)


def save_msh(tri, path):
    """Write the mesh as ASCII MSH v2.2 (triangles + tagged boundary lines)."""
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{tri.num_vertices}\n")
        for k, (x, y) in enumerate(tri.vertices, start=1):
            fh.write(f"{k} {x:.16g} {y:.16g} 0\n")
        fh.write("$EndNodes\n")
        bfacets = tri.boundary_facets
        fh.write(f"$Elements\n{len(bfacets) + tri.num_cells}\n")
        eid = 1
        for f in bfacets:
            a, b = tri.facets[f] + 1
            tag = int(tri.boundary_marker[f])
            fh.write(f"{eid} 1 2 {tag} {tag} {a} {b}\n")
            eid += 1
        for c in tri.cells + 1:
            fh.write(f"{eid} 2 2 0 0 {c[0]} {c[1]} {c[2]}\n")
            eid += 1
        fh.write("$EndElements\n")
