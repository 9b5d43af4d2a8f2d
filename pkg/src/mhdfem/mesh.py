"""Structured tetrahedral meshes of an axis-aligned box.

Each sub-cube is split into six tetrahedra (Kuhn subdivision) that share the
diagonal from the cube's lowest to its highest corner.  Edges and faces are
stored as ascending vertex tuples, which fixes a global orientation for every
entity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

# local vertex pairs / triples of a tetrahedron; face i is opposite vertex i
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


@dataclass(frozen=True)
class Mesh:
    """Tetrahedral mesh with full entity connectivity.

    Attributes
    ----------
    vertices : (nv, 3) float array
    cells : (nc, 4) int array, positively oriented
    edges : (ne, 2) int array, each row ascending
    faces : (nf, 3) int array, each row ascending
    cell_edges, cell_edge_signs : (nc, 6) arrays
        Global edge of each local edge in ``LOCAL_EDGES`` and +1 when the
        local direction agrees with the ascending global direction.
    cell_faces, cell_face_signs : (nc, 4) arrays
        Global face opposite each local vertex and +1 when the cell's outward
        normal agrees with the global face normal
        ``(x1 - x0) x (x2 - x0)`` of the ascending tuple.
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    cell_faces: np.ndarray
    cell_face_signs: np.ndarray
    boundary_faces: np.ndarray
    boundary_edges: np.ndarray
    boundary_vertices: np.ndarray
    h: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_cells

    def cell_volumes(self) -> np.ndarray:
        x = self.vertices[self.cells]
        return np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0

    def jacobians(self) -> np.ndarray:
        """Affine-map Jacobians, columns ``x_i - x_0`` for i = 1, 2, 3."""
        if "jac" not in self._cache:
            x = self.vertices[self.cells]
            self._cache["jac"] = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))
        return self._cache["jac"]

    def face_cells(self) -> list[list[int]]:
        return connectivity(self, 2, 3)

    def dump(self) -> str:
        """Plain-text listing for debugging (``v x y z`` / ``c i0 i1 i2 i3``)."""
        lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in self.vertices]
        lines += ["c " + " ".join(map(str, c)) for c in self.cells]
        return "\n".join(lines) + "\n"


def _unique_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def build_from_cells(vertices: np.ndarray, cells: np.ndarray) -> Mesh:
    """Build edges, faces, orientations and boundary sets from raw cells.

    Cells with negative volume are reoriented by swapping two vertices.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if len(cells) == 0:
        raise ValueError("mesh has no cells")

    x = vertices[cells]
    det = np.linalg.det(x[:, 1:] - x[:, :1])
    if np.any(det == 0.0):
        raise ValueError("degenerate cell")
    flip = det < 0
    cells[flip, 2], cells[flip, 3] = cells[flip, 3], cells[flip, 2].copy()
    nc = len(cells)

    local_e = cells[:, LOCAL_EDGES]  # (nc, 6, 2)
    edges, cell_edges = _unique_rows(np.sort(local_e, axis=2).reshape(-1, 2))
    cell_edges = cell_edges.reshape(nc, 6)
    edge_signs = np.where(local_e[:, :, 0] < local_e[:, :, 1], 1, -1)

    local_f = cells[:, LOCAL_FACES]  # (nc, 4, 3)
    faces, cell_faces = _unique_rows(np.sort(local_f, axis=2).reshape(-1, 3))
    cell_faces = cell_faces.reshape(nc, 4)

    fv = vertices[faces]
    normals = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    opposite = vertices[cells]  # (nc, 4, 3): vertex i is opposite face i
    outward = fv[cell_faces, 0] - opposite
    face_signs = np.where(np.einsum("cfi,cfi->cf", normals[cell_faces], outward) > 0, 1, -1)

    counts = np.bincount(cell_faces.ravel(), minlength=len(faces))
    if counts.max() > 2:
        raise ValueError("non-manifold mesh: face shared by more than two cells")
    bfaces = np.flatnonzero(counts == 1)
    bverts = np.unique(faces[bfaces])
    edge_index = {tuple(e): i for i, e in enumerate(edges)}
    bedges = sorted(
        {edge_index[(f[a], f[b])] for f in faces[bfaces] for a, b in ((0, 1), (0, 2), (1, 2))}
    )

    lengths = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)
    return Mesh(
        vertices=vertices,
        cells=cells,
        edges=edges,
        faces=faces,
        cell_edges=cell_edges,
        cell_edge_signs=edge_signs,
        cell_faces=cell_faces,
        cell_face_signs=face_signs,
        boundary_faces=bfaces,
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_vertices=bverts,
        h=float(lengths.max()),
    )


def build_box_mesh(nx: int, ny: int, nz: int, extents=(1.0, 1.0, 1.0)) -> Mesh:
    """Kuhn-subdivided mesh of ``[0, Lx] x [0, Ly] x [0, Lz]``."""
    for n in (nx, ny, nz):
        if int(n) != n or n < 1:
            raise ValueError(f"subdivision counts must be positive integers, got {(nx, ny, nz)}")
    extents = tuple(float(e) for e in extents)
    if len(extents) != 3 or min(extents) <= 0:
        raise ValueError(f"extents must be three positive lengths, got {extents}")

    xs = np.linspace(0.0, extents[0], nx + 1)
    ys = np.linspace(0.0, extents[1], ny + 1)
    zs = np.linspace(0.0, extents[2], nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.column_stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")])

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(order="F"), J.ravel(order="F"), K.ravel(order="F")
    cells = []
    for perm in permutations(range(3)):
        step = np.zeros(3, dtype=int)
        path = [vid(I, J, K)]
        for axis in perm:
            step[axis] = 1
            path.append(vid(I + step[0], J + step[1], K + step[2]))
        cells.append(np.column_stack(path))
    cells = np.stack(cells, axis=1).reshape(-1, 4)
    return build_from_cells(vertices, cells)


def mesh_size(mesh: Mesh) -> float:
    """Largest edge length over all cells."""
    if mesh is None or len(mesh.cells) == 0:
        raise ValueError("empty mesh")
    return mesh.h


def _entities(mesh: Mesh, dim: int) -> np.ndarray:
    if dim == 0:
        return np.arange(mesh.n_vertices)[:, None]
    return (mesh.vertices[:0], mesh.edges, mesh.faces, mesh.cells)[dim]


def connectivity(mesh: Mesh, d_from: int, d_to: int) -> list[list[int]]:
    """Incidence lists from entities of dimension ``d_from`` to ``d_to``.

    Downward maps come from vertex subsets (cell-to-edge and cell-to-face
    follow the local ordering of ``LOCAL_EDGES`` / ``LOCAL_FACES``; signs are
    on the mesh).  Upward maps are inversions of the downward ones, sorted.
    """
    if d_from not in range(4) or d_to not in range(4):
        raise ValueError("entity dimensions must be in {0, 1, 2, 3}")
    key = ("conn", d_from, d_to)
    if key in mesh._cache:
        return mesh._cache[key]

    if d_from == d_to:
        out = [[i] for i in range(len(_entities(mesh, d_from)))]
    elif d_to == 0:
        out = [list(map(int, e)) for e in _entities(mesh, d_from)]
    elif d_from > d_to:
        if d_from == 3:
            table = mesh.cell_edges if d_to == 1 else mesh.cell_faces
            out = [list(map(int, r)) for r in table]
        else:  # face -> edge
            edge_index = {tuple(e): i for i, e in enumerate(mesh.edges)}
            out = [
                [edge_index[(f[0], f[1])], edge_index[(f[0], f[2])], edge_index[(f[1], f[2])]]
                for f in mesh.faces
            ]
    else:
        down = connectivity(mesh, d_to, d_from)
        n_from = mesh.n_vertices if d_from == 0 else len(_entities(mesh, d_from))
        out = [[] for _ in range(n_from)]
        for j, row in enumerate(down):
            for i in row:
                out[i].append(j)
    mesh._cache[key] = out
    return out
