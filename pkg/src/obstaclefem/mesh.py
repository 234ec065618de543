"""Conforming tetrahedral meshes of axis-aligned boxes.

A TetMesh is immutable after construction: vertices, positively
oriented tetrahedra, deduplicated edges and faces, and boundary flags
derived from face adjacency counts (a face belonging to exactly one
tetrahedron is a boundary face).  Uniform refinement is red refinement
into 8 children; the interior octahedron is split along its shortest
diagonal, ties broken by the lowest global vertex-index pair, which
keeps the construction deterministic and shape regular.
"""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

# local edge ordering shared with the P2 degree-of-freedom layout
EDGE_VERTICES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
FACE_VERTICES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

# the three pairs of opposite edges, as indices into EDGE_VERTICES
_OPPOSITE_EDGE_PAIRS = ((0, 5), (1, 4), (2, 3))

# equatorial midpoint cycle around each diagonal; consecutive entries
# share a parent face, so (diag, diag, cyc[k], cyc[k+1]) is a tetrahedron
_OCTA_CYCLES = {0: (1, 2, 4, 3), 1: (0, 2, 5, 3), 2: (0, 1, 5, 4)}


class MeshError(Exception):
    """Invalid mesh topology or degenerate geometry."""


@dataclass(frozen=True)
class ElementGeometry:
    """Per-tetrahedron geometric data for basis evaluation."""

    volume: float
    diameter: float
    lambda_grads: np.ndarray  # (4, 3), rows sum to zero


@dataclass(eq=False, repr=False)
class TetMesh:
    """Conforming tetrahedral mesh with derived connectivity.

    vertices: (V, 3) float array
    tets: (T, 4) int array, positively oriented
    edges: (E, 2) int array of sorted vertex pairs, deduplicated
    tet_edges: (T, 6) indices into edges, following EDGE_VERTICES
    faces: (F, 3) int array of sorted vertex triples
    face_tets: (F, 2) adjacent tet ids (lower first), -1 on the boundary

    Instances are treated as immutable after construction; derived
    geometry is cached lazily and all queries are read-only.
    """

    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray = field(init=False)
    tet_edges: np.ndarray = field(init=False)
    faces: np.ndarray = field(init=False)
    face_tets: np.ndarray = field(init=False)
    boundary_vertex: np.ndarray = field(init=False)
    boundary_edge: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshError("tets must be a (T, 4) index array")
        self._orient()
        self._build_connectivity()
        self._geom_cache = None

    def _orient(self):
        """Swap two vertices of any negatively oriented tetrahedron."""
        e = self.vertices[self.tets[:, 1:]] - self.vertices[self.tets[:, :1]]
        flip = np.linalg.det(e) < 0
        self.tets[flip, 2], self.tets[flip, 3] = (
            self.tets[flip, 3].copy(),
            self.tets[flip, 2].copy(),
        )

    def _build_connectivity(self):
        t = self.tets
        raw_edges = np.sort(t[:, EDGE_VERTICES].reshape(-1, 2), axis=1)
        self.edges, edge_ids = np.unique(raw_edges, axis=0, return_inverse=True)
        self.tet_edges = edge_ids.reshape(-1, 6)

        raw_faces = np.sort(t[:, FACE_VERTICES].reshape(-1, 3), axis=1)
        self.faces, face_ids = np.unique(raw_faces, axis=0, return_inverse=True)
        counts = np.bincount(face_ids, minlength=len(self.faces))
        if counts.max() > 2:
            raise MeshError("non-manifold face shared by more than two tetrahedra")

        # adjacent tets per face, lower id in slot 0; stable sort keeps
        # tet ids increasing inside each face group
        tet_of_raw = np.repeat(np.arange(len(t)), 4)
        order = np.argsort(face_ids, kind="stable")
        grouped = tet_of_raw[order]
        first = np.searchsorted(face_ids[order], np.arange(len(self.faces)), side="left")
        self.face_tets = np.full((len(self.faces), 2), -1, dtype=np.int64)
        self.face_tets[:, 0] = grouped[first]
        two = counts == 2
        self.face_tets[two, 1] = grouped[first[two] + 1]

        boundary_faces = self.faces[counts == 1]
        self.boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_vertex[boundary_faces.ravel()] = True
        self.boundary_edge = np.zeros(len(self.edges), dtype=bool)
        if len(boundary_faces):
            bedges = np.sort(boundary_faces[:, [(0, 1), (0, 2), (1, 2)]].reshape(-1, 2), axis=1)
            nvert = len(self.vertices)
            keys = self.edges[:, 0] * nvert + self.edges[:, 1]  # sorted ascending
            bkeys = bedges[:, 0] * nvert + bedges[:, 1]
            self.boundary_edge[np.searchsorted(keys, bkeys)] = True

    # -- derived geometry, computed lazily and shared --------------------

    def _geometry_arrays(self):
        if self._geom_cache is None:
            e = self.vertices[self.tets[:, 1:]] - self.vertices[self.tets[:, :1]]
            det = np.linalg.det(e)
            if np.any(det <= 1e-300):
                bad = int(np.argmin(det))
                raise MeshError(
                    f"degenerate tetrahedron {bad} with signed volume {det[bad] / 6.0:g}"
                )
            vols = det / 6.0
            inv = np.linalg.inv(e)
            grads = np.empty((len(self.tets), 4, 3))
            grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
            grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
            corners = self.vertices[self.tets]
            diam = np.zeros(len(self.tets))
            for i in range(4):
                for j in range(i + 1, 4):
                    diam = np.maximum(diam, np.linalg.norm(corners[:, i] - corners[:, j], axis=1))
            self._geom_cache = (vols, diam, grads)
        return self._geom_cache

    @property
    def volumes(self):
        return self._geometry_arrays()[0]

    @property
    def diameters(self):
        return self._geometry_arrays()[1]

    @property
    def lambda_grads(self):
        """(T, 4, 3) barycentric coordinate gradients, constant per tet."""
        return self._geometry_arrays()[2]

    @property
    def h(self):
        """Mesh size: largest element diameter."""
        return float(self.diameters.max())

    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def barycentric(self, t, x):
        """Barycentric coordinates of physical points x (n, 3) in tet t."""
        g = self.lambda_grads[t]
        v0 = self.vertices[self.tets[t, 0]]
        lam = (np.atleast_2d(x) - v0) @ g.T
        lam[:, 0] += 1.0
        return lam


def element_geometry(mesh: TetMesh, t: int) -> ElementGeometry:
    """Volume, diameter and barycentric gradients of one tetrahedron."""
    if not 0 <= t < len(mesh.tets):
        raise IndexError(f"tet id {t} out of range")
    return ElementGeometry(
        volume=float(mesh.volumes[t]),
        diameter=float(mesh.diameters[t]),
        lambda_grads=mesh.lambda_grads[t].copy(),
    )


def build_box_mesh(bounds, n: int) -> TetMesh:
    """Kuhn triangulation of an axis-aligned box, 6 tets per subcube.

    bounds is ((x0, y0, z0), (x1, y1, z1)); n is the number of
    subdivisions per axis.  All six tetrahedra of a subcube share its
    main diagonal, and translated copies of the pattern agree on shared
    faces, so the mesh is conforming.
    """
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if np.any(hi - lo <= 0):
        raise MeshError(f"degenerate box with extents {tuple(hi - lo)}")
    if n < 1:
        raise MeshError(f"need at least one subdivision per axis, got n={n}")

    axes = [np.linspace(lo[k], hi[k], n + 1) for k in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    corner = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    base = corner[:n, :n, :n].ravel()
    steps = np.eye(3, dtype=int)
    stride = np.array([(n + 1) ** 2, n + 1, 1])
    tets = []
    for perm in permutations(range(3)):
        c0 = base
        c1 = c0 + stride @ steps[perm[0]]
        c2 = c1 + stride @ steps[perm[1]]
        c3 = c2 + stride @ steps[perm[2]]
        tets.append(np.column_stack([c0, c1, c2, c3]))
    # per-cube ordering: all 6 permutation tets of cube 0, then cube 1, ...
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    return TetMesh(vertices=vertices, tets=tets)


def uniform_refine(mesh: TetMesh) -> TetMesh:
    """Red refinement: each tetrahedron becomes 8 children.

    Four corner children are cut off at the edge midpoints; the inner
    octahedron is split into four tetrahedra along its shortest
    diagonal (ties broken by lowest global midpoint-index pair).
    Parent faces are always quadrisected the same way, so uniform
    application preserves conformity.
    """
    nv = len(mesh.vertices)
    midpoints = mesh.edge_midpoints()
    vertices = np.vstack([mesh.vertices, midpoints])
    t = mesh.tets
    m = mesh.tet_edges + nv
    nt = len(t)

    children = np.empty((nt, 8, 4), dtype=np.int64)
    corner_edges = ((0, (0, 1, 2)), (1, (0, 3, 4)), (2, (1, 3, 5)), (3, (2, 4, 5)))
    for k, (vloc, eloc) in enumerate(corner_edges):
        children[:, k, 0] = t[:, vloc]
        children[:, k, 1] = m[:, eloc[0]]
        children[:, k, 2] = m[:, eloc[1]]
        children[:, k, 3] = m[:, eloc[2]]

    diag_len = np.empty((nt, 3))
    pair_lo = np.empty((nt, 3), dtype=np.int64)
    pair_hi = np.empty((nt, 3), dtype=np.int64)
    for d, (ea, eb) in enumerate(_OPPOSITE_EDGE_PAIRS):
        diag_len[:, d] = np.linalg.norm(
            midpoints[mesh.tet_edges[:, ea]] - midpoints[mesh.tet_edges[:, eb]], axis=1
        )
        pair_lo[:, d] = np.minimum(m[:, ea], m[:, eb])
        pair_hi[:, d] = np.maximum(m[:, ea], m[:, eb])

    choice = np.zeros(nt, dtype=np.int64)
    for d in (1, 2):
        cur = (diag_len[np.arange(nt), choice], pair_lo[np.arange(nt), choice], pair_hi[np.arange(nt), choice])
        cand = (diag_len[:, d], pair_lo[:, d], pair_hi[:, d])
        better = (cand[0] < cur[0]) | (
            (cand[0] == cur[0])
            & ((cand[1] < cur[1]) | ((cand[1] == cur[1]) & (cand[2] < cur[2])))
        )
        choice[better] = d

    for d, (ea, eb) in enumerate(_OPPOSITE_EDGE_PAIRS):
        rows = choice == d
        cyc = _OCTA_CYCLES[d]
        for k in range(4):
            p, q = cyc[k], cyc[(k + 1) % 4]
            children[rows, 4 + k, 0] = m[rows, ea]
            children[rows, 4 + k, 1] = m[rows, eb]
            children[rows, 4 + k, 2] = m[rows, p]
            children[rows, 4 + k, 3] = m[rows, q]

    return TetMesh(vertices=vertices, tets=children.reshape(-1, 4))


def interior_faces(mesh: TetMesh):
    """Interior faces with adjacent tets, oriented normal, and diameter.

    Returns a list of tuples (face_vertex_ids, t_minus, t_plus, normal,
    h_e) where t_minus < t_plus and the unit normal points from t_minus
    into t_plus.
    """
    out = []
    fids = np.nonzero(mesh.face_tets[:, 1] >= 0)[0]
    if len(fids) == 0:
        return out
    fv = mesh.faces[fids]
    p = mesh.vertices[fv]
    normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    centroids = p.mean(axis=1)
    h_e = np.maximum(
        np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
        np.maximum(
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
        ),
    )
    t_minus = mesh.face_tets[fids, 0]
    # vertex of t_minus not on the face; flip the normal away from it
    tm_verts = mesh.tets[t_minus]
    for i in range(len(fids)):
        face_set = set(fv[i])
        opp = next(v for v in tm_verts[i] if v not in face_set)
        if normals[i] @ (mesh.vertices[opp] - centroids[i]) > 0:
            normals[i] = -normals[i]
        out.append(
            (fv[i].copy(), int(t_minus[i]), int(mesh.face_tets[fids[i], 1]), normals[i], float(h_e[i]))
        )
    return out


def write_vtk(path, mesh: TetMesh, point_data=None, cell_data=None, title="obstaclefem output"):
    """Write the mesh in legacy-VTK unstructured-grid text format."""
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(mesh.vertices)} double",
    ]
    for p in mesh.vertices:
        lines.append(f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}")
    nt = len(mesh.tets)
    lines.append(f"CELLS {nt} {5 * nt}")
    for t in mesh.tets:
        lines.append(f"4 {t[0]} {t[1]} {t[2]} {t[3]}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["10"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {len(mesh.vertices)}")
        for name, values in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.16g}" for v in values)
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, values in cell_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.16g}" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
