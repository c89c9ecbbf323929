"""Conforming P1 triangulations of the annulus and the square.

Meshes are immutable after construction.  Uniform (red) refinement keeps
the parent's vertices, so grids along a refinement sequence are nested;
on the annulus the new boundary vertices are snapped onto the circles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class MeshError(ValueError):
    """Invalid mesh parameters or a violated mesh invariant."""


class PointOutsideMeshError(MeshError):
    """Point location failed: the query point is not inside the mesh."""


@dataclass(frozen=True)
class AnnulusGeometry:
    inner_radius: float
    outer_radius: float


@dataclass
class TriMesh:
    """Triangulation with vertex coordinates, connectivity and boundary flags.

    Attributes
    ----------
    vertices : (n_v, 2) float array
    triangles : (n_t, 3) int array, counter-clockwise vertex triples
    boundary : (n_v,) bool array, True for vertices on the polygonal boundary
    parent : the mesh this one refines, or None
    geometry : AnnulusGeometry for curved-boundary snapping, or None
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    parent: Optional["TriMesh"] = None
    geometry: Optional[AnnulusGeometry] = None
    _cache: dict = field(default_factory=dict, repr=False)

    # -- basic queries -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def interior(self) -> np.ndarray:
        """Indices of interior (non-boundary) vertices."""
        key = "interior"
        if key not in self._cache:
            self._cache[key] = np.flatnonzero(~self.boundary)
        return self._cache[key]

    @property
    def h(self) -> float:
        """Maximum triangle diameter."""
        key = "h"
        if key not in self._cache:
            p = self.vertices[self.triangles]  # (n_t, 3, 2)
            e = np.stack(
                [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1
            )
            self._cache[key] = float(np.sqrt((e**2).sum(-1)).max())
        return self._cache[key]

    @property
    def areas(self) -> np.ndarray:
        """Signed triangle areas (positive for CCW orientation)."""
        key = "areas"
        if key not in self._cache:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache[key] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache[key]

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def basis_gradients(self) -> np.ndarray:
        """(n_t, 3, 2) constant gradients of the three P1 basis functions."""
        key = "basis_gradients"
        if key not in self._cache:
            p = self.vertices[self.triangles]
            x1, y1 = p[:, 0, 0], p[:, 0, 1]
            x2, y2 = p[:, 1, 0], p[:, 1, 1]
            x3, y3 = p[:, 2, 0], p[:, 2, 1]
            inv2a = 1.0 / (2.0 * self.areas)
            g = np.empty((self.n_triangles, 3, 2))
            g[:, 0, 0] = (y2 - y3) * inv2a
            g[:, 0, 1] = (x3 - x2) * inv2a
            g[:, 1, 0] = (y3 - y1) * inv2a
            g[:, 1, 1] = (x1 - x3) * inv2a
            g[:, 2, 0] = (y1 - y2) * inv2a
            g[:, 2, 1] = (x2 - x1) * inv2a
            self._cache[key] = g
        return self._cache[key]

    # -- invariants ----------------------------------------------------

    def validate(self) -> None:
        """Check orientation, duplicate vertices, edge manifoldness,
        boundary flags, and (when a parent exists) nestedness."""
        if np.any(self.areas <= 0.0):
            raise MeshError("non-positive triangle area (orientation broken)")
        order = np.lexsort((self.vertices[:, 1], self.vertices[:, 0]))
        v = self.vertices[order]
        close = np.all(np.abs(np.diff(v, axis=0)) < 1e-12, axis=1)
        if np.any(close):
            raise MeshError("duplicate vertices within 1e-12")
        counts = _edge_counts(self.triangles)
        if np.any((counts != 1) & (counts != 2)):
            raise MeshError("edge shared by more than two triangles")
        on_bnd = np.zeros(self.n_vertices, dtype=bool)
        edges = _all_edges(self.triangles)
        bnd_edges = edges[counts == 1]
        on_bnd[bnd_edges.ravel()] = True
        if not np.array_equal(on_bnd, self.boundary):
            raise MeshError("boundary flags inconsistent with single-triangle edges")
        if self.parent is not None:
            self._check_nested()

    def _check_nested(self) -> None:
        idx = _match_vertices(self.parent.vertices, self.vertices)
        if np.any(idx < 0):
            raise MeshError("parent vertices missing from refined mesh")


def _all_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    return np.sort(e, axis=1)


def _edge_counts(triangles: np.ndarray) -> np.ndarray:
    edges = _all_edges(triangles)
    _, inv, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
    return counts[inv]


def _match_vertices(coarse: np.ndarray, fine: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """For each coarse vertex, the index of the matching fine vertex or -1."""
    from scipy.spatial import cKDTree

    tree = cKDTree(fine)
    dist, idx = tree.query(coarse)
    idx = np.asarray(idx)
    idx[dist > tol] = -1
    return idx


# -- constructors ------------------------------------------------------


def make_annulus_mesh(
    inner_radius: float, outer_radius: float, n_rings: int, n_sectors: int
) -> TriMesh:
    """Structured polar mesh of the annulus ``inner_radius < r < outer_radius``.

    ``n_rings`` radial layers and ``n_sectors`` angular sectors; every quad
    is split into two triangles.  Ring vertices at the two extreme radii lie
    exactly on the circles.
    """
    if not (0.0 < inner_radius < outer_radius):
        raise MeshError("need 0 < inner_radius < outer_radius")
    if n_rings < 2 or n_sectors < 8:
        raise MeshError("need n_rings >= 2 and n_sectors >= 8")

    radii = np.linspace(inner_radius, outer_radius, n_rings + 1)
    angles = 2.0 * np.pi * np.arange(n_sectors) / n_sectors
    rr, aa = np.meshgrid(radii, angles, indexing="ij")
    vertices = np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])

    def vid(ring, sector):
        return ring * n_sectors + (sector % n_sectors)

    tris = []
    for i in range(n_rings):
        for j in range(n_sectors):
            a = vid(i, j)
            b = vid(i, j + 1)
            c = vid(i + 1, j)
            d = vid(i + 1, j + 1)
            # CCW: inner edge, outward, then back along the next spoke
            tris.append((a, c, d))
            tris.append((a, d, b))
    triangles = np.asarray(tris, dtype=np.int64)

    boundary = np.zeros(vertices.shape[0], dtype=bool)
    boundary[: n_sectors] = True
    boundary[n_rings * n_sectors :] = True

    mesh = TriMesh(
        vertices=vertices,
        triangles=triangles,
        boundary=boundary,
        geometry=AnnulusGeometry(inner_radius, outer_radius),
    )
    mesh.validate()
    return mesh


def make_square_mesh(n: int) -> TriMesh:
    """Uniform mesh of the square [-1, 1]^2 with n cells per direction,
    each cell split into two right triangles."""
    if n < 2 or n % 2 != 0:
        raise MeshError("need even n >= 2")
    coords = np.linspace(-1.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    triangles = np.asarray(tris, dtype=np.int64)

    boundary = (
        (np.abs(vertices[:, 0]) > 1.0 - 1e-14) | (np.abs(vertices[:, 1]) > 1.0 - 1e-14)
    )
    mesh = TriMesh(vertices=vertices, triangles=triangles, boundary=boundary)
    mesh.validate()
    return mesh


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Red refinement: split every triangle into four by edge midpoints.

    On an annulus the midpoints of boundary edges are snapped onto the
    respective circle so the polygonal boundary keeps approaching it.
    """
    n_v = mesh.n_vertices
    edges = _all_edges(mesh.triangles)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    midpoints = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])

    both_bnd = mesh.boundary[uniq[:, 0]] & mesh.boundary[uniq[:, 1]]
    counts = np.bincount(inv, minlength=uniq.shape[0])
    bnd_edge = both_bnd & (counts == 1)

    if mesh.geometry is not None:
        geo = mesh.geometry
        r = np.sqrt((midpoints**2).sum(1))
        r_end = np.sqrt((mesh.vertices[uniq[:, 0]] ** 2).sum(1))
        for target in (geo.inner_radius, geo.outer_radius):
            snap = bnd_edge & (np.abs(r_end - target) < 1e-9 * max(1.0, target))
            midpoints[snap] *= (target / r[snap])[:, None]

    vertices = np.vstack([mesh.vertices, midpoints])

    t = mesh.triangles
    # midpoint vertex ids for the three edges (01, 12, 20) of each triangle
    n_t = mesh.n_triangles
    m01 = n_v + inv[0 * n_t : 1 * n_t]
    m12 = n_v + inv[1 * n_t : 2 * n_t]
    m20 = n_v + inv[2 * n_t : 3 * n_t]
    tris = np.concatenate(
        [
            np.column_stack([t[:, 0], m01, m20]),
            np.column_stack([m01, t[:, 1], m12]),
            np.column_stack([m20, m12, t[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ]
    )

    boundary = np.zeros(vertices.shape[0], dtype=bool)
    boundary[:n_v] = mesh.boundary
    boundary[n_v:] = bnd_edge

    fine = TriMesh(
        vertices=vertices,
        triangles=tris.astype(np.int64),
        boundary=boundary,
        parent=mesh,
        geometry=mesh.geometry,
    )
    fine.validate()
    return fine


# -- point location ----------------------------------------------------


def locate_point(mesh: TriMesh, x, tol: float = 1e-10):
    """Find the triangle containing point ``x`` and its barycentric coords.

    Uses a KD-tree over triangle centroids to order candidates; falls back
    to a full scan before giving up.
    """
    x = np.asarray(x, dtype=float)
    key = "centroid_tree"
    if key not in self_cache(mesh):
        from scipy.spatial import cKDTree

        centroids = mesh.vertices[mesh.triangles].mean(axis=1)
        mesh._cache[key] = cKDTree(centroids)
    tree = mesh._cache[key]

    k = min(32, mesh.n_triangles)
    _, cand = tree.query(x, k=k)
    cand = np.atleast_1d(cand)
    hit = _scan(mesh, x, cand, tol)
    if hit is None:
        hit = _scan(mesh, x, np.arange(mesh.n_triangles), tol)
    if hit is None:
        raise PointOutsideMeshError(f"point {x.tolist()} outside mesh")
    return hit


def self_cache(mesh: TriMesh) -> dict:
    return mesh._cache


def _scan(mesh, x, candidates, tol):
    p = mesh.vertices[mesh.triangles[candidates]]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    rx = x[0] - p[:, 0, 0]
    ry = x[1] - p[:, 0, 1]
    l2 = (rx * d2[:, 1] - ry * d2[:, 0]) / det
    l3 = (ry * d1[:, 0] - rx * d1[:, 1]) / det
    l1 = 1.0 - l2 - l3
    ok = (l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    i = idx[0]
    return int(candidates[i]), np.array([l1[i], l2[i], l3[i]])


def _locate_clamped(mesh: TriMesh, x):
    """Like locate_point but projects points slightly outside the polygon
    (e.g. snapped circle vertices of a refined annulus) onto the closest
    triangle."""
    try:
        return locate_point(mesh, x, tol=1e-9)
    except PointOutsideMeshError:
        pass
    tree = self_cache(mesh).get("centroid_tree")
    k = min(32, mesh.n_triangles)
    _, cand = tree.query(np.asarray(x, dtype=float), k=k)
    best_t, best_lam, best_score = -1, None, -np.inf
    for t in np.atleast_1d(cand):
        hit = _scan(mesh, np.asarray(x, dtype=float), np.array([t]), tol=np.inf)
        _, lam = hit
        score = lam.min()
        if score > best_score:
            best_t, best_lam, best_score = int(t), lam, score
    lam = np.clip(best_lam, 0.0, None)
    lam /= lam.sum()
    return best_t, lam


def interpolate_to(mesh_from: TriMesh, coeffs: np.ndarray, mesh_to: TriMesh) -> np.ndarray:
    """Nodal P1 interpolation of ``coeffs`` on ``mesh_from`` at the vertices
    of ``mesh_to``.  Exact on shared (nested) vertices."""
    out = np.empty(mesh_to.n_vertices)
    for i, x in enumerate(mesh_to.vertices):
        t, lam = _locate_clamped(mesh_from, x)
        out[i] = coeffs[mesh_from.triangles[t]] @ lam
    return out


def write_mesh_vtk(path, mesh: TriMesh) -> None:
    """Dump the mesh as VTK legacy ASCII (unstructured grid, cell type 5)."""
    from .diagnostics import write_field_vtk

    write_field_vtk(path, mesh, {})
