"""Triangulations of rectangular study regions and the linear operators built on them.

A :class:`Mesh` carries node coordinates and counter-clockwise triangles.  From it
we derive the P1 finite-element matrices, median-dual integration weights and the
sparse projection matrices that map nodal weights to point values, areal
averages and prediction grids.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import shapely
from scipy.spatial import cKDTree

from .errors import ConfigurationError, GeometryError, InputError, OutOfDomainError

# relative tolerance used for on-boundary / on-grid-line decisions
_EPS = 1e-9


def _check_bbox(bbox) -> tuple[float, float, float, float]:
    try:
        x0, y0, x1, y1 = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise ConfigurationError(f"bbox must be (x0, y0, x1, y1), got {bbox!r}")
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        raise ConfigurationError(f"bbox has non-finite coordinates: {bbox!r}")
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError(f"degenerate bbox {bbox!r}")
    return x0, y0, x1, y1


@dataclass(frozen=True)
class Lattice:
    """Regular node lattice backing a structured mesh (enables O(1) point location)."""

    x0: float
    y0: float
    hx: float
    hy: float
    ncx: int
    ncy: int


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    domain_bbox: tuple[float, float, float, float]
    extension_width: float = 0.0
    lattice: Lattice | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise GeometryError("nodes must be an (m, 2) array")
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise GeometryError("triangles must be a (t, 3) integer array")
        if tri.size and (tri.min() < 0 or tri.max() >= len(nodes)):
            bad = np.flatnonzero((tri < 0).any(1) | (tri >= len(nodes)).any(1))
            raise GeometryError(f"triangle {int(bad[0])} references a missing node")
        nodes.setflags(write=False)
        tri.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "domain_bbox", _check_bbox(self.domain_bbox))
        object.__setattr__(self, "_cache", {})

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def extended_bbox(self) -> tuple[float, float, float, float]:
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def fem(self) -> "FemMatrices":
        if "fem" not in self._cache:
            self._cache["fem"] = assemble_fem(self)
        return self._cache["fem"]

    def dual(self) -> "DualWeights":
        if "dual" not in self._cache:
            self._cache["dual"] = dual_weights(self)
        return self._cache["dual"]


def orient_triangles(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Return ``triangles`` with every row reordered counter-clockwise."""
    tri = np.array(triangles, dtype=np.int64, copy=True)
    p = np.asarray(nodes, dtype=float)[tri]
    a2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (
        p[:, 1, 1] - p[:, 0, 1]
    )
    flip = a2 < 0
    tri[flip, 1], tri[flip, 2] = tri[flip, 2].copy(), tri[flip, 1].copy()
    return tri


def build_structured_mesh(bbox, target_edge: float, extension_factor: float = 0.2) -> Mesh:
    """Criss-cross triangulation of ``bbox`` widened by ``extension_factor * max(w, h)``.

    Each lattice cell is split in two along a diagonal whose direction
    alternates in a checkerboard pattern.  Lattice spacing never exceeds
    ``target_edge``.
    """
    x0, y0, x1, y1 = _check_bbox(bbox)
    if not (target_edge > 0 and math.isfinite(target_edge)):
        raise ConfigurationError(f"target_edge must be positive, got {target_edge}")
    if not (extension_factor >= 0 and math.isfinite(extension_factor)):
        raise ConfigurationError(f"extension_factor must be >= 0, got {extension_factor}")

    ext = extension_factor * max(x1 - x0, y1 - y0)
    X0, Y0, X1, Y1 = x0 - ext, y0 - ext, x1 + ext, y1 + ext
    ncx = max(1, math.ceil((X1 - X0) / target_edge - 1e-9))
    ncy = max(1, math.ceil((Y1 - Y0) / target_edge - 1e-9))
    hx = (X1 - X0) / ncx
    hy = (Y1 - Y0) / ncy

    gx = X0 + hx * np.arange(ncx + 1)
    gy = Y0 + hy * np.arange(ncy + 1)
    gx[-1], gy[-1] = X1, Y1
    xx, yy = np.meshgrid(gx, gy)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(ncx), np.arange(ncy))
    i, j = i.ravel(), j.ravel()
    n00 = j * (ncx + 1) + i
    n10 = n00 + 1
    n01 = n00 + ncx + 1
    n11 = n01 + 1
    even = (i + j) % 2 == 0
    tri = np.empty((len(i), 2, 3), dtype=np.int64)
    tri[even, 0] = np.column_stack([n00, n10, n11])[even]
    tri[even, 1] = np.column_stack([n00, n11, n01])[even]
    tri[~even, 0] = np.column_stack([n00, n10, n01])[~even]
    tri[~even, 1] = np.column_stack([n10, n11, n01])[~even]

    return Mesh(
        nodes=nodes,
        triangles=tri.reshape(-1, 3),
        domain_bbox=(x0, y0, x1, y1),
        extension_width=ext,
        lattice=Lattice(X0, Y0, hx, hy, ncx, ncy),
    )


# ---------------------------------------------------------------------------
# finite elements


@dataclass(frozen=True, eq=False)
class FemMatrices:
    mass_C: sp.csr_matrix
    mass_lumped: np.ndarray
    stiffness_G: sp.csr_matrix


def assemble_fem(mesh: Mesh) -> FemMatrices:
    """Standard P1 consistent mass, lumped mass and stiffness matrices."""
    tri = mesh.triangles
    p = mesh.nodes[tri]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (
        p[:, 1, 1] - p[:, 0, 1]
    )
    scale = np.abs(area2).max() if len(area2) else 1.0
    degenerate = np.flatnonzero(np.abs(area2) <= 1e-14 * scale)
    if degenerate.size:
        k = int(degenerate[0])
        raise GeometryError(f"triangle {k} {tuple(int(v) for v in tri[k])} has zero area")
    area = 0.5 * np.abs(area2)

    # basis gradients: grad phi_i = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2A)
    nxt = [1, 2, 0]
    prv = [2, 0, 1]
    grad = np.empty((len(tri), 3, 2))
    grad[:, :, 0] = (p[:, nxt, 1] - p[:, prv, 1]) / area2[:, None]
    grad[:, :, 1] = (p[:, prv, 0] - p[:, nxt, 0]) / area2[:, None]
    k_loc = area[:, None, None] * np.einsum("tid,tjd->tij", grad, grad)
    m_loc = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    m = mesh.n_nodes
    C = sp.csr_matrix((m_loc.ravel(), (rows, cols)), shape=(m, m))
    G = sp.csr_matrix((k_loc.ravel(), (rows, cols)), shape=(m, m))
    C = (C + C.T) * 0.5
    G = (G + G.T) * 0.5
    return FemMatrices(mass_C=C.tocsr(), mass_lumped=np.asarray(C.sum(axis=1)).ravel(), stiffness_G=G.tocsr())


# ---------------------------------------------------------------------------
# dual cells


@dataclass(frozen=True, eq=False)
class DualWeights:
    weights: np.ndarray
    integration_points: np.ndarray


def _median_dual_pieces(mesh: Mesh) -> np.ndarray:
    """Quadrilaterals (node, edge midpoint, centroid, edge midpoint) per triangle corner.

    Returned shape is (t, 3, 4, 2); piece [t, k] belongs to node ``triangles[t, k]``.
    """
    p = mesh.nodes[mesh.triangles]
    cen = p.mean(axis=1)
    pieces = np.empty((len(p), 3, 4, 2))
    for k in range(3):
        a, b, c = p[:, k], p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        pieces[:, k, 0] = a
        pieces[:, k, 1] = 0.5 * (a + b)
        pieces[:, k, 2] = cen
        pieces[:, k, 3] = 0.5 * (a + c)
    return pieces


def dual_weights(mesh: Mesh, clip_to=None) -> DualWeights:
    """Median-dual cell areas of every node, clipped to ``clip_to`` (default: domain bbox)."""
    cx0, cy0, cx1, cy1 = _check_bbox(mesh.domain_bbox if clip_to is None else clip_to)
    ex0, ey0, ex1, ey1 = mesh.extended_bbox
    tol = _EPS * max(ex1 - ex0, ey1 - ey0)
    if cx0 < ex0 - tol or cy0 < ey0 - tol or cx1 > ex1 + tol or cy1 > ey1 + tol:
        raise GeometryError("clip_to must lie inside the mesh's extended bbox")

    pieces = _median_dual_pieces(mesh)
    flat = pieces.reshape(-1, 4, 2)
    owner = mesh.triangles.reshape(-1)
    piece_area = np.repeat(np.abs(mesh.signed_areas()) / 3.0, 3)

    lo = flat.min(axis=1)
    hi = flat.max(axis=1)
    inside = (lo[:, 0] >= cx0) & (lo[:, 1] >= cy0) & (hi[:, 0] <= cx1) & (hi[:, 1] <= cy1)
    outside = (hi[:, 0] <= cx0) | (hi[:, 1] <= cy0) | (lo[:, 0] >= cx1) | (lo[:, 1] >= cy1)
    straddle = ~(inside | outside)

    area = np.where(inside, piece_area, 0.0)
    if straddle.any():
        polys = shapely.polygons(flat[straddle])
        area[straddle] = shapely.area(shapely.intersection(polys, shapely.box(cx0, cy0, cx1, cy1)))
    w = np.bincount(owner, weights=area, minlength=mesh.n_nodes)
    return DualWeights(weights=w, integration_points=mesh.nodes.copy())


# ---------------------------------------------------------------------------
# projections


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    A: sp.csr_matrix
    kind: str
    warnings: list = field(default_factory=list)

    @property
    def shape(self):
        return self.A.shape


def _locate_lattice(mesh: Mesh, pts: np.ndarray):
    L = mesh.lattice
    fx = (pts[:, 0] - L.x0) / L.hx
    fy = (pts[:, 1] - L.y0) / L.hy
    i = np.clip(np.floor(fx).astype(np.int64), 0, L.ncx - 1)
    j = np.clip(np.floor(fy).astype(np.int64), 0, L.ncy - 1)
    u = np.clip(fx - i, 0.0, 1.0)
    v = np.clip(fy - j, 0.0, 1.0)
    n00 = j * (L.ncx + 1) + i
    n10 = n00 + 1
    n01 = n00 + L.ncx + 1
    n11 = n01 + 1
    even = (i + j) % 2 == 0

    idx = np.empty((len(pts), 3), dtype=np.int64)
    lam = np.empty((len(pts), 3))
    # even cells: diagonal n00-n11
    a = even & (u >= v)
    idx[a] = np.column_stack([n00, n10, n11])[a]
    lam[a] = np.column_stack([1 - u, u - v, v])[a]
    b = even & (u < v)
    idx[b] = np.column_stack([n00, n11, n01])[b]
    lam[b] = np.column_stack([1 - v, u, v - u])[b]
    # odd cells: diagonal n10-n01
    c = ~even & (u + v <= 1)
    idx[c] = np.column_stack([n00, n10, n01])[c]
    lam[c] = np.column_stack([1 - u - v, u, v])[c]
    d = ~even & (u + v > 1)
    idx[d] = np.column_stack([n10, n11, n01])[d]
    lam[d] = np.column_stack([1 - v, u + v - 1, 1 - u])[d]
    return idx, lam


def _barycentric(p: np.ndarray, tri_pts: np.ndarray) -> np.ndarray:
    a, b, c = tri_pts[..., 0, :], tri_pts[..., 1, :], tri_pts[..., 2, :]
    det = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1])
    l1 = ((p[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (c[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1])) / det
    l2 = ((b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) - (p[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1])) / det
    return np.stack([1 - l1 - l2, l1, l2], axis=-1)


def _locate_generic(mesh: Mesh, pts: np.ndarray):
    tri = mesh.triangles
    tri_pts = mesh.nodes[tri]
    if "tree" not in mesh._cache:
        mesh._cache["tree"] = cKDTree(mesh.centroids())
    tree = mesh._cache["tree"]
    tol = 1e-10
    idx = np.full((len(pts), 3), -1, dtype=np.int64)
    lam = np.zeros((len(pts), 3))
    found = np.zeros(len(pts), dtype=bool)
    k = min(16, len(tri))
    _, cand = tree.query(pts, k=k)
    cand = np.asarray(cand).reshape(len(pts), k)
    for c in range(k):
        todo = np.flatnonzero(~found)
        if not todo.size:
            break
        t = cand[todo, c]
        bc = _barycentric(pts[todo], tri_pts[t])
        ok = (bc >= -tol).all(axis=1)
        hit = todo[ok]
        idx[hit] = tri[t[ok]]
        lam[hit] = bc[ok]
        found[hit] = True
    for r in np.flatnonzero(~found):
        bc = _barycentric(pts[r][None, :], tri_pts)
        ok = np.flatnonzero((bc >= -tol).all(axis=1))
        if ok.size:
            idx[r] = tri[ok[0]]
            lam[r] = bc[ok[0]]
            found[r] = True
    return idx, lam, found


def project_points(mesh: Mesh, locations, kind: str = "point-barycentric") -> ProjectionMatrix:
    """Barycentric interpolation matrix: row i evaluates the P1 basis at location i."""
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    m = mesh.n_nodes
    if not len(pts):
        return ProjectionMatrix(sp.csr_matrix((0, m)), kind)
    if not np.isfinite(pts).all():
        bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
        raise OutOfDomainError(f"non-finite locations at rows {bad[:10].tolist()}", bad)

    if mesh.lattice is not None:
        ex0, ey0, ex1, ey1 = mesh.extended_bbox
        tol = _EPS * max(ex1 - ex0, ey1 - ey0)
        out = (pts[:, 0] < ex0 - tol) | (pts[:, 0] > ex1 + tol) | (pts[:, 1] < ey0 - tol) | (pts[:, 1] > ey1 + tol)
        if out.any():
            bad = np.flatnonzero(out)
            raise OutOfDomainError(f"{bad.size} location(s) outside the mesh, rows {bad[:10].tolist()}", bad)
        idx, lam = _locate_lattice(mesh, pts)
    else:
        idx, lam, found = _locate_generic(mesh, pts)
        if not found.all():
            bad = np.flatnonzero(~found)
            raise OutOfDomainError(f"{bad.size} location(s) outside the mesh, rows {bad[:10].tolist()}", bad)

    lam = np.clip(lam, 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(len(pts)), 3)
    A = sp.csr_matrix((lam.ravel(), (rows, idx.ravel())), shape=(len(pts), m))
    A.eliminate_zeros()
    return ProjectionMatrix(A, kind)


def grid_centres(bbox, nx: int, ny: int | None = None) -> np.ndarray:
    """Cell centres of an ``nx`` x ``ny`` regular grid over ``bbox`` (row-major, y outer)."""
    ny = nx if ny is None else ny
    x0, y0, x1, y1 = _check_bbox(bbox)
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    xx, yy = np.meshgrid(xs, ys)
    return np.column_stack([xx.ravel(), yy.ravel()])


def project_grid(mesh: Mesh, bbox, nx: int, ny: int | None = None) -> ProjectionMatrix:
    return project_points(mesh, grid_centres(bbox, nx, ny), kind="prediction-grid")


@dataclass(frozen=True)
class AreaGrid:
    """``nx`` x ``ny`` rectangular cells over ``bbox``; cell id = iy * nx + ix."""

    nx: int
    ny: int
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ConfigurationError("area grid needs nx, ny >= 1")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "bbox", _check_bbox(self.bbox))

    def __len__(self):
        return self.nx * self.ny

    def cell_bounds(self) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        dx = (x1 - x0) / self.nx
        dy = (y1 - y0) / self.ny
        iy, ix = np.divmod(np.arange(len(self)), self.nx)
        return np.column_stack([x0 + ix * dx, y0 + iy * dy, x0 + (ix + 1) * dx, y0 + (iy + 1) * dy])

    def assign(self, pts: np.ndarray) -> np.ndarray:
        """Cell id per point, -1 outside.

        Points on a line shared by two cells go to the cell with the smaller index.
        """
        x0, y0, x1, y1 = self.bbox
        tx = (pts[:, 0] - x0) / ((x1 - x0) / self.nx)
        ty = (pts[:, 1] - y0) / ((y1 - y0) / self.ny)
        ix = np.ceil(tx - _EPS).astype(np.int64) - 1
        iy = np.ceil(ty - _EPS).astype(np.int64) - 1
        ix = np.where((ix == -1) & (tx >= -_EPS), 0, ix)
        iy = np.where((iy == -1) & (ty >= -_EPS), 0, iy)
        ok = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny) & (tx <= self.nx + _EPS) & (ty <= self.ny + _EPS)
        return np.where(ok, iy * self.nx + ix, -1)

    def polygons(self) -> list:
        return [shapely.box(*b) for b in self.cell_bounds()]


def _as_geometry(area):
    if isinstance(area, shapely.Geometry):
        return area
    a = np.asarray(area, dtype=float)
    if a.shape == (4,):
        return shapely.box(*_check_bbox(a))
    if a.ndim == 2 and a.shape[1] == 2 and len(a) >= 3:
        return shapely.Polygon(a)
    raise InputError(f"cannot interpret area {area!r} as a rectangle or polygon")


def project_areas(mesh: Mesh, areas) -> ProjectionMatrix:
    """Equal-weight averaging rows: each mesh node inside an area gets 1 / (#nodes inside).

    ``areas`` is an :class:`AreaGrid` (grid cells partition nodes, ties to the
    lower cell index) or a sequence of rectangles ``(x0, y0, x1, y1)`` /
    shapely polygons (closed-set membership).  An area holding no node falls
    back to its nearest node (to the centroid) with a warning.
    """
    m = mesh.n_nodes
    nodes = mesh.nodes
    scale = max(np.ptp(nodes[:, 0]), np.ptp(nodes[:, 1]), 1e-300)
    members: list[np.ndarray]
    if isinstance(areas, AreaGrid):
        cell = areas.assign(nodes)
        order = np.argsort(cell, kind="stable")
        counts = np.bincount(cell[cell >= 0], minlength=len(areas))
        starts = np.searchsorted(cell[order], np.arange(len(areas)))
        members = [order[s : s + c] for s, c in zip(starts, counts)]
        geoms = areas.polygons()
    else:
        geoms = [_as_geometry(a) for a in areas]
        pts = shapely.points(nodes)
        members = [np.flatnonzero(shapely.dwithin(g, pts, _EPS * scale)) for g in geoms]

    rows, cols, vals, notes = [], [], [], []
    for j, (g, mem) in enumerate(zip(geoms, members)):
        if mem.size == 0:
            c = np.asarray(g.centroid.coords[0])
            k = int(np.argmin(((nodes - c) ** 2).sum(axis=1)))
            msg = f"area {j} contains no mesh node; using nearest node {k} to its centroid"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
            mem = np.array([k])
        rows.append(np.full(mem.size, j))
        cols.append(np.sort(mem))
        vals.append(np.full(mem.size, 1.0 / mem.size))
    n = len(geoms)
    if n:
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, m))
    else:
        A = sp.csr_matrix((0, m))
    return ProjectionMatrix(A, "areal-average", notes)


# ---------------------------------------------------------------------------
# plain-text I/O


def write_mesh(path, mesh: Mesh) -> None:
    lines = [f"{mesh.n_nodes} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, domain_bbox=None) -> Mesh:
    """Read the ``m t`` / ``x y`` / ``i j k`` text format (0-based indices)."""
    path = Path(path)
    raw = [ln.split() for ln in path.read_text().splitlines()]
    rows = [(n + 1, r) for n, r in enumerate(raw) if r]
    if not rows:
        raise InputError(f"{path}: empty mesh file")
    lineno, head = rows[0]
    try:
        m, t = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise InputError(f"{path}:{lineno}: header must be 'm t'")
    if len(rows) < 1 + m + t:
        raise InputError(f"{path}: expected {m} node and {t} triangle lines, found {len(rows) - 1}")
    nodes = np.empty((m, 2))
    tri = np.empty((t, 3), dtype=np.int64)
    for k in range(m):
        lineno, r = rows[1 + k]
        try:
            nodes[k] = [float(r[0]), float(r[1])]
        except (ValueError, IndexError):
            raise InputError(f"{path}:{lineno}: expected 'x y'")
    for k in range(t):
        lineno, r = rows[1 + m + k]
        try:
            tri[k] = [int(r[0]), int(r[1]), int(r[2])]
        except (ValueError, IndexError):
            raise InputError(f"{path}:{lineno}: expected 'i j k'")
    if domain_bbox is None:
        domain_bbox = (nodes[:, 0].min(), nodes[:, 1].min(), nodes[:, 0].max(), nodes[:, 1].max())
    return Mesh(nodes=nodes, triangles=orient_triangles(nodes, tri), domain_bbox=domain_bbox)


def read_area_geometry(path):
    """Parse an area geometry file.

    Either a single grid spec ``nx ny x0 y0 x1 y1`` (whitespace or comma
    separated) returning an :class:`AreaGrid`, or polygon lines
    ``id: x1 y1 x2 y2 ...`` returning ``(ids, polygons)``.
    """
    path = Path(path)
    lines = [(n + 1, ln.strip()) for n, ln in enumerate(path.read_text().splitlines())]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise InputError(f"{path}: empty geometry file")
    first = lines[0][1]
    if ":" not in first:
        toks = first.replace(",", " ").split()
        if len(toks) != 6:
            raise InputError(f"{path}:{lines[0][0]}: grid spec must be 'nx ny x0 y0 x1 y1'")
        try:
            nx, ny = int(toks[0]), int(toks[1])
            bbox = tuple(float(v) for v in toks[2:])
        except ValueError:
            raise InputError(f"{path}:{lines[0][0]}: grid spec must be 'nx ny x0 y0 x1 y1'")
        return AreaGrid(nx, ny, bbox)
    ids, polys = [], []
    for n, ln in lines:
        key, _, rest = ln.partition(":")
        try:
            xy = np.array([float(v) for v in rest.replace(",", " ").split()]).reshape(-1, 2)
        except ValueError:
            raise InputError(f"{path}:{n}: polygon coordinates must be numbers")
        if len(xy) < 3:
            raise InputError(f"{path}:{n}: polygon needs at least 3 vertices")
        ids.append(key.strip())
        polys.append(shapely.Polygon(xy))
    return ids, polys


def write_area_geometry(path, areas) -> None:
    if isinstance(areas, AreaGrid):
        x0, y0, x1, y1 = areas.bbox
        Path(path).write_text(f"{areas.nx} {areas.ny} {x0!r} {y0!r} {x1!r} {y1!r}\n")
        return
    ids, polys = areas
    out = []
    for i, g in zip(ids, polys):
        xy = np.asarray(g.exterior.coords)[:-1]
        out.append(f"{i}: " + " ".join(f"{v!r}" for v in xy.ravel().tolist()))
    Path(path).write_text("\n".join(out) + "\n")
