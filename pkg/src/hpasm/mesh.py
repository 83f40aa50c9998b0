"""Conforming triangulations, affine element maps, test-problem geometries
and the plain-text mesh format.

Reference triangle is fixed to (-1,-1), (1,-1), (-1,1). Local edge ``k``
of a triangle is the edge opposite local vertex ``k``, running from local
vertex ``(k+1) % 3`` to ``(k+2) % 3``. Global edges are stored as
``(lo, hi)`` vertex pairs, which fixes their orientation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

TAGS = ("dirichlet", "neumann", "free")
_TAG_ALIASES = {"d": "dirichlet", "n": "neumann", "f": "free",
                "dirichlet": "dirichlet", "neumann": "neumann", "free": "free"}
_TAG_LETTERS = {"dirichlet": "d", "neumann": "n", "free": "f"}

REFERENCE_VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
REFERENCE_AREA = 2.0


class MeshError(ValueError):
    """Raised for invalid, non-conforming or malformed meshes."""


def normalize_tag(tag: str) -> str:
    try:
        return _TAG_ALIASES[tag.strip().lower()]
    except KeyError:
        raise MeshError(f"unknown boundary tag {tag!r}") from None


@dataclass(frozen=True)
class AffineMap:
    """x = translation + jacobian @ (xhat + 1), i.e. F(-1,-1) = first vertex."""

    jacobian: np.ndarray
    translation: np.ndarray
    det: float
    area: float

    @property
    def inverse_jacobian(self) -> np.ndarray:
        return np.linalg.inv(self.jacobian)

    def __call__(self, xhat: np.ndarray) -> np.ndarray:
        xhat = np.asarray(xhat, dtype=float)
        return self.translation + (xhat + 1.0) @ self.jacobian.T


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tags: dict = field(repr=False)
    patches: tuple = field(repr=False)
    edge_elements: tuple = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def boundary_edges(self):
        return sorted(self.edge_tags)

    def interior_edges(self):
        return [e for e in range(self.n_edges) if e not in self.edge_tags]

    def edges_with_tag(self, tag: str):
        tag = normalize_tag(tag)
        return sorted(e for e, t in self.edge_tags.items() if t == tag)

    def vertex_edges(self, a: int):
        """Edges incident to vertex ``a``."""
        return sorted({int(e) for K in self.patches[a] for e in self.tri_edges[K]
                       if a in self.edges[e]})

    def dirichlet_vertices(self) -> np.ndarray:
        d = self.edges_with_tag("dirichlet")
        if not d:
            return np.zeros(0, dtype=int)
        return np.unique(self.edges[d].ravel())

    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * _cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def diameters(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        lengths = np.linalg.norm(v - np.roll(v, -1, axis=1), axis=2)
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters().max())

    def shape_regularity(self) -> float:
        """Largest circumradius / inradius ratio over the elements (2 for equilateral)."""
        v = self.vertices[self.triangles]
        a, b, c = (np.linalg.norm(v[:, (k + 1) % 3] - v[:, (k + 2) % 3], axis=1)
                   for k in range(3))
        area = self.areas()
        s = 0.5 * (a + b + c)
        circum = a * b * c / (4.0 * area)
        inr = area / s
        return float((circum / inr).max())

    def translated(self, shift) -> "Mesh":
        shift = np.asarray(shift, dtype=float)
        tags = {tuple(int(i) for i in self.edges[e]): t for e, t in self.edge_tags.items()}
        return build_connectivity(self.vertices + shift, self.triangles, tags)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def build_connectivity(vertices, triangles, boundary_tags) -> Mesh:
    """Validate a raw triangulation and derive edges, patches and edge-element lists.

    ``boundary_tags`` maps vertex pairs ``(i, j)`` (either order) to a tag, or is
    an iterable of ``(i, j, tag)`` triples.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (n, 3) array")
    nv = len(vertices)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
        raise MeshError("triangle vertex index out of range")

    v = vertices[triangles]
    signed = 0.5 * _cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    scale = max(np.ptp(vertices, axis=0).max(), 1.0) ** 2 if nv else 1.0
    bad = np.flatnonzero(signed <= 1e-14 * scale)
    if bad.size:
        raise MeshError(f"inverted or degenerate triangle(s): {bad.tolist()}")

    edge_index: dict[tuple[int, int], int] = {}
    edges = []
    tri_edges = np.empty_like(triangles)
    edge_elements: list[list[int]] = []
    for K, tri in enumerate(triangles):
        for k in range(3):
            i, j = int(tri[(k + 1) % 3]), int(tri[(k + 2) % 3])
            key = (i, j) if i < j else (j, i)
            e = edge_index.get(key)
            if e is None:
                e = edge_index[key] = len(edges)
                edges.append(key)
                edge_elements.append([])
            edge_elements[e].append(K)
            tri_edges[K, k] = e
    for e, els in enumerate(edge_elements):
        if len(els) > 2:
            raise MeshError(f"edge {edges[e]} shared by more than two triangles")
    edges_arr = np.array(edges, dtype=np.int64).reshape(-1, 2)

    boundary = [e for e, els in enumerate(edge_elements) if len(els) == 1]
    _check_hanging_vertices(vertices, edges_arr, boundary)

    if isinstance(boundary_tags, dict):
        items = [(i, j, t) for (i, j), t in boundary_tags.items()]
    else:
        items = list(boundary_tags)
    edge_tags: dict[int, str] = {}
    for i, j, t in items:
        key = (int(min(i, j)), int(max(i, j)))
        e = edge_index.get(key)
        if e is None:
            raise MeshError(f"tagged pair {key} is not a mesh edge")
        if len(edge_elements[e]) != 1:
            raise MeshError(f"interior edge {key} carries a boundary tag")
        if e in edge_tags:
            raise MeshError(f"boundary edge {key} tagged more than once")
        edge_tags[e] = normalize_tag(t)
    missing = [edges[e] for e in boundary if e not in edge_tags]
    if missing:
        raise MeshError(f"untagged boundary edge(s): {missing[:5]}")

    patches: list[list[int]] = [[] for _ in range(nv)]
    for K, tri in enumerate(triangles):
        for a in tri:
            patches[a].append(K)

    return Mesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges_arr,
        tri_edges=tri_edges,
        edge_tags=edge_tags,
        patches=tuple(np.array(p, dtype=np.int64) for p in patches),
        edge_elements=tuple(np.array(p, dtype=np.int64) for p in edge_elements),
    )


def _check_hanging_vertices(vertices, edges, boundary):
    # A vertex strictly inside a single-element edge means two elements meet
    # along part of an edge only.
    if not boundary:
        return
    tol = 1e-12
    for e in boundary:
        i, j = edges[e]
        a, b = vertices[i], vertices[j]
        d = b - a
        L2 = d @ d
        w = vertices - a
        t = w @ d / L2
        dist = np.abs(_cross(np.broadcast_to(d, w.shape), w)) / np.sqrt(L2)
        hit = (t > tol) & (t < 1 - tol) & (dist < tol * np.sqrt(L2))
        hit[[i, j]] = False
        if hit.any():
            raise MeshError(
                f"non-conforming mesh: hanging vertex {int(np.flatnonzero(hit)[0])} "
                f"on edge {(int(i), int(j))}")


def affine_map(mesh: Mesh, K: int) -> AffineMap:
    if not 0 <= K < mesh.n_triangles:
        raise IndexError(f"element {K} out of range")
    v = mesh.vertices[mesh.triangles[K]]
    J = 0.5 * np.column_stack([v[1] - v[0], v[2] - v[0]])
    det = float(np.linalg.det(J))
    if det <= 0.0:
        raise MeshError(f"element {K} is inverted or degenerate (det={det:g})")
    return AffineMap(jacobian=J, translation=v[0].copy(), det=det,
                     area=abs(det) * REFERENCE_AREA)


def affine_maps(mesh: Mesh):
    """Jacobians (n, 2, 2) and determinants (n,) for every element."""
    v = mesh.vertices[mesh.triangles]
    J = 0.5 * np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if (det <= 0).any():
        raise MeshError("inverted or degenerate element")
    return J, det


# ---------------------------------------------------------------------------
# problem geometries

COOK_CORNERS = np.array([[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]])


def _grid_triangulation(points, nx, ny, flip):
    """Split an (nx+1) x (ny+1) point grid (x-fastest) into 2*nx*ny CCW triangles."""
    tris = []
    idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if flip:
                tris += [(a, b, d), (b, c, d)]
            else:
                tris += [(a, b, c), (a, c, d)]
    tris = np.array(tris, dtype=np.int64)
    v = points[tris]
    area = _cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    tris[area < 0] = tris[area < 0][:, ::-1]
    return tris


def _tag_edges_by(points, tris, classify):
    """Tag each single-element edge with classify(midpoint, endpoint_a, endpoint_b)."""
    count: dict[tuple[int, int], int] = {}
    for tri in tris:
        for k in range(3):
            i, j = int(tri[(k + 1) % 3]), int(tri[(k + 2) % 3])
            key = (min(i, j), max(i, j))
            count[key] = count.get(key, 0) + 1
    tags = {}
    for (i, j), c in count.items():
        if c == 1:
            tags[(i, j)] = classify(points[i], points[j])
    return tags


def _polygon_distance(points, corners):
    """Signed distance to the sides of a convex CCW polygon (positive inside)."""
    d = np.full(len(points), np.inf)
    for k in range(len(corners)):
        a, b = corners[k], corners[(k + 1) % len(corners)]
        t = b - a
        nrm = np.array([-t[1], t[0]]) / np.linalg.norm(t)
        d = np.minimum(d, (points - a) @ nrm)
    return d


def _delaunay_candidate(corners, h, seed=0, smoothing=20):
    """Quasi-uniform Delaunay triangulation of a convex polygon with mesh size ~h.

    Boundary points are equispaced per side (corners always included); interior
    points start on a jittered hexagonal lattice and are Laplacian-smoothed
    with re-triangulation after every sweep.
    """
    bnd = []
    for k in range(len(corners)):
        a, b = corners[k], corners[(k + 1) % len(corners)]
        m = max(1, int(round(np.linalg.norm(b - a) / h)))
        bnd += [a + (b - a) * i / m for i in range(m)]
    bnd = np.array(bnd)
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    xs = np.arange(lo[0], hi[0] + h, h)
    ys = np.arange(lo[1], hi[1] + h, h * np.sqrt(3) / 2)
    lattice = np.array([(x + (0.5 * h if j % 2 else 0.0), y) for j, y in enumerate(ys) for x in xs])
    lattice = lattice + rng.uniform(-0.05 * h, 0.05 * h, lattice.shape)
    inner = lattice[_polygon_distance(lattice, corners) > 0.5 * h]
    pts = np.vstack([bnd, inner])
    nb = len(bnd)
    for _ in range(smoothing):
        tris = Delaunay(pts).simplices
        nbrs = [set() for _ in range(len(pts))]
        for t in tris:
            for i in t:
                nbrs[i].update(t)
        new = pts.copy()
        for i in range(nb, len(pts)):
            new[i] = pts[sorted(nbrs[i] - {i})].mean(axis=0)
        pts = new
    tris = Delaunay(pts).simplices.astype(np.int64)
    v = pts[tris]
    area = _cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    scale = h * h
    keep = np.abs(area) > 1e-10 * scale   # drop flat hull slivers
    tris, area = tris[keep], area[keep]
    tris[area < 0] = tris[area < 0][:, ::-1]
    return pts, tris


def min_angles(points, tris) -> np.ndarray:
    """Smallest interior angle (degrees) of each triangle."""
    v = points[tris]
    out = []
    for k in range(3):
        u = v[:, (k + 1) % 3] - v[:, k]
        w = v[:, (k + 2) % 3] - v[:, k]
        c = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        out.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    return np.min(out, axis=0)


def relabel_for_reference_map(points, tris) -> np.ndarray:
    """Cyclically rotate each (CCW) triangle so its affine map from the
    reference triangle has the smallest possible condition number.

    The labelling does not change the finite element space, but the
    reference-element interior solver depends on the map, and a badly
    conditioned map degrades it.
    """
    out = np.array(tris, dtype=np.int64, copy=True)
    for i, t in enumerate(out):
        conds = []
        for k in range(3):
            r = np.roll(t, -k)
            J = np.column_stack([points[r[1]] - points[r[0]], points[r[2]] - points[r[0]]])
            conds.append(np.linalg.cond(J))
        out[i] = np.roll(t, -int(np.argmin(conds)))
    return out


def _delaunay_polygon(corners, h, seed=0, candidates=8):
    """Best (largest minimum angle) of ``candidates`` seeded Delaunay meshes,
    labelled for well-conditioned element maps. Deterministic in ``seed``."""
    best = None
    for k in range(candidates):
        pts, tris = _delaunay_candidate(corners, h, seed + k)
        q = float(min_angles(pts, tris).min())
        if best is None or q > best[0]:
            best = (q, pts, tris)
    _, pts, tris = best
    return pts, relabel_for_reference_map(pts, tris)


def cook_mesh(level: int = 0, target_elements: int = 50, seed: int = 0) -> Mesh:
    """Delaunay triangulation of Cook's membrane with about ``target_elements``
    triangles at level 0; each level halves the mesh size.

    Generation is deterministic for a given ``seed``. Dirichlet on x = 0,
    Neumann on x = 48, traction-free elsewhere.
    """
    if level < 0:
        raise MeshError("refinement level must be >= 0")
    if target_elements < 2:
        raise MeshError("target_elements must be >= 2")
    c = COOK_CORNERS
    area = 0.5 * abs(sum(_cross(c[k], c[(k + 1) % 4]) for k in range(4)))
    h = np.sqrt(4.0 * area / (np.sqrt(3.0) * target_elements)) / 2 ** level
    pts, tris = _delaunay_polygon(c, h, seed)

    def classify(a, b):
        if a[0] == 0.0 and b[0] == 0.0:
            return "dirichlet"
        if a[0] == 48.0 and b[0] == 48.0:
            return "neumann"
        return "free"

    return build_connectivity(pts, tris, _tag_edges_by(pts, tris, classify))


def moffatt_mesh(level: int = 0, depth: float = 6.0, size: float = 0.5, seed: int = 0) -> Mesh:
    """Delaunay triangulation of the triangular cavity (-1,0), (1,0), (0,-depth).

    The lid is the segment y = 0; every boundary edge is Dirichlet. ``size``
    is the target mesh size at level 0 and is halved per level.
    """
    if level < 0:
        raise MeshError("refinement level must be >= 0")
    if depth <= 0:
        raise MeshError("wedge depth must be positive")
    if size <= 0:
        raise MeshError("mesh size must be positive")
    corners = np.array([[0.0, -depth], [1.0, 0.0], [-1.0, 0.0]])
    pts, tris = _delaunay_polygon(corners, size / 2 ** level, seed)
    pts[np.abs(pts[:, 1]) < 1e-12 * depth, 1] = 0.0
    return build_connectivity(pts, tris, _tag_edges_by(pts, tris, lambda a, b: "dirichlet"))


def square_mesh(level: int = 0, n: int = 2, tags=None) -> Mesh:
    """Unit square split into ``(n**level)**2`` squares, two triangles each.

    ``tags`` maps side names ``left/right/bottom/top`` to boundary tags
    (default: all Dirichlet).
    """
    if level < 0:
        raise MeshError("refinement level must be >= 0")
    if n < 1:
        raise MeshError("n must be >= 1")
    side_tags = {"left": "dirichlet", "right": "dirichlet",
                 "bottom": "dirichlet", "top": "dirichlet"}
    if tags is not None:
        if isinstance(tags, str):
            tags = {k: tags for k in side_tags}
        side_tags.update({k: normalize_tag(v) for k, v in tags.items()})
    m = n ** level
    s = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(s, s)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    tris = relabel_for_reference_map(pts, _grid_triangulation(pts, m, m, flip=False))

    def classify(a, b):
        if a[0] == 0.0 and b[0] == 0.0:
            return side_tags["left"]
        if a[0] == 1.0 and b[0] == 1.0:
            return side_tags["right"]
        if a[1] == 0.0 and b[1] == 0.0:
            return side_tags["bottom"]
        return side_tags["top"]

    return build_connectivity(pts, tris, _tag_edges_by(pts, tris, classify))


def generate_problem_mesh(problem: str, level: int = 0, **params) -> Mesh:
    builders = {"cook": cook_mesh, "moffatt": moffatt_mesh, "square": square_mesh}
    try:
        builder = builders[problem]
    except KeyError:
        raise MeshError(f"unknown problem {problem!r}") from None
    return builder(level=level, **params)


# ---------------------------------------------------------------------------
# text format:  NV NT NB / NV "x y" / NT "i j k" / NB "i j tag";  '#' comments

def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edge_tags)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    for e in sorted(mesh.edge_tags):
        i, j = mesh.edges[e]
        lines.append(f"{i} {j} {_TAG_LETTERS[mesh.edge_tags[e]]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise MeshError("empty mesh file")
    try:
        nv, nt, nb = (int(x) for x in rows[0])
    except ValueError:
        raise MeshError("malformed header, expected 'NV NT NB'") from None
    if len(rows) != 1 + nv + nt + nb:
        raise MeshError(f"expected {1 + nv + nt + nb} data lines, found {len(rows)}")
    try:
        verts = np.array([[float(a), float(b)] for a, b in rows[1:1 + nv]]).reshape(-1, 2)
        tris = np.array([[int(a) for a in r] for r in rows[1 + nv:1 + nv + nt]],
                        dtype=np.int64).reshape(-1, 3)
        tags = [(int(i), int(j), t) for i, j, t in rows[1 + nv + nt:]]
    except ValueError as exc:
        raise MeshError(f"malformed mesh line: {exc}") from None
    for i, j, _ in tags:
        if not (0 <= i < nv and 0 <= j < nv):
            raise MeshError("boundary tag index out of range")
    seen = set()
    for i, j, _ in tags:
        key = (min(i, j), max(i, j))
        if key in seen:
            raise MeshError(f"conflicting tags for edge {key}")
        seen.add(key)
    return build_connectivity(verts, tris, tags)
