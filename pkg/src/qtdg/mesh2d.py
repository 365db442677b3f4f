"""Conforming 2D meshes: CCW triangles (generators) and convex polygons.

Facets carry a fixed orientation: ``normal`` is the outward normal of the
``left`` element; for boundary facets ``right`` is None and the normal points
out of the domain.  Boundary facets carry a string tag ("left", "bottom", ...
for the generators, free-form for mesh files) used to assign boundary
conditions.

The ASCII mesh format is documented in docs/mesh.md.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .coeffjet import evaluate, parse


class MeshFormatError(ValueError):
    """Malformed mesh input (file syntax, orientation, conformity)."""


class NonConvexElementError(ValueError):
    """An element is not convex (unsupported)."""


@dataclass
class Facet:
    va: int
    vb: int
    left: int
    right: object = None  # element id or None on the boundary
    normal: np.ndarray = None
    length: float = 0.0
    midpoint: np.ndarray = None
    tag: str = None


class Mesh2D:
    """Vertices + CCW convex elements + oriented facet connectivity."""

    def __init__(self, vertices, elements, boundary_tags=None, parent=None):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        self.elements = [tuple(int(v) for v in el) for el in elements]
        self.parent = parent  # refinement history: child element -> parent id
        nv = self.vertices.shape[0]
        for e, el in enumerate(self.elements):
            if len(el) < 3 or len(set(el)) != len(el):
                raise MeshFormatError(f"element {e} is degenerate: {el}")
            if min(el) < 0 or max(el) >= nv:
                raise MeshFormatError(f"element {e} has out-of-range vertices")
        self._check_orientation_convexity()
        self._build_facets(boundary_tags or {})
        self._element_geometry()

    # -- construction helpers ------------------------------------------------

    def _check_orientation_convexity(self):
        for e, el in enumerate(self.elements):
            pts = self.vertices[list(el)]
            k = len(el)
            area2 = 0.0
            for a in range(k):
                x0, y0 = pts[a]
                x1, y1 = pts[(a + 1) % k]
                area2 += x0 * y1 - x1 * y0
            if area2 <= 0.0:
                raise MeshFormatError(f"element {e} is not counter-clockwise")
            for a in range(k):
                p0, p1, p2 = pts[a], pts[(a + 1) % k], pts[(a + 2) % k]
                cross = (p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (
                    p2[0] - p1[0]
                )
                if cross <= 0.0:
                    raise NonConvexElementError(
                        f"element {e} is not strictly convex at vertex {el[(a + 1) % k]}"
                    )

    def _build_facets(self, boundary_tags):
        self.facets = []
        self.elem_facets = [[] for _ in self.elements]
        lookup = {}
        for e, el in enumerate(self.elements):
            k = len(el)
            for a in range(k):
                va, vb = el[a], el[(a + 1) % k]
                key = (min(va, vb), max(va, vb))
                if key not in lookup:
                    pa, pb = self.vertices[va], self.vertices[vb]
                    t = pb - pa
                    length = float(np.hypot(*t))
                    if length == 0.0:
                        raise MeshFormatError(f"zero-length edge {key}")
                    normal = np.array([t[1], -t[0]]) / length
                    f = Facet(
                        va,
                        vb,
                        left=e,
                        normal=normal,
                        length=length,
                        midpoint=(pa + pb) / 2.0,
                    )
                    lookup[key] = len(self.facets)
                    self.facets.append(f)
                    self.elem_facets[e].append(lookup[key])
                else:
                    f = self.facets[lookup[key]]
                    if f.right is not None:
                        raise MeshFormatError(
                            f"edge {key} shared by more than two elements"
                        )
                    f.right = e
                    self.elem_facets[e].append(lookup[key])
        for key, fid in lookup.items():
            f = self.facets[fid]
            if f.right is None:
                f.tag = boundary_tags.get(key)

    def _element_geometry(self):
        ne = len(self.elements)
        self.centroids = np.zeros((ne, 2))
        self.areas = np.zeros(ne)
        self.diameters = np.zeros(ne)
        self.perimeters = np.zeros(ne)
        for e, el in enumerate(self.elements):
            pts = self.vertices[list(el)]
            self.centroids[e] = pts.mean(axis=0)
            x, y = pts[:, 0], pts[:, 1]
            self.areas[e] = 0.5 * abs(
                np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
            )
            diffs = pts[:, None, :] - pts[None, :, :]
            self.diameters[e] = np.sqrt((diffs**2).sum(axis=-1)).max()
            self.perimeters[e] = sum(
                np.hypot(*(pts[(a + 1) % len(el)] - pts[a])) for a in range(len(el))
            )

    # -- queries --------------------------------------------------------------

    @property
    def n_elements(self):
        return len(self.elements)

    def interior_facets(self):
        return [i for i, f in enumerate(self.facets) if f.right is not None]

    def boundary_facets(self):
        return [i for i, f in enumerate(self.facets) if f.right is None]

    def element_vertices(self, e):
        return self.vertices[list(self.elements[e])]

    def inradius(self, e):
        """Radius of the largest inscribed ball (exact 2A/P for triangles)."""
        el = self.elements[e]
        if len(el) == 3:
            return 2.0 * self.areas[e] / self.perimeters[e]
        return self._chebyshev_radius(e)

    def _chebyshev_radius(self, e):
        from scipy.optimize import linprog

        pts = self.element_vertices(e)
        k = pts.shape[0]
        rows, rhs = [], []
        for a in range(k):
            t = pts[(a + 1) % k] - pts[a]
            n = np.array([t[1], -t[0]]) / np.hypot(*t)
            rows.append([n[0], n[1], 1.0])
            rhs.append(float(n @ pts[a]))
        res = linprog(
            c=[0.0, 0.0, -1.0],
            A_ub=np.array(rows),
            b_ub=np.array(rhs),
            bounds=[(None, None), (None, None), (0.0, None)],
            method="highs",
        )
        if not res.success:
            raise NonConvexElementError(f"inscribed-ball LP failed on element {e}")
        return float(res.x[2])

    def locate(self, points):
        """Element id containing each point (-1 if outside), ties arbitrary."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        tol = 1e-12
        for e, el in enumerate(self.elements):
            poly = self.vertices[list(el)]
            lo = poly.min(axis=0) - tol
            hi = poly.max(axis=0) + tol
            cand = np.where(
                (out < 0)
                & (pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0])
                & (pts[:, 1] >= lo[1]) & (pts[:, 1] <= hi[1])
            )[0]
            if cand.size == 0:
                continue
            inside = np.ones(cand.size, dtype=bool)
            k = poly.shape[0]
            for a in range(k):
                t = poly[(a + 1) % k] - poly[a]
                rel = pts[cand] - poly[a]
                inside &= t[0] * rel[:, 1] - t[1] * rel[:, 0] >= -tol * max(
                    1.0, self.diameters[e]
                )
            out[cand[inside]] = e
        return out


# ---------------------------------------------------------------------------
# generators


def _square_tags(mesh_vertices, va, vb):
    mid = (mesh_vertices[va] + mesh_vertices[vb]) / 2.0
    if mid[0] == 0.0:
        return "left"
    if mid[0] == 1.0:
        return "right"
    if mid[1] == 0.0:
        return "bottom"
    if mid[1] == 1.0:
        return "top"
    return None


def unit_square_tri(n):
    """Structured triangulation of (0,1)^2: n x n cells, 2 triangles each."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = lambda i, j: j * (n + 1) + i
    vertices = [
        (i / n, j / n) for j in range(n + 1) for i in range(n + 1)
    ]
    elements = []
    for j in range(n):
        for i in range(n):
            v00, v10 = idx(i, j), idx(i + 1, j)
            v01, v11 = idx(i, j + 1), idx(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    return _with_side_tags(np.array(vertices), elements, _square_tags)


def lshape_tri(n):
    """Triangulation of (0,1)^2 minus [0,1/2]^2; n even, 2 triangles per cell."""
    if n < 2 or n % 2:
        raise ValueError("n must be even and >= 2")
    idx = lambda i, j: j * (n + 1) + i
    vertices = np.array([(i / n, j / n) for j in range(n + 1) for i in range(n + 1)])
    elements = []
    for j in range(n):
        for i in range(n):
            if i < n // 2 and j < n // 2:
                continue
            v00, v10 = idx(i, j), idx(i + 1, j)
            v01, v11 = idx(i, j + 1), idx(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    vertices, elements = _compact(vertices, elements)

    def tags(verts, va, vb):
        mid = (verts[va] + verts[vb]) / 2.0
        if mid[1] == 0.0:
            return "bottom"
        if mid[0] == 1.0:
            return "right"
        if mid[1] == 1.0:
            return "top"
        if mid[0] == 0.0:
            return "left"
        if mid[0] == 0.5 and mid[1] < 0.5:
            return "step_v"
        if mid[1] == 0.5 and mid[0] < 0.5:
            return "step_h"
        return None

    return _with_side_tags(vertices, elements, tags)


def _compact(vertices, elements):
    used = sorted({v for el in elements for v in el})
    remap = {v: k for k, v in enumerate(used)}
    return vertices[used], [tuple(remap[v] for v in el) for el in elements]


def _with_side_tags(vertices, elements, tagfn):
    probe = Mesh2D(vertices, elements)
    tags = {}
    for fid in probe.boundary_facets():
        f = probe.facets[fid]
        tag = tagfn(vertices, f.va, f.vb)
        if tag is not None:
            tags[(min(f.va, f.vb), max(f.va, f.vb))] = tag
    return Mesh2D(vertices, elements, boundary_tags=tags)


def refine(mesh):
    """Red refinement: each triangle splits into 4 via edge midpoints.

    Child elements record their parent (mesh.parent); boundary tags are
    inherited by the two child edges of each boundary edge.
    """
    if any(len(el) != 3 for el in mesh.elements):
        raise MeshFormatError("red refinement is defined for triangle meshes only")
    verts = [tuple(v) for v in mesh.vertices]
    midpoint_of = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint_of:
            verts.append(tuple((mesh.vertices[a] + mesh.vertices[b]) / 2.0))
            midpoint_of[key] = len(verts) - 1
        return midpoint_of[key]

    elements, parent = [], []
    for e, (a, b, c) in enumerate(mesh.elements):
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        for child in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)):
            elements.append(child)
            parent.append(e)
    tags = {}
    for fid in mesh.boundary_facets():
        f = mesh.facets[fid]
        if f.tag is None:
            continue
        m = midpoint(f.va, f.vb)
        tags[(min(f.va, m), max(f.va, m))] = f.tag
        tags[(min(f.vb, m), max(f.vb, m))] = f.tag
    return Mesh2D(np.array(verts), elements, boundary_tags=tags, parent=np.array(parent))


# ---------------------------------------------------------------------------
# file I/O (format: docs/mesh.md)


def write_mesh(mesh, path):
    boundary = mesh.boundary_facets()
    with open(path, "w") as fh:
        fh.write(f"2 {mesh.vertices.shape[0]} {len(mesh.elements)} {len(boundary)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for el in mesh.elements:
            fh.write(f"{len(el)} " + " ".join(str(v) for v in el) + "\n")
        for fid in boundary:
            f = mesh.facets[fid]
            fh.write(f"{f.va} {f.vb} {f.tag if f.tag is not None else '-'}\n")


def read_mesh(path):
    with open(path) as fh:
        lines = [
            (no + 1, ln.strip())
            for no, ln in enumerate(fh)
            if ln.strip() and not ln.lstrip().startswith("#")
        ]
    if not lines:
        raise MeshFormatError("empty mesh file")

    def fail(no, msg):
        raise MeshFormatError(f"{path}:{no}: {msg}")

    no, header = lines[0]
    parts = header.split()
    if len(parts) != 4:
        fail(no, "header must be 'd nv ne nb'")
    try:
        d, nv, ne, nb = (int(v) for v in parts)
    except ValueError:
        fail(no, "header entries must be integers")
    if d != 2:
        fail(no, f"only d=2 is supported, got d={d}")
    if len(lines) != 1 + nv + ne + nb:
        raise MeshFormatError(
            f"{path}: expected {1 + nv + ne + nb} content lines, found {len(lines)}"
        )
    vertices = []
    for no, ln in lines[1 : 1 + nv]:
        parts = ln.split()
        if len(parts) != 2:
            fail(no, "vertex line must be 'x y'")
        try:
            vertices.append((float(parts[0]), float(parts[1])))
        except ValueError:
            fail(no, "bad vertex coordinates")
    elements = []
    for no, ln in lines[1 + nv : 1 + nv + ne]:
        parts = ln.split()
        try:
            k = int(parts[0])
            el = tuple(int(v) for v in parts[1:])
        except (ValueError, IndexError):
            fail(no, "element line must be 'k v1 ... vk'")
        if k not in (3, 4):
            fail(no, f"elements must be triangles or quads, got k={k}")
        if len(el) != k:
            fail(no, f"expected {k} vertex ids, found {len(el)}")
        elements.append(el)
    tags = {}
    for no, ln in lines[1 + nv + ne :]:
        parts = ln.split()
        if len(parts) != 3:
            fail(no, "boundary line must be 'va vb tag'")
        try:
            va, vb = int(parts[0]), int(parts[1])
        except ValueError:
            fail(no, "bad boundary vertex ids")
        if parts[2] != "-":
            tags[(min(va, vb), max(va, vb))] = parts[2]
    try:
        return Mesh2D(np.array(vertices), elements, boundary_tags=tags)
    except (MeshFormatError, NonConvexElementError) as err:
        raise MeshFormatError(f"{path}: {err}") from err


# ---------------------------------------------------------------------------
# quality and boundary classification


def quality(mesh):
    """Shape metrics: r_star, C_g, N_partial and the chunkiness audit.

    r_star = min_E (inradius/diameter); C_g = max_E max_{F in E} h_E/h_F;
    N_partial = max facet count per element; chunkiness_ok checks
    h_E |dE| <= (2 / r_E) |E| elementwise (equality for triangles).
    """
    r_star = np.inf
    c_g = 0.0
    n_partial = 0
    chunk_ok = True
    for e in range(mesh.n_elements):
        rho = mesh.inradius(e)
        h = mesh.diameters[e]
        r_e = rho / h
        r_star = min(r_star, r_e)
        n_partial = max(n_partial, len(mesh.elem_facets[e]))
        for fid in mesh.elem_facets[e]:
            c_g = max(c_g, h / mesh.facets[fid].length)
        lhs = h * mesh.perimeters[e]
        rhs = (2.0 / r_e) * mesh.areas[e]
        if lhs > rhs * (1.0 + 1e-9):
            chunk_ok = False
    return {
        "r_star": float(r_star),
        "C_g": float(c_g),
        "N_partial": int(n_partial),
        "chunkiness_ok": bool(chunk_ok),
    }


@dataclass(frozen=True)
class BoundaryTags:
    """Facet-id sets: Dirichlet/Neumann partition and inflow/outflow partition."""

    dirichlet: frozenset
    neumann: frozenset
    inflow: frozenset
    outflow: frozenset


def classify_boundary(mesh, beta, dirichlet_tags=None, check_points=0):
    """Split the boundary by condition type and by the sign of beta . n.

    beta: length-2 sequence of expressions/strings (None = zero field).
    dirichlet_tags: collection of tag strings, or None for an all-Dirichlet
    boundary.  A facet is inflow when beta . n < 0 at its midpoint; with
    check_points > 0 the sign is also sampled at that many interior points
    and a warning is issued if it is not constant along the facet.
    Warns when a Neumann facet lies on the inflow part (the scheme assumes
    inflow boundary data is Dirichlet).
    """
    if beta is None:
        beta = [None, None]
    basts = [None if b is None else (parse(b, 2) if isinstance(b, str) else b) for b in beta]

    def beta_dot_n(pts, normal):
        total = np.zeros(pts.shape[0])
        for comp, ast in enumerate(basts):
            if ast is not None:
                total += evaluate(ast, pts) * normal[comp]
        return total

    dirichlet, neumann, inflow, outflow = set(), set(), set(), set()
    for fid in mesh.boundary_facets():
        f = mesh.facets[fid]
        is_d = dirichlet_tags is None or f.tag in dirichlet_tags
        (dirichlet if is_d else neumann).add(fid)
        val = float(beta_dot_n(f.midpoint[None, :], f.normal)[0])
        if check_points:
            ts = np.linspace(0.0, 1.0, check_points + 2)[1:-1]
            pts = mesh.vertices[f.va] + ts[:, None] * (
                mesh.vertices[f.vb] - mesh.vertices[f.va]
            )
            vals = beta_dot_n(pts, f.normal)
            if np.any(vals * val < 0.0):
                warnings.warn(
                    f"beta . n changes sign along facet {fid}; "
                    "upwind classification uses the midpoint"
                )
        (inflow if val < 0.0 else outflow).add(fid)
    if not dirichlet:
        raise ValueError("the Dirichlet boundary must be non-empty")
    bad = inflow & neumann
    if bad:
        warnings.warn(
            f"{len(bad)} Neumann facet(s) lie on the inflow boundary; "
            "the scheme assumes inflow data is Dirichlet"
        )
    return BoundaryTags(
        frozenset(dirichlet), frozenset(neumann), frozenset(inflow), frozenset(outflow)
    )
