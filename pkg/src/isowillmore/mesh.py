"""Triangle meshes and the discrete differential operators built on them.

Conventions, fixed once and inherited by every other module:

* faces are oriented counterclockwise seen from outside, so the face normal
  computed as (v1-v0) x (v2-v0) is the exterior normal;
* the mean curvature vector comes from the first variation of area
  (cotangent formula over mixed Voronoi cells), which makes H = <Hvec, n>
  equal to -2 on the unit sphere with exterior normal;
* Gauss curvature is the angle defect over the mixed cell, so the total over
  a closed mesh is exactly 2*pi*chi.
"""

import numpy as np
from scipy import sparse

from .errors import StructuralError

DEGENERATE_REL_AREA = 1e-8  # faces below this fraction of the mean area are rejected


class TriMesh:
    """Oriented triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) float array
        Vertex positions.
    faces : (m, 3) int array
        Vertex indices, counterclockwise from outside.
    allow_boundary : bool
        Accept meshes with boundary edges (used for bands/patches). Closed
        manifoldness is still enforced away from the boundary.
    check : bool
        Run the structural validation. Disable only for meshes produced by
        trusted constructors.
    """

    def __init__(self, vertices, faces, allow_boundary=False, check=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise StructuralError("vertices must be an (n, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise StructuralError("faces must be an (m, 3) array")
        self.allow_boundary = bool(allow_boundary)
        self._cache = {}
        if check:
            self.validate()

    # -- structure ---------------------------------------------------------

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def edges_directed(self):
        """All directed edges (3 per face), shape (3m, 2)."""
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    def euler_characteristic(self):
        e = self.edges_directed()
        und = np.unique(np.sort(e, axis=1), axis=0)
        return self.n_vertices - len(und) + self.n_faces

    def boundary_vertex_mask(self):
        """Boolean mask of vertices touching a boundary edge."""
        e = self.edges_directed()
        key = e[:, 0] * self.n_vertices + e[:, 1]
        rkey = e[:, 1] * self.n_vertices + e[:, 0]
        is_boundary = ~np.isin(key, rkey)
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[e[is_boundary].ravel()] = True
        return mask

    def is_closed(self):
        return not self.boundary_vertex_mask().any()

    def validate(self):
        """Check manifoldness, orientation consistency and face quality."""
        n, f = self.n_vertices, self.faces
        if f.size and (f.min() < 0 or f.max() >= n):
            raise StructuralError("face index out of range")
        if (f[:, 0] == f[:, 1]).any() or (f[:, 1] == f[:, 2]).any() or (f[:, 0] == f[:, 2]).any():
            raise StructuralError("face with repeated vertex")
        e = self.edges_directed()
        key = e[:, 0] * n + e[:, 1]
        uniq, counts = np.unique(key, return_counts=True)
        if (counts > 1).any():
            raise StructuralError("directed edge repeated: inconsistent orientation or non-manifold")
        rkey = e[:, 1] * n + e[:, 0]
        has_twin = np.isin(key, np.unique(rkey))
        if not has_twin.all() and not self.allow_boundary:
            raise StructuralError("open mesh: %d boundary edges" % int((~has_twin).sum()))
        a = self.face_areas()
        if a.size and a.min() <= DEGENERATE_REL_AREA * a.mean():
            raise StructuralError("degenerate face: area %.3e vs mean %.3e" % (a.min(), a.mean()))

    # -- per-face geometry --------------------------------------------------

    def corner_vectors(self):
        """Edge vectors (u, v) at each corner c: u = next - c, v = prev - c."""
        x = self.vertices[self.faces]  # (m, 3, 3)
        u = np.roll(x, -1, axis=1) - x
        v = np.roll(x, -2, axis=1) - x
        return u, v

    def face_normals_raw(self):
        x = self.vertices[self.faces]
        return np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals_raw(), axis=1)

    def corner_cotangents(self):
        """cot of the interior angle at each face corner, shape (m, 3)."""
        u, v = self.corner_vectors()
        dots = np.einsum("fci,fci->fc", u, v)
        crossn = np.linalg.norm(np.cross(u, v), axis=2)
        return dots / np.maximum(crossn, 1e-300)

    def corner_angles(self):
        u, v = self.corner_vectors()
        dots = np.einsum("fci,fci->fc", u, v)
        crossn = np.linalg.norm(np.cross(u, v), axis=2)
        return np.arctan2(crossn, dots)

    # -- vertex areas and operators -----------------------------------------

    def mixed_areas(self):
        """Meyer mixed Voronoi cell areas per vertex (obtuse-safe), shape (n,)."""
        key = "mixed_areas"
        if key not in self._cache:
            self._cache[key] = np.bincount(
                self.faces.ravel(), weights=self._corner_mixed_areas().ravel(),
                minlength=self.n_vertices)
        return self._cache[key]

    def _corner_mixed_areas(self):
        """Per face-corner mixed area, shape (m, 3)."""
        cot = self.corner_cotangents()
        u, v = self.corner_vectors()
        areas = self.face_areas()
        # Voronoi cell at corner c: edge to next pairs with cot at prev and
        # vice versa (cot of the angle opposite each edge)
        lu2 = np.einsum("fci,fci->fc", u, u)
        lv2 = np.einsum("fci,fci->fc", v, v)
        vor = (lu2 * np.roll(cot, -2, axis=1) + lv2 * np.roll(cot, -1, axis=1)) / 8.0
        obtuse_any = (cot < 0).any(axis=1)
        obtuse_here = cot < 0
        out = vor.copy()
        half = 0.5 * areas[:, None] * np.ones(3)
        quarter = 0.25 * areas[:, None] * np.ones(3)
        fix = obtuse_any[:, None] & np.ones(3, dtype=bool)
        out[fix] = np.where(obtuse_here, half, quarter)[fix]
        return out

    def cotan_matrix(self):
        """Sparse symmetric cotangent matrix L with (L x)_i = 1/2 sum_j (cot a + cot b)(x_i - x_j).

        L is the gradient of total area with respect to vertex positions when
        applied to the position array itself.
        """
        key = "cotan"
        if key not in self._cache:
            n, f = self.n_vertices, self.faces
            cot = self.corner_cotangents()
            ii, jj, ww = [], [], []
            for c in range(3):
                a, b = (c + 1) % 3, (c + 2) % 3
                w = 0.5 * cot[:, c]
                ii += [f[:, a], f[:, b]]
                jj += [f[:, b], f[:, a]]
                ww += [-w, -w]
            rows = np.concatenate(ii)
            cols = np.concatenate(jj)
            vals = np.concatenate(ww)
            L = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
            L = L - sparse.diags(np.asarray(L.sum(axis=1)).ravel())
            self._cache[key] = L
        return self._cache[key]

    def area_gradient(self):
        """d(total area)/d(vertex), shape (n, 3); equals L @ vertices."""
        return self.cotan_matrix() @ self.vertices

    def volume_gradient(self):
        """d(enclosed volume)/d(vertex), shape (n, 3)."""
        x = self.vertices[self.faces]
        g = np.cross(np.roll(x, -1, axis=1), np.roll(x, -2, axis=1)) / 6.0
        out = np.zeros((self.n_vertices, 3))
        np.add.at(out, self.faces.ravel(), g.reshape(-1, 3))
        return out

    def enclosed_volume(self):
        x = self.vertices[self.faces]
        return float(np.einsum("fi,fi->f", x[:, 0], np.cross(x[:, 1], x[:, 2])).sum() / 6.0)

    def total_area(self):
        return float(self.face_areas().sum())

    def scaled(self, lam):
        return TriMesh(self.vertices * lam, self.faces, allow_boundary=self.allow_boundary, check=False)

    def translated(self, offset):
        return TriMesh(self.vertices + np.asarray(offset, dtype=float),
                       self.faces, allow_boundary=self.allow_boundary, check=False)

    def flipped(self):
        return TriMesh(self.vertices, self.faces[:, [0, 2, 1]],
                       allow_boundary=self.allow_boundary, check=False)


# -- operators ---------------------------------------------------------------


def vertex_normals(mesh):
    """Exterior unit vertex normals (angle-weighted face normal average).

    Exact on vertices whose one-ring has a rotational symmetry about the
    radial axis, consistent with orientation (flipping all faces negates the
    field). Requires a closed mesh.
    """
    if not mesh.is_closed():
        raise StructuralError("vertex normals need a closed mesh")
    ang = mesh.corner_angles()
    fn = mesh.face_normals_raw()
    fn = fn / np.linalg.norm(fn, axis=1)[:, None]
    out = np.zeros((mesh.n_vertices, 3))
    for c in range(3):
        np.add.at(out, mesh.faces[:, c], ang[:, c][:, None] * fn)
    norms = np.linalg.norm(out, axis=1)
    if (norms <= 0).any():
        raise StructuralError("zero normal at a vertex; mesh is degenerate there")
    return out / norms[:, None]


def mean_curvature_vector(mesh):
    """Per-vertex mean curvature vector (sum-of-principal-curvatures convention).

    Hvec_v = -(L x)_v / A_v with mixed Voronoi areas A_v, i.e. minus the area
    gradient per unit area. On a sphere of radius R with exterior orientation
    this points inward with <Hvec, n> = -2/R.
    """
    A = mesh.mixed_areas()
    if (A <= 0).any():
        raise StructuralError("non-positive mixed vertex area")
    return -mesh.area_gradient() / A[:, None]


def scalar_mean_curvature(mesh):
    """Signed scalar H = <Hvec, n> per vertex (closed meshes)."""
    return np.einsum("vi,vi->v", mean_curvature_vector(mesh), vertex_normals(mesh))


def gauss_curvature_defects(mesh):
    """Angle defect 2*pi - sum(angles) per vertex (boundary vertices get the
    interior formula too; exclude them via boundary_vertex_mask as needed)."""
    ang = mesh.corner_angles()
    total = np.bincount(mesh.faces.ravel(), weights=ang.ravel(), minlength=mesh.n_vertices)
    return 2.0 * np.pi - total


def gauss_curvature_total(mesh, interior_only=None):
    """Sum of angle defects.

    For a closed mesh this equals 2*pi*chi to roundoff. For a mesh with
    boundary, defects are summed over interior vertices only (the discrete
    integral of K over the interior), unless interior_only=False.
    """
    d = gauss_curvature_defects(mesh)
    if interior_only is None:
        interior_only = not mesh.is_closed()
    if interior_only:
        d = d[~mesh.boundary_vertex_mask()]
    return float(d.sum())


def second_fundamental_energy(mesh):
    """Total integral of |A|^2 plus the residual of the 4W - 8pi identity.

    Pointwise |A|^2 = H^2 - 2K; integrating the angle-defect K makes the Gauss
    part exact, so the residual only measures the tangential part of the
    discrete mean curvature vector.

    Returns
    -------
    (totalA2, residual) : tuple of floats
    """
    from .functionals import metrics  # local import to avoid a cycle
    A = mesh.mixed_areas()
    H = scalar_mean_curvature(mesh)
    defects = gauss_curvature_defects(mesh)
    totalA2 = float((H * H * A).sum() - 2.0 * defects.sum())
    m = metrics(mesh)
    residual = abs(totalA2 - (4.0 * m.willmore - 8.0 * np.pi))
    return totalA2, residual


# -- constructors -------------------------------------------------------------

_ICOSA_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICOSA_VERTS = np.array([
    [-1, _ICOSA_T, 0], [1, _ICOSA_T, 0], [-1, -_ICOSA_T, 0], [1, -_ICOSA_T, 0],
    [0, -1, _ICOSA_T], [0, 1, _ICOSA_T], [0, -1, -_ICOSA_T], [0, 1, -_ICOSA_T],
    [_ICOSA_T, 0, -1], [_ICOSA_T, 0, 1], [-_ICOSA_T, 0, -1], [-_ICOSA_T, 0, 1],
], dtype=float)
_ICOSA_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere(level, radius=1.0):
    """Subdivided icosahedron projected to the sphere; 10*4^level + 2 vertices."""
    if level < 0:
        raise ValueError("level must be >= 0")
    if level > 8:
        raise ValueError("level > 8 refused (memory guard)")
    verts = _ICOSA_VERTS / np.linalg.norm(_ICOSA_VERTS, axis=1)[:, None]
    faces = _ICOSA_FACES.copy()
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    return TriMesh(verts * radius, faces, check=False)


def _subdivide(verts, faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    und, inv = np.unique(e, axis=0, return_inverse=True)
    mid = verts[und[:, 0]] + verts[und[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    midx = len(verts) + np.arange(len(und))
    m01, m12, m20 = (midx[inv[i * len(faces):(i + 1) * len(faces)]] for i in range(3))
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    newf = np.concatenate([
        np.stack([v0, m01, m20], axis=1),
        np.stack([v1, m12, m01], axis=1),
        np.stack([v2, m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    return np.concatenate([verts, mid]), newf


def ellipsoid_mesh(level, semi_axes):
    """Icosphere stretched onto the ellipsoid with the given semi-axes."""
    m = icosphere(level)
    return TriMesh(m.vertices * np.asarray(semi_axes, dtype=float), m.faces, check=False)


def catenoid_band_mesh(c=1.0, zmax=6.0, n_axial=120, n_angular=96):
    """Open catenoid band rho = c*cosh(z/c) truncated at |z| = zmax.

    The mesh has two boundary loops; intended for operator tests on a known
    minimal surface.
    """
    z = np.linspace(-zmax, zmax, n_axial)
    theta = np.linspace(0.0, 2.0 * np.pi, n_angular, endpoint=False)
    rho = c * np.cosh(z / c)
    Z, T = np.meshgrid(z, theta, indexing="ij")
    R = c * np.cosh(Z / c)
    verts = np.stack([R * np.cos(T), R * np.sin(T), Z], axis=-1).reshape(-1, 3)

    def vid(i, j):
        return i * n_angular + (j % n_angular)

    faces = []
    for i in range(n_axial - 1):
        for j in range(n_angular):
            a, b, cc, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, cc])
            faces.append([a, cc, d])
    return TriMesh(verts, np.array(faces, dtype=np.int64), allow_boundary=True, check=False)
