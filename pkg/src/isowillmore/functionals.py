"""Energies, constraints and their L2 gradients on triangle meshes.

The discrete Willmore energy is W = (1/4) sum_v |m_v|^2 / A_v with m_v the
area gradient (integrated mean curvature vector) and A_v the mixed Voronoi
area. willmore_gradient returns the exact derivative of this discrete
functional, assembled face by face from the cotangent weights, so it agrees
with finite differences of the computed energy to roundoff. The same holds
for isoperimetric_gradient, built from the exact area and volume gradients.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, StructuralError
from .mesh import TriMesh, gauss_curvature_defects, mean_curvature_vector, vertex_normals


@dataclass
class SurfaceMetrics:
    """Scalar surface functionals of a closed mesh or profile."""
    area: float
    volume: float
    sigma: float
    willmore: float
    totalA2: float
    totalGauss: float
    helfrich: Optional[float] = None

    def as_dict(self):
        d = {"area": self.area, "volume": self.volume, "sigma": self.sigma,
             "willmore": self.willmore, "totalA2": self.totalA2,
             "totalGauss": self.totalGauss}
        if self.helfrich is not None:
            d["helfrich"] = self.helfrich
        return d


@dataclass
class MultiplierEstimate:
    """Least-squares Lagrange multiplier from grad W = Lambda grad sigma."""
    Lambda: Optional[float]
    residualNorm: float
    conditioning: float
    degenerate: bool

    def as_dict(self):
        return {"lambda": self.Lambda, "residual": self.residualNorm,
                "degenerate": self.degenerate}


@dataclass
class GradientPair:
    gradW: np.ndarray      # (n, 3), L2 field: dW(phi) = sum <gradW_v, phi_v> A_v
    gradSigma: np.ndarray  # (n, 3)
    vertex_areas: np.ndarray


def sigma_of(area, volume):
    return 6.0 * np.sqrt(np.pi) * volume / area ** 1.5


def metrics(mesh: TriMesh, kappa=None, kappaG=None, C0=None) -> SurfaceMetrics:
    """All scalar functionals; volume via the divergence theorem on faces."""
    if not mesh.is_closed():
        raise StructuralError("metrics needs a closed mesh")
    area = mesh.total_area()
    vol = mesh.enclosed_volume()
    if vol <= 0:
        raise StructuralError("non-positive enclosed volume; flip face orientation")
    A = mesh.mixed_areas()
    m = mesh.area_gradient()
    w = 0.25 * float((np.einsum("vi,vi->v", m, m) / A).sum())
    H = np.einsum("vi,vi->v", mean_curvature_vector(mesh), vertex_normals(mesh))
    defects = gauss_curvature_defects(mesh)
    totalA2 = float((H * H * A).sum() - 2.0 * defects.sum())
    hel = None
    if kappa is not None:
        hel = helfrich_energy(mesh, kappa, kappaG or 0.0, C0 or 0.0)
    return SurfaceMetrics(area=area, volume=vol, sigma=sigma_of(area, vol),
                          willmore=w, totalA2=totalA2,
                          totalGauss=float(defects.sum()), helfrich=hel)


def willmore_energy(mesh: TriMesh) -> float:
    A = mesh.mixed_areas()
    m = mesh.area_gradient()
    return 0.25 * float((np.einsum("vi,vi->v", m, m) / A).sum())


def helfrich_energy(mesh: TriMesh, kappa, kappaG, C0) -> float:
    """(kappa/2) int (H - C0)^2 dmu + 4 pi kappaG, with the discrete scalar H."""
    A = mesh.mixed_areas()
    H = np.einsum("vi,vi->v", mean_curvature_vector(mesh), vertex_normals(mesh))
    return 0.5 * kappa * float(((H - C0) ** 2 * A).sum()) + 4.0 * np.pi * kappaG


# -- exact discrete gradients -------------------------------------------------


def _cot_gradients(mesh):
    """Gradient of each corner cotangent w.r.t. the face's three vertices.

    Returns (m, 3 corners, 3 local vertices, 3) array.
    """
    u, v = mesh.corner_vectors()                    # (m, 3, 3)
    N = np.cross(u, v)                              # same for all corners of a face
    nrm = np.linalg.norm(N, axis=2)[..., None]      # (m, 3, 1)
    dots = np.einsum("fci,fci->fc", u, v)[..., None]
    du = v / nrm - dots * np.cross(v, N) / nrm ** 3     # d cot / d x_next
    dv = u / nrm - dots * np.cross(N, u) / nrm ** 3     # d cot / d x_prev
    m = mesh.n_faces
    out = np.zeros((m, 3, 3, 3))
    for c in range(3):
        out[:, c, (c + 1) % 3, :] = du[:, c, :]
        out[:, c, (c + 2) % 3, :] = dv[:, c, :]
        out[:, c, c, :] = -du[:, c, :] - dv[:, c, :]
    return out


def _face_area_gradients(mesh):
    """Gradient of each face area w.r.t. its three vertices, (m, 3, 3)."""
    x = mesh.vertices[mesh.faces]
    u = x[:, 1] - x[:, 0]
    v = x[:, 2] - x[:, 0]
    N = np.cross(u, v)
    nrm = np.linalg.norm(N, axis=1)[:, None]
    g1 = np.cross(v, N) / (2.0 * nrm)
    g2 = np.cross(N, u) / (2.0 * nrm)
    out = np.zeros((mesh.n_faces, 3, 3))
    out[:, 1, :] = g1
    out[:, 2, :] = g2
    out[:, 0, :] = -g1 - g2
    return out


def _mixed_area_gradients(mesh, cotgrad):
    """Gradient of each per-corner mixed area w.r.t. face vertices, (m, 3, 3, 3).

    Follows the same branch rule as TriMesh._corner_mixed_areas: Voronoi cell
    on non-obtuse faces, area/2 at the obtuse corner and area/4 elsewhere.
    The branches agree in value at the transition (right angle), so the kink
    set has measure zero.
    """
    u, v = mesh.corner_vectors()
    cot = mesh.corner_cotangents()
    lu2 = np.einsum("fci,fci->fc", u, u)
    lv2 = np.einsum("fci,fci->fc", v, v)
    m = mesh.n_faces
    AG = np.zeros((m, 3, 3, 3))
    # Voronoi branch: A(c) = (lu2 * cot_prev + lv2 * cot_next) / 8
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3   # next, prev
        # |u|^2 term, coefficient cot_b
        AG[:, c, a, :] += (cot[:, b] / 4.0)[:, None] * u[:, c, :]
        AG[:, c, c, :] -= (cot[:, b] / 4.0)[:, None] * u[:, c, :]
        AG[:, c] += (lu2[:, c] / 8.0)[:, None, None] * cotgrad[:, b]
        # |v|^2 term, coefficient cot_a
        AG[:, c, b, :] += (cot[:, a] / 4.0)[:, None] * v[:, c, :]
        AG[:, c, c, :] -= (cot[:, a] / 4.0)[:, None] * v[:, c, :]
        AG[:, c] += (lv2[:, c] / 8.0)[:, None, None] * cotgrad[:, a]
    # obtuse branches overwrite
    fgrad = _face_area_gradients(mesh)                 # (m, 3, 3)
    obtuse_any = (cot < 0).any(axis=1)
    if obtuse_any.any():
        idx = np.where(obtuse_any)[0]
        here = cot[idx] < 0                            # (k, 3)
        coef = np.where(here, 0.5, 0.25)               # (k, 3)
        AG[idx] = coef[:, :, None, None] * fgrad[idx][:, None, :, :]
    return AG


def willmore_gradient(mesh: TriMesh, return_raw=False):
    """Exact gradient of the discrete Willmore energy as an L2 vertex field.

    The returned field G satisfies dW(phi) = sum_v <G_v, phi_v> A_v for every
    vertex perturbation phi, with A_v the mixed vertex areas.
    """
    A = mesh.mixed_areas()
    m = mesh.area_gradient()            # (n, 3)
    L = mesh.cotan_matrix()
    p = m / (2.0 * A)[:, None]
    raw = np.asarray(L @ p)             # term from dm = L dphi

    f = mesh.faces
    cotgrad = _cot_gradients(mesh)
    # term from the cotangent weights in m = L(x) x:
    #   sum over face corners of (1/2) <x_a - x_b, p_a - p_b> * dcot_c
    x_f = mesh.vertices[f]
    p_f = p[f]
    contrib = np.zeros((mesh.n_faces, 3, 3))
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        s = 0.5 * np.einsum("fi,fi->f", x_f[:, a] - x_f[:, b], p_f[:, a] - p_f[:, b])
        contrib += s[:, None, None] * cotgrad[:, c]
    # term from the vertex areas: -(|m_v|^2 / 4 A_v^2) dA_v
    r = np.einsum("vi,vi->v", m, m) / (4.0 * A * A)
    AG = _mixed_area_gradients(mesh, cotgrad)
    r_f = r[f]                                         # (m, 3)
    contrib -= np.einsum("fc,fcpi->fpi", r_f, AG)
    np.add.at(raw, f.ravel(), contrib.reshape(-1, 3))
    if return_raw:
        return raw
    return raw / A[:, None]


def isoperimetric_gradient(mesh: TriMesh, return_raw=False):
    """Exact gradient of sigma = 6 sqrt(pi) V / mu^(3/2) as an L2 vertex field.

    Equals sigma * (n/V + (3/2 mu) Hvec) with the volume-gradient normal and
    the area-gradient mean curvature vector, which are the exact discrete
    first variations of V and mu.
    """
    area = mesh.total_area()
    vol = mesh.enclosed_volume()
    if vol <= 0:
        raise StructuralError("non-positive volume")
    sig = sigma_of(area, vol)
    raw = sig * (mesh.volume_gradient() / vol - 1.5 * mesh.area_gradient() / area)
    if return_raw:
        return raw
    return raw / mesh.mixed_areas()[:, None]


def isoperimetric_gradient_pointwise(mesh: TriMesh):
    """sigma * (n/V + (3/2 mu) Hvec) with the unit vertex normals.

    Unlike isoperimetric_gradient this is not the exact derivative of the
    discrete functional; it is the pointwise transcription of the smooth
    gradient formula, and it cancels to discretization error on round-sphere
    vertex data (where the exact polyhedral gradient does not vanish at
    irregular vertices). Used by the Alexandrov degeneracy detector.
    """
    area = mesh.total_area()
    vol = mesh.enclosed_volume()
    if vol <= 0:
        raise StructuralError("non-positive volume")
    sig = sigma_of(area, vol)
    n = vertex_normals(mesh)
    H = mean_curvature_vector(mesh)
    return sig * (n / vol + 1.5 * H / area)


def gradient_pair(mesh: TriMesh) -> GradientPair:
    return GradientPair(gradW=willmore_gradient(mesh),
                        gradSigma=isoperimetric_gradient(mesh),
                        vertex_areas=mesh.mixed_areas())


def l2_inner(field_a, field_b, areas):
    return float(np.einsum("vi,vi->v", field_a, field_b) @ areas)


DEGENERACY_RATIO = 1e-10      # <gs, gs> below this times ||gw||^2 means round sphere
DEGENERACY_CANCELLATION = 5e-3  # pointwise-formula cancellation level flagging a sphere


def _sphere_cancellation(mesh):
    """How completely the two terms of the pointwise grad sigma cancel (L2)."""
    area = mesh.total_area()
    vol = mesh.enclosed_volume()
    sig = sigma_of(area, vol)
    A = mesh.mixed_areas()
    n = vertex_normals(mesh)
    H = mean_curvature_vector(mesh)
    t1 = sig * n / vol
    t2 = sig * 1.5 * H / area
    num = np.sqrt(l2_inner(t1 + t2, t1 + t2, A))
    den = np.sqrt(l2_inner(t1, t1, A)) + np.sqrt(l2_inner(t2, t2, A))
    return num / den


def estimate_multiplier(mesh, pair=None) -> MultiplierEstimate:
    """Lambda = <grad W, grad sigma> / <grad sigma, grad sigma> in L2(dmu).

    Returns the degenerate flag instead of a huge Lambda when grad sigma
    vanishes (Alexandrov: exact round spheres). Degeneracy fires either on
    the conditioning cutoff or when the two terms of the pointwise gradient
    formula cancel to discretization level, which is how a discretized round
    sphere actually manifests (the conditioning cutoff alone is unreachable
    at finite resolution).
    """
    if pair is None:
        pair = gradient_pair(mesh)
    A = pair.vertex_areas
    gw, gs = pair.gradW, pair.gradSigma
    ss = l2_inner(gs, gs, A)
    ww = l2_inner(gw, gw, A)
    if ss < DEGENERACY_RATIO * ww or _sphere_cancellation(mesh) < DEGENERACY_CANCELLATION:
        return MultiplierEstimate(Lambda=None, residualNorm=np.sqrt(ww),
                                  conditioning=ss, degenerate=True)
    lam = l2_inner(gw, gs, A) / ss
    res = gw - lam * gs
    return MultiplierEstimate(Lambda=lam, residualNorm=np.sqrt(l2_inner(res, res, A)),
                              conditioning=ss, degenerate=False)


def el_residual(mesh: TriMesh, Lambda: float):
    """Pointwise Euler-Lagrange residual on an area-normalized surface.

    residual = (1/2)(Lap_g H + |Ao|^2 H) - (3 Lambda / 2)(4 sqrt(pi) + sigma H)
    per vertex, plus its L2(dmu) norm. The mesh is rescaled to mu = 1 first
    (with a warning) if it is not already.
    """
    area = mesh.total_area()
    if abs(area - 1.0) > 1e-8:
        warnings.warn("el_residual: rescaling mesh to unit area")
        mesh = mesh.scaled(1.0 / np.sqrt(area))
    A = mesh.mixed_areas()
    H = np.einsum("vi,vi->v", mean_curvature_vector(mesh), vertex_normals(mesh))
    K = gauss_curvature_defects(mesh) / A
    lapH = -np.asarray(mesh.cotan_matrix() @ H) / A
    a_dev2 = 0.5 * H * H - 2.0 * K          # |A|^2 - H^2/2 with |A|^2 = H^2 - 2K
    sig = sigma_of(mesh.total_area(), mesh.enclosed_volume())
    res = 0.5 * (lapH + a_dev2 * H) - 1.5 * Lambda * (4.0 * np.sqrt(np.pi) + sig * H)
    norm = float(np.sqrt((res * res * A).sum()))
    return res, norm


# -- conformal first-variation form Q ----------------------------------------


class ConformalPatchError(StructuralError):
    pass


def conformal_form_Q(patch, x_grid, n_theta=256):
    """Q[f] = (1/2)(grad Hvec - (3/2) H grad n + (1/2) Hvec x gradperp n).

    `patch` is an isothermal surface-of-revolution patch (see
    oracle.RevolutionPatch): x is the log-conformal radius, theta the angle,
    and the flat chart metric is e^{2u} (dx^2 + dtheta^2). The Gauss map is
    the chart-oriented normal (f_x cross f_theta, normalized). Derivatives in
    x use 4th-order central differences on the uniform grid, so Q is returned
    on x_grid[2:-2].

    Returns
    -------
    dict with keys "x", "theta", "Q" (shape (2, nx-4, n_theta, 3)),
    "div" (numerical divergence, shape (nx-8, n_theta, 3)).
    """
    x = np.asarray(x_grid, dtype=float)
    if len(x) < 9 or np.ptp(np.diff(x)) > 1e-12 * np.ptp(x):
        raise ValueError("x_grid must be uniform with at least 9 nodes")
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    rho, z, d1, z1, d2, z2 = patch.profile(x)
    conf = np.max(np.abs(d1 ** 2 + z1 ** 2 - rho ** 2) / np.maximum(rho ** 2, 1e-300))
    if conf > 1e-8:
        raise ConformalPatchError("patch is not conformal: metric mismatch %.3e" % conf)

    e2u = rho ** 2
    # meridian-frame (theta = 0) fields
    H0 = np.stack([(d2 - rho) / e2u, np.zeros_like(rho), z2 / e2u], axis=-1)
    n0 = np.stack([-z1, np.zeros_like(rho), d1], axis=-1) / rho[:, None]
    Hsc = np.einsum("xi,xi->x", H0, n0)

    ct, st = np.cos(theta), np.sin(theta)

    def spin(v0):
        # rotate the meridian field around the axis: (vx ct - 0*st, vx st, vz)
        out = np.empty((len(x), n_theta, 3))
        out[..., 0] = v0[:, None, 0] * ct[None, :]
        out[..., 1] = v0[:, None, 0] * st[None, :]
        out[..., 2] = v0[:, None, 2]
        return out

    def dtheta(v):
        # exact angular derivative of an equivariant field
        out = np.empty_like(v)
        out[..., 0] = -v[..., 1]
        out[..., 1] = v[..., 0]
        out[..., 2] = 0.0
        return out

    def dx4(v):
        # 4th-order central difference along axis 0; valid on [2:-2]
        h = x[1] - x[0]
        return (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12.0 * h)

    Hv = spin(H0)
    nv = spin(n0)
    Hx, Hx_t = dx4(Hv), dtheta(Hv)[2:-2]
    nx, nx_t = dx4(nv), dtheta(nv)[2:-2]
    Hm = Hsc[2:-2, None, None]
    Hvec = Hv[2:-2]
    # gradperp n = (-dtheta n, dx n)
    Q1 = 0.5 * (Hx - 1.5 * Hm * nx + 0.5 * np.cross(Hvec, -nx_t))
    Q2 = 0.5 * (Hx_t - 1.5 * Hm * nx_t + 0.5 * np.cross(Hvec, nx))
    Q = np.stack([Q1, Q2])

    # numerical divergence for diagnostics (4th order again, trims 2 more nodes)
    h = x[1] - x[0]
    dQ1 = (-Q1[4:] + 8 * Q1[3:-1] - 8 * Q1[1:-3] + Q1[:-4]) / (12.0 * h)
    k = np.fft.fftfreq(n_theta, d=2.0 * np.pi / n_theta) * 2.0 * np.pi
    dQ2 = np.real(np.fft.ifft(1j * k[None, :, None] * np.fft.fft(Q2[2:-2], axis=1), axis=1))
    return {"x": x[2:-2], "theta": theta, "Q": Q, "div": dQ1 + dQ2}


def q_flux(patch, x0, n_theta=512, window=2.0, n_x=4001):
    """Contour integral of <Q, d/dx> over the circle x = x0 (flat measure).

    Returns the 3-vector flux; for axisymmetric patches it is parallel to the
    symmetry axis up to quadrature error.
    """
    x = np.linspace(x0 - window, x0 + window, n_x)
    out = conformal_form_Q(patch, x, n_theta=n_theta)
    i0 = int(np.argmin(np.abs(out["x"] - x0)))
    q1 = out["Q"][0][i0]                 # (n_theta, 3)
    return q1.sum(axis=0) * (2.0 * np.pi / n_theta)
