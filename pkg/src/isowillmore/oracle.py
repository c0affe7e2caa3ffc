"""Independent analytic ground truth for the discrete machinery.

Everything here is evaluated from closed-form parametrizations and classical
quadrature; none of it calls the discrete mesh or profile operators, so it can
serve as the reference side of every two-route check.
"""

import numpy as np

from .errors import DomainError, StructuralError


# -- parametric reference surfaces --------------------------------------------


class ReferenceSurface:
    """Closed-form surface with pointwise normal, curvature and area element.

    kind is one of "sphere", "ellipsoid", "catenoid", "double-sphere-neck".
    Curvature sign convention: H = -2/R on a sphere of radius R with exterior
    normal (sum of principal curvatures).
    """

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params

    # factories
    @staticmethod
    def sphere(radius):
        return ReferenceSurface("sphere", radius=float(radius))

    @staticmethod
    def ellipsoid(a, b, c):
        return ReferenceSurface("ellipsoid", a=float(a), b=float(b), c=float(c))

    @staticmethod
    def catenoid(c, zmax):
        return ReferenceSurface("catenoid", c=float(c), zmax=float(zmax))

    @staticmethod
    def double_sphere_neck(c, radius=None):
        if radius is None:
            radius = 1.0 / np.sqrt(8.0 * np.pi)   # sphere of area 1/2
        return ReferenceSurface("double-sphere-neck", c=float(c), radius=float(radius))


def ellipsoid_point_data(a, b, c, theta, phi):
    """Position, exterior unit normal, H, K, area element of an ellipsoid.

    Parametrized by (theta, phi) with x = a sin(theta) cos(phi) etc.; all
    arrays broadcast over the inputs.
    """
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    r = np.stack([a * st * cp, b * st * sp, c * ct], axis=-1)
    r_t = np.stack([a * ct * cp, b * ct * sp, -c * st], axis=-1)
    r_p = np.stack([-a * st * sp, b * st * cp, np.zeros_like(st)], axis=-1)
    r_tt = np.stack([-a * st * cp, -b * st * sp, -c * ct], axis=-1)
    r_tp = np.stack([-a * ct * sp, b * ct * cp, np.zeros_like(st)], axis=-1)
    r_pp = np.stack([-a * st * cp, -b * st * sp, np.zeros_like(st)], axis=-1)
    E = np.einsum("...i,...i->...", r_t, r_t)
    F = np.einsum("...i,...i->...", r_t, r_p)
    G = np.einsum("...i,...i->...", r_p, r_p)
    cr = np.cross(r_t, r_p)
    dA = np.linalg.norm(cr, axis=-1)
    n = cr / dA[..., None]
    L = np.einsum("...i,...i->...", r_tt, n)
    M = np.einsum("...i,...i->...", r_tp, n)
    N = np.einsum("...i,...i->...", r_pp, n)
    den = E * G - F * F
    H = (G * L - 2.0 * F * M + E * N) / den
    K = (L * N - M * M) / den
    return r, n, H, K, dA


def reference_metrics(ref: ReferenceSurface, n_quad=400):
    """SurfaceMetrics of a reference surface by high-order quadrature.

    Gauss-Legendre in the polar direction, trapezoid in the angle. Open
    surfaces (catenoid) report zero volume and sigma = 0.
    """
    from .functionals import SurfaceMetrics, sigma_of
    if ref.kind == "sphere":
        R = ref.params["radius"]
        return SurfaceMetrics(area=4 * np.pi * R * R, volume=4 * np.pi * R ** 3 / 3,
                              sigma=1.0, willmore=4 * np.pi, totalA2=8 * np.pi,
                              totalGauss=4 * np.pi)
    if ref.kind == "ellipsoid":
        a, b, c = ref.params["a"], ref.params["b"], ref.params["c"]
        tt, wt = np.polynomial.legendre.leggauss(n_quad)
        theta = 0.5 * np.pi * (tt + 1.0)
        wt = wt * 0.5 * np.pi
        phi = np.linspace(0.0, 2 * np.pi, 2 * n_quad, endpoint=False)
        wp = 2 * np.pi / (2 * n_quad)
        TH, PH = np.meshgrid(theta, phi, indexing="ij")
        r, n, H, K, dA = ellipsoid_point_data(a, b, c, TH, PH)
        W2 = (wt[:, None] * wp * dA)
        area = float(W2.sum())
        vol = float((np.einsum("...i,...i->...", r, n) * W2).sum() / 3.0)
        return SurfaceMetrics(area=area, volume=vol, sigma=sigma_of(area, vol),
                              willmore=0.25 * float((H * H * W2).sum()),
                              totalA2=float(((H * H - 2 * K) * W2).sum()),
                              totalGauss=float((K * W2).sum()))
    if ref.kind == "catenoid":
        c, zmax = ref.params["c"], ref.params["zmax"]
        xm = zmax / c   # band cut at |z| = zmax, xi = z/c
        area = 2 * np.pi * c * c * (xm + np.sinh(xm) * np.cosh(xm))
        totalGauss = -4 * np.pi * np.tanh(xm)
        return SurfaceMetrics(area=float(area), volume=0.0, sigma=0.0,
                              willmore=0.0, totalA2=float(-2 * totalGauss),
                              totalGauss=float(totalGauss))
    if ref.kind == "double-sphere-neck":
        prof = double_sphere_neck_profile(ref.params["c"], ref.params["radius"],
                                          n=20000)
        from .axisym import axisym_metrics
        return axisym_metrics(prof)
    raise ValueError("unknown reference kind %r" % ref.kind)


# -- nested double sphere joined by a catenoid --------------------------------


def double_sphere_neck_matching(c, R_outer, R_inner):
    """C1 matching data for sphere-catenoid-sphere profiles.

    The catenoid rho = c cosh((z - z0)/c) meets a circle of radius R
    tangentially where cosh^2(xi) = R/c, at hole radius sqrt(cR) and height
    sqrt(R(R-c)) above the circle center. Returns a dict with the waist height
    z0, the inner sphere center height, and the matching angles.
    """
    if not (0 < c < R_inner <= R_outer):
        raise ValueError("need 0 < c < R_inner <= R_outer")
    xi_o = np.arccosh(np.sqrt(R_outer / c))
    xi_i = np.arccosh(np.sqrt(R_inner / c))
    z_match_o = np.sqrt(R_outer * (R_outer - c))
    z0 = z_match_o + c * xi_o
    h_inner = z0 + c * xi_i - np.sqrt(R_inner * (R_inner - c))
    alpha_o = np.arccos(-np.sqrt(1.0 - c / R_outer))   # polar angle from south pole
    beta_i = np.arcsin(np.sqrt(c / R_inner))           # from inner-sphere north pole
    return {"xi_o": xi_o, "xi_i": xi_i, "z0": z0, "h_inner": h_inner,
            "alpha_o": alpha_o, "beta_i": beta_i}


def double_sphere_neck_profile(c, R_outer=None, R_inner=None, n=4000):
    """Stomatocyte-limit model profile: outer sphere, catenoid neck, nested
    inner sphere, C1 throughout. Returns an axisym.AxisymProfile.

    Arc length is distributed between the three pieces proportionally to
    their lengths.
    """
    from .axisym import AxisymProfile
    if R_outer is None:
        R_outer = 1.0 / np.sqrt(8.0 * np.pi)
    if R_inner is None:
        R_inner = R_outer
    m = double_sphere_neck_matching(c, R_outer, R_inner)
    len_o = R_outer * m["alpha_o"]
    len_c = c * (np.sinh(m["xi_o"]) + np.sinh(m["xi_i"]))
    len_i = R_inner * (np.pi - m["beta_i"])
    total = len_o + len_c + len_i
    n_o = max(int(n * len_o / total), 16)
    n_c = max(int(n * len_c / total), 64)
    n_i = max(n - n_o - n_c, 16)
    alpha = np.linspace(0.0, m["alpha_o"], n_o, endpoint=False)
    rho_o = R_outer * np.sin(alpha)
    z_o = -R_outer * np.cos(alpha)
    xi = np.linspace(-m["xi_o"], m["xi_i"], n_c, endpoint=False)
    rho_c = c * np.cosh(xi)
    z_c = m["z0"] + c * xi
    beta = np.linspace(m["beta_i"], np.pi, n_i)
    rho_i = R_inner * np.sin(beta)
    z_i = m["h_inner"] + R_inner * np.cos(beta)
    rho = np.concatenate([rho_o, rho_c, rho_i])
    z = np.concatenate([z_o, z_c, z_i])
    rho[0] = 0.0
    rho[-1] = 0.0
    return AxisymProfile(rho, z)


# -- Monge graph patches -------------------------------------------------------


class GraphPatch:
    """Height function u(x, y) over a disc with two analytic derivatives.

    derivs(x, y) must return (u, ux, uy, uxx, uxy, uyy). orientation = +1
    takes the upward normal, -1 the downward one (use -1 when the patch is a
    lower piece of a closed surface oriented by its exterior normal).
    """

    def __init__(self, derivs, radius=1.0, orientation=1):
        self.derivs = derivs
        self.radius = float(radius)
        if orientation not in (+1, -1):
            raise ValueError("orientation must be +1 or -1")
        self.orientation = orientation

    @staticmethod
    def polynomial(coeffs, radius=1.0, orientation=1):
        """u = sum c_{jk} x^j y^k for the {(j,k): c} dict."""
        items = [(j, k, float(cc)) for (j, k), cc in coeffs.items()]

        def derivs(x, y):
            u = np.zeros_like(np.asarray(x, dtype=float))
            ux = np.zeros_like(u); uy = np.zeros_like(u)
            uxx = np.zeros_like(u); uxy = np.zeros_like(u); uyy = np.zeros_like(u)
            for j, k, cc in items:
                u += cc * x**j * y**k
                if j >= 1:
                    ux += cc * j * x**(j-1) * y**k
                if k >= 1:
                    uy += cc * k * x**j * y**(k-1)
                if j >= 2:
                    uxx += cc * j*(j-1) * x**(j-2) * y**k
                if j >= 1 and k >= 1:
                    uxy += cc * j*k * x**(j-1) * y**(k-1)
                if k >= 2:
                    uyy += cc * k*(k-1) * x**j * y**(k-2)
            return u, ux, uy, uxx, uxy, uyy
        return GraphPatch(derivs, radius=radius, orientation=orientation)

    @staticmethod
    def lower_hemisphere(R=1.0, radius=0.6):
        def derivs(x, y):
            w = np.sqrt(R * R - x * x - y * y)
            u = -w
            ux, uy = x / w, y / w
            uxx = 1.0 / w + x * x / w**3
            uxy = x * y / w**3
            uyy = 1.0 / w + y * y / w**3
            return u, ux, uy, uxx, uxy, uyy
        # exterior normal of the full sphere points downward on the lower half
        return GraphPatch(derivs, radius=radius, orientation=-1)


def graph_curvatures(patch: GraphPatch, x, y):
    """Metric, mean curvature and second fundamental form of a graph patch.

    Evaluates the three graph identities: g = id + du (x) du, the divergence
    form H * sqrt(1 + |du|^2) = (id - du du/(1+|du|^2)) : D2u, and the
    normal-scaled form A = D2u / (1 + |du|^2). The consistency identity
    H = sqrt(1 + |du|^2) * tr_g(A) holds algebraically; see
    graph_consistency_error.
    """
    rr = np.hypot(x, y)
    if np.any(rr > patch.radius):
        raise DomainError("point outside patch domain")
    u, ux, uy, uxx, uxy, uyy = patch.derivs(x, y)
    if not np.all(np.isfinite([np.max(np.abs(ux)), np.max(np.abs(uy))])):
        raise DomainError("unbounded gradient on patch")
    s = patch.orientation
    p2 = ux * ux + uy * uy
    g = np.array([[1.0 + ux * ux, ux * uy], [ux * uy, 1.0 + uy * uy]])
    lhs = (uxx * (1.0 - ux * ux / (1.0 + p2))
           + uyy * (1.0 - uy * uy / (1.0 + p2))
           - 2.0 * uxy * ux * uy / (1.0 + p2))
    H = s * lhs / np.sqrt(1.0 + p2)
    A = s * np.array([[uxx, uxy], [uxy, uyy]]) / (1.0 + p2)
    return g, H, A


def graph_consistency_error(patch: GraphPatch, x, y):
    """|H - sqrt(1+|du|^2) tr_g A| pointwise for the two graph formulas."""
    _, ux, uy, *_ = patch.derivs(x, y)
    g, H, A = graph_curvatures(patch, x, y)
    p2 = ux * ux + uy * uy
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    inv00, inv11 = g[1, 1] / det, g[0, 0] / det
    inv01 = -g[0, 1] / det
    trA = inv00 * A[0, 0] + 2.0 * inv01 * A[0, 1] + inv11 * A[1, 1]
    return np.abs(H - np.sqrt(1.0 + p2) * trA)


# -- sphere inversion ----------------------------------------------------------


def invert(mesh, center):
    """Vertex-wise sphere inversion x -> (x - center)/|x - center|^2.

    The center must stay clear of the surface; inverting again with center 0
    recovers the original vertices translated by -center.
    """
    from .mesh import TriMesh
    c = np.asarray(center, dtype=float)
    d = mesh.vertices - c
    dist2 = np.einsum("vi,vi->v", d, d)
    diam = np.ptp(mesh.vertices, axis=0).max()
    if np.sqrt(dist2.min()) <= 1e-6 * diam:
        raise DomainError("inversion center within 1e-6 diameter of the surface")
    # inversion reverses orientation; flip faces to keep the exterior normal
    return TriMesh(d / dist2[:, None], mesh.faces[:, [0, 2, 1]],
                   allow_boundary=mesh.allow_boundary, check=False)


# -- finite-difference oracle ---------------------------------------------------


def fd_directional(functional, surface, direction, apply_direction, steps=None):
    """Central-difference directional derivative with plateau detection.

    functional(surface) -> float; apply_direction(surface, h) -> surface
    displaced by h * direction (the direction argument is carried through for
    the caller's bookkeeping). The step ladder is geometric from 1e-2 to 1e-6
    of the surface scale; the plateau is the pair of adjacent steps whose
    estimates agree best.

    Returns (estimate, step, plateau_flag); plateau_flag False means the
    ladder never settled (noise-dominated).
    """
    if steps is None:
        steps = np.geomspace(1e-2, 1e-6, 8)
    vals = []
    for h in steps:
        fp = functional(apply_direction(surface, +h))
        fm = functional(apply_direction(surface, -h))
        vals.append((fp - fm) / (2.0 * h))
    vals = np.asarray(vals)
    diffs = np.abs(np.diff(vals))
    scale = np.max(np.abs(vals)) + 1e-300
    i = int(np.argmin(diffs))
    est = 0.5 * (vals[i] + vals[i + 1])
    ok = diffs[i] <= 1e-3 * scale
    return float(est), float(steps[i]), bool(ok)


# -- isothermal patches of surfaces of revolution ------------------------------


class RevolutionPatch:
    """Surface of revolution in isothermal coordinates (x, theta).

    profile(x) returns (rho, z, rho', z', rho'', z'') with rho'^2 + z'^2 =
    rho^2 (conformality in the log-radial coordinate). Factories below cover
    the model surfaces; invert() composes with the sphere inversion
    y -> y/|y|^2, which preserves conformality.
    """

    def __init__(self, profile_fn, label=""):
        self._fn = profile_fn
        self.label = label

    def profile(self, x):
        return self._fn(np.asarray(x, dtype=float))

    @staticmethod
    def plane():
        def fn(x):
            r = np.exp(x)
            zero = np.zeros_like(r)
            return r, zero, r, zero, r, zero
        return RevolutionPatch(fn, "plane")

    @staticmethod
    def sphere(R=1.0):
        def fn(x):
            sech = 1.0 / np.cosh(x)
            th = np.tanh(x)
            rho = R * sech
            z = R * th
            d1 = -R * sech * th
            z1 = R * sech ** 2
            d2 = R * sech * (th ** 2 - sech ** 2)
            z2 = -2.0 * R * sech ** 2 * th
            return rho, z, d1, z1, d2, z2
        return RevolutionPatch(fn, "sphere")

    @staticmethod
    def catenoid(c=1.0):
        def fn(x):
            rho = c * np.cosh(x)
            z = c * x
            return (rho, z, c * np.sinh(x), np.full_like(rho, c),
                    c * np.cosh(x), np.zeros_like(rho))
        return RevolutionPatch(fn, "catenoid")

    def inverted(self):
        base = self._fn

        def fn(x):
            rho, z, d1, z1, d2, z2 = base(x)
            q = rho * rho + z * z
            q1 = 2.0 * (rho * d1 + z * z1)
            q2 = 2.0 * (d1 * d1 + rho * d2 + z1 * z1 + z * z2)
            ir = rho / q
            iz = z / q
            ir1 = (d1 * q - rho * q1) / q ** 2
            iz1 = (z1 * q - z * q1) / q ** 2
            ir2 = (d2 * q - rho * q2) / q ** 2 - 2.0 * q1 * (d1 * q - rho * q1) / q ** 3
            iz2 = (z2 * q - z * q2) / q ** 2 - 2.0 * q1 * (z1 * q - z * q1) / q ** 3
            return ir, iz, ir1, iz1, ir2, iz2
        return RevolutionPatch(fn, self.label + "-inverted")
