"""Surfaces of revolution: 1D quadrature for all functionals, isothermal
coordinates, profile-level gradients, and shape classification.

A profile is the generating curve (rho(s), z(s)) from the south pole to the
north pole, rho = 0 exactly at both ends. Principal curvatures follow the
mesh convention (sphere: kappa_m = kappa_p = -1/R with exterior normal), so
H = kappa_m + kappa_p = -2/R.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import interpolate

from .errors import DomainError, StructuralError
from .functionals import MultiplierEstimate, SurfaceMetrics, sigma_of


class AxisymProfile:
    """Sampled generating curve of a closed surface of revolution."""

    def __init__(self, rho, z, check=True):
        self.rho = np.ascontiguousarray(rho, dtype=np.float64)
        self.z = np.ascontiguousarray(z, dtype=np.float64)
        if check:
            self.validate()

    def validate(self):
        r, z = self.rho, self.z
        if r.ndim != 1 or r.shape != z.shape or len(r) < 8:
            raise StructuralError("profile needs matching 1D rho, z with >= 8 samples")
        if r[0] != 0.0 or r[-1] != 0.0:
            raise StructuralError("profile must start and end on the axis (rho = 0)")
        if (r[1:-1] <= 0).any():
            raise StructuralError("interior rho must be positive")
        dr = np.diff(r)
        dz = np.diff(z)
        if ((dr == 0) & (dz == 0)).any():
            raise StructuralError("consecutive profile samples coincide")

    @property
    def n(self):
        return len(self.rho)

    def arc_length(self):
        ds = np.hypot(np.diff(self.rho), np.diff(self.z))
        return np.concatenate([[0.0], np.cumsum(ds)])

    def scaled(self, lam):
        return AxisymProfile(self.rho * lam, self.z * lam, check=False)

    def reversed(self):
        return AxisymProfile(self.rho[::-1].copy(), self.z[::-1].copy(), check=False)

    def copy(self):
        return AxisymProfile(self.rho.copy(), self.z.copy(), check=False)


# -- constructors ---------------------------------------------------------------


def sphere_profile(radius=1.0, n=2000):
    t = np.linspace(0.0, np.pi, n)
    return AxisymProfile(radius * np.sin(t), -radius * np.cos(t), check=False)


def ellipsoid_profile(a_rho=1.0, c_z=1.0, n=2000):
    """Profile of the ellipsoid with equatorial radius a_rho and polar c_z."""
    t = np.linspace(0.0, np.pi, n)
    return AxisymProfile(a_rho * np.sin(t), -c_z * np.cos(t), check=False)


def stomatocyte_profile(gap, waist, radius=1.0, mouth_angle_deg=None, n=3000):
    """Embedded invaginated double sphere: outer sphere of the given radius,
    concentric inner sphere of radius radius - gap, joined through a half-
    torus mouth of radius gap/2 whose innermost point sits at rho = waist.

    C1 everywhere; the standard small-sigma seed.
    """
    R = float(radius)
    g = float(gap)
    w = float(waist)
    if not (0 < g < R and 0 < w):
        raise ValueError("need 0 < gap < radius and waist > 0")
    rm = 0.5 * g
    Ri = R - g
    rho_c = w + rm                      # mouth-circle center distance from axis
    rc = R - rm                         # center circle of the shell
    if rho_c >= rc:
        raise ValueError("waist too wide for this gap/radius")
    z_c = np.sqrt(rc ** 2 - rho_c ** 2)
    alpha_c = np.arctan2(rho_c, z_c)    # polar angle of the mouth ray from +z
    # outer sphere: south pole up to the tangency ray
    alpha_o = np.pi - alpha_c           # from the south pole
    n_o = max(int(n * 0.42), 32)
    n_m = max(int(n * 0.16), 48)
    n_i = n - n_o - n_m
    a = np.linspace(0.0, alpha_o, n_o, endpoint=False)
    rho_out = R * np.sin(a)
    z_out = -R * np.cos(a)
    # mouth: half turn around the torus circle, passing the axis side
    u_ang = np.arctan2(z_c, rho_c)      # direction of the tangency ray in (rho, z)
    th = np.linspace(u_ang, u_ang + np.pi, n_m, endpoint=False)
    rho_m = rho_c + rm * np.cos(th)
    z_m = z_c + rm * np.sin(th)
    # inner sphere: from the tangency ray around to its buried pole
    b = np.linspace(alpha_c, np.pi, n_i)
    rho_in = Ri * np.sin(b)
    z_in = Ri * np.cos(b)
    rho = np.concatenate([rho_out, rho_m, rho_in])
    z = np.concatenate([z_out, z_m, z_in])
    rho[0] = 0.0
    rho[-1] = 0.0
    return AxisymProfile(rho, z)


# -- derivative stencils ----------------------------------------------------------


def _deriv1(y, s):
    """2nd-order first derivative on a nonuniform grid."""
    out = np.empty_like(y)
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    out[1:-1] = (y[2:] * hm ** 2 - y[:-2] * hp ** 2 + y[1:-1] * (hp ** 2 - hm ** 2)) \
        / (hm * hp * (hm + hp))
    h0, h1 = s[1] - s[0], s[2] - s[1]
    out[0] = (-(2 * h0 + h1) * y[0] + (h0 + h1) ** 2 / h1 * y[1] - h0 ** 2 / h1 * y[2]) \
        / (h0 * (h0 + h1))
    h0, h1 = s[-1] - s[-2], s[-2] - s[-3]
    out[-1] = ((2 * h0 + h1) * y[-1] - (h0 + h1) ** 2 / h1 * y[-2] + h0 ** 2 / h1 * y[-3]) \
        / (h0 * (h0 + h1))
    return out


def _deriv2(y, s):
    """Three-point second derivative (2nd order on smoothly graded grids)."""
    out = np.empty_like(y)
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    out[1:-1] = 2.0 * (y[:-2] * hp - y[1:-1] * (hp + hm) + y[2:] * hm) \
        / (hm * hp * (hm + hp))
    out[0] = out[1]
    out[-1] = out[-2]
    return out


@dataclass
class ProfileGeometry:
    s: np.ndarray
    w: np.ndarray          # trapezoid arc weights
    rho: np.ndarray
    z: np.ndarray
    normal: np.ndarray     # (n, 2) exterior normal in the (rho, z) half-plane
    kappa_m: np.ndarray
    kappa_p: np.ndarray
    H: np.ndarray
    K: np.ndarray


def profile_geometry(prof: AxisymProfile) -> ProfileGeometry:
    s = prof.arc_length()
    r, z = prof.rho, prof.z
    r1, z1 = _deriv1(r, s), _deriv1(z, s)
    r2, z2 = _deriv2(r, s), _deriv2(z, s)
    speed = np.hypot(r1, z1)
    normal = np.stack([z1, -r1], axis=1) / speed[:, None]
    kappa_m = (r2 * z1 - z2 * r1) / speed ** 3
    kappa_p = np.empty_like(kappa_m)
    kappa_p[1:-1] = -z1[1:-1] / (r[1:-1] * speed[1:-1])
    # poles: kappa_p -> kappa_m; recompute kappa_m there from the even
    # expansion z = z0 + (z''/2) s^2 (the 3-point stencil at the endpoint is
    # polluted by the odd rho term)
    for idx, sgn in ((0, 1.0), (-1, -1.0)):
        s0 = s[idx]
        sa, sb = abs(s[idx + int(sgn)] - s0), abs(s[idx + int(2 * sgn)] - s0)
        za, zb = z[idx + int(sgn)] - z[idx], z[idx + int(2 * sgn)] - z[idx]
        den = sa ** 2 * sb ** 3 - sb ** 2 * sa ** 3
        a = (za * sb ** 3 - zb * sa ** 3) / den
        zpp = 2.0 * a
        kappa_m[idx] = -zpp * np.sign(-normal[idx, 1])
        kappa_p[idx] = kappa_m[idx]
    H = kappa_m + kappa_p
    K = kappa_m * kappa_p
    w = np.empty_like(s)
    w[0] = 0.5 * (s[1] - s[0])
    w[-1] = 0.5 * (s[-1] - s[-2])
    w[1:-1] = 0.5 * (s[2:] - s[:-2])
    return ProfileGeometry(s=s, w=w, rho=r, z=z, normal=normal,
                           kappa_m=kappa_m, kappa_p=kappa_p, H=H, K=K)


def axisym_metrics(prof: AxisymProfile, kappa=None, kappaG=None, C0=None) -> SurfaceMetrics:
    """Surface metrics by composite quadrature over the profile."""
    g = profile_geometry(prof)
    area = 2.0 * np.pi * float((g.rho * g.w).sum())
    r2 = prof.rho ** 2
    vol = np.pi * float((0.5 * (r2[1:] + r2[:-1]) * np.diff(prof.z)).sum())
    if vol <= 0:
        raise StructuralError("profile encloses non-positive volume; reverse its orientation")
    wil = 0.5 * np.pi * float((g.H ** 2 * g.rho * g.w).sum())
    a2 = 2.0 * np.pi * float(((g.kappa_m ** 2 + g.kappa_p ** 2) * g.rho * g.w).sum())
    kk = 2.0 * np.pi * float((g.K * g.rho * g.w).sum())
    hel = None
    if kappa is not None:
        hel = 0.5 * kappa * 2.0 * np.pi * float(((g.H - (C0 or 0.0)) ** 2 * g.rho * g.w).sum()) \
            + 4.0 * np.pi * (kappaG or 0.0)
    return SurfaceMetrics(area=area, volume=vol, sigma=sigma_of(area, vol),
                          willmore=wil, totalA2=a2, totalGauss=kk, helfrich=hel)


# -- isothermal (conformal) radial coordinate --------------------------------------


@dataclass
class IsothermalMap:
    """Monotone conformal radius t(s) with e^u = rho/t.

    t = 1 at the equator (max rho) of the larger lobe and decreases toward the
    smaller lobe (toward the end pole when there is no neck); t -> 0 and
    t -> infinity at the two poles, so values are carried on interior samples
    only (indices 1..n-2 of the profile).
    """
    s: np.ndarray
    t: np.ndarray
    u: np.ndarray
    anchor_s: float
    toward_end: bool        # True when t decreases with increasing s
    liouville_residual: float

    def t_of_s(self, s_query):
        return np.interp(s_query, self.s, self.t)


def _interior_minima(rho):
    r = rho[1:-1]
    idx = np.where((r[1:-1] < r[:-2]) & (r[1:-1] <= r[2:]))[0] + 2
    return idx    # indices into the full profile


def _split_at_waist(prof: AxisymProfile):
    """(waist_index, lobe areas) for profiles with exactly one interior waist."""
    g = profile_geometry(prof)
    mins = _interior_minima(prof.rho)
    if len(mins) == 0:
        return None
    # deepest separating minimum
    i_w = mins[int(np.argmin(prof.rho[mins]))]
    a1 = 2 * np.pi * float((g.rho * g.w)[:i_w].sum())
    a2 = 2 * np.pi * float((g.rho * g.w)[i_w:].sum())
    return int(i_w), a1, a2


def isothermal_coordinate(prof: AxisymProfile, liouville_trim=6) -> IsothermalMap:
    """Conformal radius by cumulative integration of ds/rho.

    Also evaluates the Liouville residual || -u_xx - K rho^2 || (x = log t)
    over the interior grid, trimmed `liouville_trim` nodes from each pole
    where the log chart degenerates.
    """
    if (prof.rho[1:-1] <= 0).any():
        raise StructuralError("pinched profile: interior rho must stay positive")
    g = profile_geometry(prof)
    s, rho = g.s, g.rho
    si, ri = s[1:-1], rho[1:-1]
    # cumulative integral of ds/rho, exact per segment for linear rho: this
    # keeps the log chart accurate next to the poles where rho ~ s
    dr = np.diff(ri)
    ds = np.diff(si)
    with np.errstate(divide="ignore", invalid="ignore"):
        seg = np.where(np.abs(dr) > 1e-12 * ri[:-1],
                       ds * np.log(ri[1:] / ri[:-1]) / dr,
                       2.0 * ds / (ri[1:] + ri[:-1]))
    I = np.concatenate([[0.0], np.cumsum(seg)])
    split = _split_at_waist(prof)
    if split is None:
        i_eq = 1 + int(np.argmax(ri))
        toward_end = True
    else:
        i_w, a1, a2 = split
        if a1 >= a2:
            i_eq = 1 + int(np.argmax(np.where(np.arange(1, prof.n - 1) < i_w, ri, -np.inf)))
            toward_end = True
        else:
            i_eq = 1 + int(np.argmax(np.where(np.arange(1, prof.n - 1) >= i_w, ri, -np.inf)))
            toward_end = False
    sign = -1.0 if toward_end else 1.0
    x = sign * (I - I[i_eq - 1])        # log t, anchored at the chosen equator
    t = np.exp(x)
    u = np.log(ri / t)
    # Liouville residual on the log-t grid
    k = liouville_trim
    if len(x) > 2 * k + 8:
        order = np.argsort(x)
        xs, us = x[order], u[order]
        Ks = g.K[1:-1][order]
        rs = ri[order]
        uxx = _deriv2(us, xs)
        res = -uxx - Ks * rs ** 2
        resid = float(np.max(np.abs(res[k:-k])))
    else:
        resid = np.nan
    return IsothermalMap(s=si, t=t, u=u, anchor_s=float(s[i_eq]),
                         toward_end=toward_end, liouville_residual=resid)


# -- profile-level gradients ----------------------------------------------------


DEGENERACY_CANCELLATION = 5e-3


@dataclass
class ProfileGradients:
    geometry: ProfileGeometry
    gradW: np.ndarray       # normal-velocity L2 field of the Willmore gradient
    gradSigma: np.ndarray
    weights: np.ndarray     # L2 weights 2 pi rho w


def _pole_even_extrapolate(f, s):
    """Replace endpoint values by the even-in-arclength quadratic limit."""
    out = f.copy()
    for idx, j1, j2 in ((0, 1, 2), (-1, -2, -3)):
        d1 = abs(s[j1] - s[idx])
        d2 = abs(s[j2] - s[idx])
        out[idx] = (f[j1] * d2 ** 2 - f[j2] * d1 ** 2) / (d2 ** 2 - d1 ** 2)
    return out


def profile_gradients(prof: AxisymProfile) -> ProfileGradients:
    """Strong-form L2 gradients restricted to normal variations of the profile."""
    g = profile_geometry(prof)
    s, rho, H = g.s, g.rho, g.H
    H1 = _deriv1(H, s)
    lap = np.empty_like(H)
    rH1 = rho * H1
    lap[1:-1] = _deriv1(rH1, s)[1:-1] / rho[1:-1]
    lap = _pole_even_extrapolate(lap, s)
    a_dev2 = 0.5 * (g.kappa_m - g.kappa_p) ** 2
    gW = 0.5 * (lap + a_dev2 * H)
    area = 2 * np.pi * float((rho * g.w).sum())
    r2 = prof.rho ** 2
    vol = np.pi * float((0.5 * (r2[1:] + r2[:-1]) * np.diff(prof.z)).sum())
    sig = sigma_of(area, vol)
    gS = sig * (1.0 / vol + 1.5 * H / area)
    weights = 2 * np.pi * rho * g.w
    return ProfileGradients(geometry=g, gradW=gW, gradSigma=gS, weights=weights)


def estimate_multiplier_profile(grads: ProfileGradients) -> MultiplierEstimate:
    w = grads.weights
    gw, gs = grads.gradW, grads.gradSigma
    ss = float((gs * gs * w).sum())
    ww = float((gw * gw * w).sum())
    # cancellation between the two terms of grad sigma detects round profiles
    cancel = np.sqrt(ss) / (_term_scale(grads) + 1e-300)
    if ss < 1e-10 * ww or cancel < DEGENERACY_CANCELLATION:
        return MultiplierEstimate(Lambda=None, residualNorm=np.sqrt(ww),
                                  conditioning=ss, degenerate=True)
    lam = float((gw * gs * w).sum()) / ss
    res = gw - lam * gs
    return MultiplierEstimate(Lambda=lam, residualNorm=float(np.sqrt((res * res * w).sum())),
                              conditioning=ss, degenerate=False)


def _term_scale(grads: ProfileGradients):
    """L2 size of the two (individually non-small) terms of grad sigma."""
    g = grads.geometry
    w = grads.weights
    area = 2 * np.pi * float((g.rho * g.w).sum())
    r2 = g.rho ** 2
    vol = np.pi * float((0.5 * (r2[1:] + r2[:-1]) * np.diff(g.z)).sum())
    sig = sigma_of(area, vol)
    t1 = sig / vol * np.ones_like(g.H)
    t2 = sig * 1.5 * g.H / area
    return float(np.sqrt((t1 * t1 * w).sum()) + np.sqrt((t2 * t2 * w).sum()))


def axisym_gradient(prof: AxisymProfile, sigma_target: Optional[float] = None):
    """Constrained descent direction gradW - Lambda gradSigma (normal field).

    Returns (direction, MultiplierEstimate, ProfileGradients). With a
    degenerate constraint gradient (round profile) the direction is the raw
    Willmore gradient and the estimate carries the degenerate flag.
    """
    grads = profile_gradients(prof)
    est = estimate_multiplier_profile(grads)
    if est.degenerate:
        return grads.gradW.copy(), est, grads
    return grads.gradW - est.Lambda * grads.gradSigma, est, grads


# -- exact discrete revolution energy ----------------------------------------------
#
# The revolved polyline has exact area mu(P) = sum pi (rho_a + rho_b) l and
# volume V(P) = sum (pi/3)(rho_a^2 + rho_a rho_b + rho_b^2)(z_b - z_a). The
# discrete Willmore energy (1/4) sum |m_i|^2 / A_i with m = d(mu)/d(node) is
# the 1D analog of the cotangent construction, and its derivative is exact,
# which is what the optimizer's line search needs for coherent descent.


def _segment_data(rho, z):
    e = np.stack([np.diff(rho), np.diff(z)], axis=1)
    ell = np.linalg.norm(e, axis=1)
    u = e / ell[:, None]
    p = rho[:-1] + rho[1:]
    A = np.pi * p * ell
    return e, ell, u, p, A


def discrete_area_volume(prof: AxisymProfile):
    rho, z = prof.rho, prof.z
    _, ell, _, p, A = _segment_data(rho, z)
    mu = float(A.sum())
    q = rho[:-1] ** 2 + rho[:-1] * rho[1:] + rho[1:] ** 2
    vol = float((np.pi / 3.0 * q * np.diff(z)).sum())
    return mu, vol


def _area_gradient_nodes(rho, z):
    """d(mu)/d(rho_i, z_i), shape (n, 2); the integrated mean curvature."""
    n = len(rho)
    e, ell, u, p, A = _segment_data(rho, z)
    g = np.zeros((n, 2))
    ga = np.stack([np.pi * (ell - p * u[:, 0]), -np.pi * p * u[:, 1]], axis=1)
    gb = np.stack([np.pi * (ell + p * u[:, 0]), np.pi * p * u[:, 1]], axis=1)
    np.add.at(g, np.arange(n - 1), ga)
    np.add.at(g, np.arange(1, n), gb)
    return g


def _volume_gradient_nodes(rho, z):
    n = len(rho)
    dz = np.diff(z)
    q = rho[:-1] ** 2 + rho[:-1] * rho[1:] + rho[1:] ** 2
    g = np.zeros((n, 2))
    ga = np.stack([np.pi / 3.0 * (2 * rho[:-1] + rho[1:]) * dz, -np.pi / 3.0 * q], axis=1)
    gb = np.stack([np.pi / 3.0 * (rho[:-1] + 2 * rho[1:]) * dz, np.pi / 3.0 * q], axis=1)
    np.add.at(g, np.arange(n - 1), ga)
    np.add.at(g, np.arange(1, n), gb)
    return g


def _vertex_areas_nodes(rho, z):
    _, _, _, _, A = _segment_data(rho, z)
    n = len(rho)
    out = np.zeros(n)
    out[:-1] += 0.5 * A
    out[1:] += 0.5 * A
    return out


def discrete_willmore(prof: AxisymProfile) -> float:
    rho, z = prof.rho, prof.z
    m = _area_gradient_nodes(rho, z)
    m[0, 0] = 0.0     # poles move along the axis only
    m[-1, 0] = 0.0
    A = _vertex_areas_nodes(rho, z)
    return 0.25 * float((np.einsum("ni,ni->n", m, m) / A).sum())


def _willmore_gradient_nodes(prof: AxisymProfile):
    """Exact d(discrete_willmore)/d(node) via per-segment area Hessians."""
    rho, z = prof.rho, prof.z
    n = len(rho)
    e, ell, u, p, A = _segment_data(rho, z)
    m = _area_gradient_nodes(rho, z)
    m[0, 0] = 0.0
    m[-1, 0] = 0.0
    Av = _vertex_areas_nodes(rho, z)
    pvec = m / (2.0 * Av)[:, None]
    pvec[0, 0] = 0.0
    pvec[-1, 0] = 0.0
    r = np.einsum("ni,ni->n", m, m) / (4.0 * Av * Av)

    # segment area gradient blocks: grad_a A = pi (l gp_a + p * (-u)),
    # grad_b A = pi (l gp_b + p u) with gp = (1, 0) at both ends.
    # Hessian blocks (2x2) of A_seg over (a, b):
    #   H_xy = pi (gp_x gl_y^T + gl_x gp_y^T + p Hl_xy)
    # with gl_a = -u, gl_b = u, Hl_bb = Hl_aa = Q/l, Hl_ab = -Q/l, Q = I - uu^T.
    Q = np.empty((n - 1, 2, 2))
    Q[:, 0, 0] = 1 - u[:, 0] ** 2
    Q[:, 1, 1] = 1 - u[:, 1] ** 2
    Q[:, 0, 1] = Q[:, 1, 0] = -u[:, 0] * u[:, 1]
    Qol = Q / ell[:, None, None]
    gp = np.array([1.0, 0.0])
    gl_a, gl_b = -u, u
    # outer products
    def outer(x, y):
        return x[:, :, None] * y[:, None, :]
    gp2 = np.broadcast_to(gp, (n - 1, 2))
    H_aa = np.pi * (outer(gp2, gl_a) + outer(gl_a, gp2) + p[:, None, None] * Qol)
    H_bb = np.pi * (outer(gp2, gl_b) + outer(gl_b, gp2) + p[:, None, None] * Qol)
    H_ab = np.pi * (outer(gp2, gl_b) + outer(gl_a, gp2) - p[:, None, None] * Qol)

    G = np.zeros((n, 2))
    pa, pb = pvec[:-1], pvec[1:]
    # dm term: G_x += sum_seg H_xa p_a + H_xb p_b  (H symmetric per block pair)
    np.add.at(G, np.arange(n - 1), np.einsum("sij,sj->si", H_aa, pa)
              + np.einsum("sij,sj->si", H_ab, pb))
    np.add.at(G, np.arange(1, n), np.einsum("sji,sj->si", H_ab, pa)
              + np.einsum("sij,sj->si", H_bb, pb))
    # dA term: vertex areas take half of each adjacent segment area
    ga = np.stack([np.pi * (ell - p * u[:, 0]), -np.pi * p * u[:, 1]], axis=1)
    gb = np.stack([np.pi * (ell + p * u[:, 0]), np.pi * p * u[:, 1]], axis=1)
    coef = 0.5 * (r[:-1] + r[1:])
    np.add.at(G, np.arange(n - 1), -coef[:, None] * ga)
    np.add.at(G, np.arange(1, n), -coef[:, None] * gb)
    G[0, 0] = 0.0
    G[-1, 0] = 0.0
    return G


def discrete_gradients(prof: AxisymProfile):
    """Exact node gradients of the discrete energy and of sigma.

    Returns a dict with the raw covectors ("rawW", "rawSigma", shape (n, 2)),
    the vertex areas, and the L2 fields (raw / area).
    """
    rho, z = prof.rho, prof.z
    mu, vol = discrete_area_volume(prof)
    gmu = _area_gradient_nodes(rho, z)
    gvol = _volume_gradient_nodes(rho, z)
    sig = sigma_of(mu, vol)
    raw_sigma = sig * (gvol / vol - 1.5 * gmu / mu)
    raw_sigma[0, 0] = raw_sigma[-1, 0] = 0.0
    rawW = _willmore_gradient_nodes(prof)
    Av = _vertex_areas_nodes(rho, z)
    # L2 size of the two sigma-gradient terms separately (degeneracy detector)
    t1 = sig * gvol / vol
    t2 = 1.5 * sig * gmu / mu
    term_scale = float(np.sqrt((t1 * t1 / Av[:, None]).sum())
                       + np.sqrt((t2 * t2 / Av[:, None]).sum()))
    return {"rawW": rawW, "rawSigma": raw_sigma, "vertex_areas": Av,
            "mu": mu, "vol": vol, "sigma": sig, "term_scale": term_scale,
            "fieldW": rawW / Av[:, None], "fieldSigma": raw_sigma / Av[:, None]}


# -- shape classification ---------------------------------------------------------


@dataclass
class ShapeClass:
    label: str
    height: float
    width: float
    waist_count: int
    invagination_depth: float

    def as_dict(self):
        return {"label": self.label, "height": self.height, "width": self.width,
                "waists": self.waist_count, "invagination_depth": self.invagination_depth}


def _polyline_self_intersects(rho, z, stride=4):
    """Coarse O(n^2/stride^2) segment intersection test on the profile."""
    p = np.stack([rho[::stride], z[::stride]], axis=1)
    a, b = p[:-1], p[1:]
    n = len(a)
    for i in range(n - 2):
        d1 = b[i] - a[i]
        rel_a = a[i + 2:] - a[i]
        rel_b = b[i + 2:] - a[i]
        cr_a = d1[0] * rel_a[:, 1] - d1[1] * rel_a[:, 0]
        cr_b = d1[0] * rel_b[:, 1] - d1[1] * rel_b[:, 0]
        straddle1 = cr_a * cr_b < 0
        d2 = b[i + 2:] - a[i + 2:]
        rel_c = a[i] - a[i + 2:]
        rel_d = b[i] - a[i + 2:]
        cr_c = d2[:, 0] * rel_c[:, 1] - d2[:, 1] * rel_c[:, 0]
        cr_d = d2[:, 0] * rel_d[:, 1] - d2[:, 1] * rel_d[:, 0]
        straddle2 = cr_c * cr_d < 0
        if (straddle1 & straddle2).any():
            return True
    return False


INVAGINATION_FRACTION = 0.02   # pole depth below the max height that counts as a mouth


def classify_shape(prof: AxisymProfile) -> ShapeClass:
    """BLS91-style label from deterministic profile diagnostics.

    stomatocyte: one of the poles is invaginated (sits well below the maximum
    height reached along its approach). Otherwise prolate-dumbbell vs
    oblate-discocyte by the height/width ratio, with the documented tie-break
    ratio >= 1 -> prolate.
    """
    if _polyline_self_intersects(prof.rho, prof.z):
        raise DomainError("self-intersecting profile cannot be classified")
    z, rho = prof.z, prof.rho
    height = float(z.max() - z.min())
    width = 2.0 * float(rho.max())
    mins = _interior_minima(rho)
    # invagination: the end pole is buried below the highest point of the
    # curve (or the start pole above the lowest), by more than a tolerance
    depth_end = float(z.max() - z[-1]) if z.argmax() < len(z) - 1 else 0.0
    depth_start = float(z[0] - z.min()) if z.argmin() > 0 else 0.0
    depth = max(depth_end, depth_start)
    invaginated = depth > INVAGINATION_FRACTION * height
    if invaginated:
        label = "stomatocyte"
    elif height / width >= 1.0:
        label = "prolate-dumbbell"
    else:
        label = "oblate-discocyte"
    return ShapeClass(label=label, height=height, width=width,
                      waist_count=int(len(mins)), invagination_depth=depth)


# -- lifting to a mesh --------------------------------------------------------------


def revolve(prof: AxisymProfile, angular_samples=256):
    """Watertight genus-0 mesh of the surface of revolution."""
    from .mesh import TriMesh
    if angular_samples < 8:
        raise ValueError("need at least 8 angular samples")
    if (prof.rho[1:-1] <= 0).any():
        raise StructuralError("pinched profile cannot be revolved")
    m = angular_samples
    rings = prof.n - 2
    phi = np.linspace(0.0, 2 * np.pi, m, endpoint=False)
    cp, sp = np.cos(phi), np.sin(phi)
    r, z = prof.rho[1:-1], prof.z[1:-1]
    verts = np.empty((rings * m + 2, 3))
    verts[:-2, 0] = (r[:, None] * cp).ravel()
    verts[:-2, 1] = (r[:, None] * sp).ravel()
    verts[:-2, 2] = np.repeat(z, m)
    i_south = rings * m
    i_north = rings * m + 1
    verts[i_south] = [0.0, 0.0, prof.z[0]]
    verts[i_north] = [0.0, 0.0, prof.z[-1]]

    def vid(i, j):
        return i * m + (j % m)

    faces = []
    j = np.arange(m)
    for i in range(rings - 1):
        a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
        faces.append(np.stack([a, c, b], axis=1))
        faces.append(np.stack([a, d, c], axis=1))
    faces.append(np.stack([np.full(m, i_south), vid(0, j + 1), vid(0, j)], axis=1))
    faces.append(np.stack([np.full(m, i_north), vid(rings - 1, j), vid(rings - 1, j + 1)], axis=1))
    return TriMesh(verts, np.concatenate(faces), check=False)


# -- resampling ---------------------------------------------------------------------


def smooth_profile(prof: AxisymProfile, passes=50, weight=0.5):
    """Local averaging of (rho, z) along the curve; poles stay pinned.

    Used to round the C1 junctions of analytic seeds and to heal grid-scale
    oscillation before it can couple to the curvature stencils.
    """
    rho = prof.rho.copy()
    z = prof.z.copy()
    for _ in range(passes):
        rho[1:-1] = rho[1:-1] + weight * 0.5 * (rho[:-2] + rho[2:] - 2 * rho[1:-1])
        z[1:-1] = z[1:-1] + weight * 0.5 * (z[:-2] + z[2:] - 2 * z[1:-1])
    rho[1:-1] = np.maximum(rho[1:-1], 1e-14)
    return AxisymProfile(rho, z, check=False)


def resample(prof: AxisymProfile, n: int, target_points_per_radius=12.0,
             density_cap=160.0, smooth_passes=12):
    """Arc-length resampling with extra density where |H| is large.

    The local spacing aims at ~target_points_per_radius nodes per curvature
    radius (necks get the resolution they need); the density is smoothed so
    the grading stays gentle, and capped so one feature cannot starve the
    rest of the curve. Endpoints stay exactly on the axis.
    """
    g = profile_geometry(prof)
    s = g.s
    base = s[-1] / n
    # key the density on |A|, not |H|: catenoid-like necks have huge
    # principal curvatures with H near zero
    a_mag = np.sqrt(g.kappa_m ** 2 + g.kappa_p ** 2)
    dens = np.clip(a_mag * base * target_points_per_radius, 1.0, density_cap)
    for _ in range(smooth_passes):
        dens[1:-1] = 0.25 * dens[:-2] + 0.5 * dens[1:-1] + 0.25 * dens[2:]
        dens[0] = dens[1]
        dens[-1] = dens[-2]
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    cdf /= cdf[-1]
    targets = np.linspace(0.0, 1.0, n)
    s_new = np.interp(targets, cdf, s)
    fr = interpolate.CubicSpline(s, prof.rho)
    fz = interpolate.CubicSpline(s, prof.z)
    rho_new = fr(s_new)
    z_new = fz(s_new)
    rho_new[0] = 0.0
    rho_new[-1] = 0.0
    rho_new[1:-1] = np.maximum(rho_new[1:-1], 1e-14)
    return AxisymProfile(rho_new, z_new, check=False)
