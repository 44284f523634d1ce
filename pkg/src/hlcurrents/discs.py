"""Structural discs θ -> R_θ through a vertical current.

h_{a,b,θ}(z, w) = (θz + (1-θ)a, w + (θ-1)b) and R_θ is the ρ-average of the
push-forwards (h_{a,b,θ})_* R. For potentials this is
U_θ(x) = ∫ u(H_{a,b,θ}(x)) ρ(a, b) with H = h^{-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, sparse

from .domain_maps import Bidisk
from .currents import (FIT_SAMPLES, HORIZONTAL, VERTICAL, CoefficientForm, GridSpec, PotentialField,
                       SmoothingKernel, exterior_weights, fit_radius, plane_bilinear,
                       annulus_defect, ddc, pair_current_form, slice_mass)


# annulus dd^c relative to the sup norm; FD truncation on log|z| stays near 1e-4
SUPPORT_TOL = 1e-2


def h_map(a: complex, b: complex, theta: complex, x):
    x = np.asarray(x, dtype=complex)
    z, w = x[..., 0], x[..., 1]
    return np.stack([theta * z + (1 - theta) * a, w + (theta - 1) * b], axis=-1)


def h_inverse(a: complex, b: complex, theta: complex, x):
    x = np.asarray(x, dtype=complex)
    z, w = x[..., 0], x[..., 1]
    return np.stack([(z + (theta - 1) * a) / theta, w - (theta - 1) * b], axis=-1)


def _gl_disc_rule(center: complex, kernel: SmoothingKernel, nodes: int):
    """Tensor Gauss-Legendre nodes on the square around the kernel support."""
    x, wx = np.polynomial.legendre.leggauss(nodes)
    e = kernel.epsilon
    pts = center + e * (x[:, None] + 1j * x[None, :])
    wts = e * e * wx[:, None] * wx[None, :] * kernel.profile(np.abs(pts - center))
    keep = wts > 0
    pts, wts = pts[keep], wts[keep]
    return pts.ravel(), (wts / wts.sum()).ravel()


@dataclass
class StructuralDiscSpec:
    base: PotentialField
    center: tuple = (0.0, 0.0)
    kernel: SmoothingKernel = field(default_factory=lambda: SmoothingKernel(0.3))
    quadrature_nodes: int = 12
    theta_domain: tuple = (-0.25, 1.25, -0.5, 0.5)
    check_support: bool = True

    def __post_init__(self):
        if self.base.orientation != VERTICAL:
            raise ValueError("structural discs are built on vertical currents")
        D = self.base.bidisk
        a0, b0 = self.center
        e = self.kernel.epsilon
        if abs(a0) + e >= D.m_star or abs(b0) + e >= D.n_star:
            raise ValueError("kernel support must lie strictly inside D*")
        if self.check_support:
            R = ddc(self.base)
            if annulus_defect(self.base) > SUPPORT_TOL * R.sup_norm():
                raise ValueError("base current is not supported in D'")
        self.degraded = self.quadrature_nodes < 8
        self.a_nodes, self.a_weights = _gl_disc_rule(complex(a0), self.kernel, self.quadrature_nodes)
        self.b_nodes, self.b_weights = _gl_disc_rule(complex(b0), self.kernel, self.quadrature_nodes)

    def in_domain(self, theta: complex) -> bool:
        x0, x1, y0, y1 = self.theta_domain
        return x0 <= theta.real <= x1 and y0 <= theta.imag <= y1

    @property
    def grid(self) -> GridSpec:
        return self.base.grid


# ---------------------------------------------------------------- plane resampling

def _plane_operator(grid: GridSpec, targets, which: str, outside: str):
    """Sparse bilinear interpolation matrix on the z- or w-plane.

    Row k evaluates at targets[k]; ``outside`` is "clamp" (nearest node),
    "zero" or "continue". With "continue" the rows of targets beyond the
    square are zero and the exterior part is returned separately as
    (far_index, Q, extra_log): values there are Q @ (ring samples) plus the
    growth times extra_log.
    """
    n = grid.resolution
    rad = grid.bidisk.m_radius if which == "z" else grid.bidisk.n_radius
    t = np.asarray(targets, dtype=complex).ravel()
    far = np.maximum(np.abs(t.real), np.abs(t.imag)) > rad
    keep = np.ones(t.size)
    if outside in ("zero", "continue"):
        keep = (~far).astype(float)
    cols, wts = plane_bilinear(grid, t, which)
    rows = np.tile(np.arange(t.size), 4)
    M = sparse.coo_matrix((np.concatenate(wts) * np.tile(keep, 4), (rows, np.concatenate(cols))),
                          shape=(t.size, n * n))
    if outside != "continue":
        return M, None
    idx = np.flatnonzero(far)
    r0 = fit_radius(grid.bidisk, VERTICAL if which == "z" else HORIZONTAL)
    return M, (idx, exterior_weights(t[idx], r0), np.log(np.abs(t[idx]) / r0))


def _ring_operator(grid: GridSpec, which: str):
    r0 = fit_radius(grid.bidisk, VERTICAL if which == "z" else HORIZONTAL)
    ring = r0 * np.exp(2j * np.pi * np.arange(FIT_SAMPLES) / FIT_SAMPLES)
    M, _ = _plane_operator(grid, ring, which, "clamp")
    return M.tocsr()


def _weighted_sum(mats, weights):
    """Σ w_k M_k for COO matrices of equal shape, built once."""
    rows = np.concatenate([m.row for m in mats])
    cols = np.concatenate([m.col for m in mats])
    vals = np.concatenate([w * m.data for m, w in zip(mats, weights)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=mats[0].shape)


# ---------------------------------------------------------------- disc slices

def endpoint_potential(spec: StructuralDiscSpec) -> PotentialField:
    """Potential ∫ log|z - a| ρ(a, b) of R_0 = π₁*(π₁)_*(ρλ); w-independent."""
    a0 = complex(spec.center[0])
    k = spec.kernel
    fn = lambda z, w: k.log_potential(np.abs(np.asarray(z) - a0)) + 0 * np.real(w)
    return PotentialField.from_function(fn, spec.grid, VERTICAL, 1.0, spec.base.floor)


def disc_slice(spec: StructuralDiscSpec, theta: complex) -> PotentialField:
    """U_θ(x) = ∫ u(H_{a,b,θ}(x)) ρ(a,b) by tensor quadrature over (a, b)."""
    theta = complex(theta)
    if not spec.in_domain(theta):
        raise ValueError("theta outside the disc parameter domain")
    if theta == 0:
        return endpoint_potential(spec)
    base = spec.base
    g = base.grid
    n2 = g.resolution**2
    zp = g.z_plane()
    wp = g.w_plane()
    vals = np.asarray(base.values).reshape(n2, n2)
    # w-pass: V(z_node, w) = Σ_j β_j u(z_node, w - (θ-1) b_j)
    Mw = _weighted_sum([_plane_operator(g, wp - (theta - 1) * bj, "w", "clamp")[0] for bj in spec.b_nodes],
                       spec.b_weights)
    V = (Mw @ vals.T).T
    # z-pass: U(z, w) = Σ_i α_i V((z + (θ-1) a_i)/θ, w)
    mats = []
    Q = np.zeros((n2, FIT_SAMPLES))
    ez = np.zeros(n2)
    for ai, alpha in zip(spec.a_nodes, spec.a_weights):
        M, (idx, q, extra) = _plane_operator(g, (zp + (theta - 1) * ai) / theta, "z", "continue")
        mats.append(M)
        Q[idx] += alpha * q
        ez[idx] += alpha * extra
    Mz = _weighted_sum(mats, spec.a_weights)
    U = Mz @ V + Q @ (_ring_operator(g, "z") @ V) + base.growth * ez[:, None]
    new_func = None
    if base.func is not None:
        new_func = _disc_func(spec, theta)
    return PotentialField(U.reshape(g.shape), g, VERTICAL, base.floor, base.growth, new_func)


def _disc_func(spec: StructuralDiscSpec, theta: complex):
    ev = spec.base.evaluate
    an, aw = spec.a_nodes, spec.a_weights
    bn, bw = spec.b_nodes, spec.b_weights

    def fn(z, w):
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        z, w = np.broadcast_arrays(z, w)
        acc = np.zeros(z.shape)
        for bj, beta in zip(bn, bw):
            wt = w - (theta - 1) * bj
            for ai, alpha in zip(an, aw):
                acc += alpha * beta * ev((z + (theta - 1) * ai) / theta, wt)
        return acc

    return fn


def disc_form(spec: StructuralDiscSpec, theta: complex, base_form: CoefficientForm | None = None) -> CoefficientForm:
    """Coefficient form of R_θ by substituting t = H_{a,b,θ}(x)_1 in the a-average.

    At θ = 0 this is the discrete endpoint ρ₁(z) · Σ_t r_zz(t) h². Valid while the kernel footprint ε|1-θ|/|θ| spans at least two cells;
    near θ = 1 use ``ddc(disc_slice(spec, θ))`` instead.
    """
    theta = complex(theta)
    g = spec.grid
    if theta == 1:
        return ddc(spec.base) if base_form is None else base_form
    footprint = spec.kernel.epsilon * abs(1 - theta) / max(abs(theta), 1e-300)
    if theta != 0 and footprint < 2 * g.hz:
        raise ValueError("kernel footprint below two cells; use the potential route")
    R = ddc(spec.base) if base_form is None else base_form
    n2 = g.resolution**2
    zp = g.z_plane().ravel()
    wp = g.w_plane()
    a0 = complex(spec.center[0])
    Mw = _weighted_sum([_plane_operator(g, wp - (theta - 1) * bj, "w", "zero")[0] for bj in spec.b_nodes],
                       spec.b_weights)
    entries = {}
    for name in ("zz", "ww", "zw"):
        arr = np.where(R.valid, getattr(R, name), 0).reshape(n2, n2)
        entries[name] = (Mw @ arr.T).T
    # kernel matrix K[z, t] = ψ((z - θ t)/(1 - θ) - a0) h² / |1 - θ|²
    a = (zp[:, None] - theta * zp[None, :]) / (1 - theta)
    K = spec.kernel.profile(np.abs(a - a0)) * g.hz**2 / abs(1 - theta) ** 2
    zz = (K @ entries["zz"]).reshape(g.shape)
    ww = (abs(theta) ** 2 * (K @ entries["ww"])).reshape(g.shape)
    zw = (np.conj(theta) * (K @ entries["zw"])).reshape(g.shape)
    valid = np.ones(g.shape, dtype=bool)
    valid[0], valid[-1] = False, False
    valid[:, 0], valid[:, -1] = False, False
    return CoefficientForm(zz, ww, zw, g, VERTICAL, valid)


def endpoint_form(spec: StructuralDiscSpec) -> CoefficientForm:
    """R_0 = ρ₁(z) dA(z) as a coefficient form (zz entry = (π/2) ρ₁)."""
    g = spec.grid
    zp, _ = g.nodes()
    a0 = complex(spec.center[0])
    zz = np.broadcast_to(0.5 * np.pi * spec.kernel.profile(np.abs(zp - a0)), g.shape).copy()
    return CoefficientForm(zz, np.zeros(g.shape), np.zeros(g.shape, complex), g, VERTICAL)


# ---------------------------------------------------------------- disc averages

def swap_coordinates(field_: PotentialField) -> PotentialField:
    """Exchange the roles of z and w; horizontal fields become vertical."""
    g = field_.grid
    D = g.bidisk
    swapped = Bidisk(D.n_radius, D.m_radius, D.inner_n_fraction, D.inner_m_fraction, D.margin_fraction)
    fn = None if field_.func is None else (lambda z, w, f=field_.func: f(w, z))
    orient = HORIZONTAL if field_.orientation == VERTICAL else VERTICAL
    return PotentialField(np.ascontiguousarray(np.asarray(field_.values).transpose(2, 3, 0, 1)),
                          GridSpec(swapped, g.resolution), orient, field_.floor, field_.growth, fn,
                          np.ascontiguousarray(field_.valid.transpose(2, 3, 0, 1)))


def disc_average_rule(epsilon: float, points: int = 16):
    """θ-nodes and weights for λ_ε: the center carries the inner quarter of
    the disc of radius ε around 1, the rest sits on the circle of radius ε/2."""
    thetas = np.concatenate([[1.0 + 0j], 1.0 + 0.5 * epsilon * np.exp(2j * np.pi * np.arange(points) / points)])
    weights = np.concatenate([[0.25], np.full(points, 0.75 / points)])
    return thetas, weights


def disc_average(field_: PotentialField, epsilon: float, kernel: SmoothingKernel | None = None,
                 center=(0.0, 0.0)) -> PotentialField:
    """Potential of R^(ε) = ∫ R_θ dλ_ε(θ) for a vertical or horizontal current."""
    horizontal = field_.orientation == HORIZONTAL
    base = swap_coordinates(field_) if horizontal else field_
    kernel = SmoothingKernel(0.5) if kernel is None else kernel
    spec = StructuralDiscSpec(base, center, kernel)
    thetas, weights = disc_average_rule(epsilon)
    acc = np.zeros(base.grid.shape)
    for t, wt in zip(thetas, weights):
        acc += wt * np.asarray(disc_slice(spec, t).values)
    out = PotentialField(acc, base.grid, VERTICAL, base.floor, base.growth)
    return swap_coordinates(out) if horizontal else out


# ---------------------------------------------------------------- diagnostics

@dataclass
class SubharmonicReport:
    worst_violation: float
    center_values: dict
    circle_means: dict
    constancy: float


def circle_thetas(center: complex, radius: float, points: int = 8):
    return center + radius * np.exp(2j * np.pi * np.arange(points) / points)


def subharmonicity_check(spec: StructuralDiscSpec, forms, centers, radii, points: int = 8,
                         cache: dict | None = None) -> list:
    """Sub-mean test of θ -> <R_θ, Φ> for each dd^c-nonnegative horizontal Φ.

    Returns one SubharmonicReport per form; violation = φ(θ₀) - circle mean.
    """
    cache = {} if cache is None else cache
    thetas = []
    for c in centers:
        thetas.append(complex(c))
        for r in radii:
            thetas.extend(complex(t) for t in circle_thetas(c, r, points))
    for t in thetas:
        key = (round(t.real, 12), round(t.imag, 12))
        if key not in cache:
            cache[key] = disc_slice(spec, t)
    reports = []
    for phi in forms:
        vals = {}
        for t in thetas:
            key = (round(t.real, 12), round(t.imag, 12))
            vals[key] = pair_current_form(cache[key], phi, by_parts=False).contraction
        worst = -np.inf
        cvals, means = {}, {}
        for c in centers:
            ck = (round(complex(c).real, 12), round(complex(c).imag, 12))
            for r in radii:
                ring = [vals[(round(t.real, 12), round(t.imag, 12))] for t in circle_thetas(c, r, points)]
                mean = float(np.mean(ring))
                means[(ck, r)] = mean
                worst = max(worst, vals[ck] - mean)
            cvals[ck] = vals[ck]
        allv = np.array(list(vals.values()))
        reports.append(SubharmonicReport(float(worst), cvals, means, float(allv.max() - allv.min())))
    return reports


@dataclass
class RegularityReport:
    lipschitz_c: float
    lipschitz_residual: float
    near_zero: tuple
    modulus_c: float
    modulus_A: float
    modulus_residual: float
    near_one: tuple
    conforming: bool


def _fit_linear_through_origin(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    c = float(np.dot(x, y) / np.dot(x, x))
    resid = float(np.max(np.abs(y - c * x) / np.maximum(np.abs(c * x), 1e-300)))
    return c, resid


def modulus_of_continuity(R: CoefficientForm, delta: float, mask=None) -> float:
    """sup |R(x) - R(y)| over grid neighbours within distance delta."""
    g = R.grid
    if delta < g.hz:
        # sub-cell scales interpolate linearly from one cell
        return delta / g.hz * modulus_of_continuity(R, g.hz, mask)
    k = int(round(delta / g.hz))
    best = 0.0
    m = R.valid if mask is None else (R.valid & mask)
    for name in ("zz", "ww", "zw"):
        a = getattr(R, name)
        for ax in range(4):
            for s in range(1, k + 1):
                d = np.abs(np.roll(a, -s, ax) - a)
                both = m & np.roll(m, -s, ax)
                if both.any():
                    best = max(best, float(d[both].max()))
    return best


def disc_regularity_probe(spec: StructuralDiscSpec, near_zero=(0.01, 0.02, 0.04, 0.07, 0.1),
                          near_one=(0.01, 0.02, 0.04, 0.07, 0.1)) -> RegularityReport:
    """Sup-norm distances of R_θ to the endpoints along real rays.

    Near 0 fits ‖R_θ - R_0‖ ≈ c|θ|; near 1 fits ‖R_θ - R‖ against
    c(‖R‖_∞|θ-1| + m(R, A|θ-1|)) over a small set of A.
    """
    g = spec.grid
    D = g.bidisk
    zp, wp = g.nodes()
    star = np.broadcast_to((np.abs(zp) < D.m_star) & (np.abs(wp) < D.n_star), g.shape)
    R = ddc(spec.base)
    R0 = disc_form(spec, 0.0, R)
    d0 = [(disc_form(spec, t, R) - R0).sup_norm(star) for t in near_zero]
    c0, r0 = _fit_linear_through_origin(near_zero, d0)
    d1 = [(ddc(disc_slice(spec, 1 - s)) - R).sup_norm(star) for s in near_one]
    rn = R.sup_norm(star)
    best = (np.inf, 1.0, 0.0)
    for A in (0.5, 1.0, 2.0, 4.0):
        x = [rn * s + modulus_of_continuity(R, A * s, star) for s in near_one]
        c, res = _fit_linear_through_origin(x, d1)
        if res < best[0]:
            best = (res, A, c)
    conforming = r0 < 0.2 and best[0] < 0.2 and np.isfinite(c0)
    return RegularityReport(c0, r0, (tuple(near_zero), tuple(d0)), best[2], best[1], best[0],
                            (tuple(near_one), tuple(d1)), bool(conforming))


# ---------------------------------------------------------------- Kobayashi chains

def hyperbolic_distance(t1: complex, t2: complex) -> float:
    """Kobayashi distance on the unit disc, artanh of the pseudo-hyperbolic distance."""
    q = abs(t1 - t2) / abs(1 - np.conj(t1) * t2)
    return float(np.arctanh(q))


def domain_chain_bound(theta_a: complex, theta_b: complex, rect=(-0.25, 1.25, -0.5, 0.5),
                       max_pieces: int = 12) -> float:
    """Upper bound for the Kobayashi distance of a rectangle between two real
    points, by chains of discs inscribed in the rectangle."""
    x0, x1, y0, y1 = rect
    r = 0.5 * (y1 - y0)
    yc = 0.5 * (y0 + y1)
    lo, hi = sorted((theta_a.real, theta_b.real))
    best = np.inf
    for k in range(1, max_pieces + 1):
        pts = np.linspace(lo, hi, k + 1)
        total = 0.0
        ok = True
        for p, q in zip(pts[:-1], pts[1:]):
            c = np.clip(0.5 * (p + q), x0 + r, x1 - r) + 1j * yc
            u, v = (p - c) / r, (q - c) / r
            if abs(u) >= 1 or abs(v) >= 1:
                ok = False
                break
            total += hyperbolic_distance(u, v)
        if ok:
            best = min(best, total)
    return float(best)


def ring_family_potential(A: float, kernel: SmoothingKernel | None = None):
    """U(θ, z) = max{log|z|, (1/A) log|θ|}, optionally mollified in z."""

    def U(theta, z):
        r = abs(theta) ** (1.0 / A)
        return _ring_potential(z, r, kernel)

    return U


def _ring_potential(z, r, kernel):
    az = np.abs(z)
    if kernel is None:
        return np.log(np.maximum(az, r))
    # mollified max(log|z|, log r): radial average of log max(|z - y|, r)
    offs, wts = kernel.quadrature(16, 32)
    out = np.zeros(np.shape(z))
    for o, wt in zip(offs, wts):
        out += wt * np.log(np.maximum(np.abs(z - o), r))
    return out


def slice_moments_2d(potential_z, radius: float = 1.0, n: int = 257):
    """Moments (mass, E|z|², E|z|⁴, |E z|) of (1/2π)Δu on a fine 2D grid."""
    x = np.linspace(-radius, radius, n)
    h = x[1] - x[0]
    Z = x[:, None] + 1j * x[None, :]
    u = potential_z(Z)
    lap = np.zeros_like(u)
    lap[1:-1, 1:-1] = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]) / h**2
    mu = lap * h * h / (2 * np.pi)
    mass = mu.sum()
    r2 = np.abs(Z) ** 2
    return np.array([mass, (mu * r2).sum() / mass, (mu * r2**2).sum() / mass, abs((mu * Z).sum() / mass)])


def ring_moments(r: float, kernel: SmoothingKernel | None):
    """Exact (mass, E|z|², E|z|⁴, |E z|) of the uniform circle measure of radius r
    convolved with the kernel."""
    if kernel is None:
        m2, m4 = 0.0, 0.0
    else:
        offs, wts = kernel.quadrature(32, 8)
        m2 = float(np.sum(wts * np.abs(offs) ** 2))
        m4 = float(np.sum(wts * np.abs(offs) ** 4))
    return np.array([1.0, r * r + m2, r**4 + 4 * r * r * m2 + m4, 0.0])


@dataclass
class ChainBoundReport:
    bounds: dict
    thetas: dict
    slice_errors: dict
    generic_bound: float
    analytic: dict


def kobayashi_chain_bound(R: PotentialField | None, S: PotentialField | None, A_values=(2, 4, 8),
                          kernel: SmoothingKernel | None = None, target_radius: float = 0.5,
                          slice_grid: int = 257) -> ChainBoundReport:
    """Upper bounds for the disc pseudo-distance between R and S.

    * R is S: 0 through the empty chain.
    * Generic pair: two structural discs sharing the endpoint R_0.
    * Degeneracy pair ([z=0], π₁*(ν_r)): the one-disc family
      max{log|z|, (1/A)log|θ|}, whose slice at |θ| = r^A is π₁*(ν_r); θ* is
      located by matching slice moments and the bound is ρ₀(0, θ*).
    """
    for F in (R, S):
        if F is not None and F.func is not None:
            rep = slice_mass(F)
            if abs(rep.mass - 1) > 1e-3:
                raise ValueError("inputs must be normalized vertical currents")
    if R is not None and R is S:
        return ChainBoundReport({A: 0.0 for A in A_values}, {}, {}, 0.0, {})
    generic = 2 * domain_chain_bound(0.0, 1.0)
    target = slice_moments_2d(lambda Z: _ring_potential(Z, target_radius, kernel), 1.0, slice_grid)
    bounds, thetas, errs, analytic = {}, {}, {}, {}
    for A in A_values:
        U = ring_family_potential(A, kernel)

        def gap(logt):
            mom = slice_moments_2d(lambda Z: U(np.exp(logt), Z), 1.0, slice_grid)
            return mom[1] - target[1]

        lo, hi = A * np.log(target_radius) - 2.0, min(A * np.log(target_radius) + 2.0, -1e-9)
        logt = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14)
        t = float(np.exp(logt))
        thetas[A] = t
        bounds[A] = hyperbolic_distance(0.0, t)
        analytic[A] = hyperbolic_distance(0.0, target_radius**A)
        r = t ** (1.0 / A)
        got = slice_moments_2d(lambda Z: U(t, Z), 1.0, slice_grid)
        errs[A] = float(np.max(np.abs(got[:3] - ring_moments(r, kernel)[:3])))
    return ChainBoundReport(bounds, thetas, errs, generic, analytic)


# ---------------------------------------------------------------- reconstruction

# spline interpolation error of log|z| at a cell, ~2e-4 on the default grids
MONOTONE_TOL = 1e-3


@dataclass
class ReconstructionResult:
    values: np.ndarray
    stages: np.ndarray
    converged: bool
    monotone: bool


class _SlicePotential:
    """ψ_ε-average in w of a vertical potential, as a function of z."""

    def __init__(self, field_: PotentialField, w0: complex, eps: float):
        g = field_.grid
        wt = SmoothingKernel(eps).profile(np.abs(g.w_plane() - w0))
        if wt.sum() <= 0:
            raise ValueError("epsilon below the w-grid spacing")
        wt = wt / wt.sum()
        self.grid = g
        self.mass = field_.growth
        self.values = np.tensordot(np.asarray(field_.values), wt, axes=([2, 3], [0, 1]))
        self.coeffs = ndimage.spline_filter(self.values, order=3, mode="nearest")
        self.r_fit = fit_radius(g.bidisk, VERTICAL)

    def __call__(self, z):
        # cubic spline: a bilinear interpolant is harmonic inside cells
        z = np.asarray(z, dtype=complex)
        m, h = self.grid.bidisk.m_radius, self.grid.hz
        idx = np.stack([((z.real + m) / h).ravel(), ((z.imag + m) / h).ravel()])
        out = ndimage.map_coordinates(self.coeffs, idx, order=3, mode="nearest", prefilter=False)
        return out.reshape(z.shape)

    def boundary_term(self, z0):
        """(1/2π)∮ (log|z - z0| ∂_r v - v ∂_r log|z - z0|) ds on the fit circle."""
        r = self.r_fit
        phi = 2 * np.pi * np.arange(FIT_SAMPLES) / FIT_SAMPLES
        e = np.exp(1j * phi)
        v = self(r * e)
        c = np.fft.fft(v - self.mass * np.log(r)) / FIT_SAMPLES
        k = np.fft.fftfreq(FIT_SAMPLES, 1.0 / FIT_SAMPLES)
        dv = self.mass / r - np.real(np.fft.ifft(np.abs(k) * c) * FIT_SAMPLES) / r
        z0 = np.atleast_1d(np.asarray(z0, dtype=complex))[:, None]
        zc = r * e[None, :] - z0
        integrand = np.log(np.abs(zc)) * dv[None, :] - v[None, :] * np.real(e[None, :] / zc)
        return r * integrand.mean(axis=1)

    def circle_mean(self, z0, delta, points: int = 64):
        z0 = np.atleast_1d(np.asarray(z0, dtype=complex))
        ring = delta * np.exp(2j * np.pi * (np.arange(points) + 0.5) / points)
        return self(z0[:, None] + ring[None, :]).mean(axis=1)


def reconstruct_potential_from_slices(family, probes, eps_schedule=(0.6, 0.45, 0.35),
                                      delta_cells=(4, 2, 1, 0.5)) -> ReconstructionResult:
    """U(θ₀, z₀, w₀) = <<R_θ₀, π₂, w₀>, log|z - z₀|> through (ε, δ) stages.

    ``family(θ)`` returns a normalized vertical PotentialField. At each stage
    the slice of R_θ₀ is smoothed in w by ψ_ε and paired with
    max(log|z - z₀|, log δ); by Green's identity that pairing is the δ-circle
    mean of the smoothed slice potential plus a boundary term on the fit
    circle, which lies outside the support. δ runs over ``delta_cells``
    multiples of the z-grid spacing.
    """
    out, stages = [], []
    monotone = True
    for theta0, z0, w0 in probes:
        F = family(theta0)
        delta_schedule = [k * F.grid.hz for k in delta_cells]
        row = []
        for eps in eps_schedule:
            v = _SlicePotential(F, w0, eps)
            if abs(z0) + max(delta_schedule) >= v.r_fit:
                raise ValueError("probe too close to the free boundary")
            b = float(v.boundary_term(z0)[0])
            per_delta = [float(v.circle_mean(z0, d)[0]) + b for d in delta_schedule]
            if np.any(np.diff(per_delta) > MONOTONE_TOL):
                monotone = False
            row.append(per_delta)
        stages.append(row)
        out.append(row[-1][-1])
    stages = np.array(stages)
    flat = stages.reshape(len(probes), -1)
    converged = bool(np.all(np.abs(flat[:, -1] - flat[:, -2]) <= 1e-2))
    return ReconstructionResult(np.array(out), stages, converged, monotone)


def reconstruction_discrepancy(family, theta0: complex, w0: complex, eps: float = 0.35,
                               delta_cells: float = 1.0) -> float:
    """Mass of dd^c(reconstruction - family member) on a z-slice.

    Both are evaluated on the z-nodes inside the inner radius less δ; the
    difference should be pluriharmonic up to the δ-smoothing.
    """
    F = family(theta0)
    v = _SlicePotential(F, w0, eps)
    g = F.grid
    delta = delta_cells * g.hz
    Z = g.z_plane()
    inside = np.abs(Z) < g.bidisk.m_inner - delta
    recon = np.zeros(Z.shape)
    recon[inside] = v.circle_mean(Z[inside], delta) + v.boundary_term(Z[inside])
    diff = recon - v.values
    h = g.hz
    lap = np.zeros_like(diff)
    lap[1:-1, 1:-1] = (diff[2:, 1:-1] + diff[:-2, 1:-1] + diff[1:-1, 2:] + diff[1:-1, :-2]
                       - 4 * diff[1:-1, 1:-1]) / h**2
    core = inside & (ndimage.minimum_filter(inside.astype(int), size=3) > 0)
    return float(np.abs(np.sum(lap[core])) * h * h / (2 * np.pi))
