"""The equilibrium measure μ = T₊ ∧ T₋ by three routes.

* points: atoms f^n(ζ, b) over the roots ζ of π₁f^{2n}(ζ, b) = a, each of
  weight d^{-2n};
* wedge: smooth wedge of regularized dd^c G⁺ and dd^c G⁻;
* forms: smooth wedge of regularized normalized pull-backs and push-forwards
  of smooth seeds.

Moments are compared as a vector, relative to its largest entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .currents import (AtomicMeasure, GridSpec, PotentialField, SmoothingKernel, ddc, moments,
                       normalize_pullback, normalize_pushforward, regularize, smooth_horizontal,
                       smooth_vertical)
from .domain_maps import Bidisk, HenonLikeMap, MapSequence, compose, count_vertical_preimages
from .green import canonical_seed, green_iterate
from .intersection import WedgeResult, wedge_smooth
from .discs import swap_coordinates

POINT_DEPTH_CAP = 6
GENERIC_FRACTION = 0.95
WEDGE_EPSILON = 0.4
ROUTE_TOL = 0.05


class InsufficientDepthError(ValueError):
    pass


@dataclass
class MuCloud:
    measure: AtomicMeasure
    n: int
    params: tuple
    route: str
    found: int
    expected: int
    residuals: np.ndarray
    roots: np.ndarray
    maps: tuple = ()

    @property
    def generic(self) -> bool:
        return self.found >= GENERIC_FRACTION * self.expected

    @property
    def deficit(self) -> int:
        return self.expected - self.found

    def orbit_points(self, j: int) -> np.ndarray:
        """f^j(ζ, b) for every root; j = n gives the atoms."""
        if not 0 <= j <= 2 * self.n:
            raise ValueError("orbit index outside [0, 2n]")
        b = self.params[1]
        x = np.stack([self.roots, np.full(self.roots.shape, b, dtype=complex)], axis=-1)
        return compose(list(self.maps[:j]), x).point

    def shifted(self, k: int) -> AtomicMeasure:
        """The cloud pulled back by f^k, bounded forward for n + k steps."""
        pts = self.orbit_points(self.n - k)
        return AtomicMeasure(pts, self.measure.weights)


def mu_points(f: HenonLikeMap, a: complex, b: complex, n: int, bidisk: Bidisk | None = None,
              depth_cap: int = POINT_DEPTH_CAP) -> MuCloud:
    """d^{-2n} Σ δ_x over f^n{w = b} ∩ f^{-n}{z = a}."""
    D = Bidisk() if bidisk is None else bidisk
    if not (abs(a) < D.m_inner and abs(b) < D.n_inner):
        raise ValueError("(a, b) must lie in the inner bidisk")
    if n > depth_cap:
        raise ValueError(f"depth {n} exceeds the cap {depth_cap}")
    d = f.degree
    if n == 0:
        m = AtomicMeasure(np.array([[a, b]]), np.array([1.0]))
        return MuCloud(m, 0, (a, b), "points", 1, 1, np.zeros(1), np.array([a], dtype=complex), ())
    maps = (f,) * (2 * n)
    rep = count_vertical_preimages(list(maps), D, a, b)
    roots = np.repeat(rep.roots, rep.multiplicities)
    x = np.stack([roots, np.full(roots.shape, b, dtype=complex)], axis=-1)
    atoms = compose(list(maps[:n]), x).point
    weights = np.full(roots.size, float(d) ** (-2 * n))
    return MuCloud(AtomicMeasure(atoms, weights), n, (a, b), "points", int(roots.size),
                   d ** (2 * n), rep.newton_residuals, roots, maps)


def pooled_cloud(f: HenonLikeMap, params, n: int, bidisk: Bidisk | None = None,
                 shift: int = 0) -> AtomicMeasure:
    """Equal-weight average of point clouds over several (a, b).

    ``shift`` = k pulls every cloud back by f^k, so forward windows of
    length 2k stay centered between the lines {w = b} and {z = a}.
    """
    clouds = [mu_points(f, a, b, n, bidisk) for a, b in params]
    pts = np.concatenate([c.shifted(shift).points for c in clouds])
    wts = np.concatenate([c.measure.weights / len(clouds) for c in clouds])
    return AtomicMeasure(pts, wts)


def moment_distance(m1: np.ndarray, m2: np.ndarray) -> float:
    """max |m1 - m2| relative to the largest entry of m2."""
    return float(np.abs(m1 - m2).max() / max(np.abs(m2).max(), 1e-300))


# ---------------------------------------------------------------- wedge routes

def _green_pair(f: HenonLikeMap, n: int, grid: GridSpec):
    seq = MapSequence.constant(f, max(n, 1), grid.bidisk)
    plus = green_iterate(seq, canonical_seed(grid), n, stop=False).final
    sgrid = GridSpec(Bidisk(grid.bidisk.n_radius, grid.bidisk.m_radius), grid.resolution)
    minus = green_iterate(seq, swap_coordinates(canonical_seed(sgrid)), n, stop=False,
                          direction="backward").final
    return plus, minus


def mu_wedge(f: HenonLikeMap, n: int, bidisk: Bidisk | None = None, resolution: int = 32,
             epsilon: float = WEDGE_EPSILON, green=None) -> WedgeResult:
    """wedge_smooth of ddc of the ε-regularized depth-n Green potentials.

    ``green`` optionally supplies precomputed (G⁺, G⁻).
    """
    D = Bidisk() if bidisk is None else bidisk
    grid = GridSpec(D, resolution)
    plus, minus = _green_pair(f, n, grid) if green is None else green
    k = SmoothingKernel(epsilon)
    out = wedge_smooth(ddc(regularize(plus, k)), ddc(regularize(minus, k)))
    out.route = "wedge"
    return out


def mu_forms(f: HenonLikeMap, R: PotentialField, S: PotentialField, m: int, n: int,
             epsilon: float = WEDGE_EPSILON) -> WedgeResult:
    """Wedge of d^{-m}(f^m)^*R and d^{-n}(f^n)_*S after ε-regularization.

    Pull-backs and push-forwards compose exact evaluators when the seeds carry
    them, so the grid values are orbit-evaluated.
    """
    d = f.degree
    Rm = R
    for _ in range(m):
        Rm = normalize_pullback(f, Rm, d)
    Sn = S
    for _ in range(n):
        Sn = normalize_pushforward(f, Sn, d)
    k = SmoothingKernel(epsilon)
    out = wedge_smooth(ddc(regularize(Rm.grid_only(), k)), ddc(regularize(Sn.grid_only(), k)))
    out.route = "forms"
    return out


def default_form_seeds(bidisk: Bidisk, resolution: int = 32):
    return (smooth_vertical(0.0, bidisk, 1.0, resolution),
            smooth_horizontal(0.0, bidisk, 1.0, resolution))


# ---------------------------------------------------------------- invariance and mixing

def invariance_test(measure: AtomicMeasure, f: HenonLikeMap, moment_degree: int = 2,
                    inverse: bool = False) -> float:
    """max |moment(f_*μ) - moment(μ)| over all mixed moments up to the degree."""
    fn = f.inverse if inverse else f.forward
    pushed = measure.pushed(fn)
    return float(np.abs(moments(pushed, moment_degree, False) - moments(measure, moment_degree, False)).max())


def self_distance(m1: AtomicMeasure, m2: AtomicMeasure, moment_degree: int = 2) -> float:
    return float(np.abs(moments(m1, moment_degree, False) - moments(m2, moment_degree, False)).max())


def _mixing_terms(measure: AtomicMeasure, f: HenonLikeMap, phi, psi, m: int, escape: float | None):
    z, w, wt = measure.z, measure.w, measure.weights / measure.total_mass
    fz, fw = z.copy(), w.copy()
    bz, bw = z.copy(), w.copy()
    limit = 1e6 if escape is None else escape
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(m):
            fz, fw = f.forward(fz, fw)
            bz, bw = f.inverse(bz, bw)
    bad = ~(np.isfinite(fz) & np.isfinite(bz) & (np.abs(fz) < limit) & (np.abs(fw) < limit)
            & (np.abs(bz) < limit) & (np.abs(bw) < limit))
    if (wt[bad] > 0).any():
        raise InsufficientDepthError(f"{int(bad.sum())} atoms escape within {m} steps")
    prod = np.real(phi(fz, fw)) * np.real(psi(bz, bw))
    base = np.sum(wt * np.real(phi(z, w))) * np.sum(wt * np.real(psi(z, w)))
    return wt, prod, base


def mixing_correlation(measure: AtomicMeasure, f: HenonLikeMap, phi, psi, m: int,
                       escape: float | None = None) -> float:
    """Σ w φ(f^m x) ψ(f^{-m} x) - (Σ w φ)(Σ w ψ)."""
    wt, prod, base = _mixing_terms(measure, f, phi, psi, m, escape)
    return float(np.sum(wt * prod) - base)


def mixing_noise_floor(measure: AtomicMeasure, f: HenonLikeMap, phi, psi, m: int,
                       escape: float | None = None) -> float:
    """Standard error of the weighted product mean at lag m; sqrt(Σ w² (p - p̄)²)."""
    wt, prod, _ = _mixing_terms(measure, f, phi, psi, m, escape)
    mean = np.sum(wt * prod)
    return float(np.sqrt(np.sum(wt**2 * (prod - mean) ** 2)))


def mixing_profile(measure: AtomicMeasure, f: HenonLikeMap, phi, psi, m_max: int) -> np.ndarray:
    return np.array([mixing_correlation(measure, f, phi, psi, m) for m in range(m_max + 1)])


def moving_average(x, width: int = 5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size < width:
        return x.copy()
    return np.convolve(x, np.ones(width) / width, mode="valid")


def saddle_point_mass(f: HenonLikeMap) -> AtomicMeasure:
    """Unit mass at a fixed point (z, z) with p(z) + twist·z = z."""
    coeffs = f.coeffs.copy()
    coeffs[1] += f.twist - 1
    roots = np.polynomial.polynomial.polyroots(coeffs)
    z0 = roots[np.argmax(np.abs(roots))]
    return AtomicMeasure(np.array([[z0, z0]]), np.array([1.0]))


def k_proxy_fraction(measure: AtomicMeasure, f: HenonLikeMap, n: int, bidisk: Bidisk) -> float:
    """Weight share of atoms whose orbits stay in the bidisk for n steps both ways."""
    z, w = measure.z.copy(), measure.w.copy()
    bz, bw = z.copy(), w.copy()
    ok = bidisk.contains(z, w)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n):
            z, w = f.forward(z, w)
            bz, bw = f.inverse(bz, bw)
            ok &= bidisk.contains(z, w) & bidisk.contains(bz, bw)
    return float(measure.weights[ok].sum() / measure.total_mass)


# ---------------------------------------------------------------- Cesàro route

def slice_quadrature(S: PotentialField):
    """Nodes and weights of the w-plane measure dd^c v for a potential v(w)."""
    if S.orientation != "horizontal":
        raise ValueError("S must be horizontal")
    g = S.grid
    v = np.asarray(S.values)[0, 0]
    lap = (np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1) - 4 * v) / g.hw**2
    lap[[0, -1], :] = 0
    lap[:, [0, -1]] = 0
    dens = np.maximum(lap, 0) / (2 * np.pi)
    wts = dens * g.hw**2
    keep = wts > 1e-12 * wts.max()
    nodes = g.w_plane()[keep]
    w = wts[keep]
    return nodes, w / w.sum()


def cesaro_measure(f: HenonLikeMap, a: complex, S: PotentialField, n: int,
                   bidisk: Bidisk | None = None) -> AtomicMeasure:
    """(1/n) Σ_{j<n} d^{-n}(f^j)^*[z = a] ∧ (f^{n-j})_*S by the point route.

    S is written as an average of horizontal lines [w = b] over its slice
    measure; for each b the roots ζ of π₁f^n(ζ, b) = a give the atoms
    f^{n-j}(ζ, b) of the j-th term.
    """
    D = Bidisk() if bidisk is None else bidisk
    d = f.degree
    bs, bw = slice_quadrature(S)
    pts = []
    wts = []
    for b, wb in zip(bs, bw):
        rep = count_vertical_preimages([f] * n, D, a, b)
        roots = np.repeat(rep.roots, rep.multiplicities)
        x = np.stack([roots, np.full(roots.shape, b, dtype=complex)], axis=-1)
        for j in range(n):
            pts.append(compose([f] * (n - j), x).point)
            wts.append(np.full(roots.size, wb / (n * float(d) ** n)))
    return AtomicMeasure(np.concatenate(pts), np.concatenate(wts))
