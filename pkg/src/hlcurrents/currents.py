"""Grid representations of (1,1)-currents on a bidisk.

Conventions
-----------
* dd^c = (i/pi) ∂∂̄, so dd^c log|z - a| is the unit point mass in the z-plane.
* A (1,1)-form is (i/pi) Σ H_{jk} dz_j ∧ dz̄_k; ``ddc(u)`` stores the complex
  Hessian H_{jk} = ∂²u/∂z_j∂z̄_k, so |z|² + |w|² gives the identity.
* The wedge of two such forms is (4/pi²) * mix(R, S) * dV where
  mix(R, S) = r_zz s_ww + r_ww s_zz - 2 Re(r_zw conj(s_zw)) and dV is
  Lebesgue measure on R⁴. With this, (dd^c|z|²) ∧ (dd^c|w|²) has total mass
  4 on the unit bidisk.

Grids are uniform on the square [-m, m]² x [-n, n]² with axis order
(re z, im z, re w, im w). The bidisk is inscribed; integrals weight each
node by the fraction of its cell lying inside the discs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, ndimage

from .domain_maps import Bidisk, HenonLikeMap

VERTICAL = "vertical"
HORIZONTAL = "horizontal"
DEFAULT_RESOLUTION = 48
DEFAULT_FLOOR = -40.0
WEDGE_FACTOR = 4.0 / np.pi**2
CONTINUATION_HARMONICS = 32
FIT_SAMPLES = 128
_CHUNK = 1 << 20


@dataclass(frozen=True)
class GridSpec:
    bidisk: Bidisk
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.resolution < 4:
            raise ValueError("resolution too small")

    @property
    def shape(self):
        return (self.resolution,) * 4

    @property
    def hz(self) -> float:
        return 2 * self.bidisk.m_radius / (self.resolution - 1)

    @property
    def hw(self) -> float:
        return 2 * self.bidisk.n_radius / (self.resolution - 1)

    @property
    def xz(self) -> np.ndarray:
        return np.linspace(-self.bidisk.m_radius, self.bidisk.m_radius, self.resolution)

    @property
    def xw(self) -> np.ndarray:
        return np.linspace(-self.bidisk.n_radius, self.bidisk.n_radius, self.resolution)

    def z_plane(self) -> np.ndarray:
        x = self.xz
        return x[:, None] + 1j * x[None, :]

    def w_plane(self) -> np.ndarray:
        x = self.xw
        return x[:, None] + 1j * x[None, :]

    def nodes(self):
        """Broadcastable z (n, n, 1, 1) and w (1, 1, n, n) node coordinates."""
        return self.z_plane()[:, :, None, None], self.w_plane()[None, None, :, :]

    def full_nodes(self):
        z, w = self.nodes()
        return np.broadcast_to(z, self.shape), np.broadcast_to(w, self.shape)

    @property
    def cell_volume(self) -> float:
        return self.hz**2 * self.hw**2

    def disc_weights(self):
        """Per-node area fractions (z-plane, w-plane) of cells inside M and N."""
        return (_disc_fraction(self.resolution, self.bidisk.m_radius, self.bidisk.m_radius),
                _disc_fraction(self.resolution, self.bidisk.n_radius, self.bidisk.n_radius))

    def bidisk_weights(self) -> np.ndarray:
        wz, ww = self.disc_weights()
        return wz[:, :, None, None] * ww[None, None, :, :]

    def region_weights(self, m: float, n: float) -> np.ndarray:
        """Cell fractions inside the sub-bidisk {|z| < m} x {|w| < n}."""
        wz = _disc_fraction(self.resolution, self.bidisk.m_radius, m)
        ww = _disc_fraction(self.resolution, self.bidisk.n_radius, n)
        return wz[:, :, None, None] * ww[None, None, :, :]

    def to_index(self, z, w):
        """Fractional grid indices of points, stacked as (4, ...)."""
        m, n, h1, h2 = self.bidisk.m_radius, self.bidisk.n_radius, self.hz, self.hw
        return np.stack([(np.real(z) + m) / h1, (np.imag(z) + m) / h1,
                         (np.real(w) + n) / h2, (np.imag(w) + n) / h2])


@lru_cache(maxsize=32)
def _disc_fraction(n: int, half_width: float, radius: float, sub: int = 16) -> np.ndarray:
    h = 2 * half_width / (n - 1)
    x = np.linspace(-half_width, half_width, n)
    off = (np.arange(sub) + 0.5) / sub - 0.5
    sx = (x[:, None] + h * off[None, :]).ravel()
    inside = (sx[:, None] ** 2 + sx[None, :] ** 2) < radius**2
    frac = inside.reshape(n, sub, n, sub).mean(axis=(1, 3))
    frac.setflags(write=False)
    return frac


def _boundary_mask(shape, width: int) -> np.ndarray:
    valid = np.ones(shape, dtype=bool)
    if width <= 0:
        return valid
    for ax in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[ax] = slice(0, width)
        valid[tuple(idx)] = False
        idx[ax] = slice(shape[ax] - width, shape[ax])
        valid[tuple(idx)] = False
    return valid


@dataclass(eq=False)
class PotentialField:
    """Grid samples of a psh potential u, optionally with an exact evaluator.

    ``growth`` is the slice mass s. Outside the grid square in the free
    direction (z for vertical, w for horizontal) the field is continued as
    s·log|z| plus the bounded exterior harmonic function matching it on the
    circle halfway between the inner and outer radii.
    ``func`` maps complex arrays (z, w) to values; when present it is used for
    every off-grid evaluation.
    """

    values: np.ndarray
    grid: GridSpec
    orientation: str = VERTICAL
    floor: float = DEFAULT_FLOOR
    growth: float = 1.0
    func: object = None
    valid: np.ndarray | None = None
    clamped: int = 0

    def __post_init__(self):
        if self.orientation not in (VERTICAL, HORIZONTAL):
            raise ValueError("orientation must be vertical or horizontal")
        if self.values.shape != self.grid.shape:
            raise ValueError("values do not match grid shape")
        self.values = np.maximum(self.values, self.floor)
        self.values.setflags(write=False)
        if self.valid is None:
            self.valid = np.ones(self.grid.shape, dtype=bool)
        self._exterior = None

    @property
    def bidisk(self) -> Bidisk:
        return self.grid.bidisk

    @property
    def fit_radius(self) -> float:
        return fit_radius(self.bidisk, self.orientation)

    def exterior_coefficients(self) -> np.ndarray:
        """Fourier coefficients (K+1, n, n) of u - s·log r0 on the fit circle,
        one set per node of the other plane."""
        if self._exterior is None:
            g = self.grid
            n = g.resolution
            r0 = self.fit_radius
            ring = r0 * np.exp(2j * np.pi * np.arange(FIT_SAMPLES) / FIT_SAMPLES)
            other = (g.w_plane() if self.orientation == VERTICAL else g.z_plane()).ravel()
            a, b = ring[:, None], other[None, :]
            z, w = (a, b) if self.orientation == VERTICAL else (b, a)
            z, w = np.broadcast_arrays(z, w)
            idx = g.to_index(z.ravel(), w.ravel())
            vals = ndimage.map_coordinates(self.values, idx, order=1, mode="nearest")
            vals = vals.reshape(FIT_SAMPLES, n * n) - self.growth * np.log(r0)
            coef = np.fft.fft(vals, axis=0)[:CONTINUATION_HARMONICS + 1] / FIT_SAMPLES
            self._exterior = coef.reshape(-1, n, n)
        return self._exterior

    def _continue(self, t, o) -> np.ndarray:
        """Values at points whose free coordinate t lies outside the square."""
        g = self.grid
        coef = self.exterior_coefficients().reshape(CONTINUATION_HARMONICS + 1, -1)
        cols, wts = plane_bilinear(g, o, "w" if self.orientation == VERTICAL else "z")
        e = (self.fit_radius / np.abs(t)) * np.exp(1j * np.angle(t))
        # harmonics beyond |e|^k < 1e-13 are dropped
        top = float(np.abs(e).max(initial=0.0))
        K = CONTINUATION_HARMONICS if top <= 0 else int(min(CONTINUATION_HARMONICS,
                                                            np.ceil(np.log(1e-13) / np.log(top))))
        gather = lambda k: sum(coef[k, c] * wt for c, wt in zip(cols, wts))
        acc = np.zeros(t.shape, dtype=complex)
        for k in range(K, 0, -1):
            acc = (acc + gather(k)) * e
        return self.growth * np.log(np.abs(t)) + gather(0).real + 2 * acc.real

    @classmethod
    def from_function(cls, func, grid: GridSpec, orientation=VERTICAL, growth=1.0,
                      floor=DEFAULT_FLOOR, keep_func=True) -> "PotentialField":
        values = _eval_on_nodes(func, grid)
        return cls(values, grid, orientation, floor, growth, func if keep_func else None)

    def grid_only(self) -> "PotentialField":
        return replace(self, func=None)

    def scaled(self, c: float) -> "PotentialField":
        fn = None if self.func is None else (lambda z, w, f=self.func: c * f(z, w))
        return replace(self, values=c * self.values, growth=c * self.growth, func=fn)

    def evaluate(self, z, w) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        z, w = np.broadcast_arrays(z, w)
        if self.func is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.maximum(np.asarray(self.func(z, w), dtype=float), self.floor)
        return self.interpolate(z, w)

    def interpolate(self, z, w) -> np.ndarray:
        """Multilinear interpolation with the radial log continuation."""
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        z, w = np.broadcast_arrays(z, w)
        shape = z.shape
        z = z.ravel()
        w = w.ravel()
        out = np.empty(z.size)
        m, n = self.bidisk.m_radius, self.bidisk.n_radius
        vertical = self.orientation == VERTICAL
        for s in range(0, z.size, _CHUNK):
            zc = z[s:s + _CHUNK]
            wc = w[s:s + _CHUNK]
            t, rad = (zc, m) if vertical else (wc, n)
            far = np.maximum(np.abs(t.real), np.abs(t.imag)) > rad
            vals = np.empty(zc.size)
            near = ~far
            if near.any():
                idx = self.grid.to_index(zc[near], wc[near])
                vals[near] = ndimage.map_coordinates(self.values, idx, order=1, mode="nearest")
            if far.any():
                vals[far] = self._continue(t[far], (wc if vertical else zc)[far])
            out[s:s + _CHUNK] = vals
        return np.maximum(out, self.floor).reshape(shape)

    def __add__(self, other: "PotentialField") -> "PotentialField":
        _check_compatible(self, other)
        fn = None
        if self.func is not None and other.func is not None:
            fn = lambda z, w, f=self.func, g=other.func: f(z, w) + g(z, w)
        return replace(self, values=self.values + other.values, growth=self.growth + other.growth,
                       func=fn, valid=self.valid & other.valid)


def fit_radius(bidisk: Bidisk, orientation: str) -> float:
    if orientation == VERTICAL:
        return 0.5 * (bidisk.m_inner + bidisk.m_radius)
    return 0.5 * (bidisk.n_inner + bidisk.n_radius)


def plane_bilinear(grid: GridSpec, t, which: str):
    """Flat node indices and weights of bilinear interpolation in one plane,
    clamped to the square."""
    n = grid.resolution
    rad = grid.bidisk.m_radius if which == "z" else grid.bidisk.n_radius
    h = grid.hz if which == "z" else grid.hw
    t = np.asarray(t, dtype=complex).ravel()
    fx = np.clip((t.real + rad) / h, 0, n - 1)
    fy = np.clip((t.imag + rad) / h, 0, n - 1)
    ix = np.minimum(np.floor(fx).astype(np.int64), n - 2)
    iy = np.minimum(np.floor(fy).astype(np.int64), n - 2)
    tx, ty = fx - ix, fy - iy
    cols = [(ix + dx) * n + (iy + dy) for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1))]
    wts = [(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty]
    return cols, wts


def exterior_weights(t, r0: float) -> np.ndarray:
    """Matrix Q (len(t), samples) with u(t) = s·log(|t|/r0) + Q @ u(ring) for
    u - s·log|z| bounded harmonic outside the fit circle."""
    t = np.asarray(t, dtype=complex).ravel()
    phi = 2 * np.pi * np.arange(FIT_SAMPLES) / FIT_SAMPLES
    e = (r0 / np.abs(t))[:, None] * np.exp(1j * (np.angle(t)[:, None] - phi[None, :]))
    # Σ_{k=1..K} e^k; |e| < 1 outside the fit circle
    acc = e * (1 - e**CONTINUATION_HARMONICS) / (1 - e)
    return (1 + 2 * acc.real) / FIT_SAMPLES


def _check_compatible(a, b):
    if a.grid != b.grid:
        raise ValueError("mismatched bidisks or resolutions")


def _eval_on_nodes(func, grid: GridSpec) -> np.ndarray:
    zp = grid.z_plane().ravel()
    wp = grid.w_plane().ravel()
    out = np.empty((zp.size, wp.size))
    step = max(1, _CHUNK // wp.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, zp.size, step):
            zz = zp[s:s + step, None]
            out[s:s + step] = np.broadcast_to(func(zz, wp[None, :]), (zz.shape[0], wp.size))
    return out.reshape(grid.shape)


@dataclass(eq=False)
class CoefficientForm:
    """Grid of Hermitian 2x2 matrices [[zz, zw], [conj(zw), ww]]."""

    zz: np.ndarray
    ww: np.ndarray
    zw: np.ndarray
    grid: GridSpec
    orientation: str = VERTICAL
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.zz = np.asarray(self.zz, dtype=float)
        self.ww = np.asarray(self.ww, dtype=float)
        self.zw = np.asarray(self.zw, dtype=complex)
        if self.valid is None:
            self.valid = np.ones(self.grid.shape, dtype=bool)

    @classmethod
    def zeros(cls, grid: GridSpec, orientation=VERTICAL) -> "CoefficientForm":
        return cls(np.zeros(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape, complex),
                   grid, orientation)

    def matrix(self) -> np.ndarray:
        out = np.empty(self.zz.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = self.zz
        out[..., 1, 1] = self.ww
        out[..., 0, 1] = self.zw
        out[..., 1, 0] = np.conj(self.zw)
        return out

    def is_positive(self, tol: float = 1e-10) -> bool:
        v = self.valid
        zz, ww, zw = self.zz[v], self.ww[v], self.zw[v]
        scale = max(1.0, float(np.abs(zz).max(initial=0)), float(np.abs(ww).max(initial=0)))
        t = tol * scale
        return bool((zz >= -t).all() and (ww >= -t).all() and (zz * ww - np.abs(zw) ** 2 >= -t * scale).all())

    def scaled(self, c: float) -> "CoefficientForm":
        return replace(self, zz=c * self.zz, ww=c * self.ww, zw=c * self.zw)

    def __add__(self, other: "CoefficientForm") -> "CoefficientForm":
        _check_compatible(self, other)
        return replace(self, zz=self.zz + other.zz, ww=self.ww + other.ww, zw=self.zw + other.zw,
                       valid=self.valid & other.valid)

    def __sub__(self, other: "CoefficientForm") -> "CoefficientForm":
        return self + other.scaled(-1.0)

    def multiplied(self, chi: np.ndarray) -> "CoefficientForm":
        """Pointwise product with a real function sampled on the grid."""
        return replace(self, zz=chi * self.zz, ww=chi * self.ww, zw=chi * self.zw)

    def sup_norm(self, mask=None) -> float:
        m = self.valid if mask is None else (self.valid & mask)
        if not m.any():
            return 0.0
        return float(max(np.abs(self.zz[m]).max(), np.abs(self.ww[m]).max(), np.abs(self.zw[m]).max()))

    def interpolate(self, z, w) -> "tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]":
        """Entries at arbitrary points; zero outside the grid box.

        Returns (zz, ww, zw, outside) where ``outside`` marks points off the grid.
        """
        idx = self.grid.to_index(z, w)
        n = self.grid.resolution
        outside = ((idx < 0) | (idx > n - 1)).any(axis=0)
        zz = ndimage.map_coordinates(self.zz, idx, order=1, mode="constant", cval=0.0)
        ww = ndimage.map_coordinates(self.ww, idx, order=1, mode="constant", cval=0.0)
        zr = ndimage.map_coordinates(self.zw.real, idx, order=1, mode="constant", cval=0.0)
        zi = ndimage.map_coordinates(self.zw.imag, idx, order=1, mode="constant", cval=0.0)
        return zz, ww, zr + 1j * zi, outside


@dataclass(frozen=True)
class AtomicMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.size:
            raise ValueError("one weight per point required")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def z(self):
        return self.points[:, 0]

    @property
    def w(self):
        return self.points[:, 1]

    def integrate(self, phi) -> complex:
        vals = phi(self.z, self.w)
        return _pairwise_sum(self.weights * vals)

    def normalized(self) -> "AtomicMeasure":
        return AtomicMeasure(self.points, self.weights / self.total_mass)

    def inside(self, bidisk: Bidisk) -> bool:
        return bool(bidisk.contains(self.z, self.w).all())

    def pushed(self, fn) -> "AtomicMeasure":
        z, w = fn(self.z, self.w)
        return AtomicMeasure(np.stack([z, w], axis=-1), self.weights)


def _pairwise_sum(x):
    # np.sum uses pairwise summation in a fixed order for contiguous input
    return np.sum(np.ascontiguousarray(x))


def moment_exponents(degree: int, holomorphic: bool = True):
    """Exponent tuples (i, j, k, l) of z^i w^j conj(z)^k conj(w)^l, 1 <= total <= degree."""
    out = []
    for tot in range(1, degree + 1):
        for i in range(tot + 1):
            for j in range(tot + 1 - i):
                for k in range(tot + 1 - i - j):
                    l = tot - i - j - k
                    if holomorphic and (k or l):
                        continue
                    out.append((i, j, k, l))
    return out


def moments(measure: AtomicMeasure, degree: int = 2, holomorphic: bool = True) -> np.ndarray:
    """Normalized mixed moments of a measure, ordered by ``moment_exponents``."""
    z, w, wt = measure.z, measure.w, measure.weights
    mass = wt.sum()
    vals = []
    for i, j, k, l in moment_exponents(degree, holomorphic):
        mono = z**i * w**j * np.conj(z) ** k * np.conj(w) ** l
        vals.append(_pairwise_sum(wt * mono) / mass)
    return np.array(vals, dtype=complex)


class SmoothingKernel:
    """Radial bump exp(-1/(1 - (r/eps)²)) on C, normalized to unit integral."""

    def __init__(self, epsilon: float):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self._c = 1.0 / _bump_mass()

    def profile(self, r) -> np.ndarray:
        s = np.asarray(r, dtype=float) / self.epsilon
        out = np.zeros_like(s)
        m = s < 1
        out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
        return out * self._c / self.epsilon**2

    def unit_integral(self) -> float:
        val, _ = integrate.quad(lambda r: 2 * np.pi * r * self.profile(r), 0, self.epsilon,
                                epsabs=1e-13, epsrel=1e-12)
        return val

    def quadrature(self, n_radial: int = 8, n_angular: int = 12):
        """Offsets y in C and weights approximating ∫ g(y) ψ_ε(y) dA(y)."""
        x, wx = np.polynomial.legendre.leggauss(n_radial)
        r = 0.5 * self.epsilon * (x + 1)
        wr = 0.5 * self.epsilon * wx * 2 * np.pi * r * self.profile(r)
        t = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
        offs = (r[:, None] * np.exp(1j * t[None, :])).ravel()
        wts = (wr[:, None] * np.ones(n_angular)[None, :] / n_angular).ravel()
        return offs, wts / wts.sum()

    def grid_stencil(self, h: float) -> np.ndarray:
        k = int(np.floor(self.epsilon / h))
        x = h * np.arange(-k, k + 1)
        st = self.profile(np.hypot(x[:, None], x[None, :]))
        return st / st.sum()

    def log_potential(self, r) -> np.ndarray:
        """∫ log|z - y| ψ_ε(y) dA(y) as a function of r = |z|."""
        r = np.asarray(r, dtype=float)
        out = np.log(np.maximum(r, 1e-300))
        inner = r < self.epsilon
        if inner.any():
            out[inner] = [_log_potential_inner(self, float(v)) for v in r[inner]]
        return out


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    val, _ = integrate.quad(lambda s: 2 * np.pi * s * np.exp(-1.0 / (1.0 - s * s)), 0, 1,
                            epsabs=1e-14, epsrel=1e-13)
    return val


def _log_potential_inner(kernel: SmoothingKernel, r: float) -> float:
    # radial mean value: the circle mean of log|z - y| over |y| = s is log max(r, s)
    f = lambda s: 2 * np.pi * s * kernel.profile(s) * np.log(max(r, s))
    pts = [r] if 0 < r < kernel.epsilon else None
    val, _ = integrate.quad(f, 0, kernel.epsilon, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


# ---------------------------------------------------------------- constructors

def vertical_line(a: complex, D: Bidisk, resolution: int = DEFAULT_RESOLUTION,
                  floor: float = DEFAULT_FLOOR) -> PotentialField:
    """Potential log|z - a| of the current of integration on {z = a}."""
    if abs(a) >= D.m_radius:
        raise ValueError("a must lie in M")
    fn = lambda z, w: np.log(np.abs(z - a)) + 0 * np.real(w)
    return PotentialField.from_function(fn, GridSpec(D, resolution), VERTICAL, 1.0, floor)


def horizontal_line(b: complex, D: Bidisk, resolution: int = DEFAULT_RESOLUTION,
                    floor: float = DEFAULT_FLOOR) -> PotentialField:
    if abs(b) >= D.n_radius:
        raise ValueError("b must lie in N")
    fn = lambda z, w: np.log(np.abs(w - b)) + 0 * np.real(z)
    return PotentialField.from_function(fn, GridSpec(D, resolution), HORIZONTAL, 1.0, floor)


def soft_logmax(x, radius: float = 1.0):
    """C² radial psh function equal to log|x| for |x| >= radius, unit Riesz mass."""
    s = np.abs(x) ** 2 / radius**2
    with np.errstate(divide="ignore"):
        outer = 0.5 * np.log(np.maximum(s, 1e-300))
    inner = 0.5 * (s - 1) - 0.25 * (s - 1) ** 2
    return np.where(s >= 1, outer, inner) + np.log(radius)


def smooth_vertical(a: complex, D: Bidisk, radius: float, resolution: int = DEFAULT_RESOLUTION):
    """Normalized smooth vertical potential soft_logmax(z - a, radius)."""
    fn = lambda z, w: soft_logmax(z - a, radius) + 0 * np.real(w)
    return PotentialField.from_function(fn, GridSpec(D, resolution), VERTICAL, 1.0)


def smooth_horizontal(b: complex, D: Bidisk, radius: float, resolution: int = DEFAULT_RESOLUTION):
    fn = lambda z, w: soft_logmax(w - b, radius) + 0 * np.real(z)
    return PotentialField.from_function(fn, GridSpec(D, resolution), HORIZONTAL, 1.0)


# ---------------------------------------------------------------- dd^c

def _d1(a, ax, h):
    return (np.roll(a, -1, ax) - np.roll(a, 1, ax)) / (2 * h)


def _d2(a, ax, h):
    return (np.roll(a, -1, ax) - 2 * a + np.roll(a, 1, ax)) / h**2


def ddc(u: PotentialField) -> CoefficientForm:
    """Complex Hessian by second-order central differences.

    The outermost layer of nodes and floor-clipped nodes' neighbours that
    leave the grid are marked invalid.
    """
    g = u.grid
    if g.resolution < 16:
        raise ValueError("grid resolution must be >= 16 per axis")
    v = np.asarray(u.values, dtype=float)
    hz, hw = g.hz, g.hw
    zz = 0.25 * (_d2(v, 0, hz) + _d2(v, 1, hz))
    ww = 0.25 * (_d2(v, 2, hw) + _d2(v, 3, hw))
    dx, dy = _d1(v, 0, hz), _d1(v, 1, hz)
    zw = 0.25 * ((_d1(dx, 2, hw) + _d1(dy, 3, hw)) + 1j * (_d1(dx, 3, hw) - _d1(dy, 2, hw)))
    valid = _boundary_mask(g.shape, 1) & u.valid
    valid &= ndimage.binary_erosion(u.valid, iterations=1, border_value=1)
    for a in (zz, ww):
        a[~valid] = 0.0
    zw[~valid] = 0.0
    return CoefficientForm(zz, ww, zw, g, u.orientation, valid)


def form_ddc_density(phi: CoefficientForm) -> np.ndarray:
    """Scalar s with <dd^c u, phi> = (4/pi²) ∫ u s dV for compactly supported phi."""
    g = phi.grid
    hz, hw = g.hz, g.hw
    s = 0.25 * (_d2(phi.ww, 0, hz) + _d2(phi.ww, 1, hz))
    s += 0.25 * (_d2(phi.zz, 2, hw) + _d2(phi.zz, 3, hw))
    f = np.conj(phi.zw)
    fx, fy = _d1(f, 0, hz), _d1(f, 1, hz)
    mixed = 0.25 * ((_d1(fx, 2, hw) + _d1(fy, 3, hw)) + 1j * (_d1(fx, 3, hw) - _d1(fy, 2, hw)))
    s -= 2 * mixed.real
    s[~_boundary_mask(g.shape, 1)] = 0.0
    return s


def mixed_density(r: CoefficientForm, s: CoefficientForm) -> np.ndarray:
    return r.zz * s.ww + r.ww * s.zz - 2 * np.real(r.zw * np.conj(s.zw))


def form_mass(r: CoefficientForm, region=None) -> float:
    """Trace mass ∫ R ∧ dd^c(|z|²+|w|²) of the absolute (nuclear-norm) form."""
    g = r.grid
    tr = r.zz + r.ww
    det = r.zz * r.ww - np.abs(r.zw) ** 2
    disc = np.sqrt(np.maximum(tr**2 - 4 * det, 0))
    nuc = 0.5 * (np.abs(tr + disc) + np.abs(tr - disc))
    wts = g.bidisk_weights() if region is None else region
    return float(WEDGE_FACTOR * g.cell_volume * _pairwise_sum((nuc * wts * r.valid).ravel()))


# ---------------------------------------------------------------- slice mass

@dataclass
class SliceMassReport:
    mass: float
    deviation: float
    per_slice: np.ndarray
    flagged: bool


def _slice_samples(radius: float) -> np.ndarray:
    k = np.arange(7)
    return np.concatenate([[0.0], 0.5 * radius * np.exp(2j * np.pi * (k + 0.3) / 7)])


def slice_mass(R: PotentialField, delta: float = 0.1, angular: int = 256,
               slices=None, eta: float | None = None) -> SliceMassReport:
    """Riesz mass of the slices of dd^c u through their boundary flux.

    The flux (1/2π)∮ ∂u/∂n at radius m(1-δ) is taken as the log-radius
    difference of circle means at m(1-δ)e^{±η}; η is small for exact
    evaluators and spans the harmonic annulus for grid-only fields.
    """
    D = R.bidisk
    vertical = R.orientation == VERTICAL
    rad = D.m_radius if vertical else D.n_radius
    inner = D.m_inner if vertical else D.n_inner
    other = D.n_radius if vertical else D.m_radius
    r0 = rad * (1 - delta)
    if eta is None:
        eta = 1e-3 if R.func is not None else min(np.log(0.99 * rad / r0), np.log(r0 / (1.01 * inner)))
    if slices is None:
        slices = _slice_samples(other)
    t = np.exp(2j * np.pi * np.arange(angular) / angular)
    masses = []
    for s in np.atleast_1d(slices):
        circ_hi = r0 * np.exp(eta) * t
        circ_lo = r0 * np.exp(-eta) * t
        if vertical:
            hi = R.evaluate(circ_hi, s).mean()
            lo = R.evaluate(circ_lo, s).mean()
        else:
            hi = R.evaluate(s, circ_hi).mean()
            lo = R.evaluate(s, circ_lo).mean()
        masses.append((hi - lo) / (2 * eta))
    masses = np.array(masses)
    mean = float(masses.mean())
    dev = float(np.abs(masses - mean).max())
    return SliceMassReport(mean, dev, masses, dev > 0.01 * max(abs(mean), 1e-300))


# ---------------------------------------------------------------- psh checks

def psh_fraction(u: PotentialField, rel_tol: float = 0.05, abs_tol: float = 1e-9) -> float:
    """Fraction of interior, non-floor nodes satisfying the discrete sub-mean
    inequality on coordinate circles in z and in w.

    A node passes when each coordinate Laplacian is >= -rel_tol times the
    sum of the absolute second differences (discretization tolerance).
    """
    v = np.asarray(u.values)
    g = u.grid
    mask = _boundary_mask(g.shape, 1) & (v > u.floor + 1e-9)
    mask &= ndimage.minimum_filter(v, size=3, mode="nearest") > u.floor + 1e-9
    ok = np.ones(g.shape, dtype=bool)
    for a0, a1, h in ((0, 1, g.hz), (2, 3, g.hw)):
        dxx, dyy = _d2(v, a0, h), _d2(v, a1, h)
        ok &= (dxx + dyy) >= -rel_tol * (np.abs(dxx) + np.abs(dyy)) - abs_tol
    return float(ok[mask].mean()) if mask.any() else 1.0


def annulus_defect(u: PotentialField) -> float:
    """Max |dd^c u| entry on the annulus where a vertical (horizontal) current
    must be pluriharmonic."""
    R = ddc(u)
    zp, wp = u.grid.nodes()
    D = u.bidisk
    if u.orientation == VERTICAL:
        ring = (np.abs(zp) > D.m_inner) & (np.abs(zp) < D.m_radius)
    else:
        ring = (np.abs(wp) > D.n_inner) & (np.abs(wp) < D.n_radius)
    ring = np.broadcast_to(ring, u.grid.shape)
    return R.sup_norm(ring)


# ---------------------------------------------------------------- pairings

def z_cutoff(grid: GridSpec, inner: float, outer: float, horizontal: bool = False) -> np.ndarray:
    """Smooth radial cutoff equal to 1 for |z| <= inner and 0 for |z| >= outer."""
    zp, wp = grid.nodes()
    r = np.abs(wp if horizontal else zp)
    t = np.clip((r - inner) / (outer - inner), 0, 1)
    chi = np.where(t <= 0, 1.0, np.where(t >= 1, 0.0, 0.0))
    mid = (t > 0) & (t < 1)
    a = np.exp(-1 / np.where(mid, 1 - t, 1.0))
    b = np.exp(-1 / np.where(mid, t, 1.0))
    chi = np.where(mid, a / (a + b), chi)
    return np.broadcast_to(chi, grid.shape) if chi.ndim == 4 else chi


def _cutoff_window(form: CoefficientForm, vertical: bool):
    """Transition annulus for the by-parts cutoff: outside the numerical
    support of the current, two cells clear of the grid edge."""
    g = form.grid
    D = g.bidisk
    rad, h = (D.m_radius, g.hz) if vertical else (D.n_radius, g.hw)
    zp, wp = g.nodes()
    r = np.broadcast_to(np.abs(zp if vertical else wp), g.shape)
    mag = np.abs(form.zz if vertical else form.ww)
    top = mag.max()
    if top == 0:
        return None
    # FD truncation on the harmonic part reaches ~1e-3 of the peak
    live = (mag > 1e-2 * top) & (g.bidisk_weights() > 0)
    inner = min(float(r[live].max()) + 2 * h, D.m_inner if vertical else D.n_inner)
    outer = rad - 2 * h
    if outer - inner < 2 * h:
        return None
    return inner, outer


@dataclass
class PairingResult:
    contraction: float
    by_parts: float | None

    @property
    def value(self) -> float:
        return self.contraction


def pair_current_form(R: PotentialField, phi: CoefficientForm, by_parts: bool = True) -> PairingResult:
    """<dd^c u, Φ> by pointwise contraction and, when requested, by parts.

    The by-parts route multiplies Φ by a cutoff equal to 1 on the support of
    the current and vanishing near its free boundary, then integrates
    u · dd^c(χΦ).
    """
    if R.grid != phi.grid:
        raise ValueError("mismatched bidisks or resolutions")
    if R.orientation == phi.orientation:
        raise ValueError("current and form must have opposite orientations")
    g = R.grid
    form = ddc(R)
    dens = mixed_density(form, phi)
    wts = np.where(form.valid & phi.valid, g.bidisk_weights(), 0.0)
    c1 = WEDGE_FACTOR * g.cell_volume * _pairwise_sum((dens * wts).ravel())
    c2 = None
    if by_parts:
        vertical = R.orientation == VERTICAL
        window = _cutoff_window(form, vertical)
        if window is not None:
            chi = z_cutoff(g, *window, horizontal=not vertical)
            s = form_ddc_density(phi.multiplied(chi))
            c2 = WEDGE_FACTOR * g.cell_volume * _pairwise_sum((np.asarray(R.values) * s).ravel())
    return PairingResult(float(c1), None if c2 is None else float(c2))


# ---------------------------------------------------------------- dynamics on currents

def pullback_potential(f: HenonLikeMap, u: PotentialField, degree: int | None = None) -> PotentialField:
    """u ∘ f on the grid; slice mass multiplies by the degree."""
    if u.orientation != VERTICAL:
        raise ValueError("pullback acts on vertical potentials")
    d = f.degree if degree is None else degree
    return _compose(u, f.forward, d)


def pushforward_potential(f: HenonLikeMap, v: PotentialField, degree: int | None = None) -> PotentialField:
    """v ∘ f^{-1} on the grid (push-forward by an invertible map)."""
    if v.orientation != HORIZONTAL:
        raise ValueError("push-forward acts on horizontal potentials")
    d = f.degree if degree is None else degree
    return _compose(v, f.inverse, d)


def _compose(u: PotentialField, fn, d) -> PotentialField:
    g = u.grid
    zf, wf = g.full_nodes()
    values = np.empty(g.shape)
    flat = values.reshape(-1)
    zr, wr = zf.reshape(-1), wf.reshape(-1)
    clamped = 0
    D = g.bidisk
    for s in range(0, zr.size, _CHUNK):
        with np.errstate(over="ignore", invalid="ignore"):
            tz, tw = fn(zr[s:s + _CHUNK], wr[s:s + _CHUNK])
        if u.orientation == VERTICAL:
            clamped += int((np.abs(tw.real) > D.n_radius).sum() + (np.abs(tw.imag) > D.n_radius).sum())
        else:
            clamped += int((np.abs(tz.real) > D.m_radius).sum() + (np.abs(tz.imag) > D.m_radius).sum())
        flat[s:s + _CHUNK] = u.evaluate(tz, tw)
    new_func = None
    if u.func is not None:
        new_func = lambda z, w, ev=u.evaluate: ev(*fn(z, w))
    return PotentialField(values, g, u.orientation, u.floor, u.growth * d, new_func,
                          clamped=clamped)


def normalize_pullback(f: HenonLikeMap, R: PotentialField, d: int) -> PotentialField:
    """L_v R = f^*R / d."""
    return pullback_potential(f, R, d).scaled(1.0 / d)


def normalize_pushforward(f: HenonLikeMap, S: PotentialField, d: int) -> PotentialField:
    """L_h S = f_*S / d."""
    return pushforward_potential(f, S, d).scaled(1.0 / d)


def congruence(jac: np.ndarray, zz, ww, zw):
    """Entries of J^T H conj(J) for H = [[zz, zw], [conj(zw), ww]]."""
    a, b = jac[..., 0, 0], jac[..., 0, 1]
    c, d = jac[..., 1, 0], jac[..., 1, 1]
    # H' = J^T H J̄ ; columns of J are ∂f/∂z and ∂f/∂w
    nzz = zz * np.abs(a) ** 2 + ww * np.abs(c) ** 2 + 2 * np.real(zw * a * np.conj(c))
    nww = zz * np.abs(b) ** 2 + ww * np.abs(d) ** 2 + 2 * np.real(zw * b * np.conj(d))
    nzw = (a * zz * np.conj(b) + c * ww * np.conj(d) + a * zw * np.conj(d)
           + c * np.conj(zw) * np.conj(b))
    return nzz, nww, nzw


def pullback_form(f: HenonLikeMap, R: CoefficientForm) -> tuple[CoefficientForm, int]:
    """f^*R with H'(x) = J(x)^T H(f(x)) conj(J(x)).

    Returns the form and the number of escape cells (f(x) off the grid).
    """
    g = R.grid
    z, w = g.full_nodes()
    fz, fw = f.forward(z, w)
    zz, ww, zw, outside = R.interpolate(fz, fw)
    jac = f.jacobian(z, w)
    nzz, nww, nzw = congruence(jac, zz, ww, zw)
    out = CoefficientForm(nzz, nww, nzw, g, R.orientation, R.valid.copy())
    return out, int(outside.sum())


def regularize(R: PotentialField, kernel: SmoothingKernel, quad_radial: int = 6,
               quad_angular: int = 12) -> PotentialField:
    """Convolution with the product bump ψ_ε(z)ψ_ε(w).

    The grid is padded through ``evaluate`` (exterior continuation) before the
    discrete convolution, so only the clamped free direction loses a band of
    width ε. An exact evaluator, when present, is convolved by quadrature.
    """
    g = R.grid
    if kernel.epsilon < 2 * max(g.hz, g.hw) - 1e-12:
        raise ValueError("epsilon must be at least two grid cells")
    sz = kernel.grid_stencil(g.hz)
    sw = kernel.grid_stencil(g.hw)
    kz, kw = sz.shape[0] // 2, sw.shape[0] // 2
    D = g.bidisk
    xz = np.concatenate([g.xz[0] - g.hz * np.arange(kz, 0, -1), g.xz, g.xz[-1] + g.hz * np.arange(1, kz + 1)])
    xw = np.concatenate([g.xw[0] - g.hw * np.arange(kw, 0, -1), g.xw, g.xw[-1] + g.hw * np.arange(1, kw + 1)])
    zpad = (xz[:, None] + 1j * xz[None, :])[:, :, None, None]
    wpad = (xw[:, None] + 1j * xw[None, :])[None, None, :, :]
    padded = np.empty((xz.size, xz.size, xw.size, xw.size))
    inner = (slice(kz, kz + g.resolution),) * 2 + (slice(kw, kw + g.resolution),) * 2
    padded[inner] = R.values
    ring = np.ones(padded.shape, dtype=bool)
    ring[inner] = False
    zb, wb = np.broadcast_arrays(zpad, wpad)
    padded[ring] = R.evaluate(zb[ring], wb[ring])
    out = ndimage.convolve(padded, sz[:, :, None, None], mode="nearest")
    out = ndimage.convolve(out, sw[None, None, :, :], mode="nearest")
    values = out[inner]
    valid = R.valid.copy()
    band = kw if R.orientation == VERTICAL else kz
    free_axes = (2, 3) if R.orientation == VERTICAL else (0, 1)
    for ax in free_axes:
        idx = [slice(None)] * 4
        idx[ax] = slice(0, band)
        valid[tuple(idx)] = False
        idx[ax] = slice(g.resolution - band, g.resolution)
        valid[tuple(idx)] = False
    new_func = None
    if R.func is not None:
        offs, wts = kernel.quadrature(quad_radial, quad_angular)

        def new_func(z, w, ev=R.evaluate, offs=offs, wts=wts):
            z = np.asarray(z, dtype=complex)
            w = np.asarray(w, dtype=complex)
            z, w = np.broadcast_arrays(z, w)
            acc = np.zeros(z.shape)
            for oz, az in zip(offs, wts):
                for ow, aw in zip(offs, wts):
                    acc += az * aw * ev(z - oz, w - ow)
            return acc

    return PotentialField(values, g, R.orientation, R.floor, R.growth, new_func, valid)


def support_violation(R: PotentialField, rel_tol: float = 1e-2) -> bool:
    """True when dd^c of a vertical (horizontal) potential reaches the free annulus.

    Central differences of log|z| leave an O(h²) residue on the annulus, so
    the defect is measured against the sup norm of the whole form.
    """
    top = ddc(R).sup_norm()
    return top > 0 and annulus_defect(R) > rel_tol * top


# ---------------------------------------------------------------- test forms

def w_bump(grid: GridSpec, radius: float, center: complex = 0.0, horizontal_form: bool = True) -> np.ndarray:
    """Smooth nonnegative bump in w (or z) with compact support of given radius."""
    zp, wp = grid.nodes()
    x = (wp if horizontal_form else zp) - center
    s = np.abs(x) ** 2 / radius**2
    out = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return out


@dataclass
class Decomposition:
    first: CoefficientForm
    second: CoefficientForm
    factor: float


def decompose_test_form(psi_prime: CoefficientForm, bump_radius: float | None = None) -> Decomposition:
    """Write Ψ' = (AΨ + Ψ') - AΨ with both terms dd^c-nonnegative.

    Ψ = (|z|² + |w|²) · χ(w) (i/π) dw∧dw̄ for a w-plane bump χ; A is the
    smallest power of two that makes dd^c(AΨ + Ψ') >= 0 on the grid.
    """
    g = psi_prime.grid
    D = g.bidisk
    if bump_radius is None:
        bump_radius = D.n_star
    edge = ~_boundary_mask(g.shape, 3)
    if (np.abs(psi_prime.zz[edge]).max(initial=0) > 0 or np.abs(psi_prime.ww[edge]).max(initial=0) > 0
            or np.abs(psi_prime.zw[edge]).max(initial=0) > 0):
        raise ValueError("test form touches the invalid boundary band")
    zp, wp = g.nodes()
    rho = np.abs(zp) ** 2 + np.abs(wp) ** 2
    chi = np.broadcast_to(w_bump(g, bump_radius), g.shape)
    zero = np.zeros(g.shape)
    psi = CoefficientForm(zero, rho * chi, np.zeros(g.shape, complex), g, psi_prime.orientation)
    s_psi = form_ddc_density(psi)
    s_pp = form_ddc_density(psi_prime)
    interior = _boundary_mask(g.shape, 2)
    need = interior & (s_pp < 0)
    if need.any():
        if (s_psi[need] <= 0).any():
            raise ValueError("test form is not dominated by the reference bump")
        ratio = float((-s_pp[need] / s_psi[need]).max())
        A = 2.0 ** max(0, int(np.ceil(np.log2(ratio))) if ratio > 0 else 0)
        while ((A * s_psi + s_pp)[interior] < 0).any():
            A *= 2
    else:
        A = 1.0
    big = psi.scaled(A)
    return Decomposition(big + psi_prime, big, A)
