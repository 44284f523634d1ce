"""Bidisk geometry, Hénon-like maps and degree counting.

Maps have the normal form f(z, w) = (p(z) + a*w, z) with inverse
f^{-1}(z, w) = (w, (z - p(w)) / a). Polynomial coefficients are stored in
ascending order, so ``[-2, 0, 1]`` is z**2 - 2.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .roots import isolate_roots


@dataclass(frozen=True)
class Bidisk:
    m_radius: float = 3.0
    n_radius: float = 3.0
    inner_m_fraction: float = 0.8
    inner_n_fraction: float = 0.8
    margin_fraction: float = 0.9

    def __post_init__(self):
        if self.m_radius <= 0 or self.n_radius <= 0:
            raise ValueError("radii must be positive")
        for frac in (self.inner_m_fraction, self.inner_n_fraction):
            if not 0 < frac < self.margin_fraction < 1:
                raise ValueError("need 0 < inner fraction < margin fraction < 1")

    @property
    def m_inner(self) -> float:
        return self.m_radius * self.inner_m_fraction

    @property
    def n_inner(self) -> float:
        return self.n_radius * self.inner_n_fraction

    @property
    def m_star(self) -> float:
        return self.m_radius * self.margin_fraction

    @property
    def n_star(self) -> float:
        return self.n_radius * self.margin_fraction

    def contains(self, z, w) -> np.ndarray:
        return (np.abs(z) < self.m_radius) & (np.abs(w) < self.n_radius)


class HorizontalLikeError(ValueError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DegreeAmbiguityError(RuntimeError):
    pass


class HenonLikeMap:
    """Invertible polynomial map (z, w) -> (p(z) + twist*w, z)."""

    def __init__(self, poly_coeffs: Sequence[complex], twist: complex,
                 bidisk: Bidisk | None = None, boundary_samples: int = 256):
        coeffs = np.array(poly_coeffs, dtype=complex)
        nz = np.flatnonzero(coeffs != 0)
        if nz.size == 0 or nz[-1] < 2:
            raise ValueError("polynomial part must have degree >= 2")
        if twist == 0:
            raise ValueError("twist must be nonzero for invertibility")
        self.coeffs = coeffs[: nz[-1] + 1]
        self.twist = complex(twist)
        self._dcoeffs = self.coeffs[1:] * np.arange(1, self.coeffs.size)
        if bidisk is not None:
            report = check_horizontal_like(self, bidisk, boundary_samples)
            if not report.passed:
                raise HorizontalLikeError(report.message, report.offending_point)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def p(self, z):
        return np.polynomial.polynomial.polyval(z, self.coeffs)

    def dp(self, z):
        return np.polynomial.polynomial.polyval(z, self._dcoeffs)

    def forward(self, z, w):
        return self.p(z) + self.twist * w, z

    def inverse(self, z, w):
        return w, (z - self.p(w)) / self.twist

    def jacobian(self, z, w):
        """Complex Jacobian [[dz'/dz, dz'/dw], [dw'/dz, dw'/dw]] at (z, w)."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = self.dp(z)
        out[..., 0, 1] = self.twist
        out[..., 1, 0] = 1.0
        return out

    def inverse_jacobian(self, z, w):
        w = np.asarray(w, dtype=complex)
        out = np.zeros(w.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = 1.0 / self.twist
        out[..., 1, 1] = -self.dp(w) / self.twist
        return out

    def escape_radius(self, bidisk: Bidisk) -> float:
        return 2 * max(bidisk.m_radius, bidisk.n_radius) + float(np.abs(self.coeffs).sum())

    def inverted(self) -> "HenonLikeMap":
        """f^{-1} conjugated by the coordinate swap, again in normal form."""
        return HenonLikeMap(-self.coeffs / self.twist, 1.0 / self.twist)

    def to_dict(self) -> dict:
        return {"poly_coeffs": [complex(c) for c in self.coeffs], "twist": self.twist}

    def __repr__(self):
        return f"HenonLikeMap(coeffs={list(self.coeffs)}, twist={self.twist})"


def standard_map() -> HenonLikeMap:
    """The test map (z**2 - 2 + 0.1 w, z)."""
    return HenonLikeMap([-2.0, 0.0, 1.0], 0.1)


def eval_forward(f: HenonLikeMap, x):
    x = np.asarray(x, dtype=complex)
    z, w = f.forward(x[..., 0], x[..., 1])
    return np.stack([z, w], axis=-1)


def eval_inverse(f: HenonLikeMap, y):
    y = np.asarray(y, dtype=complex)
    z, w = f.inverse(y[..., 0], y[..., 1])
    return np.stack([z, w], axis=-1)


@dataclass
class HorizontalLikeReport:
    passed: bool
    samples: int
    vertical_margin: float
    horizontal_margin: float
    image_margin_n: float
    preimage_margin_m: float
    message: str = ""
    offending_point: tuple | None = None


def _disc_samples(radius, count, rng):
    r = radius * np.sqrt(rng.random(count))
    t = 2 * np.pi * rng.random(count)
    ring = radius * np.exp(2j * np.pi * np.arange(count) / count)
    return np.concatenate([r * np.exp(1j * t), ring * 0.999999])


def check_horizontal_like(f: HenonLikeMap, D: Bidisk, boundary_samples: int = 256,
                          seed: int = 0) -> HorizontalLikeReport:
    """Sampled check that the graph of f avoids the vertical and horizontal boundaries."""
    if boundary_samples < 100:
        raise ValueError("boundary_samples must be >= 100")
    rng = np.random.default_rng(seed)
    circ_m = D.m_radius * np.exp(2j * np.pi * np.arange(boundary_samples) / boundary_samples)
    circ_n = D.n_radius * np.exp(2j * np.pi * np.arange(boundary_samples) / boundary_samples)
    w_in = _disc_samples(D.n_radius, boundary_samples, rng)
    z_in = _disc_samples(D.m_radius, boundary_samples, rng)

    # x on the vertical boundary must not land in D
    zz, ww = np.meshgrid(circ_m, w_in, indexing="ij")
    fz, fw = f.forward(zz, ww)
    depth = np.minimum(D.m_radius - np.abs(fz), D.n_radius - np.abs(fw))
    vmargin = float(-depth.max())
    # y on the horizontal boundary must not come from D
    zz2, ww2 = np.meshgrid(z_in, circ_n, indexing="ij")
    gz, gw = f.inverse(zz2, ww2)
    depth2 = np.minimum(D.m_radius - np.abs(gz), D.n_radius - np.abs(gw))
    hmargin = float(-depth2.max())

    # interior: f(D) ∩ D lies over N'' and f^{-1}(D) ∩ D lies over M'
    zi, wi = np.meshgrid(z_in, w_in, indexing="ij")
    iz, iw = f.forward(zi, wi)
    inside = D.contains(iz, iw)
    img_n = float(D.n_inner - np.abs(iw[inside]).max()) if inside.any() else D.n_inner
    jz, jw = f.inverse(zi, wi)
    inside2 = D.contains(jz, jw)
    pre_m = float(D.m_inner - np.abs(jz[inside2]).max()) if inside2.any() else D.m_inner

    report = HorizontalLikeReport(True, 3 * zi.size, vmargin, hmargin, img_n, pre_m)
    if vmargin <= 0:
        k = np.unravel_index(np.argmax(depth), depth.shape)
        report.passed = False
        report.message = "image of the vertical boundary meets D"
        report.offending_point = (complex(zz[k]), complex(ww[k]))
    elif hmargin <= 0:
        k = np.unravel_index(np.argmax(depth2), depth2.shape)
        report.passed = False
        report.message = "preimage of the horizontal boundary meets D"
        report.offending_point = (complex(zz2[k]), complex(ww2[k]))
    elif img_n <= 0:
        k = np.argmax(np.where(inside, np.abs(iw), -1))
        report.passed = False
        report.message = "f(D) ∩ D leaves the inner horizontal band"
        report.offending_point = (complex(zi.flat[k]), complex(wi.flat[k]))
    elif pre_m <= 0:
        k = np.argmax(np.where(inside2, np.abs(jz), -1))
        report.passed = False
        report.message = "f^{-1}(D) ∩ D leaves the inner vertical band"
        report.offending_point = (complex(zi.flat[k]), complex(wi.flat[k]))
    return report


@dataclass
class MapSequence:
    """Maps applied in order f_1, f_2, ... with covering degrees d_n."""

    maps: list
    bidisk: Bidisk
    degrees: list = field(default_factory=list)
    boundary_samples: int = 256

    def __post_init__(self):
        for f in self.maps:
            rep = check_horizontal_like(f, self.bidisk, self.boundary_samples)
            if not rep.passed:
                raise HorizontalLikeError(rep.message, rep.offending_point)
        if not self.degrees:
            self.degrees = [f.degree for f in self.maps]
        if len(self.degrees) != len(self.maps) or min(self.degrees, default=1) < 1:
            raise ValueError("one positive degree per map is required")

    @classmethod
    def constant(cls, f: HenonLikeMap, n: int, bidisk: Bidisk) -> "MapSequence":
        return cls([f] * n, bidisk)

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, k):
        return self.maps[k]


@dataclass
class Composition:
    point: np.ndarray
    jacobian: np.ndarray
    escaped: np.ndarray
    escape_index: np.ndarray


def compose(maps: Sequence[HenonLikeMap], x, escape_radius: float = np.inf) -> Composition:
    """(f_n o ... o f_1)(x) with the product Jacobian, for an array of points.

    ``escape_index`` is the first step after which |z| or |w| exceeded the
    escape radius (-1 if never). Escaped orbits are frozen at that step.
    """
    x = np.asarray(x, dtype=complex)
    z = x[..., 0].copy()
    w = x[..., 1].copy()
    jac = np.zeros(z.shape + (2, 2), dtype=complex)
    jac[..., 0, 0] = 1
    jac[..., 1, 1] = 1
    esc_idx = np.full(z.shape, -1, dtype=np.int64)
    alive = np.ones(z.shape, dtype=bool)
    for k, f in enumerate(maps):
        zk, wk = z[alive], w[alive]
        step = f.jacobian(zk, wk)
        jac[alive] = step @ jac[alive]
        nz, nw = f.forward(zk, wk)
        z[alive] = nz
        w[alive] = nw
        gone = (np.abs(z) > escape_radius) | (np.abs(w) > escape_radius)
        newly = gone & alive
        esc_idx[newly] = k + 1
        alive &= ~gone
    return Composition(np.stack([z, w], axis=-1), jac, esc_idx >= 0, esc_idx)


def orbit_first_coordinate(maps: Sequence[HenonLikeMap], zeta, b, escape_radius=np.inf):
    """π₁ of the composed orbit started at (zeta, b) together with d/dzeta.

    Returns (value, derivative, ok); ok is False once the orbit escapes.
    """
    z = np.asarray(zeta, dtype=complex).copy()
    w = np.full(z.shape, b, dtype=complex)
    dz = np.ones(z.shape, dtype=complex)
    dw = np.zeros(z.shape, dtype=complex)
    ok = np.ones(z.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for f in maps:
            dz, dw = f.dp(z) * dz + f.twist * dw, dz
            z, w = f.p(z) + f.twist * w, z
            ok &= np.abs(z) <= escape_radius
            z = np.where(ok, z, 0)
            w = np.where(ok, w, 0)
    return z, dz, ok


def _disc_mul(c1, r1, c2, r2):
    return c1 * c2, np.abs(c1) * r2 + np.abs(c2) * r1 + r1 * r2


def _disc_poly(coeffs, c, r):
    pc = np.full(c.shape, coeffs[-1], dtype=complex)
    pr = np.zeros(c.shape)
    for a in coeffs[-2::-1]:
        pc, pr = _disc_mul(pc, pr, c, r)
        pc = pc + a
    return pc, pr


def orbit_exclusion(maps: Sequence[HenonLikeMap], b: complex, target: complex, escape_radius: float):
    """Disc-arithmetic test proving π₁(F(ζ, b)) != target on a box.

    Returns a function (cx, cy, hw) -> bool array of boxes proven zero-free.
    """

    def exclude(cx, cy, hw):
        zc = cx + 1j * cy
        zr = hw * np.sqrt(2.0)
        wc = np.full(zc.shape, b, dtype=complex)
        wr = np.zeros(zc.shape)
        out = np.zeros(zc.shape, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for f in maps:
                pc, pr = _disc_poly(f.coeffs, zc, zr)
                nzc = pc + f.twist * wc
                nzr = pr + abs(f.twist) * wr
                wc, wr = zc, zr
                zc, zr = nzc, nzr
                # every point of the box has escaped, with |z| dominating |w|
                esc = (np.abs(zc) - zr > escape_radius) & (np.abs(zc) - zr > np.abs(wc) + wr)
                out |= esc
            gc = zc - target
            out |= np.isfinite(zr) & (np.abs(gc) > zr)
        return out

    return exclude


def _as_maps(f) -> list:
    if isinstance(f, HenonLikeMap):
        return [f]
    if isinstance(f, MapSequence):
        return list(f.maps)
    return list(f)


def count_vertical_preimages(f, D: Bidisk, a: complex, b: complex):
    """Roots ζ ∈ M of π₁(F(ζ, b)) = a for F a map or composition."""
    maps = _as_maps(f)
    r_esc = maps[0].escape_radius(D)

    def g(zeta):
        v, dv, ok = orbit_first_coordinate(maps, zeta, b, r_esc)
        return v - a, dv, ok

    # off-center square avoids roots on box edges for symmetric maps
    half = D.m_radius * 1.0137
    center = complex(0.00731 * D.m_radius, -0.00419 * D.m_radius)
    return isolate_roots(g, center, half, exclude=orbit_exclusion(maps, b, a, r_esc),
                         region=lambda r: np.abs(r) < D.m_radius)


def degree_counts(f, D: Bidisk, trials: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    counts = []
    for _ in range(trials):
        a = _uniform_disc(rng, D.m_inner)
        b = _uniform_disc(rng, D.n_inner)
        counts.append(count_vertical_preimages(f, D, a, b).count)
    return counts


def dynamical_degree(f, D: Bidisk, trials: int = 100, seed: int = 0,
                     min_agreement: float = 0.95) -> int:
    """Modal number of solutions of π₁(f(ζ, b)) = a over generic (a, b)."""
    counts = degree_counts(f, D, trials, seed)
    mode, freq = Counter(counts).most_common(1)[0]
    if freq < min_agreement * trials:
        raise DegreeAmbiguityError(f"modal count {mode} in only {freq}/{trials} trials")
    return int(mode)


def _uniform_disc(rng, radius) -> complex:
    r = radius * np.sqrt(rng.random())
    return complex(r * np.exp(2j * np.pi * rng.random()))


def generic_parameters(D: Bidisk, count: int, seed: int = 0) -> list:
    """Seeded (a, b) drawn uniformly from the inner bidisk M' x N''."""
    rng = np.random.default_rng(seed)
    return [(_uniform_disc(rng, D.m_inner), _uniform_disc(rng, D.n_inner)) for _ in range(count)]
