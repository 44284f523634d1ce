"""Wedge products R ∧ S of a vertical and a horizontal current.

The smooth route contracts coefficient forms pointwise. The regularized
route replaces R and S by disc averages R^(ε), S^(ε) over a schedule of ε
and tracks how the resulting measures settle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .currents import (HORIZONTAL, VERTICAL, WEDGE_FACTOR, AtomicMeasure, CoefficientForm,
                       PotentialField, SmoothingKernel, _pairwise_sum, ddc, mixed_density,
                       moment_exponents, regularize)
from .discs import SUPPORT_TOL, disc_average

DEFAULT_SCHEDULE = (0.2, 0.1, 0.05, 0.025)
# relative to the peak density; FD truncation on the harmonic part stays below
NEGATIVE_TOL = 1e-2
ROUTES = ("R", "S", "both")


@dataclass
class WedgeResult:
    density: np.ndarray
    weights: np.ndarray
    grid: object
    route: str = "smooth"
    epsilon_schedule: tuple = ()
    stages: list = field(default_factory=list)
    cauchy: bool = True
    negative_cells: int = 0

    @property
    def mass(self) -> float:
        return float(_pairwise_sum((self.density * self.weights).ravel()) * self.grid.cell_volume)

    @property
    def upper_envelope_only(self) -> bool:
        return not self.cauchy

    def moments(self, degree: int = 2, holomorphic: bool = True) -> np.ndarray:
        """Normalized moments of the signed density, ordered by moment_exponents."""
        zp, wp = self.grid.nodes()
        mw = self.density * self.weights
        mass = _pairwise_sum(mw.ravel())
        out = []
        for i, j, k, l in moment_exponents(degree, holomorphic):
            mono = zp**i * wp**j * np.conj(zp) ** k * np.conj(wp) ** l
            out.append(_pairwise_sum((mw * mono).ravel()) / mass)
        return np.array(out, dtype=complex)

    def integrate(self, phi) -> float:
        zp, wp = self.grid.full_nodes()
        vals = phi(zp, wp)
        return float(np.real(_pairwise_sum((self.density * self.weights * vals).ravel())) * self.grid.cell_volume)

    def measure(self) -> AtomicMeasure:
        """Cell-center atoms; negative cells are dropped."""
        mw = self.density * self.weights * self.grid.cell_volume
        keep = mw > 0
        zp, wp = self.grid.full_nodes()
        return AtomicMeasure(np.stack([zp[keep], wp[keep]], axis=-1), mw[keep])


def wedge_smooth(R: CoefficientForm, S: CoefficientForm, region=None) -> WedgeResult:
    """Density (4/π²)·mix(R, S) on the bidisk (or on ``region`` weights)."""
    if R.grid != S.grid:
        raise ValueError("mismatched grids")
    if R.orientation == S.orientation:
        raise ValueError("wedge needs one vertical and one horizontal form")
    g = R.grid
    dens = WEDGE_FACTOR * mixed_density(R, S)
    wts = g.bidisk_weights() if region is None else region
    wts = np.where(R.valid & S.valid, wts, 0.0)
    dens = np.where(wts > 0, dens, 0.0)
    scale = max(float(np.abs(dens).max()), 1e-300)
    negative = int(np.count_nonzero(dens < -NEGATIVE_TOL * scale))
    return WedgeResult(dens, wts, g, "smooth", negative_cells=negative)


def _check_supports(R: PotentialField, S: PotentialField):
    from .currents import annulus_defect
    for F in (R, S):
        form = ddc(F)
        top = form.sup_norm()
        if top > 0 and annulus_defect(F) > SUPPORT_TOL * top:
            raise ValueError("current support reaches the free boundary annulus")


def _stage_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)))


def wedge_regularized(R: PotentialField, S: PotentialField, schedule=DEFAULT_SCHEDULE,
                      route: str = "both", kernel: SmoothingKernel | None = None,
                      region=None, check_supports: bool = True, cache: dict | None = None) -> WedgeResult:
    """Smooth wedges of disc-averaged currents along an ε schedule.

    ``route`` selects R^(ε)∧S ("R"), R∧S^(ε) ("S") or R^(ε)∧S^(ε) ("both").
    The result carries the last stage's density; ``stages`` records mass,
    holomorphic moments and the distance to the previous stage. ``cache``
    shares dd^c of disc averages between calls on the same currents.
    """
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    if R.orientation != VERTICAL or S.orientation != HORIZONTAL:
        raise ValueError("R must be vertical and S horizontal")
    if check_supports:
        _check_supports(R, S)
    cache = {} if cache is None else cache

    def form(F, eps):
        key = (id(F), eps)
        if key not in cache:
            cache[key] = ddc(F) if eps is None else ddc(disc_average(F, eps, kernel))
        return cache[key]

    stages = []
    last = None
    prev = None
    for eps in schedule:
        a = form(R, None if route == "S" else eps)
        b = form(S, None if route == "R" else eps)
        last = wedge_smooth(a, b, region)
        mom = last.moments(2, True)
        dist = None if prev is None else _stage_distance(mom, prev)
        stages.append({"epsilon": eps, "mass": last.mass, "moments": mom, "distance": dist})
        prev = mom
    dists = [st["distance"] for st in stages[1:]]
    cauchy = all(d2 <= d1 * (1 + 1e-9) + 1e-12 for d1, d2 in zip(dists, dists[1:]))
    return WedgeResult(last.density, last.weights, last.grid, route, tuple(schedule), stages,
                       cauchy, last.negative_cells)


def route_agreement(R: PotentialField, S: PotentialField, schedule=DEFAULT_SCHEDULE,
                    kernel: SmoothingKernel | None = None, region=None) -> dict:
    """Final-stage moments of the three routes and their pairwise distances."""
    cache = {}
    results = {r: wedge_regularized(R, S, schedule, r, kernel, region, cache=cache) for r in ROUTES}
    moms = {r: res.moments(2, True) for r, res in results.items()}
    pairs = {}
    for i, r1 in enumerate(ROUTES):
        for r2 in ROUTES[i + 1:]:
            pairs[(r1, r2)] = _stage_distance(moms[r1], moms[r2])
    return {"results": results, "moments": moms, "distances": pairs}


@dataclass
class SemicontinuityReport:
    reference: float
    values: list
    epsilons: list
    limsup: float
    slack: float


def pairing_upper_semicontinuity_probe(R: PotentialField, S: PotentialField, phi, reference: WedgeResult,
                                       epsilons=(0.8, 0.6, 0.45)) -> SemicontinuityReport:
    """⟨R_n ∧ S_n, φ⟩ for mollified R_n, S_n against ⟨R ∧ S, φ⟩.

    Values are fitted as L + c·ε² over the sequence; L is the limsup estimate
    and slack = reference - L.
    """
    ref = reference.integrate(phi) / reference.mass
    vals = []
    for eps in epsilons:
        k = SmoothingKernel(eps)
        w = wedge_smooth(ddc(regularize(R, k)), ddc(regularize(S, k)), reference.weights)
        vals.append(w.integrate(phi) / w.mass)
    e2 = np.asarray(epsilons, float) ** 2
    if len(vals) >= 2:
        A = np.stack([np.ones_like(e2), e2], axis=1)
        L = float(np.linalg.lstsq(A, np.asarray(vals), rcond=None)[0][0])
    else:
        L = float(vals[-1])
    return SemicontinuityReport(ref, vals, list(epsilons), L, ref - L)
