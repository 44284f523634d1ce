"""Green currents of horizontal-like maps and their random-iteration analogues.

Two evaluation styles coexist:

* grid-composed potentials (``green_iterate``, ``green_current``) apply the
  normalized pull-back operator on the grid stage by stage, so interpolation
  error is part of what is being exercised;
* orbit-evaluated potentials (``orbit_log_modulus``, ``line_pullback_green``)
  follow each point's orbit exactly and switch to log-space once |z| is huge.

Backward (horizontal) runs reuse the forward machinery through the swap
conjugate ``f.inverted()``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .currents import (HORIZONTAL, VERTICAL, WEDGE_FACTOR, CoefficientForm, GridSpec,
                       PotentialField, ddc, form_ddc_density, form_mass, mixed_density,
                       pullback_form, slice_mass, soft_logmax, vertical_line, w_bump)
from .discs import swap_coordinates
from .domain_maps import Bidisk, HenonLikeMap, MapSequence

SEED_BOUND = 50.0
STOP_DELTA = 1e-4
MAX_STAGES = 25
ESCAPE_MODULUS = 1e8
GREEN_RESOLUTION = 32
CONTAMINATION_LIMIT = 0.05


class UnboundedSeedError(ValueError):
    pass


# ---------------------------------------------------------------- seeds

def canonical_seed(grid: GridSpec) -> PotentialField:
    """log max(|z|, 1) sampled on the grid (no exact evaluator)."""
    fn = lambda z, w: np.log(np.maximum(np.abs(z), 1.0)) + 0 * np.real(w)
    return PotentialField.from_function(fn, grid, VERTICAL, 1.0, keep_func=False)


def smooth_seed(grid: GridSpec, center: complex = 0.0, radius: float = 1.0) -> PotentialField:
    fn = lambda z, w: soft_logmax(z - center, radius) + 0 * np.real(w)
    return PotentialField.from_function(fn, grid, VERTICAL, 1.0, keep_func=False)


def _seed_sup(u: PotentialField) -> float:
    D = u.bidisk
    inner = u.grid.region_weights(D.m_inner, D.n_radius) > 0
    return float(np.abs(np.asarray(u.values)[inner]).max())


# ---------------------------------------------------------------- grid-composed runs

@dataclass
class GreenRun:
    sequence: MapSequence
    seed: PotentialField
    iterates: list
    deltas: np.ndarray
    direction: str = "forward"
    stop_reason: str = ""
    slice_masses: list = field(default_factory=list)

    @property
    def final(self) -> PotentialField:
        return self.iterates[-1]

    @property
    def stages(self) -> int:
        return len(self.deltas)

    def delta_fit(self, rate: float | None = None, burn_in: int = 2):
        """Fit deltas to C·rate^n for n > burn_in; returns (C, max relative residual)."""
        if rate is None:
            rate = 1.0 / self.sequence.degrees[0]
        n = np.arange(1, self.deltas.size + 1)
        sel = n > burn_in
        if sel.sum() < 2:
            raise ValueError("not enough stages past burn-in")
        logc = np.log(self.deltas[sel]) - n[sel] * np.log(rate)
        C = float(np.exp(logc.mean()))
        resid = float(np.abs(self.deltas[sel] / (C * rate ** n[sel]) - 1).max())
        return C, resid

    def ratios(self) -> np.ndarray:
        return self.deltas[1:] / self.deltas[:-1]


def _pull(f: HenonLikeMap, u: PotentialField, d: int) -> PotentialField:
    """(u ∘ f)/d sampled through the grid of u."""
    g = u.grid
    zf, wf = g.full_nodes()
    with np.errstate(over="ignore", invalid="ignore"):
        tz, tw = f.forward(zf, wf)
    vals = u.interpolate(tz, tw) / d
    return PotentialField(vals, g, VERTICAL, u.floor, u.growth, None)


def _swap_sequence(seq: MapSequence) -> MapSequence:
    D = seq.bidisk
    swapped = Bidisk(D.n_radius, D.m_radius, D.inner_n_fraction, D.inner_m_fraction, D.margin_fraction)
    inverted = {}
    maps = [inverted.setdefault(id(f), f.inverted()) for f in seq.maps]
    return MapSequence(maps, swapped, list(seq.degrees), seq.boundary_samples)


def green_iterate(seq: MapSequence, seeds, n: int | None = None, stop: bool = True,
                  bound: float = SEED_BOUND, direction: str = "forward",
                  keep: int = 2, slice_check: bool = False) -> GreenRun:
    """Stage k potential (d_1⋯d_k)^{-1} u_k ∘ f_k ∘ ⋯ ∘ f_1, composed on the grid.

    ``seeds`` is one field or a list (u_0, u_1, ...). With one seed and a
    constant sequence the stages are built incrementally; otherwise stage k
    applies the k normalized pull-backs innermost first. The run stops when a
    stage delta drops below ``STOP_DELTA`` (if ``stop``) or after ``n`` stages.
    ``direction="backward"`` iterates f^{-1} on horizontal seeds.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be forward or backward")
    seed_list = list(seeds) if isinstance(seeds, (list, tuple)) else [seeds]
    if direction == "backward":
        swapped = [swap_coordinates(s) for s in seed_list]
        run = green_iterate(_swap_sequence(seq), swapped, n, stop, bound, "forward", keep, slice_check)
        run.iterates = [swap_coordinates(u) for u in run.iterates]
        run.seed = seed_list[0]
        run.sequence = seq
        run.direction = "backward"
        return run
    for s in seed_list:
        if s.orientation != VERTICAL:
            raise ValueError("forward seeds must be vertical")
        if _seed_sup(s) > bound:
            raise UnboundedSeedError(f"seed sup {_seed_sup(s):.3g} exceeds bound {bound}")
    n = min(len(seq), MAX_STAGES) if n is None else n
    if n > len(seq):
        raise ValueError("sequence shorter than requested stage count")
    per_stage = len(seed_list) > 1
    if per_stage and len(seed_list) < n + 1:
        raise ValueError("need one seed per stage")
    constant = all(f is seq.maps[0] for f in seq.maps[:n]) and all(
        d == seq.degrees[0] for d in seq.degrees[:n])

    g = seed_list[0].grid
    inside = g.bidisk_weights() > 0
    current = seed_list[0].grid_only()
    iterates = [current]
    deltas = []
    masses = []
    reason = "stage limit"
    for k in range(1, n + 1):
        if constant and not per_stage:
            nxt = _pull(seq.maps[0], current, seq.degrees[0])
        else:
            nxt = seed_list[k if per_stage else 0].grid_only()
            for j in range(k - 1, -1, -1):
                nxt = _pull(seq.maps[j], nxt, seq.degrees[j])
        delta = float(np.abs(np.asarray(nxt.values) - np.asarray(current.values))[inside].max())
        deltas.append(delta)
        if slice_check:
            masses.append(slice_mass(nxt).mass)
        current = nxt
        iterates.append(current)
        if keep and len(iterates) > keep:
            iterates.pop(0)
        if stop and delta < STOP_DELTA:
            reason = "delta below threshold"
            break
    return GreenRun(seq, seed_list[0], iterates, np.array(deltas), direction, reason, masses)


def green_current(f: HenonLikeMap, n: int = MAX_STAGES, bidisk: Bidisk | None = None,
                  resolution: int = GREEN_RESOLUTION, direction: str = "forward",
                  seed: PotentialField | None = None) -> PotentialField:
    """G⁺ (or G⁻ for ``direction="backward"``) from the canonical seed."""
    D = Bidisk() if bidisk is None else bidisk
    seq = MapSequence.constant(f, max(n, 1), D)
    grid = GridSpec(D, resolution)
    if seed is None:
        seed = canonical_seed(grid)
        if direction == "backward":
            seed = swap_coordinates(canonical_seed(GridSpec(_swap_sequence(seq).bidisk, resolution)))
    return green_iterate(seq, seed, n, direction=direction).final


# ---------------------------------------------------------------- orbit evaluation

def orbit_log_modulus(f: HenonLikeMap, z, w, n: int, target: complex | None = None,
                      escape: float = ESCAPE_MODULUS, seed=None) -> np.ndarray:
    """d^{-n} log|π₁f^n(z, w) - target|, or d^{-n} log max(|π₁f^n|, 1) without target.

    ``seed``, when given, replaces the final log by seed(π₁f^n); it must agree
    with log|·| for large arguments. Orbits passing |z| > ``escape`` continue
    in log space with the leading coefficient of p only.
    """
    z = np.array(z, dtype=complex)
    w = np.array(w, dtype=complex)
    z, w = np.broadcast_arrays(z, w)
    z = z.copy()
    w = w.copy()
    d = f.degree
    lead = np.log(np.abs(f.coeffs[-1]))
    out = np.empty(z.shape)
    alive = np.ones(z.shape, dtype=bool)
    for k in range(n):
        zk, wk = f.forward(z[alive], w[alive])
        z[alive] = zk
        w[alive] = wk
        gone = alive & (np.abs(z) > escape)
        if gone.any():
            s = n - k - 1
            L = np.log(np.abs(z[gone]))
            out[gone] = L / float(d) ** (n - s) + lead * (1 - float(d) ** -s) / ((d - 1) * float(d) ** (n - s))
            alive &= ~gone
    za = z[alive]
    with np.errstate(divide="ignore"):
        if seed is not None:
            val = seed(za)
        elif target is None:
            val = np.log(np.maximum(np.abs(za), 1.0))
        else:
            val = np.log(np.abs(za - target))
    out[alive] = val / float(d) ** n
    return out


def green_function(f: HenonLikeMap, n: int = 40, direction: str = "forward", seed=None):
    """Orbit-evaluated d^{-n} u∘f^{±n} as a callable (z, w) -> values.

    ``seed`` acts on the free coordinate (z forward, w backward); the default
    is log max(|·|, 1), giving G±.
    """
    if direction == "forward":
        return lambda z, w: orbit_log_modulus(f, z, w, n, seed=seed)
    g = f.inverted()
    return lambda z, w: orbit_log_modulus(g, w, z, n, seed=seed)


@dataclass
class LineGreen:
    field: PotentialField
    singular_cells: int


def line_pullback_green(f: HenonLikeMap, a: complex, n: int, bidisk: Bidisk | None = None,
                        resolution: int = GREEN_RESOLUTION) -> LineGreen:
    """d^{-n} log|π₁f^n - a|, orbit-evaluated at every node.

    Nodes clipped by the floor (preimages of {z = a}) are counted as singular.
    """
    D = Bidisk() if bidisk is None else bidisk
    if abs(a) >= D.m_inner:
        raise ValueError("a must lie in the inner disc of M")
    if n == 0:
        line = vertical_line(a, D, resolution)
        return LineGreen(line, int((np.asarray(line.values) <= line.floor).sum()))
    fn = lambda z, w: orbit_log_modulus(f, z, w, n, target=a)
    fld = PotentialField.from_function(fn, GridSpec(D, resolution), VERTICAL, 1.0)
    return LineGreen(fld, int((np.asarray(fld.values) <= fld.floor).sum()))


def interior_quantile_distance(u: PotentialField, v: PotentialField, q: float = 0.9) -> float:
    """q-quantile of |u - v| over nodes of the inner bidisk."""
    D = u.bidisk
    inner = u.grid.region_weights(D.m_inner, D.n_inner) > 0
    diff = np.abs(np.asarray(u.values) - np.asarray(v.values))[inner]
    return float(np.quantile(diff, q))


# ---------------------------------------------------------------- invariance and support

@dataclass
class InvarianceReport:
    defect_mass: float
    control_mass: float

    @property
    def ratio(self) -> float:
        return self.defect_mass / self.control_mass


def harmonic_control(grid: GridSpec) -> float:
    """dd^c mass of the pluriharmonic log|z - 2m| + log|w - 2n| on the grid."""
    D = grid.bidisk
    fn = lambda z, w: np.log(np.abs(z - 2 * D.m_radius)) + np.log(np.abs(w - 2 * D.n_radius))
    h = PotentialField.from_function(fn, grid, VERTICAL, 1.0, keep_func=False)
    return form_mass(ddc(h))


def invariance_defect(f: HenonLikeMap, G: PotentialField) -> InvarianceReport:
    """dd^c mass of G∘f - d·G (grid-composed) against the harmonic control floor."""
    d = f.degree
    composed = _pull(f, G.grid_only(), 1)
    diff = PotentialField(np.asarray(composed.values) - d * np.asarray(G.values), G.grid,
                          VERTICAL, floor=-np.inf, growth=0.0)
    return InvarianceReport(form_mass(ddc(diff)), harmonic_control(G.grid))


def escape_steps(f: HenonLikeMap, grid: GridSpec, n: int) -> np.ndarray:
    """Number of forward steps each node stays in the square of M (n if never leaves)."""
    z, w = grid.full_nodes()
    z = z.copy()
    w = w.copy()
    m = grid.bidisk.m_radius
    steps = np.full(grid.shape, n, dtype=np.int64)
    alive = np.ones(grid.shape, dtype=bool)
    for k in range(n):
        zk, wk = f.forward(z[alive], w[alive])
        z[alive] = zk
        w[alive] = wk
        gone = alive & (np.abs(z) > m)
        steps[gone] = k
        alive &= ~gone
    return steps


def boundary_proxy(f: HenonLikeMap, grid: GridSpec, n: int = 2, width: int = 2) -> np.ndarray:
    """Nodes within ``width`` z-plane cells of a node that stays n steps while a z-neighbor leaves."""
    bounded = escape_steps(f, grid, n) >= n
    foot = np.zeros((3, 3, 1, 1), dtype=bool)
    foot[:, :, 0, 0] = True
    near_escape = ndimage.binary_dilation(~bounded, structure=foot)
    edge = bounded & near_escape
    k = 2 * width + 1
    wide = np.zeros((k, k, 1, 1), dtype=bool)
    wide[:, :, 0, 0] = True
    return ndimage.binary_dilation(edge, structure=wide)


def support_fraction(f: HenonLikeMap, G: PotentialField, n: int = 2, width: int = 2) -> float:
    """Share of the dd^c G trace mass carried by the ∂K₊ proxy."""
    T = ddc(G)
    mask = boundary_proxy(f, G.grid, n, width)
    total = form_mass(T)
    inside = form_mass(T, region=G.grid.bidisk_weights() * mask)
    return inside / total


# ---------------------------------------------------------------- pairings and probes

def closed_horizontal_form(grid: GridSpec, radius: float, center: complex = 0.0,
                           z_weight=None) -> CoefficientForm:
    """χ(w)·φ(z) (i/π)dw∧dw̄ with χ a bump normalized to unit slice mass.

    Without ``z_weight`` the form is closed; a subharmonic φ makes it dd^c-nonnegative.
    """
    chi = np.broadcast_to(w_bump(grid, radius, center), grid.shape)
    bump = w_bump(grid, radius, center)[0, 0]
    mass = 2 / np.pi * bump.sum() * grid.hw**2
    ww = chi / mass
    if z_weight is not None:
        zp, _ = grid.nodes()
        ww = ww * np.real(z_weight(zp))
    return CoefficientForm(np.zeros(grid.shape), np.array(ww, dtype=float),
                           np.zeros(grid.shape, complex), grid, HORIZONTAL)


def pair_forms(R: CoefficientForm, phi: CoefficientForm) -> float:
    """∫ R ∧ Φ over the bidisk for a vertical R and a horizontal Φ."""
    g = R.grid
    dens = mixed_density(R, phi)
    wts = np.where(R.valid & phi.valid, g.bidisk_weights(), 0.0)
    return float(WEDGE_FACTOR * g.cell_volume * np.sum(dens * wts))


def pair_potential_ddc(u: PotentialField, R: CoefficientForm) -> float:
    """∫ u dd^c R (by-parts pairing of dd^c u with a compactly supported form)."""
    g = R.grid
    s = form_ddc_density(R)
    return float(WEDGE_FACTOR * g.cell_volume * np.sum(np.asarray(u.values) * s))


@dataclass
class ExtremalityReport:
    pairings: np.ndarray
    reference: float
    closed: bool
    tolerance: float

    @property
    def passed(self) -> bool:
        if self.closed:
            return bool(np.all(np.abs(self.pairings - self.reference) <= self.tolerance))
        return bool(np.all(self.pairings <= self.reference + self.tolerance))


def is_closed_form(phi: CoefficientForm, rel_tol: float = 1e-8) -> bool:
    s = form_ddc_density(phi)
    scale = max(phi.sup_norm(), 1e-300)
    return bool(np.abs(s).max() <= rel_tol * scale / min(phi.grid.hz, phi.grid.hw) ** 2)


def extremality_probe(G: PotentialField, candidates, phi: CoefficientForm,
                      tolerance: float = 1e-3) -> ExtremalityReport:
    """Pairings of candidate limits with Φ against the Green current's pairing."""
    ref = pair_forms(ddc(G), phi)
    vals = np.array([pair_forms(ddc(c), phi) for c in candidates])
    return ExtremalityReport(vals, ref, is_closed_form(phi), tolerance)


@dataclass
class NonclosedResult:
    form: CoefficientForm
    c_limit: float
    c_direct: float
    residual_pairings: np.ndarray
    contamination: float
    flagged: bool

    @property
    def relative_gap(self) -> float:
        return abs(self.c_limit - self.c_direct) / max(abs(self.c_direct), 1e-300)


def smooth_horizontal_probe(grid: GridSpec, center: complex, radius: float):
    """Closed normalized horizontal form dd^c soft_logmax(w - center) and its seed."""
    seed = lambda t: soft_logmax(t - center, radius)
    fld = PotentialField.from_function(lambda z, w: seed(w) + 0 * np.real(z), grid, HORIZONTAL,
                                       keep_func=False)
    return ddc(fld), seed


DEFAULT_PROBES = ((0.0, 1.0), (0.8, 1.2), (-0.6j, 0.9))


def nonclosed_limit(f: HenonLikeMap, R: CoefficientForm, n: int, G_plus: PotentialField,
                    G_minus: PotentialField, probes=DEFAULT_PROBES,
                    orbit_depth: int = 12) -> NonclosedResult:
    """Stage-n form d^{-n}(f^n)^*R with two estimates of c = ⟨R, T₋⟩.

    The stage form iterates ``pullback_form`` on the grid. c_direct pairs R
    with the grid G⁻ by parts. c_limit is the stage-k slice mass
    ⟨d^{-k}(f^k)^*R, S⟩ for S = dd^c log max(|w|, 1), k = ``orbit_depth``,
    computed as ∫ d^{-k}(v∘f^{-k}) dd^c R with the push-forward potential
    orbit-evaluated. ``residual_pairings[k-1, j]`` is ⟨R_k - c·dd^c G⁺, Φ_j⟩
    for the closed probes Φ_j = dd^c soft_logmax(w - b_j, r_j), evaluated the
    same way.
    """
    g = R.grid
    d = f.degree
    c_direct = pair_potential_ddc(G_minus, R)
    zf, wf = g.full_nodes()
    sR = form_ddc_density(R)
    by_parts = lambda V: float(WEDGE_FACTOR * g.cell_volume * np.sum(V * sR))
    c_limit = by_parts(green_function(f, orbit_depth, "backward")(zf, wf))
    T = ddc(G_plus)
    rows = []
    built = [smooth_horizontal_probe(g, b, r) for b, r in probes]
    refs = [pair_forms(T, phi) for phi, _ in built]
    for k in range(1, n + 1):
        rows.append([by_parts(green_function(f, k, "backward", seed)(zf, wf)) - c_limit * ref
                     for (_, seed), ref in zip(built, refs)])
    stage = R
    fz, fw = f.forward(zf, wf)
    nb = g.bidisk.n_radius
    off = (np.abs(fw.real) > nb) | (np.abs(fw.imag) > nb)
    for _ in range(n):
        nxt, _ = pullback_form(f, stage)
        stage = nxt.scaled(1.0 / d)
    contamination = float(off.mean()) if n else 0.0
    return NonclosedResult(stage, c_limit, c_direct, np.array(rows).reshape(n, len(probes)),
                           contamination, contamination > CONTAMINATION_LIMIT)


@dataclass
class ClosedProbeReport:
    pairings: np.ndarray
    spread: float
    ddc_mass: float
    tolerance: float

    @property
    def constant(self) -> bool:
        return self.spread <= self.tolerance


def plateau(x, inner: float, outer: float) -> np.ndarray:
    """Smooth radial cutoff: 1 for |x| <= inner, 0 for |x| >= outer."""
    t = np.clip((np.abs(x) - inner) / (outer - inner), 0.0, 1.0)
    a = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    b = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    return a / (a + b)


def bump_family(grid: GridSpec, centers=(-1.2, 0.0, 1.2), radius: float = 1.5) -> list:
    """Smooth product bumps χ(z)χ(w) with sup 1, compactly supported in the bidisk."""
    out = []
    for cz in centers:
        for cw in centers:
            fn = lambda z, w, a=cz, b=cw: plateau(z - a, 0.0, radius) * plateau(w - b, 0.0, radius)
            out.append(PotentialField.from_function(fn, grid, VERTICAL, 0.0, keep_func=False))
    return out


def weak_ddc_mass(T: CoefficientForm, tests) -> float:
    """max_j |∫ T ∧ dd^c χ_j| over smooth test functions χ_j."""
    g = T.grid
    wts = g.bidisk_weights()
    return float(max(abs(WEDGE_FACTOR * g.cell_volume * np.sum(mixed_density(T, ddc(chi)) * wts))
                     for chi in tests))


def ddc_closed_probe(T: CoefficientForm, phis, tolerance: float = 1e-3,
                     tests=None) -> ClosedProbeReport:
    """Pairings against closed normalized horizontal forms and the weak dd^c mass of T."""
    vals = np.array([pair_forms(T, p) for p in phis])
    tests = bump_family(T.grid) if tests is None else tests
    return ClosedProbeReport(vals, float(vals.max() - vals.min()), weak_ddc_mass(T, tests), tolerance)
