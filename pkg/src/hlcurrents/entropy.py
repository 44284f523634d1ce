"""Entropy estimates: separated sets, Bowen balls, graph-volume growth.

All rates are in nats and come from a least-squares slope over n >= 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .currents import AtomicMeasure
from .domain_maps import Bidisk, HenonLikeMap

BURN_IN = 3
UNDERSAMPLED_COUNT = 10


@dataclass
class EntropyEstimate:
    method: str
    n_values: np.ndarray
    raw: np.ndarray
    rate: float
    band: float
    residual: float
    flags: list = field(default_factory=list)
    metric: str = "forward"
    errors: np.ndarray | None = None

    def within(self, lo: float, hi: float) -> bool:
        return lo <= self.rate <= hi


def _fit(n_values, logs, burn_in: int = BURN_IN):
    n = np.asarray(n_values, dtype=float)
    y = np.asarray(logs, dtype=float)
    sel = (n >= burn_in) & np.isfinite(y)
    if sel.sum() < 2:
        raise ValueError("need at least two stages past burn-in")
    A = np.stack([n[sel], np.ones(sel.sum())], axis=1)
    coef, *_ = np.linalg.lstsq(A, y[sel], rcond=None)
    resid = y[sel] - A @ coef
    dof = max(int(sel.sum()) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), 2 * float(np.sqrt(cov[0, 0])), float(np.sqrt(np.mean(resid**2)))


def forward_orbits(f: HenonLikeMap, points, steps: int) -> np.ndarray:
    """Array (steps, N, 2) of f^j(x) for j < steps."""
    pts = np.asarray(points, dtype=complex).reshape(-1, 2)
    out = np.empty((steps,) + pts.shape, dtype=complex)
    z, w = pts[:, 0].copy(), pts[:, 1].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            out[j, :, 0] = z
            out[j, :, 1] = w
            z, w = f.forward(z, w)
    return out


def _two_sided(f: HenonLikeMap, points, steps: int) -> np.ndarray:
    fwd = forward_orbits(f, points, steps)
    pts = np.asarray(points, dtype=complex).reshape(-1, 2)
    back = np.empty((steps - 1,) + pts.shape, dtype=complex)
    z, w = pts[:, 0].copy(), pts[:, 1].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps - 1):
            z, w = f.inverse(z, w)
            back[j, :, 0] = z
            back[j, :, 1] = w
    return np.concatenate([fwd, back])


def separated_count(orbits: np.ndarray, n: int, eps: float) -> int:
    """Greedy (n, ε)-separated subset size under max_{j<n} |f^j x - f^j y|.

    Samples are visited in lexicographic order of their starting point;
    candidates are bucketed by their starting point on a grid of mesh ε.
    """
    x0 = orbits[0]
    keys = np.stack([x0[:, 0].real, x0[:, 0].imag, x0[:, 1].real, x0[:, 1].imag], axis=1)
    order = np.lexsort(keys.T[::-1])
    cells = np.floor(keys / eps).astype(np.int64)
    buckets: dict = {}
    seg = orbits[:n]
    offsets = list(product((-1, 0, 1), repeat=4))
    count = 0
    for i in order:
        c = cells[i]
        near = []
        for off in offsets:
            near.extend(buckets.get((c[0] + off[0], c[1] + off[1], c[2] + off[2], c[3] + off[3]), ()))
        if near:
            diff = seg[:, near, :] - seg[:, i:i + 1, :]
            dist = np.sqrt((np.abs(diff) ** 2).sum(axis=2)).max(axis=0)
            if (dist <= eps).any():
                continue
        buckets.setdefault(tuple(c), []).append(i)
        count += 1
    return count


def separated_entropy(f: HenonLikeMap, samples, n_max: int, eps: float,
                      metric: str = "forward") -> EntropyEstimate:
    """Fit log N(n, ε) against n for greedy separated sets among the samples."""
    pts = samples.points if isinstance(samples, AtomicMeasure) else np.asarray(samples).reshape(-1, 2)
    if metric == "forward":
        orbits = forward_orbits(f, pts, n_max)
    elif metric == "two-sided":
        orbits = _two_sided(f, pts, n_max)
    else:
        raise ValueError("metric must be forward or two-sided")
    if not np.isfinite(orbits).all():
        raise ValueError("sample orbits escape within n_max steps")
    ns = np.arange(1, n_max + 1)
    counts = []
    for n in ns:
        if metric == "forward":
            view = orbits[:n]
        else:
            view = np.concatenate([orbits[:n], orbits[n_max:n_max + n - 1]])
        counts.append(separated_count(view, view.shape[0], eps))
    counts = np.array(counts)
    flags = []
    if counts[-1] > 0.5 * len(pts):
        flags.append("saturation")
    if n_max >= BURN_IN + 1:
        rate, band, resid = _fit(ns, np.log(counts))
    else:
        rate, band, resid = float("nan"), float("nan"), float("nan")
    return EntropyEstimate("separated", ns, counts, rate, band, resid, flags, metric)


def bowen_ball_masses(measure: AtomicMeasure, f: HenonLikeMap, n_max: int, eps: float,
                      centers: int = 200, seed: int = 0):
    """μ(B_n(x, ε)) for sampled atoms x and n = 0..n_max.

    B_0 is the ε-ball; B_n constrains f^j for j < n (n >= 1). Returns
    (masses (centers, n_max + 1), counts).
    """
    pts = measure.points
    wts = measure.weights / measure.total_mass
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=min(centers, pts.shape[0]), replace=False, p=wts)
    idx.sort()
    orbits = forward_orbits(f, pts, max(n_max, 1))
    if not np.isfinite(orbits).all():
        raise ValueError("atoms escape within n_max steps")
    masses = np.empty((idx.size, n_max + 1))
    counts = np.empty((idx.size, n_max + 1), dtype=np.int64)
    dist = lambda j, i: np.sqrt((np.abs(orbits[j] - orbits[j, i]) ** 2).sum(axis=1))
    for r, i in enumerate(idx):
        inside = dist(0, i) < eps
        for n in range(n_max + 1):
            if n >= 2:
                inside &= dist(n - 1, i) < eps
            masses[r, n] = wts[inside].sum()
            counts[r, n] = int(inside.sum())
    return masses, counts


def bowen_measure_entropy(measure: AtomicMeasure, f: HenonLikeMap, n_max: int, eps: float,
                          centers: int = 200, seed: int = 0, min_atoms: int = 10_000) -> EntropyEstimate:
    """Slope of -log (geometric mean of μ(B_n(x, ε))) against n."""
    if measure.points.shape[0] < min_atoms:
        raise ValueError(f"need at least {min_atoms} atoms")
    masses, counts = bowen_ball_masses(measure, f, n_max, eps, centers, seed)
    gm = np.exp(np.log(masses).mean(axis=0))
    ns = np.arange(n_max + 1)
    flags = []
    if counts[:, -1].min() < UNDERSAMPLED_COUNT:
        flags.append("undersampled")
    rate, band, resid = _fit(ns, -np.log(gm))
    return EntropyEstimate("bowen", ns, gm, rate, band, resid, flags)


def _uniform_disc(rng, radius, size):
    r = radius * np.sqrt(rng.random(size))
    return r * np.exp(2j * np.pi * rng.random(size))


def graph_volume_samples(f: HenonLikeMap, n: int, z, w, m_star: float, n_star: float):
    """log of the graph-volume integrand over Γ_[n] (or -inf off D_*^n) per start point."""
    z = np.array(z, dtype=complex)
    w = np.array(w, dtype=complex)
    ok = (np.abs(z) < m_star) & (np.abs(w) < n_star)
    jac = np.zeros(z.shape + (2, 2), dtype=complex)
    jac[..., 0, 0] = 1
    jac[..., 1, 1] = 1
    gram = np.zeros(z.shape + (2, 2), dtype=complex)
    gram[..., 0, 0] = 1
    gram[..., 1, 1] = 1
    log_scale = np.zeros(z.shape)
    for _ in range(1, n):
        jac = f.jacobian(z, w) @ jac
        z, w = f.forward(z, w)
        ok &= (np.abs(z) < m_star) & (np.abs(w) < n_star)
        z = np.where(ok, z, 0)
        w = np.where(ok, w, 0)
        # keep jac and gram O(1) by moving their size into log_scale
        s = np.maximum(np.abs(jac).max(axis=(-2, -1)), 1.0)
        jac = jac / s[..., None, None]
        gram = gram * np.exp(-2 * np.log(s))[..., None, None]
        log_scale += 2 * np.log(s)
        gram = gram + np.conj(np.swapaxes(jac, -1, -2)) @ jac
    det = np.real(gram[..., 0, 0] * gram[..., 1, 1] - np.abs(gram[..., 0, 1]) ** 2)
    with np.errstate(divide="ignore"):
        out = np.log(np.maximum(det, 1e-300)) + 2 * log_scale
    return np.where(ok, out, -np.inf)


def lov_volumes(f: HenonLikeMap, n_max: int, mc_samples: int, bidisk: Bidisk | None = None,
                seed: int = 0, chunk: int = 200_000):
    """Monte-Carlo log volume(Γ_[n] ∩ D_*^n) for n = 1..n_max with relative errors."""
    D = Bidisk() if bidisk is None else bidisk
    ms, ns_ = D.m_inner, D.n_inner
    vol = (np.pi * ms**2) * (np.pi * ns_**2)
    rng = np.random.default_rng(seed)
    logs = np.full((n_max, mc_samples), -np.inf)
    for s in range(0, mc_samples, chunk):
        k = min(chunk, mc_samples - s)
        z = _uniform_disc(rng, ms, k)
        w = _uniform_disc(rng, ns_, k)
        for n in range(1, n_max + 1):
            logs[n - 1, s:s + k] = graph_volume_samples(f, n, z, w, ms, ns_)
    out = np.empty(n_max)
    rel = np.empty(n_max)
    for i in range(n_max):
        row = logs[i]
        top = row.max()
        if not np.isfinite(top):
            out[i], rel[i] = -np.inf, np.inf
            continue
        v = np.exp(row - top)
        mean = v.mean()
        out[i] = np.log(vol) + top + np.log(mean)
        rel[i] = v.std() / np.sqrt(v.size) / mean
    return out, rel


def lov_estimate(f: HenonLikeMap, n_max: int, mc_samples: int, bidisk: Bidisk | None = None,
                 seed: int = 0) -> EntropyEstimate:
    """Slope of log volume(Γ_[n] ∩ D_*^n) against n."""
    logs, rel = lov_volumes(f, n_max, mc_samples, bidisk, seed)
    ns = np.arange(1, n_max + 1)
    rate, band, resid = _fit(ns, logs)
    flags = []
    if np.nanmax(rel[BURN_IN - 1:]) > 0.2:
        flags.append("high variance")
    return EntropyEstimate("lov", ns, logs, rate, band, resid, flags, errors=rel)


def point_mass_entropy(point, f: HenonLikeMap, n_max: int, eps: float) -> float:
    """Bowen rate of a single invariant atom (every ball has full mass)."""
    m = AtomicMeasure(np.asarray(point, dtype=complex).reshape(1, 2), np.array([1.0]))
    masses, _ = bowen_ball_masses(m, f, n_max, eps, centers=1)
    return _fit(np.arange(n_max + 1), -np.log(masses.mean(axis=0)))[0]
