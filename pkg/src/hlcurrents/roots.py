"""Zero isolation for holomorphic functions of one variable.

Quadtree subdivision of a square, with three tools per box:

* an optional exclusion test (for instance disc arithmetic along an orbit)
  that proves a box is zero-free,
* Newton iteration started at the box center,
* an argument-principle winding count on the box boundary, sampled
  adaptively until consecutive phase jumps are small.

A box is accepted once Newton lands inside it and the winding count is 1.
The function ``func`` must accept a complex array and return
``(g, dg, ok)`` where ``ok`` is False wherever the value is unusable
(overflow or escape).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_PHASE_JUMP = np.pi / 4


@dataclass
class RootReport:
    roots: np.ndarray
    multiplicities: np.ndarray
    boxes_visited: int = 0
    unresolved: int = 0
    newton_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def count(self) -> int:
        return int(self.multiplicities.sum())


_EDGE_SHIFT = complex(0.0137, -0.0091)


def winding_numbers(func, cx, cy, hw, k0=16, k_max=1024):
    """Winding number of ``func`` around 0 along each square's boundary.

    Returns (winding, resolved); unresolved boxes have winding -1.
    """
    cx = np.asarray(cx, dtype=float)
    cy = np.asarray(cy, dtype=float)
    hw = np.asarray(hw, dtype=float)
    nb = cx.size
    wind = np.full(nb, -1, dtype=np.int64)
    todo = np.arange(nb)
    k = k0
    while todo.size and k <= k_max:
        t = (np.arange(k) + 0.0) / k
        # counter-clockwise: bottom, right, top, left
        edges = np.concatenate([
            -1 + 2 * t + 1j * -1,
            1 + 1j * (-1 + 2 * t),
            1 - 2 * t + 1j * 1,
            -1 + 1j * (1 - 2 * t),
        ])
        pts = (cx[todo, None] + 1j * cy[todo, None]) + hw[todo, None] * edges[None, :]
        g, dg, ok = func(pts.ravel())
        g = g.reshape(pts.shape)
        dg = dg.reshape(pts.shape)
        ok = ok.reshape(pts.shape) & np.isfinite(g) & (g != 0)
        good_rows = ok.all(axis=1)
        ratio = np.ones_like(g)
        ratio[good_rows] = np.roll(g[good_rows], -1, axis=1) / g[good_rows]
        dphi = np.angle(ratio)
        step = 2 * hw[todo, None] / k
        with np.errstate(divide="ignore", invalid="ignore"):
            lin = np.abs(dg) * step / np.abs(g)
        smooth = good_rows & (np.abs(dphi).max(axis=1) < _PHASE_JUMP) & (np.nan_to_num(lin, nan=np.inf).max(axis=1) < 0.5)
        wind[todo[smooth]] = np.rint(dphi[smooth].sum(axis=1) / (2 * np.pi)).astype(np.int64)
        # rows with unusable samples will not improve by refining
        dead = ~good_rows
        todo = todo[~smooth & ~dead]
        k *= 2
    return wind, wind >= 0


def _newton(func, z0, iters=60, tol=1e-13):
    z = np.array(z0, dtype=complex)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        g, dg, ok = func(z[active])
        good = ok & np.isfinite(g) & np.isfinite(dg) & (dg != 0)
        step = np.zeros_like(g)
        step[good] = g[good] / dg[good]
        idx = np.flatnonzero(active)
        z[idx[good]] -= step[good]
        bad = ~good
        z[idx[bad]] = np.nan
        done = bad | (np.abs(step) <= tol * np.maximum(1.0, np.abs(z[idx])))
        active[idx[done]] = False
    g, dg, ok = func(np.where(np.isfinite(z), z, 0))
    res = np.where(np.isfinite(z) & ok, np.abs(g), np.inf)
    return z, res


def isolate_roots(func, center: complex, half_width: float, exclude=None,
                  min_half_width: float = 1e-9, cluster_width: float = 1e-6, max_boxes: int = 2_000_000,
                  region=None) -> RootReport:
    """Find all zeros of ``func`` in the square of given center and half width.

    A box with winding w >= 2 whose Newton iterate z* stays inside is closed as
    one root of multiplicity w when the square of half width ``cluster_width``
    centred at z* also winds w times; rounding noise hides the phase near
    multiple roots, so they cannot be separated by subdivision. Boxes are not
    split below ``min_half_width``.
    ``exclude(cx, cy, hw) -> bool array`` marks boxes proven zero-free.
    ``region(z) -> bool array`` optionally filters the final roots.
    """
    # shift and pad the root box so dyadic edges miss round coordinates
    center = complex(center)
    start = center + half_width * _EDGE_SHIFT
    cx = np.array([start.real])
    cy = np.array([start.imag])
    hw = np.array([float(half_width) * (1 + 2 * max(abs(_EDGE_SHIFT.real), abs(_EDGE_SHIFT.imag)))])
    roots: list[complex] = []
    mult: list[int] = []
    resid: list[float] = []
    visited = 0
    unresolved = 0
    while cx.size:
        visited += cx.size
        if visited > max_boxes:
            raise RuntimeError("root isolation exceeded box budget")
        if exclude is not None:
            keep = ~exclude(cx, cy, hw)
            cx, cy, hw = cx[keep], cy[keep], hw[keep]
            if not cx.size:
                break
        z, res = _newton(func, cx + 1j * cy)
        inside = (np.isfinite(z) & (z.real >= cx - hw) & (z.real < cx + hw)
                  & (z.imag >= cy - hw) & (z.imag < cy + hw))
        split = np.ones(cx.size, dtype=bool)
        tiny = hw < min_half_width
        w, resolved = winding_numbers(func, cx, cy, hw)
        multi = np.flatnonzero(resolved & (w >= 2) & inside)
        if multi.size:
            zc = z[multi]
            wc, rc = winding_numbers(func, zc.real, zc.imag,
                                     cluster_width * np.maximum(1.0, np.abs(zc)))
            for j, i in enumerate(multi):
                if rc[j] and wc[j] == w[i]:
                    roots.append(complex(z[i]))
                    mult.append(int(w[i]))
                    resid.append(float(res[i]))
                    split[i] = False
        for i in range(cx.size):
            if not split[i]:
                continue
            if not resolved[i]:
                if tiny[i]:
                    unresolved += 1
                    split[i] = False
                continue
            if w[i] == 0 and not inside[i]:
                split[i] = False
            elif w[i] == 1 and inside[i]:
                roots.append(complex(z[i]))
                mult.append(1)
                resid.append(float(res[i]))
                split[i] = False
            elif tiny[i]:
                if inside[i] and w[i] > 0:
                    roots.append(complex(z[i]))
                    mult.append(int(w[i]))
                    resid.append(float(res[i]))
                elif w[i] != 0:
                    unresolved += 1
                split[i] = False
        cx, cy, hw = cx[split], cy[split], hw[split]
        h2 = hw / 2
        cx = np.concatenate([cx - h2, cx + h2, cx - h2, cx + h2])
        cy = np.concatenate([cy - h2, cy - h2, cy + h2, cy + h2])
        hw = np.concatenate([h2, h2, h2, h2])
    r = np.array(roots, dtype=complex)
    m = np.array(mult, dtype=np.int64)
    rs = np.array(resid, dtype=float)
    r, m, rs = _merge(r, m, rs)
    box = (np.abs(r.real - center.real) <= half_width) & (np.abs(r.imag - center.imag) <= half_width)
    r, m, rs = r[box], m[box], rs[box]
    if region is not None and r.size:
        sel = region(r)
        r, m, rs = r[sel], m[sel], rs[sel]
    order = np.lexsort((r.imag, r.real))
    return RootReport(r[order], m[order], visited, unresolved, rs[order])


def _merge(r, m, rs, tol=1e-9):
    if r.size < 2:
        return r, m, rs
    order = np.lexsort((r.imag, r.real))
    r, m, rs = r[order], m[order], rs[order]
    keep = np.ones(r.size, dtype=bool)
    for i in range(1, r.size):
        j = i - 1
        while j >= 0 and r[i].real - r[j].real <= tol:
            if keep[j] and abs(r[i] - r[j]) <= tol * max(1.0, abs(r[i])):
                keep[i] = False
                m[j] = max(m[j], m[i])
                break
            j -= 1
    return r[keep], m[keep], rs[keep]
