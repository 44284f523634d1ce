"""Command-line orchestration: one subcommand per experiment, one manifest per run.

Exit codes: 0 pass, 1 invariant violation, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    pass


def _set_threads(argv) -> None:
    # BLAS pools read these once, at numpy import
    threads = "1"
    for i, tok in enumerate(argv):
        if tok == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif tok.startswith("--threads="):
            threads = tok.split("=", 1)[1]
    for var in _THREAD_VARS:
        os.environ[var] = threads


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError as exc:
        raise UsageError(f"expected a complex number, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hlcurrents", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--config", help="sectioned key-value config file")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--random-seed", type=int, help="random seed (overrides config)")
    p.add_argument("--resolution", type=int, help="grid nodes per real axis (overrides config)")
    p.add_argument("--run-dir", help="directory for manifest and default outputs")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--map", help="map file ([map] poly_coeffs, twist, radii); default standard map")
        return s

    s = cmd("verify-map", "sampled horizontal-like check and dynamical degree")
    s.add_argument("--samples", type=int, default=256)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--out", help="report csv")

    s = cmd("green", "Green potential by iterated pull-back")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", dest="seed_spec", default="canonical",
                   help="canonical | grid:PATH | line:a")
    s.add_argument("--direction", choices=("forward", "backward"), default="forward")
    s.add_argument("--out", help="grid file")
    s.add_argument("--diagnostics", help="csv of stage deltas")

    s = cmd("equilibrium", "equilibrium measure by one route")
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--route", choices=("points", "wedge", "forms"), default="points")
    s.add_argument("--a", type=_complex)
    s.add_argument("--b", type=_complex)
    s.add_argument("--out", help="cloud csv")
    s.add_argument("--mixing", type=int, metavar="M_MAX")
    s.add_argument("--moments", type=int, metavar="K", default=2)

    s = cmd("intersect", "regularized wedge of a vertical and a horizontal grid")
    s.add_argument("--r", required=True, help="vertical grid file")
    s.add_argument("--s", required=True, help="horizontal grid file")
    s.add_argument("--schedule", default="0.2,0.1,0.05,0.025")
    s.add_argument("--route", choices=("R", "S", "both"), default="both")
    s.add_argument("--out", help="cloud csv")

    s = cmd("discs", "structural disc pairings and sub-mean violations")
    s.add_argument("--base", help="vertical grid file; default smooth vertical current")
    s.add_argument("--theta-grid", default="0.1,0.9,-0.2,0.2,3,3",
                   help="x0,x1,y0,y1,nx,ny rectangle in θ")
    s.add_argument("--phi", help="horizontal grid file whose dd^c is the test form")
    s.add_argument("--ring", type=float, default=0.05, help="sub-mean circle radius")
    s.add_argument("--report", help="csv of (theta, pairing, violation)")

    s = cmd("entropy", "entropy estimate for the map")
    s.add_argument("--method", choices=("separated", "bowen", "lov"), default="lov")
    s.add_argument("--n-max", type=int, default=6)
    s.add_argument("--epsilon", type=float, default=0.3)
    s.add_argument("--samples", type=int, help="Monte-Carlo samples (lov) or atom subset size")
    s.add_argument("--depth", type=int, default=6, help="cloud depth for separated/bowen")
    s.add_argument("--params", type=int, default=10, help="(a, b) draws pooled into the cloud")
    s.add_argument("--out", help="csv of n and raw counts")

    s = sub.add_parser("report", help="aggregate manifests under a directory")
    s.add_argument("directory")
    s.add_argument("--out", help="summary csv (default DIRECTORY/report.csv)")
    return p


# ---------------------------------------------------------------- helpers

class Context:
    def __init__(self, args, cfg):
        from .domain_maps import Bidisk, standard_map
        from .persistence import read_map

        self.args = args
        self.cfg = cfg
        if getattr(args, "map", None):
            self.f, self.bidisk = read_map(args.map)
        elif cfg.map_file:
            self.f, self.bidisk = read_map(cfg.map_file)
        else:
            self.f, self.bidisk = standard_map(), Bidisk()
        base = Path(args.run_dir) if args.run_dir else Path(cfg.output_dir) / args.command
        base.mkdir(parents=True, exist_ok=True)
        self.run_dir = base

    def path(self, given, default_name) -> Path:
        p = Path(given) if given else self.run_dir / default_name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def _record(manifest, run_dir: Path, name: str, path: Path) -> None:
    try:
        key = str(path.resolve().relative_to(run_dir.resolve()))
    except ValueError:
        key = str(path.resolve())
    manifest.add_output(key, path)
    manifest.scalars[f"file:{name}"] = key


# ---------------------------------------------------------------- subcommands

def cmd_verify_map(ctx: Context, manifest) -> None:
    from .domain_maps import DegreeAmbiguityError, check_horizontal_like, dynamical_degree
    from .persistence import write_csv

    rep = check_horizontal_like(ctx.f, ctx.bidisk, ctx.args.samples, ctx.cfg.seed)
    manifest.add_check("horizontal_like", rep.vertical_margin, rep.passed)
    try:
        d = dynamical_degree(ctx.f, ctx.bidisk, ctx.args.trials, ctx.cfg.seed)
        manifest.add_check("dynamical_degree", d, d == ctx.f.degree)
    except DegreeAmbiguityError as exc:
        d = -1
        manifest.add_check("dynamical_degree", str(exc), False)
    out = ctx.path(ctx.args.out, "verify.csv")
    write_csv(out, ["field", "value"], [
        ("passed", rep.passed), ("samples", rep.samples), ("vertical_margin", rep.vertical_margin),
        ("horizontal_margin", rep.horizontal_margin), ("image_margin_n", rep.image_margin_n),
        ("preimage_margin_m", rep.preimage_margin_m), ("degree", d), ("message", rep.message)])
    _record(manifest, ctx.run_dir, "report", out)
    print(f"horizontal-like: {'pass' if rep.passed else 'FAIL ' + rep.message}; degree {d}")


def _seed_field(ctx: Context, spec: str, grid, direction: str):
    from .currents import GridSpec, horizontal_line, vertical_line
    from .discs import swap_coordinates
    from .domain_maps import Bidisk
    from .green import canonical_seed
    from .persistence import read_grid

    if spec == "canonical":
        if direction == "forward":
            return canonical_seed(grid)
        D = grid.bidisk
        sgrid = GridSpec(Bidisk(D.n_radius, D.m_radius), grid.resolution)
        return swap_coordinates(canonical_seed(sgrid))
    kind, _, arg = spec.partition(":")
    if kind == "grid":
        if not Path(arg).exists():
            raise FileNotFoundError(f"seed grid not found: {arg}")
        return read_grid(arg)
    if kind == "line":
        a = _complex(arg)
        if direction == "forward":
            return vertical_line(a, grid.bidisk, grid.resolution)
        return horizontal_line(a, grid.bidisk, grid.resolution)
    raise UsageError(f"unknown seed {spec!r}; use canonical, grid:PATH or line:a")


def cmd_green(ctx: Context, manifest) -> None:
    from .currents import GridSpec, slice_mass
    from .domain_maps import MapSequence
    from .green import green_iterate
    from .persistence import write_csv, write_grid

    a = ctx.args
    if a.n < 0:
        raise UsageError("--n must be nonnegative")
    grid = GridSpec(ctx.bidisk, ctx.cfg.resolution)
    seed = _seed_field(ctx, a.seed_spec, grid, a.direction)
    out = ctx.path(a.out, "green.grid")
    if a.n == 0:
        final, deltas = seed, []
    else:
        seq = MapSequence.constant(ctx.f, a.n, ctx.bidisk)
        run = green_iterate(seq, seed, a.n, stop=False, direction=a.direction)
        final, deltas = run.final, list(run.deltas)
        sm = slice_mass(final).mass
        manifest.scalars["slice_mass"] = sm
        manifest.add_check("slice_mass", sm, abs(sm - 1) <= ctx.cfg.tolerances["slice_mass"], fatal=False)
        ratios = [d2 / d1 for d1, d2 in zip(deltas, deltas[1:]) if d1 > 0]
        worst = max(ratios, default=0.0)
        manifest.add_check("delta_contraction", worst, worst < 1.0)
    write_grid(out, final)
    _record(manifest, ctx.run_dir, "grid", out)
    if a.diagnostics or deltas:
        diag = ctx.path(a.diagnostics, "green_deltas.csv")
        rows = [(k + 1, d, (d / deltas[k - 1]) if k and deltas[k - 1] > 0 else "") for k, d in enumerate(deltas)]
        write_csv(diag, ["stage", "delta", "ratio"], rows)
        _record(manifest, ctx.run_dir, "diagnostics", diag)
    manifest.scalars["stages"] = len(deltas)
    print(f"green: {len(deltas)} stages -> {out}")


def _write_cloud(path, measure):
    from .persistence import write_csv
    rows = ((z.real, z.imag, w.real, w.imag, wt) for (z, w), wt in zip(measure.points, measure.weights))
    return write_csv(path, ["re_z", "im_z", "re_w", "im_w", "weight"], rows)


def cmd_equilibrium(ctx: Context, manifest) -> None:
    import numpy as np

    from .currents import GridSpec, moment_exponents, moments
    from .domain_maps import generic_parameters
    from .equilibrium import (InsufficientDepthError, default_form_seeds, mixing_profile, mu_forms,
                              mu_points, mu_wedge)
    from .persistence import write_csv

    a = ctx.args
    if a.n < 0:
        raise UsageError("--n must be nonnegative")
    if a.route == "points":
        if a.a is None or a.b is None:
            pa, pb = generic_parameters(ctx.bidisk, 1, ctx.cfg.seed)[0]
        pa = a.a if a.a is not None else pa
        pb = a.b if a.b is not None else pb
        cloud = mu_points(ctx.f, pa, pb, a.n, ctx.bidisk)
        measure = cloud.measure
        manifest.scalars.update({"a": pa, "b": pb, "roots_found": cloud.found, "roots_expected": cloud.expected})
        manifest.add_check("roots_found", cloud.found / cloud.expected, cloud.generic)
        mass = measure.total_mass
        manifest.add_check("mass", mass, abs(mass - cloud.found / cloud.expected) < 1e-15)
    else:
        if a.route == "wedge":
            res = mu_wedge(ctx.f, a.n, ctx.bidisk, ctx.cfg.resolution)
        else:
            R, S = default_form_seeds(ctx.bidisk, ctx.cfg.resolution)
            res = mu_forms(ctx.f, R, S, a.n, a.n)
        measure = res.measure()
        mass = res.mass
        manifest.add_check("mass", mass, abs(mass - 1) <= ctx.cfg.tolerances["wedge_mass"], fatal=False)
    manifest.scalars["mass"] = measure.total_mass
    out = ctx.path(a.out, f"mu_{a.route}_n{a.n}.csv")
    _write_cloud(out, measure)
    _record(manifest, ctx.run_dir, "cloud", out)

    if a.moments:
        mom = moments(measure, a.moments, False)
        rows = [(i, j, k, l, m.real, m.imag) for (i, j, k, l), m in zip(moment_exponents(a.moments, False), mom)]
        mpath = ctx.path(None, f"moments_{a.route}_n{a.n}.csv")
        write_csv(mpath, ["z", "w", "zbar", "wbar", "re", "im"], rows)
        _record(manifest, ctx.run_dir, "moments", mpath)
    if a.mixing is not None:
        phi = lambda z, w: np.real(z)
        psi = lambda z, w: np.real(w)
        try:
            prof = mixing_profile(measure, ctx.f, phi, psi, a.mixing)
        except InsufficientDepthError as exc:
            manifest.add_check("mixing_depth", str(exc), False, fatal=False)
            prof = np.array([])
        xpath = ctx.path(None, f"mixing_{a.route}_n{a.n}.csv")
        write_csv(xpath, ["m", "correlation"], enumerate(prof))
        _record(manifest, ctx.run_dir, "mixing", xpath)
    print(f"equilibrium ({a.route}, n={a.n}): mass {measure.total_mass:.17g} -> {out}")


def cmd_intersect(ctx: Context, manifest) -> None:
    from .currents import slice_mass
    from .intersection import wedge_regularized
    from .persistence import read_grid

    a = ctx.args
    for p in (a.r, a.s):
        if not Path(p).exists():
            raise FileNotFoundError(f"grid file not found: {p}")
    R, S = read_grid(a.r), read_grid(a.s)
    if R.grid != S.grid:
        raise UsageError("--r and --s grids differ")
    res = wedge_regularized(R, S, _floats(a.schedule), a.route)
    expected = slice_mass(R).mass * slice_mass(S).mass
    manifest.scalars.update({"mass": res.mass, "expected_mass": expected, "cauchy": res.cauchy})
    manifest.add_check("wedge_mass", res.mass, abs(res.mass - expected) <= ctx.cfg.tolerances["wedge_mass"],
                       fatal=False)
    out = ctx.path(a.out, f"wedge_{a.route}.csv")
    _write_cloud(out, res.measure())
    _record(manifest, ctx.run_dir, "cloud", out)
    print(f"intersect ({a.route}): mass {res.mass:.6f} (expected {expected:.6f}) -> {out}")


def cmd_discs(ctx: Context, manifest) -> None:
    import numpy as np

    from .currents import ddc, smooth_horizontal, smooth_vertical
    from .discs import StructuralDiscSpec, subharmonicity_check
    from .persistence import read_grid, write_csv

    a = ctx.args
    vals = _floats(a.theta_grid)
    if len(vals) != 6:
        raise UsageError("--theta-grid needs x0,x1,y0,y1,nx,ny")
    x0, x1, y0, y1, nx, ny = vals
    base = read_grid(a.base) if a.base else smooth_vertical(0.0, ctx.bidisk, 1.0, ctx.cfg.resolution)
    phi_field = read_grid(a.phi) if a.phi else smooth_horizontal(0.0, ctx.bidisk, 1.0, base.grid.resolution)
    if phi_field.orientation != "horizontal":
        raise UsageError("--phi must be a horizontal potential")
    spec = StructuralDiscSpec(base)
    phi = ddc(phi_field)
    thetas = [complex(x, y) for x in np.linspace(x0, x1, int(nx)) for y in np.linspace(y0, y1, int(ny))]
    cache = {}
    rows = []
    worst = -np.inf
    for t in thetas:
        rep = subharmonicity_check(spec, [phi], [t], [a.ring], cache=cache)[0]
        key = (round(t.real, 12), round(t.imag, 12))
        rows.append((t.real, t.imag, rep.center_values[key], rep.worst_violation))
        worst = max(worst, rep.worst_violation)
    out = ctx.path(a.report, "discs.csv")
    write_csv(out, ["theta_re", "theta_im", "pairing", "violation"], rows)
    _record(manifest, ctx.run_dir, "report", out)
    pairings = np.array([r[2] for r in rows])
    manifest.scalars.update({"worst_violation": worst, "pairing_spread": float(np.ptp(pairings))})
    manifest.add_check("sub_mean", worst, worst <= 1e-3)
    print(f"discs: {len(rows)} θ values, worst sub-mean violation {worst:.3g} -> {out}")


def cmd_entropy(ctx: Context, manifest) -> None:
    import numpy as np

    from .domain_maps import generic_parameters
    from .entropy import bowen_measure_entropy, lov_estimate, separated_entropy
    from .equilibrium import pooled_cloud
    from .persistence import write_csv

    a = ctx.args
    if a.n_max < 4:
        raise UsageError("--n-max must be at least 4 for a slope past burn-in")
    if a.method == "lov":
        est = lov_estimate(ctx.f, a.n_max, a.samples or 1_000_000, ctx.bidisk, ctx.cfg.seed)
    else:
        params = generic_parameters(ctx.bidisk, a.params, ctx.cfg.seed)
        # center the forward window between the cloud's end lines
        cloud = pooled_cloud(ctx.f, params, a.depth, ctx.bidisk, shift=min(a.n_max // 2, a.depth))
        if a.method == "bowen":
            est = bowen_measure_entropy(cloud, ctx.f, a.n_max, a.epsilon, seed=ctx.cfg.seed,
                                        min_atoms=min(10_000, cloud.points.shape[0]))
        else:
            pts = cloud.points
            if a.samples and a.samples < pts.shape[0]:
                rng = np.random.default_rng(ctx.cfg.seed)
                pts = pts[np.sort(rng.choice(pts.shape[0], a.samples, replace=False))]
            est = separated_entropy(ctx.f, pts, a.n_max, a.epsilon)
    ratio = est.rate / np.log(ctx.f.degree)
    manifest.scalars.update({"rate": est.rate, "band": est.band, "rate_over_log_d": ratio,
                             "flags": ";".join(est.flags)})
    manifest.add_check(f"entropy_{a.method}", ratio, 0.8 <= ratio <= 1.2, fatal=False)
    out = ctx.path(a.out, f"entropy_{a.method}.csv")
    write_csv(out, ["n", "raw"], zip(est.n_values, est.raw))
    _record(manifest, ctx.run_dir, "table", out)
    print(f"entropy ({a.method}): {est.rate:.4f} ± {est.band:.4f} = {ratio:.3f}·log d {est.flags or ''}")


# ---------------------------------------------------------------- report

def report(directory, out=None) -> tuple[list, int]:
    """Rows (run, check, measured, status) from every manifest under ``directory``."""
    from .persistence import load_manifest, sha256_file, write_csv

    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"run directory not found: {directory}")
    rows = []
    status = EXIT_OK
    for mpath in sorted(root.rglob("manifest.json")):
        run_dir = mpath.parent
        run = str(run_dir.relative_to(root)) or "."
        m = load_manifest(run_dir)
        if not m.get("complete", False):
            rows.append((run, m.get("subcommand", "?"), "", "incomplete"))
        for c in m.get("checks", []):
            rows.append((run, c["name"], c["measured"], "pass" if c["passed"] else "fail"))
            if c["fatal"] and not c["passed"]:
                status = EXIT_VIOLATION
        for rel, digest in sorted(m.get("outputs", {}).items()):
            p = Path(rel) if Path(rel).is_absolute() else run_dir / rel
            if not p.exists():
                rows.append((run, f"file {rel}", "missing", "incomplete"))
            elif sha256_file(p) != digest:
                rows.append((run, f"file {rel}", "checksum mismatch", "fail"))
                status = EXIT_VIOLATION
    dest = Path(out) if out else root / "report.csv"
    write_csv(dest, ["run", "check", "measured", "status"], rows)
    return rows, status


def cmd_report(args) -> int:
    rows, status = report(args.directory, args.out)
    if not rows:
        print("no runs found")
    for run, check, measured, st in rows:
        print(f"{st.upper():>10}  {run}  {check}  {measured}")
    return status


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "verify-map": cmd_verify_map,
    "green": cmd_green,
    "equilibrium": cmd_equilibrium,
    "intersect": cmd_intersect,
    "discs": cmd_discs,
    "entropy": cmd_entropy,
}


def run(args) -> int:
    """Dispatch a parsed command line; returns the exit status."""
    from .persistence import RunManifest, load_config

    if args.command == "report":
        return cmd_report(args)
    overrides = {"run.threads": args.threads}
    if args.random_seed is not None:
        overrides["run.seed"] = args.random_seed
    if args.resolution is not None:
        overrides["run.resolution"] = args.resolution
    cfg = load_config(args.config, overrides)
    ctx = Context(args, cfg)
    manifest = RunManifest(args.command, {**cfg.snapshot(), "argv": _argv_snapshot(args)}, cfg.seed)
    manifest.write(ctx.run_dir)  # marks the run incomplete until it finishes
    COMMANDS[args.command](ctx, manifest)
    manifest.complete = True
    manifest.write(ctx.run_dir)
    return EXIT_VIOLATION if manifest.failed else EXIT_OK


def _argv_snapshot(args) -> dict:
    return {k: (v if isinstance(v, (int, float, str, bool, type(None))) else str(v))
            for k, v in sorted(vars(args).items())}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _set_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    from .persistence import ConfigError
    try:
        return run(args)
    except (UsageError, ConfigError, FileNotFoundError, ValueError) as exc:
        # library preconditions reject inputs with ValueError; the manifest stays incomplete
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
