"""Deterministic on-disk formats: grid files, CSV tables, config, manifests."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import platform
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .currents import GridSpec, PotentialField
from .domain_maps import Bidisk, HenonLikeMap

GRID_MAGIC = b"HLGF"
OUT_DIR_ENV = "HLCURRENTS_OUT"


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits; complex as 'a+bj'."""
    if isinstance(x, (complex, np.complexfloating)):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


# ---------------------------------------------------------------- grid files

# 64-byte little-endian header; floor and growth are float32, radii and fractions float64
_HEADER = struct.Struct("<4sBB2x4H2dff3d")
GRID_VERSION = 1
_ORIENT = {"vertical": 0, "horizontal": 1}


def write_grid(path, field_: PotentialField) -> str:
    """Fixed header, then raw little-endian float64 values in C order. Returns sha256."""
    D = field_.bidisk
    n = field_.grid.resolution
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, _ORIENT[field_.orientation], n, n, n, n,
                          D.m_radius, D.n_radius, field_.floor, field_.growth,
                          D.inner_m_fraction, D.inner_n_fraction, D.margin_fraction)
    payload = header + np.ascontiguousarray(field_.values, dtype="<f8").tobytes()
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_grid(path) -> PotentialField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != GRID_MAGIC:
        raise ConfigError(f"{path}: not a grid file")
    (_, version, orient, n0, n1, n2, n3, m_r, n_r, floor, growth,
     f_m, f_n, margin) = _HEADER.unpack_from(data)
    if version != GRID_VERSION:
        raise ConfigError(f"{path}: unsupported grid version {version}")
    if len({n0, n1, n2, n3}) != 1:
        raise ConfigError(f"{path}: axis resolutions differ ({n0}, {n1}, {n2}, {n3})")
    values = np.frombuffer(data[_HEADER.size:], dtype="<f8")
    if values.size != n0**4:
        raise ConfigError(f"{path}: expected {n0**4} values, found {values.size}")
    D = Bidisk(m_r, n_r, f_m, f_n, margin)
    orientation = "vertical" if orient == 0 else "horizontal"
    return PotentialField(values.reshape((n0,) * 4).astype(float), GridSpec(D, n0), orientation,
                          float(floor), float(growth))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_csv(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return sha256_file(path)


# ---------------------------------------------------------------- config

DEFAULTS = {
    "run": {"resolution": "32", "seed": "0", "threads": "1", "output_dir": "runs"},
    "tolerances": {"slice_mass": "1e-3", "route_moments": "0.05", "wedge_mass": "1e-3",
                   "green_seed": "1e-3", "line_green": "2e-2"},
    "entropy": {"epsilon": "0.3", "n_max": "6", "samples": "1000000", "params": "10"},
}


@dataclass
class ExperimentConfig:
    map_file: str | None = None
    resolution: int = 32
    seed: int = 0
    threads: int = 1
    output_dir: str = "runs"
    tolerances: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {"map_file": self.map_file, "resolution": self.resolution, "seed": self.seed,
                "threads": self.threads, "output_dir": self.output_dir,
                "tolerances": dict(self.tolerances), "sections": self.sections}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    return cp


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a sectioned key-value file; errors name the file, line and field."""
    cp = _parser()
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, str(value))

    def get(section, name, conv):
        raw = cp.get(section, name)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{path or '<defaults>'}: [{section}] {name} = {raw!r}: {exc}") from exc

    tol = {k: get("tolerances", k, float) for k in cp.options("tolerances")}
    for k, v in tol.items():
        if not v > 0:
            raise ConfigError(f"{path or '<defaults>'}: [tolerances] {k} must be positive")
    out_dir = os.environ.get(OUT_DIR_ENV) or cp.get("run", "output_dir")
    cfg = ExperimentConfig(
        map_file=cp.get("run", "map", fallback=None),
        resolution=get("run", "resolution", int),
        seed=get("run", "seed", int),
        threads=get("run", "threads", int),
        output_dir=out_dir,
        tolerances=tol,
        sections={s: dict(cp.items(s)) for s in cp.sections()},
    )
    if cfg.resolution < 8:
        raise ConfigError(f"{path or '<defaults>'}: [run] resolution must be at least 8")
    return cfg


def _pair(text: str) -> complex:
    re_, im_ = (float(t) for t in text.split())
    return complex(re_, im_)


def read_map(path):
    """Map file with a [map] section; returns (HenonLikeMap, Bidisk).

    ``poly_coeffs`` lists ascending coefficients as ``re im`` pairs separated
    by commas; ``twist`` is one pair; ``m_radius``/``n_radius`` are optional.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh, source=str(path))
    except FileNotFoundError as exc:
        raise ConfigError(f"map file not found: {path}") from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if not cp.has_section("map"):
        raise ConfigError(f"{path}: missing [map] section")
    sec = cp["map"]
    for key in ("poly_coeffs", "twist"):
        if key not in sec:
            raise ConfigError(f"{path}: [map] missing field {key}")
    try:
        coeffs = [_pair(c) for c in sec["poly_coeffs"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"{path}: [map] poly_coeffs = {sec['poly_coeffs']!r}: {exc}") from exc
    try:
        twist = _pair(sec["twist"])
    except ValueError as exc:
        raise ConfigError(f"{path}: [map] twist = {sec['twist']!r}: {exc}") from exc
    try:
        D = Bidisk(sec.getfloat("m_radius", 3.0), sec.getfloat("n_radius", 3.0))
        f = HenonLikeMap(coeffs, twist)
    except ValueError as exc:
        raise ConfigError(f"{path}: [map] {exc}") from exc
    return f, D


def write_map(path, f: HenonLikeMap, bidisk: Bidisk | None = None) -> None:
    D = Bidisk() if bidisk is None else bidisk
    pairs = ", ".join(f"{fmt(c.real)} {fmt(c.imag)}" for c in f.coeffs)
    t = f.twist
    Path(path).write_text(f"[map]\npoly_coeffs = {pairs}\ntwist = {fmt(t.real)} {fmt(t.imag)}\n"
                          f"m_radius = {fmt(D.m_radius)}\nn_radius = {fmt(D.n_radius)}\n")


# ---------------------------------------------------------------- manifests

@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    outputs: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    started: float = field(default_factory=time.time)
    wall_clock: float = 0.0
    complete: bool = False

    def add_output(self, name: str, path) -> None:
        self.outputs[name] = sha256_file(path)

    def add_check(self, name: str, measured, passed: bool, fatal: bool = True) -> None:
        self.checks.append({"name": name, "measured": fmt(measured), "passed": bool(passed),
                            "fatal": bool(fatal)})

    @property
    def failed(self) -> bool:
        return any(c["fatal"] and not c["passed"] for c in self.checks)

    def write(self, directory) -> Path:
        self.wall_clock = time.time() - self.started
        data = {
            "subcommand": self.subcommand,
            "complete": self.complete,
            "seed": self.seed,
            "config": self.config,
            "versions": {"hlcurrents": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "wall_clock_seconds": self.wall_clock,
            "outputs": self.outputs,
            "scalars": {k: fmt(v) for k, v in self.scalars.items()},
            "checks": self.checks,
        }
        path = Path(directory) / "manifest.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path


def load_manifest(directory) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text())
