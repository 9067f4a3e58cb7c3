"""Problem files: a sectioned key-value format parsed with :mod:`configparser`.

Sections and keys (units in comments are conventional, not parsed)::

    [problem]       name
    [grid]          d, T, lower, upper, h, tau (number or ``auto``)
    [domain]        shape = box | disc | nodes; center, radius; file
    [coefficients]  preset = NAME, or nA, nB and a[i][j], b[i][j], c[i][j], f[i][j]
    [boundary]      preset = NAME, or file = grid-function CSV
    [constants]     delta, delta_bar, kappa, K0, tau_mod, omega, eps0, nu
    [experiment]    K_ladder, n_ladder, tol, seed, safety and harness settings

Every validation failure raises a :class:`ValidationError` whose ``field``
is the dotted path of the offending entry.
"""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import presets
from .errors import ValidationError
from .grid import SpaceTimeGrid, fit_tau, read_csv
from .operators import EllipticityBounds, IsaacsCoefficients, StructureConstants
from .solver import MonotoneScheme, SchemeConfig

__all__ = ["Problem", "parse_problem", "load_problem", "load_preset"]


@dataclass
class Problem:
    name: str
    grid: SpaceTimeGrid
    coeffs: object
    g: object
    bounds: EllipticityBounds
    constants: StructureConstants
    scheme: SchemeConfig
    ladder: list
    n_ladder: list
    tol: float
    seed: int
    eps0: float
    nu: float
    regimes: list | None = None
    exact: object = None
    experiment: dict = field(default_factory=dict)
    digest: str = ""

    @property
    def scheme_tolerance(self):
        """``h^2 + tau``, the unit in which scheme errors are measured."""
        return self.grid.h**2 + self.grid.tau

    def setting(self, key, default, conv=float):
        raw = self.experiment.get(key)
        if raw is None:
            return default
        return _convert(raw, conv, f"experiment.{key}")

    def manifest_constants(self):
        return {
            "delta": self.bounds.delta,
            "delta_bar": self.bounds.delta_bar,
            "kappa": self.constants.kappa,
            "gamma": self.constants.gamma,
            "K0": self.constants.K0,
            "tau_mod": self.constants.tau_mod,
            "omega": [list(p) for p in self.constants.omega],
            "eps0": self.eps0,
            "nu": self.nu,
        }


def _convert(raw, conv, path):
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"cannot read {path}={raw!r}: {exc}", field=path) from None


def _floats(raw, path):
    return _convert(raw, lambda s: [float(v) for v in s.replace(",", " ").split()], path)


class _Reader:
    def __init__(self, cp):
        self.cp = cp

    def get(self, section, key, conv=str, default=None, required=False):
        path = f"{section}.{key}"
        if self.cp.has_option(section, key):
            return _convert(self.cp.get(section, key), conv, path)
        if required:
            raise ValidationError(f"missing setting {path}", field=path)
        return default

    def section(self, name):
        return dict(self.cp.items(name)) if self.cp.has_section(name) else {}


def _wrap(path, fn, *args, **kwargs):
    """Re-raise validation errors with a dotted field path."""
    try:
        return fn(*args, **kwargs)
    except ValidationError as exc:
        inner = getattr(exc, "field", None)
        raise ValidationError(str(exc), field=f"{path}.{inner}" if inner else path) from None


def _grid(rd, base_dir):
    d = rd.get("grid", "d", int, required=True)
    T = rd.get("grid", "T", float, required=True)
    h = rd.get("grid", "h", float, required=True)
    tau_raw = rd.get("grid", "tau", str, default="auto").strip()
    shape = rd.get("domain", "shape", str, default="box").strip()
    provisional = h * h
    if shape == "disc":
        center = _floats(rd.get("domain", "center", str, required=True), "domain.center")
        radius = rd.get("domain", "radius", float, required=True)
        grid = _wrap("grid", SpaceTimeGrid.disc, d, T, center, radius, h, T / max(1, round(T / provisional)))
    else:
        lower = _floats(rd.get("grid", "lower", str, required=True), "grid.lower")
        upper = _floats(rd.get("grid", "upper", str, required=True), "grid.upper")
        grid = _wrap("grid", SpaceTimeGrid, d, T, lower, upper, h, T / max(1, round(T / provisional)))
        if shape == "nodes":
            fname = rd.get("domain", "file", str, required=True)
            path = os.path.join(base_dir, fname)
            if not os.path.exists(path):
                raise ValidationError(f"node file {fname} does not exist", field="domain.file")
            idx = np.loadtxt(path, delimiter=",", dtype=int, ndmin=2)
            mask = np.zeros(grid.space_shape, dtype=bool)
            mask[tuple(idx.T)] = True
            grid = _wrap("domain", replace, grid, mask=mask)
        elif shape != "box":
            raise ValidationError(f"unknown domain shape {shape!r}", field="domain.shape")
    return grid, tau_raw


def _matrix(raw, d, path):
    rows = [r for r in raw.split(";")]
    vals = [[float(v) for v in r.replace(",", " ").split()] for r in rows]
    arr = _convert(vals, np.array, path).astype(float)
    if arr.size == 1 and d == 1:
        return arr.reshape(1, 1)
    if arr.shape != (d, d):
        raise ValidationError(f"{path} must be a {d}x{d} matrix", field=path)
    return arr


def _explicit_coefficients(rd, d, K0):
    nA = rd.get("coefficients", "nA", int, required=True)
    nB = rd.get("coefficients", "nB", int, required=True)
    a = np.zeros((nA, nB, d, d))
    b = np.zeros((nA, nB, d))
    c = np.zeros((nA, nB))
    f = np.zeros((nA, nB))
    for i in range(nA):
        for j in range(nB):
            key = f"a[{i}][{j}]"
            a[i, j] = _matrix(rd.get("coefficients", key, str, required=True), d, f"coefficients.{key}")
            raw_b = rd.get("coefficients", f"b[{i}][{j}]", str, default=None)
            if raw_b is not None:
                vec = _floats(raw_b, f"coefficients.b[{i}][{j}]")
                if len(vec) != d:
                    raise ValidationError("drift needs d entries", field=f"coefficients.b[{i}][{j}]")
                b[i, j] = vec
            c[i, j] = rd.get("coefficients", f"c[{i}][{j}]", float, default=0.0)
            f[i, j] = rd.get("coefficients", f"f[{i}][{j}]", float, default=0.0)
    Hbar = rd.get("coefficients", "Hbar", float, default=None)
    return _wrap("coefficients", IsaacsCoefficients, a, b, c, f, K0=K0, Hbar=Hbar), None


def parse_problem(text, base_dir=".", overrides=None):
    """Build a :class:`Problem` from problem-file text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed problem file: {exc}", field="file") from None
    for key, value in (overrides or {}).items():
        sec, opt = key.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, opt, str(value))
    rd = _Reader(cp)
    name = rd.get("problem", "name", str, default="problem")

    delta = rd.get("constants", "delta", float, default=0.5)
    delta_bar = rd.get("constants", "delta_bar", float, default=None)
    bounds = _wrap("constants", EllipticityBounds, delta, delta_bar)
    omega_raw = rd.get("constants", "omega", str, default="0:0, 1:1")
    omega = _convert(omega_raw, lambda s: tuple(tuple(float(v) for v in p.split(":")) for p in s.split(",")),
                     "constants.omega")
    constants = _wrap("constants", StructureConstants,
                      K0=rd.get("constants", "K0", float, default=1.0),
                      kappa=rd.get("constants", "kappa", float, default=1.2),
                      tau_mod=rd.get("constants", "tau_mod", float, default=0.5),
                      omega=omega)
    eps0 = rd.get("constants", "eps0", float, default=0.5)
    nu = rd.get("constants", "nu", float, default=0.25)
    if not 0 < eps0 <= 1:
        raise ValidationError("eps0 must lie in (0, 1]", field="constants.eps0")
    if not nu > 0:
        raise ValidationError("nu must be positive", field="constants.nu")

    grid, tau_raw = _grid(rd, base_dir)

    preset = rd.get("coefficients", "preset", str, default=None)
    if preset is not None:
        if preset not in presets.COEFFICIENTS:
            raise ValidationError(f"unknown coefficient preset {preset!r}", field="coefficients.preset")
        if grid.d != 1:
            raise ValidationError("coefficient presets are one-dimensional", field="grid.d")
        coeffs, regimes = presets.COEFFICIENTS[preset](constants)
    else:
        coeffs, regimes = _explicit_coefficients(rd, grid.d, constants.K0)

    safety = rd.get("experiment", "safety", float, default=0.9)
    scheme = _wrap("experiment", SchemeConfig, safety=safety, delta_bar=bounds.delta_bar)

    if tau_raw == "auto":
        probe = MonotoneScheme(coeffs, grid, scheme)
        bound = min(probe.cfl_bound(t) for t in np.linspace(0.0, grid.T, 5))
        tau = fit_tau(grid.T, safety * bound) if np.isfinite(bound) else grid.T
    else:
        tau = _convert(tau_raw, float, "grid.tau")
    grid = _wrap("grid", replace, grid, tau=tau)

    bpreset = rd.get("boundary", "preset", str, default=None)
    bfile = rd.get("boundary", "file", str, default=None)
    exact = None
    if bpreset is not None:
        if bpreset not in presets.BOUNDARY:
            raise ValidationError(f"unknown boundary preset {bpreset!r}", field="boundary.preset")
        g = presets.BOUNDARY[bpreset]
        exact = presets.EXACT.get(bpreset)
    elif bfile is not None:
        path = os.path.join(base_dir, bfile)
        if not os.path.exists(path):
            raise ValidationError(f"boundary file {bfile} does not exist", field="boundary.file")
        g = _wrap("boundary", read_csv, path, grid)
    else:
        raise ValidationError("boundary data needs a preset or a file", field="boundary")

    ladder = _floats(rd.get("experiment", "K_ladder", str, default="1 2 4 8 16 32 64 128 256"),
                     "experiment.K_ladder")
    if not ladder or ladder[0] < 1 or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValidationError("K ladder must be strictly increasing and start at 1 or above",
                              field="experiment.K_ladder")
    n_ladder = [int(v) for v in _floats(rd.get("experiment", "n_ladder", str, default="2 4 8 16"),
                                        "experiment.n_ladder")]
    if not n_ladder or n_ladder[0] < 1 or any(b <= a for a, b in zip(n_ladder, n_ladder[1:])):
        raise ValidationError("n ladder must be strictly increasing positive integers",
                              field="experiment.n_ladder")
    tol = rd.get("experiment", "tol", float, default=1e-3)
    if not tol > 0:
        raise ValidationError("tol must be positive", field="experiment.tol")
    seed = rd.get("experiment", "seed", int, default=0)
    return Problem(
        name=name, grid=grid, coeffs=coeffs, g=g, bounds=bounds, constants=constants, scheme=scheme,
        ladder=ladder, n_ladder=n_ladder, tol=tol, seed=seed, eps0=eps0, nu=nu, regimes=regimes,
        exact=exact, experiment=rd.section("experiment"),
        digest=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


def load_problem(path, overrides=None):
    if not os.path.exists(path):
        raise ValidationError(f"problem file {path} does not exist", field="spec")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_problem(text, os.path.dirname(os.path.abspath(path)), overrides)


def load_preset(name, overrides=None):
    """Problem from one of the built-in problem files, with optional ``section.key`` overrides."""
    if name not in presets.DEFAULT_SPECS:
        raise ValidationError(f"unknown preset {name!r}", field="preset")
    return parse_problem(presets.DEFAULT_SPECS[name], overrides=overrides)
