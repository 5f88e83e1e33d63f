"""TOML run configuration with strict keys and boundary re-validation.

Sections: ``[grid]``, ``[model]``, ``[noise]``, ``[init]``, ``[study]`` and
``[output]``. Unknown keys are errors naming the accepted siblings; numeric
constraints are checked by constructing the owning module's objects, so the
messages are the modules' own.
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import grid as fc
from .grid import Grid
from .nonlinear import NonlinearParams, PotentialKernel
from .sde import SPLITTINGS, n_steps

REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; ``line``/``col`` are 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, col: Optional[int] = None):
        self.line, self.col = line, col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)


_NUM = (int, float)

# key -> (accepted types, default)
SCHEMA = {
    "grid": {"d": (int, REQUIRED), "n": (int, REQUIRED), "length": (_NUM, REQUIRED)},
    "model": {
        "lambda": (_NUM, REQUIRED), "delta": (_NUM, 0.0), "alpha1": (_NUM, 0.0),
        "potential": ((str, dict), "none"), "splitting": (str, "strang"),
        "quadrature_order": (int, 8),
    },
    "noise": {"epsilon": (_NUM, 1.0), "dt": (_NUM, REQUIRED), "horizon": (_NUM, REQUIRED), "seed": (int, 0)},
    "init": {
        "kind": (str, "gaussian"), "amplitude": (_NUM, 1.0), "width": (_NUM, 1.0),
        "center": ((_NUM, list), 0.0), "k": ((int, list), 0), "path": (str, None),
    },
    "output": {"dir": (str, "out"), "snapshots": (list, [])},
}

POTENTIAL_KEYS = {
    "gaussian": {"kind": (str, REQUIRED), "c": (_NUM, 1.0), "sigma": (_NUM, 1.0)},
    "file": {"kind": (str, REQUIRED), "path": (str, REQUIRED)},
}

INIT_KEYS = {
    "gaussian": {"kind", "amplitude", "width", "center"},
    "plane_wave": {"kind", "k", "amplitude"},
    "file": {"kind", "path"},
}

_F, _I, _L, _S = _NUM, int, list, str
MAM_OPTIONS = {
    "mu0": (_F, 10.0), "mu_factor": (_F, 10.0), "stages": (_I, 5), "step0": (_F, 1.0),
    "shrink": (_F, 0.5), "armijo": (_F, 1e-4), "fd_step": (_F, 1e-4), "grad_tol": (_F, 1e-6),
    "max_iter": (_I, 200), "ftol": (_F, 1e-13), "feas_tol": (_F, 1e-6),
}

STUDY_KEYS = {
    "simulate": {},
    "skeleton": {"intervals": (_I, 8), "amplitude": (_F, 1.0), "frequency": (_F, 1.0),
                 "control_file": (_S, None)},
    "mam": {"intervals": (_I, REQUIRED), "target": (_F, REQUIRED), "norm": (_S, "x1"),
            "steps": (_I, None), "horizons": (_L, None), **MAM_OPTIONS},
    "exit-mc": {"radius": (_F, REQUIRED), "norm": (_S, "x1"), "eps": (_L, REQUIRED),
                "ensemble": (_I, REQUIRED)},
    "prop53": {"radius": (_F, REQUIRED), "eps": (_L, REQUIRED), "ensemble": (_I, REQUIRED),
               "margin_constant": (_F, 1.0)},
    "delta-study": {"deltas": (_L, [1e-1, 1e-2, 1e-3, 1e-4]), "ensemble": (_I, REQUIRED)},
    "scaling-check": {},
    "disp-study": {"eps": (_L, REQUIRED), "p": (_NUM, 4), "ensemble": (_I, REQUIRED)},
    "ldp-probe": {"rho": (_F, REQUIRED), "eps": (_L, REQUIRED), "ensemble": (_I, REQUIRED),
                  "intervals": (_I, 4), **MAM_OPTIONS},
}
STUDIES = tuple(STUDY_KEYS)


@dataclass
class RunConfig:
    grid: Grid
    model: NonlinearParams
    splitting: str
    eps: float
    dt: float
    T: float
    seed: int
    init: dict
    study: dict
    output_dir: Path
    snapshots: tuple
    raw: dict = field(repr=False, default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def steps(self) -> int:
        return n_steps(self.T, self.dt)

    @property
    def study_name(self) -> Optional[str]:
        return self.study.get("name")

    def snapshot_steps(self) -> list[int]:
        return [int(round(t / (self.T / self.steps))) for t in self.snapshots]

    def initial_field(self) -> np.ndarray:
        return build_initial(self.init, self.grid)

    def profile(self):
        """Initial datum as a function of the coordinates (analytic kinds only)."""
        spec = self.init
        if spec["kind"] == "gaussian":
            amp, w = spec["amplitude"], spec["width"]
            c = np.broadcast_to(np.asarray(spec["center"], dtype=float), (self.grid.d,))

            def gauss(*xs):
                r2 = sum((x - ci) ** 2 for x, ci in zip(xs, c))
                return amp * np.exp(-r2 / (2 * w * w)) + 0j

            return gauss
        raise ConfigError(f"the scaling check needs an analytic gaussian initial datum, got {spec['kind']!r}")


def build_initial(spec: dict, grid: Grid) -> np.ndarray:
    kind = spec["kind"]
    if kind == "gaussian":
        return fc.gaussian(grid, spec["amplitude"], spec["width"], spec["center"])
    if kind == "plane_wave":
        return fc.plane_wave(grid, spec["k"], spec["amplitude"])
    from .snapshot import read_field

    g2, f = read_field(spec["path"])
    if g2 != grid:
        raise ConfigError(f"initial field {spec['path']} is on {g2}, config grid is {grid}")
    return f


# Diagnostics -----------------------------------------------------------------

def _locate(text: str, section: Optional[str], key: Optional[str]):
    """1-based (line, column) of ``key`` inside ``[section]`` (or of the header)."""
    current = None
    header = re.compile(r"^\s*\[\s*([^\]\s]+)\s*\]")
    for i, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i, m.start(1) + 1
            continue
        if current == section and key is not None:
            m = re.match(r"^(\s*)(\"?)" + re.escape(key) + r"\2\s*=", line)
            if m:
                return i, len(m.group(1)) + 1
            # inline tables, e.g. potential = {kind = "gaussian", sigma = 1}
            m = re.search(r"[{,]\s*(" + re.escape(key) + r")\s*=", line)
            if m:
                return i, m.start(1) + 1
    return None, None


def _fail(text, section, key, message):
    line, col = _locate(text, section, key)
    raise ConfigError(message, line, col)


def _typed(text, section, key, value, types):
    flat = []
    for t in (types if isinstance(types, tuple) else (types,)):
        flat.extend(t if isinstance(t, tuple) else (t,))
    if isinstance(value, bool) or not isinstance(value, tuple(flat)):
        names = "/".join(t.__name__ for t in flat)
        got = "boolean" if isinstance(value, bool) else type(value).__name__
        _fail(text, section, key, f"[{section}] {key}: expected {names}, got {got}")
    return value


def _section(text, data: dict, name: str, schema: dict, required: bool = True) -> dict:
    if name not in data:
        if required and any(d is REQUIRED for _, d in schema.values()):
            _fail(text, None, None, f"missing section [{name}]")
        data_sec = {}
    else:
        data_sec = data[name]
        if not isinstance(data_sec, dict):
            _fail(text, None, None, f"[{name}] must be a table")
    return _keys(text, name, data_sec, schema)


def _keys(text, section, given: dict, schema: dict) -> dict:
    out = {}
    for key in given:
        if key not in schema:
            valid = ", ".join(sorted(schema))
            _fail(text, section, key, f"unknown key {key!r} in [{section}]; valid keys: {valid}")
    for key, (types, default) in schema.items():
        if key in given:
            out[key] = _typed(text, section, key, given[key], types)
        elif default is REQUIRED:
            _fail(text, section, None, f"[{section}] is missing required key {key!r}")
        else:
            out[key] = list(default) if isinstance(default, list) else default
    return out


# Parsing -----------------------------------------------------------------------

def parse_config(text: str, base_dir=None, study: Optional[str] = None) -> RunConfig:
    """Parse and validate a run configuration.

    ``study`` selects the study-key schema when ``[study]`` has no ``name``.
    Relative file paths resolve against ``base_dir``.
    """
    base = Path(base_dir) if base_dir is not None else Path(".")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            m = re.search(r"line (\d+), column (\d+)", str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
        raise ConfigError(f"syntax error: {getattr(exc, 'msg', exc)}", line, col) from None

    known = set(SCHEMA) | {"study"}
    for name in data:
        if name not in known:
            _fail(text, name, None, f"unknown section [{name}]; valid sections: {', '.join(sorted(known))}")

    g = _section(text, data, "grid", SCHEMA["grid"])
    try:
        grid = Grid(g["d"], g["n"], float(g["length"]))
    except ValueError as exc:
        _fail(text, "grid", None, f"[grid] {exc}")

    m = _section(text, data, "model", SCHEMA["model"])
    if m["splitting"] not in SPLITTINGS:
        _fail(text, "model", "splitting", f"splitting must be one of {SPLITTINGS}, got {m['splitting']!r}")
    kernel = _potential(text, m["potential"], grid, base)
    try:
        model = NonlinearParams(float(m["lambda"]), float(m["delta"]), float(m["alpha1"]), kernel,
                                m["quadrature_order"])
    except ValueError as exc:
        key = _guess_key(str(exc), {"lambda": "lambda", "delta": "delta", "alpha1": "alpha1",
                                    "quadrature": "quadrature_order"})
        _fail(text, "model", key, f"[model] {exc}")

    nz = _section(text, data, "noise", SCHEMA["noise"])
    if not nz["epsilon"] >= 0:
        _fail(text, "noise", "epsilon", f"noise intensity eps must be >= 0, got {nz['epsilon']}")
    if nz["seed"] < 0:
        _fail(text, "noise", "seed", f"seed must be non-negative, got {nz['seed']}")
    try:
        steps = n_steps(float(nz["horizon"]), float(nz["dt"]))
    except ValueError as exc:
        _fail(text, "noise", "horizon", f"[noise] {exc}")

    init = _init(text, data.get("init", {}), grid, base)

    out = _section(text, data, "output", SCHEMA["output"], required=False)
    snaps = []
    h = float(nz["horizon"]) / steps
    for t in out["snapshots"]:
        if isinstance(t, bool) or not isinstance(t, _NUM):
            _fail(text, "output", "snapshots", "snapshot times must be numbers")
        n = round(t / h)
        if not 0 <= t <= nz["horizon"] or abs(n * h - t) > 1e-9 * max(1.0, t):
            _fail(text, "output", "snapshots",
                  f"snapshot time {t} is not a grid time in [0, {nz['horizon']}] with dt={h}")
        snaps.append(float(t))
    out_dir = Path(out["dir"])
    if not out_dir.is_absolute():
        out_dir = base / out_dir

    st = _study(text, data.get("study", {}), study)

    return RunConfig(grid, model, m["splitting"], float(nz["epsilon"]), float(nz["dt"]),
                     float(nz["horizon"]), int(nz["seed"]), init, st, out_dir, tuple(snaps), data, base)


def _guess_key(message: str, table: dict) -> Optional[str]:
    for word, key in table.items():
        if word in message:
            return key
    return None


def _resolve(text, section, key, path: str, base: Path) -> str:
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        _fail(text, section, key, f"[{section}] {key}: file not found: {p}")
    return str(p)


def _potential(text, spec, grid: Grid, base: Path):
    if isinstance(spec, str):
        if spec != "none":
            _fail(text, "model", "potential",
                  f"potential must be \"none\" or a table with kind = gaussian|file, got {spec!r}")
        return None
    kind = spec.get("kind")
    if kind not in POTENTIAL_KEYS:
        _fail(text, "model", "potential", f"potential kind must be one of {sorted(POTENTIAL_KEYS)}, got {kind!r}")
    p = _keys(text, "model", spec, POTENTIAL_KEYS[kind])
    try:
        if kind == "gaussian":
            return PotentialKernel.gaussian(grid, float(p["c"]), float(p["sigma"]))
        path = _resolve(text, "model", "path", p["path"], base)
        k = PotentialKernel.from_file(path)
        if k.grid != grid:
            _fail(text, "model", "path", f"potential file is on {k.grid}, config grid is {grid}")
        return k
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail(text, "model", "potential", f"[model] potential: {exc}")


def _init(text, given: dict, grid: Grid, base: Path) -> dict:
    kind = given.get("kind", "gaussian")
    if kind not in INIT_KEYS:
        _fail(text, "init", "kind", f"init kind must be one of {sorted(INIT_KEYS)}, got {kind!r}")
    schema = {k: v for k, v in SCHEMA["init"].items() if k in INIT_KEYS[kind]}
    if kind == "file":
        schema["path"] = (str, REQUIRED)
    spec = _keys(text, "init", given, schema)
    spec["kind"] = kind
    if kind == "gaussian":
        if not spec["width"] > 0:
            _fail(text, "init", "width", f"gaussian width must be positive, got {spec['width']}")
        c = spec["center"]
        if isinstance(c, list) and len(c) != grid.d:
            _fail(text, "init", "center", f"center needs {grid.d} components, got {len(c)}")
    elif kind == "plane_wave":
        k = spec["k"]
        if isinstance(k, list) and len(k) != grid.d:
            _fail(text, "init", "k", f"k needs {grid.d} components, got {len(k)}")
    else:
        spec["path"] = _resolve(text, "init", "path", spec["path"], base)
    try:
        build_initial(spec, grid)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail(text, "init", None, f"[init] {exc}")
    return spec


def _study(text, given: dict, study: Optional[str]) -> dict:
    name = given.get("name", study)
    if name is None:
        if set(given) - {"name"}:
            _fail(text, "study", None, "[study] has keys but no name; valid names: " + ", ".join(STUDIES))
        return {}
    if name not in STUDY_KEYS:
        _fail(text, "study", "name", f"unknown study {name!r}; valid names: {', '.join(STUDIES)}")
    if study is not None and "name" in given and study not in ("validate", given["name"]):
        _fail(text, "study", "name", f"[study] name is {given['name']!r} but the subcommand is {study!r}")
    body = {k: v for k, v in given.items() if k != "name"}
    out = _keys(text, "study", body, STUDY_KEYS[name])
    out["name"] = name
    _check_study(text, out)
    return out


def _positive(text, st, *keys):
    for k in keys:
        v = st.get(k)
        if v is not None and not v > 0:
            _fail(text, "study", k, f"[study] {k} must be positive, got {v}")


def _numbers(text, st, key):
    vals = st.get(key)
    if vals is None:
        return
    if not vals or any(isinstance(v, bool) or not isinstance(v, _NUM) or not math.isfinite(v) for v in vals):
        _fail(text, "study", key, f"[study] {key} must be a non-empty list of numbers")


def _check_study(text, st: dict) -> None:
    name = st["name"]
    for k in ("eps", "deltas", "horizons"):
        _numbers(text, st, k)
    _positive(text, st, "intervals", "substeps", "ensemble", "radius", "target", "steps", "mu0", "step0",
              "fd_step", "grad_tol", "feas_tol", "max_iter", "stages")
    if "norm" in st and st["norm"] not in fc.NORMS:
        _fail(text, "study", "norm", f"unknown norm {st['norm']!r}; valid: {', '.join(fc.NORMS)}")
    if name == "exit-mc" or name == "prop53":
        e = st["eps"]
        if any(v < 0 for v in e) or any(a <= b for a, b in zip(e, e[1:])):
            _fail(text, "study", "eps", "eps list must be strictly decreasing and non-negative")
        if st["ensemble"] < 100:
            _fail(text, "study", "ensemble", f"ensemble must have at least 100 trajectories, got {st['ensemble']}")
    if name == "prop53" and any(v <= 0 for v in st["eps"]):
        _fail(text, "study", "eps", "eps values must be positive for the exponent check")
    if name == "delta-study":
        d = st["deltas"]
        if any(v <= 0 for v in d) or any(a <= b for a, b in zip(d, d[1:])):
            _fail(text, "study", "deltas", "delta list must be strictly decreasing and positive")
    if name == "disp-study":
        e = st["eps"]
        if any(v <= 0 for v in e) or any(a >= b for a, b in zip(e, e[1:])):
            _fail(text, "study", "eps", "eps list must be positive and strictly increasing")
        if st["p"] not in (4, 6):
            _fail(text, "study", "p", f"p must be 4 or 6, got {st['p']}")
    if name == "ldp-probe" and st["rho"] < 0:
        _fail(text, "study", "rho", f"rho must be non-negative, got {st['rho']}")
    if name == "mam" and st.get("horizons") is not None and any(v <= 0 for v in st["horizons"]):
        _fail(text, "study", "horizons", "horizons must be positive")


def load_config(path, study: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent, study)
