"""Brownian paths and the exact-splitting integrator.

Each step composes two exactly solvable flows: the drift flow of
:mod:`logdisp.nonlinear` and the free propagator of :mod:`logdisp.dispersion`
driven by the increment ``chi_n``. The integrator does not care where ``chi``
comes from, so the stochastic equation (``chi = sqrt(eps) dB``) and the
controlled equation (``chi = dg``) share one code path.

Time grids are described by ``(T, M)``; the step is always ``T / M`` so that
two runs built from the same ``(T, M)`` take bit-identical steps.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import grid as fc
from .dispersion import dispersion_flow
from .grid import Grid
from .nonlinear import NonlinearFlow, NonlinearParams

SPLITTINGS = ("strang", "lie")
OBSERVABLES = ("l2", "grad_l2", "weighted1", "x1")


class NumericalError(RuntimeError):
    """Non-finite state encountered during time stepping."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


def n_steps(T: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    m = int(round(T / dt))
    if m < 1 or abs(m * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon {T} is not an integer multiple of dt={dt}")
    return m


# Brownian paths -----------------------------------------------------------

def standard_normals(seed: int, count: int) -> np.ndarray:
    """``count`` standard normals from a counter-based stream keyed by ``seed``.

    Increment ``n`` of trajectory ``seed`` depends only on ``(seed, n)``, never
    on which worker ran it or in which order.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(key=int(seed))).standard_normal(count)


@dataclass(frozen=True)
class NoisePath:
    """Brownian path sampled at ``t_n = n T / M`` with ``B(0) = 0``."""

    T: float
    B: np.ndarray
    seed: Optional[int] = None

    @property
    def steps(self) -> int:
        return self.B.shape[-1] - 1

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.B, axis=-1)

    def coarsen(self, factor: int) -> "NoisePath":
        """Path on the grid ``factor`` times coarser, sharing node values."""
        if self.steps % factor:
            raise ValueError(f"{self.steps} steps not divisible by {factor}")
        return NoisePath(self.T, self.B[..., ::factor], self.seed)


def sample_path(seed: int, T: float, dt: float) -> NoisePath:
    m = n_steps(T, dt)
    z = standard_normals(seed, m)
    B = np.concatenate(([0.0], np.cumsum(z * np.sqrt(T / m))))
    return NoisePath(float(T), B, seed)


def sample_paths(seeds: Sequence[int], T: float, dt: float) -> np.ndarray:
    """Stack of ``B`` arrays, one row per seed."""
    m = n_steps(T, dt)
    out = np.zeros((len(seeds), m + 1))
    scale = np.sqrt(T / m)
    for i, s in enumerate(seeds):
        out[i, 1:] = np.cumsum(standard_normals(s, m) * scale)
    return out


# Parameters and results ---------------------------------------------------

@dataclass(frozen=True)
class SdeParams:
    eps: float
    model: NonlinearParams
    dt: float
    T: float
    splitting: str = "strang"
    record: tuple = OBSERVABLES

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError(f"noise intensity eps must be >= 0, got {self.eps}")
        if self.splitting not in SPLITTINGS:
            raise ValueError(f"splitting must be one of {SPLITTINGS}, got {self.splitting!r}")
        for name in self.record:
            if name not in fc.NORMS:
                raise ValueError(f"unknown observable {name!r}")
        n_steps(self.T, self.dt)

    @property
    def steps(self) -> int:
        return n_steps(self.T, self.dt)

    @property
    def step_size(self) -> float:
        return self.T / self.steps


@dataclass
class Trajectory:
    times: np.ndarray
    records: dict
    final: np.ndarray
    snapshots: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.records[name]


def params_hash(obj) -> str:
    """Short stable hash of a JSON-serializable parameter description."""
    blob = json.dumps(obj, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def describe(params: SdeParams, grid: Grid) -> dict:
    m = params.model
    pot = None
    if m.potential is not None:
        pot = hashlib.sha256(m.potential.samples.tobytes()).hexdigest()[:16]
    return {
        "grid": [grid.d, grid.n, grid.length],
        "eps": params.eps, "lam": m.lam, "delta": m.delta, "alpha1": m.alpha1,
        "quad_order": m.quad_order, "potential": pot,
        "dt": params.dt, "T": params.T, "splitting": params.splitting,
    }


# Integrator ----------------------------------------------------------------

class Stepper:
    """One split step for a fixed model and step size."""

    def __init__(self, grid: Grid, model: NonlinearParams, dt: float, splitting: str = "strang"):
        if splitting not in SPLITTINGS:
            raise ValueError(f"splitting must be one of {SPLITTINGS}, got {splitting!r}")
        self.grid = grid
        self.splitting = splitting
        if splitting == "strang":
            self.drift = NonlinearFlow(model, 0.5 * dt)
        else:
            self.drift = NonlinearFlow(model, dt)

    def __call__(self, f: np.ndarray, chi) -> np.ndarray:
        if self.splitting == "strang":
            f = self.drift(f)
            f = dispersion_flow(self.grid, f, chi)
            return self.drift(f)
        return self.drift(dispersion_flow(self.grid, f, chi))


def step(grid: Grid, f: np.ndarray, dB, eps: float, params: SdeParams) -> np.ndarray:
    """Advance by one step ``params.step_size`` with Brownian increment ``dB``."""
    st = Stepper(grid, params.model, params.step_size, params.splitting)
    return st(grid.check(f), np.sqrt(eps) * np.asarray(dB, dtype=float))


def evolve(grid: Grid, u0: np.ndarray, model: NonlinearParams, dt: float, chi: np.ndarray,
           splitting: str = "strang") -> Iterator[np.ndarray]:
    """Yield the state at ``t_0, t_1, ..., t_M`` for increments ``chi[..., n]``.

    ``chi`` of shape ``(M,)`` drives one field; shape ``(B, M)`` drives a batch
    (``u0`` is broadcast if it has no batch axis).
    """
    chi = np.asarray(chi, dtype=float)
    u = grid.check(u0)
    if chi.ndim == 2 and u.ndim == grid.d:
        u = np.broadcast_to(u, (chi.shape[0],) + grid.shape).copy()
    stepper = Stepper(grid, model, dt, splitting)
    yield u
    for n in range(chi.shape[-1]):
        u = stepper(u, chi[..., n])
        if not np.isfinite(u).all():
            raise NumericalError(f"non-finite field after step {n + 1}", step=n + 1)
        yield u


def integrate(grid: Grid, u0, model: NonlinearParams, T: float, chi, splitting: str = "strang",
              record: Sequence[str] = OBSERVABLES, snapshot_steps: Sequence[int] = ()) -> Trajectory:
    chi = np.asarray(chi, dtype=float)
    m = chi.shape[-1]
    dt = T / m
    records = {name: [] for name in record}
    snaps = {}
    wanted = set(int(s) for s in snapshot_steps)
    u = None
    for n, u in enumerate(evolve(grid, u0, model, dt, chi, splitting)):
        for name in record:
            records[name].append(fc.norm(grid, u, name))
        if n in wanted:
            snaps[n] = u.copy()
    recs = {k: np.stack(v, axis=-1) if v else np.empty(0) for k, v in records.items()}
    return Trajectory(dt * np.arange(m + 1), recs, u, snaps)


def simulate(grid: Grid, u0, params: SdeParams, path: NoisePath, snapshot_steps: Sequence[int] = ()) -> Trajectory:
    """Run the stochastic equation along ``path`` (or a stacked batch of paths)."""
    if path.steps != params.steps or abs(path.T - params.T) > 1e-12 * max(1.0, params.T):
        raise ValueError(
            f"path grid (T={path.T}, M={path.steps}) does not match params (T={params.T}, M={params.steps})")
    chi = np.sqrt(params.eps) * np.diff(path.B, axis=-1)
    return integrate(grid, u0, params.model, path.T, chi, params.splitting, params.record, snapshot_steps)


def coupled_simulate(grid: Grid, u0, params1: SdeParams, params2: SdeParams, path: NoisePath):
    """Two runs driven by the same path.

    Returns ``(traj1, traj2, dist)`` with ``dist = max_n ||u1(t_n) - u2(t_n)||``
    (per batch member if ``path`` is a stack).
    """
    if params1.steps != params2.steps or params1.T != params2.T:
        raise ValueError("coupled runs need identical time grids")
    for p in (params1, params2):
        if path.steps != p.steps:
            raise ValueError("path does not match the parameter time grid")
    dB = np.diff(path.B, axis=-1)
    dt = path.T / path.steps
    gens = [evolve(grid, u0, p.model, dt, np.sqrt(p.eps) * dB, p.splitting) for p in (params1, params2)]
    recs = [{k: [] for k in p.record} for p in (params1, params2)]
    dist = None
    u1 = u2 = None
    for u1, u2 in zip(*gens):
        for r, p, u in zip(recs, (params1, params2), (u1, u2)):
            for name in p.record:
                r[name].append(fc.norm(grid, u, name))
        e = fc.l2_norm(grid, u1 - u2)
        dist = e if dist is None else np.maximum(dist, e)
    times = dt * np.arange(path.steps + 1)
    trajs = [Trajectory(times, {k: np.stack(v, axis=-1) for k, v in r.items()}, u)
             for r, u in zip(recs, (u1, u2))]
    return trajs[0], trajs[1], dist


def write_observables_csv(path, traj: Trajectory, run_hash: str) -> None:
    """CSV of ``t, l2, grad_l2, weighted1, x1`` for a single trajectory."""
    cols = [c for c in OBSERVABLES if c in traj.records]
    with open(path, "w", newline="") as fh:
        fh.write(f"# params_hash={run_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + cols)
        for n, t in enumerate(traj.times):
            w.writerow([repr(float(t))] + [repr(float(traj.records[c][n])) for c in cols])
