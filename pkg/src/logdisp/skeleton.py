"""Controlled (skeleton) equation and the Schilder action of controls.

A control is piecewise constant, ``h_m`` on ``[m tau, (m+1) tau)`` with
``tau = T / M_c``; its primitive ``g`` is piecewise linear and replaces
``sqrt(eps) B`` in the dispersion term. The solver integrates with
``substeps`` split steps per control interval.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import Grid
from .nonlinear import NonlinearParams
from .sde import OBSERVABLES, NoisePath, Trajectory, integrate


@dataclass(frozen=True)
class Control:
    """Piecewise-constant control ``h`` together with the knots of ``g``.

    ``g`` is stored rather than recomputed so that a control built from a
    sampled Brownian path reproduces the path's node values exactly.
    """

    T: float
    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"control horizon must be positive, got {self.T}")
        if self.g.shape[-1] != self.h.shape[-1] + 1:
            raise ValueError("g needs one more knot than h has intervals")
        if np.any(self.g[..., 0] != 0):
            raise ValueError("g(0) must vanish")

    @classmethod
    def from_h(cls, T: float, h) -> "Control":
        h = np.array(h, dtype=float)
        if h.ndim != 1 or h.size < 1:
            raise ValueError("h must be a non-empty 1-d array")
        tau = T / h.size
        g = np.concatenate(([0.0], np.cumsum(h * tau)))
        return cls(float(T), h, g)

    @classmethod
    def from_path(cls, path: NoisePath) -> "Control":
        """Control whose primitive interpolates the Brownian node values."""
        B = np.array(path.B, dtype=float)
        return cls(path.T, np.diff(B) / path.dt, B)

    @classmethod
    def sine(cls, T: float, intervals: int, amplitude: float = 1.0, frequency: float = 1.0) -> "Control":
        """``h_m = amplitude * sin(2 pi frequency t_m)`` sampled at interval midpoints."""
        t = (np.arange(intervals) + 0.5) * T / intervals
        return cls.from_h(T, amplitude * np.sin(2.0 * np.pi * frequency * t))

    @property
    def intervals(self) -> int:
        return self.h.shape[-1]

    @property
    def tau(self) -> float:
        return self.T / self.intervals

    def scaled(self, c: float) -> "Control":
        return Control(self.T, c * self.h, c * self.g)


def action(control: Control) -> float:
    """``(1/2) int_0^T |h|^2 dt`` for the piecewise-constant density."""
    return 0.5 * control.T * float(np.mean(control.h**2))


def action_batch(T: float, H: np.ndarray) -> np.ndarray:
    """Action of each row of ``H`` (shape ``(B, M_c)``)."""
    return 0.5 * T * np.mean(H**2, axis=-1)


def refine_knots(g: np.ndarray, substeps: int) -> np.ndarray:
    """Values of the piecewise-linear ``g`` on a grid ``substeps`` times finer."""
    g = np.asarray(g, dtype=float)
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    frac = np.arange(substeps) / substeps
    dg = np.diff(g, axis=-1)
    fine = g[..., :-1, None] + frac * dg[..., None]
    fine = fine.reshape(g.shape[:-1] + (-1,))
    return np.concatenate([fine, g[..., -1:]], axis=-1)


def knots_from_h(T: float, H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    tau = T / H.shape[-1]
    zero = np.zeros(H.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(H * tau, axis=-1)], axis=-1)


def skeleton_increments(g: np.ndarray, substeps: int) -> np.ndarray:
    return np.diff(refine_knots(g, substeps), axis=-1)


def skeleton_solve(grid: Grid, u0, control: Control, model: NonlinearParams, substeps: int = 4,
                   splitting: str = "strang", record: Sequence[str] = OBSERVABLES,
                   snapshot_steps: Sequence[int] = ()) -> Trajectory:
    """Solve the controlled equation ``L_{u0}(g)`` on ``[0, T]``."""
    chi = skeleton_increments(control.g, substeps)
    return integrate(grid, u0, model, control.T, chi, splitting, record, snapshot_steps)


# Persistence ----------------------------------------------------------------

def write_control(path, control: Control) -> Path:
    """CSV ``m,h_m`` plus a JSON sidecar ``{T, M_c}``; returns the sidecar path."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "h_m"])
        for m, v in enumerate(control.h):
            w.writerow([m, repr(float(v))])
    side = path.with_suffix(".json")
    side.write_text(json.dumps({"T": control.T, "M_c": control.intervals}, indent=2) + "\n")
    return side


def read_control(path) -> Control:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["m", "h_m"]:
        raise ValueError(f"{path}: expected header m,h_m")
    h = np.array([float(r[1]) for r in rows[1:]])
    if h.size != int(meta["M_c"]):
        raise ValueError(f"{path}: {h.size} rows but sidecar says M_c={meta['M_c']}")
    return Control.from_h(float(meta["T"]), h)
