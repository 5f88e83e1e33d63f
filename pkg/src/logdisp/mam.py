"""Minimum action estimates of exit costs for the controlled equation.

The exit cost of a domain ``D = {||u|| < R}`` over horizon ``T`` is
``inf { action(h) : ||L_{u0}(g)(T)|| >= R }``. We minimize the penalized
objective

    J_mu(h) = action(h) + mu * max(0, R - ||L_{u0}(g)(T)||)^2

over piecewise-constant controls by gradient descent with Armijo
backtracking and central finite-difference gradients, increasing ``mu``
geometrically between stages. All finite-difference probes of one gradient
are integrated as a single batch.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import grid as fc
from .grid import Grid
from .nonlinear import NonlinearParams
from .sde import NumericalError, evolve
from .skeleton import Control, action_batch, knots_from_h, skeleton_increments, write_control

log = logging.getLogger(__name__)


class DegenerateBoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExitDomain:
    """Ball of radius ``radius`` around 0 in the selected norm."""

    radius: float
    norm: str = "x1"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"domain radius must be positive, got {self.radius}")
        if self.norm not in fc.NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass
class MamProblem:
    grid: Grid
    u0: np.ndarray
    model: NonlinearParams
    T: float
    intervals: int
    target: float
    norm: str = "x1"
    # exit measured as ||y(T) - center|| when a reference field is given
    center: Optional[np.ndarray] = None
    steps: Optional[int] = None
    splitting: str = "strang"
    mu0: float = 10.0
    mu_factor: float = 10.0
    stages: int = 5
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    fd_step: float = 1e-4
    grad_tol: float = 1e-6
    max_iter: int = 200
    ftol: float = 1e-13
    feas_tol: float = 1e-6
    initial: Optional[np.ndarray] = None
    signs: tuple = (1.0, -1.0)

    def __post_init__(self):
        if self.intervals < 1:
            raise ValueError(f"control intervals must be >= 1, got {self.intervals}")
        if self.steps is None:
            self.steps = 4 * self.intervals
        if self.steps % self.intervals:
            raise ValueError(f"solver steps {self.steps} must be a multiple of M_c={self.intervals}")
        for name in ("T", "target", "mu0", "step0", "fd_step", "grad_tol", "feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.mu_factor > 1:
            raise ValueError("penalty schedule must increase (mu_factor > 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("Armijo shrink factor must lie in (0, 1)")
        if self.norm not in fc.NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        self.u0 = self.grid.check(self.u0)

    @property
    def substeps(self) -> int:
        return self.steps // self.intervals

    @property
    def mus(self) -> np.ndarray:
        return self.mu0 * self.mu_factor ** np.arange(self.stages)

    def endpoint_norm(self, H: np.ndarray) -> np.ndarray:
        """``||L_{u0}(g)(T) - center||`` for each row of ``H`` (shape ``(B, M_c)``)."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        chi = skeleton_increments(knots_from_h(self.T, H), self.substeps)
        u = None
        for u in evolve(self.grid, self.u0, self.model, self.T / self.steps, chi, self.splitting):
            pass
        if self.center is not None:
            u = u - self.center
        return fc.norm(self.grid, u, self.norm)

    def initial_norm(self) -> float:
        u = self.u0 if self.center is None else self.u0 - self.center
        return float(fc.norm(self.grid, u, self.norm))

    def violation(self, n) -> np.ndarray:
        return np.maximum(0.0, self.target - n)

    def objective(self, H: np.ndarray, mu: float) -> np.ndarray:
        H = np.atleast_2d(H)
        v = self.violation(self.endpoint_norm(H))
        return action_batch(self.T, H) + mu * v**2


def fd_gradient(problem: MamProblem, h: np.ndarray, mu: float, step: Optional[float] = None) -> np.ndarray:
    """Central differences of ``J_mu``, all ``2 M_c`` probes in one batch."""
    step = problem.fd_step if step is None else step
    h = np.asarray(h, dtype=float)
    m = h.size
    E = np.eye(m) * step
    probes = np.concatenate([h + E, h - E])
    J = problem.objective(probes, mu)
    return (J[:m] - J[m:]) / (2.0 * step)


@dataclass
class StageRecord:
    mu: float
    iters: int
    J: float
    grad_norm: float
    ok: bool
    history: list = field(default_factory=list)


@dataclass
class MamResult:
    control: Control
    action: float
    violation: float
    endpoint: float
    T: float
    stages: list
    converged: bool
    stage_failed: bool = False

    @property
    def intervals(self) -> int:
        return self.control.intervals

    def to_dict(self, control_file: Optional[str] = None) -> dict:
        return {
            "action": self.action,
            "violation": self.violation,
            "T": self.T,
            "M_c": self.intervals,
            "converged": self.converged,
            "stages": [{"mu": s.mu, "iters": s.iters, "J": s.J} for s in self.stages],
            "control_file": control_file,
        }


def write_result(path, result: MamResult) -> None:
    """JSON summary plus the control CSV next to it."""
    path = Path(path)
    ctrl = path.with_name(path.stem + "_control.csv")
    write_control(ctrl, result.control)
    path.write_text(json.dumps(result.to_dict(ctrl.name), indent=2) + "\n")


def _descend(problem: MamProblem, h: np.ndarray, mu: float):
    """Armijo gradient descent on ``J_mu`` from ``h``; returns ``(h, StageRecord)``."""
    J = float(problem.objective(h, mu)[0])
    hist = [J]
    a_prev = problem.step0
    h_prev = g_prev = None
    ok = True
    gnorm = np.inf
    it = 0
    for it in range(1, problem.max_iter + 1):
        g = fd_gradient(problem, h, mu)
        if not np.all(np.isfinite(g)):
            ok = False
            break
        gnorm = float(np.linalg.norm(g))
        if gnorm <= problem.grad_tol:
            it -= 1
            break
        # Barzilai-Borwein guess for the trial step; Armijo still decides
        a = a_prev
        if h_prev is not None:
            s, y = h - h_prev, g - g_prev
            sy = float(s @ y)
            if sy > 0:
                a = float(s @ s) / sy
        a = min(a, 1e6)
        while True:
            trial = h - a * g
            Jt = float(problem.objective(trial, mu)[0])
            if np.isfinite(Jt) and Jt <= J - problem.armijo * a * gnorm**2:
                break
            a *= problem.shrink
            if a < 1e-14:
                break
        if a < 1e-14:
            # no descent along the FD gradient: stationary to FD accuracy
            break
        h_prev, g_prev = h, g
        stalled = J - Jt <= problem.ftol * (1.0 + abs(J))
        h, J, a_prev = trial, Jt, a
        hist.append(J)
        if stalled:
            break
    return h, StageRecord(float(mu), it, J, gnorm, ok, hist)


def _restore(problem: MamProblem, h: np.ndarray, max_doublings: int = 30, bisections: int = 60):
    """Smallest scaling ``c >= 1`` making ``c h`` feasible, or ``None``."""
    if not np.any(h):
        return None

    def feasible(c):
        return problem.violation(problem.endpoint_norm(c * h))[0] <= 0.0

    lo, hi = 1.0, 1.0
    if feasible(hi):
        return h
    for _ in range(max_doublings):
        lo, hi = hi, 2.0 * hi
        if feasible(hi):
            break
    else:
        return None
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi * h


def _optimize_from(problem: MamProblem, h0: np.ndarray):
    h = np.array(h0, dtype=float)
    stages = []
    candidates = [h.copy()]
    failed = False
    for mu in problem.mus:
        try:
            h, rec = _descend(problem, h, mu)
        except NumericalError as exc:
            log.warning("forward solve failed at mu=%g: %s", mu, exc)
            stages.append(StageRecord(float(mu), 0, float("nan"), float("nan"), False))
            failed = True
            break
        stages.append(rec)
        failed |= not rec.ok
        candidates.append(h.copy())
    best = None
    for c in candidates:
        r = _restore(problem, c)
        if r is None:
            continue
        a = float(action_batch(problem.T, r[None])[0])
        if best is None or a < best[0]:
            best = (a, r)
    return h, best, stages, failed


def mam_optimize(problem: MamProblem) -> MamResult:
    """Penalized minimum-action search; infeasible outcomes are flagged, not raised."""
    # exited already at t = 0, or the free flow ends outside: h = 0 is optimal
    zero = np.zeros(problem.intervals)
    n0 = problem.initial_norm() if problem.center is None else -np.inf
    if n0 < problem.target:
        n0 = float(problem.endpoint_norm(zero)[0])
    if n0 >= problem.target:
        return MamResult(Control.from_h(problem.T, zero), 0.0, 0.0, n0, problem.T, [], True)

    if problem.initial is not None:
        h0 = np.asarray(problem.initial, dtype=float)
        if h0.shape != (problem.intervals,):
            raise ValueError(f"initial control must have shape ({problem.intervals},)")
        starts = [h0]
    else:
        h0 = np.ones(problem.intervals) / problem.T
        starts = [s * h0 for s in problem.signs]

    best = None
    last = None
    for start in starts:
        h, feas, stages, failed = _optimize_from(problem, start)
        last = (h, stages, failed)
        if feas is not None and (best is None or feas[0] < best[0][0]):
            best = (feas, stages, failed)

    if best is not None:
        (a, h), stages, failed = best
        n = float(problem.endpoint_norm(h)[0])
        return MamResult(Control.from_h(problem.T, h), a, float(problem.violation(n)), n,
                         problem.T, stages, True, failed)
    h, stages, failed = last
    n = float(problem.endpoint_norm(h)[0])
    ctrl = Control.from_h(problem.T, h)
    from .skeleton import action

    return MamResult(ctrl, action(ctrl), float(problem.violation(n)), n, problem.T, stages, False, failed)


@dataclass
class QuasipotentialEstimate:
    value: float
    T: Optional[float]
    results: list
    reliable: bool


def quasipotential_estimate(domain: ExitDomain, grid: Grid, u0, model: NonlinearParams,
                            T_list: Sequence[float], intervals: int, **options) -> QuasipotentialEstimate:
    """Minimum over horizons of the exit action from ``domain``."""
    if model.delta <= 0:
        warnings.warn("exit actions are only meaningful for delta > 0", stacklevel=2)
    results = []
    for T in T_list:
        prob = MamProblem(grid, u0, model, float(T), intervals, domain.radius, domain.norm, **options)
        results.append(mam_optimize(prob))
    feasible = [r for r in results if r.converged]
    reliable = bool(feasible) and not any(r.stage_failed for r in results)
    if not feasible:
        return QuasipotentialEstimate(float("inf"), None, results, False)
    best = min(feasible, key=lambda r: r.action)
    return QuasipotentialEstimate(best.action, best.T, results, reliable)


def lemma41_bound(radius: float, R: Optional[float], alpha1: float, lam: float) -> float:
    """Certified lower bound on any exit action from a ball of radius ``radius``.

    ``R`` bounds the domain (``D`` inside the ``R``-ball); it defaults to
    ``radius``. The bound is ``(1/2) (radius^2 / (32 R^2 sqrt(2 alpha1 - 4|lam|)))^2``
    and requires ``alpha1 > 2 |lam|``.
    """
    R = radius if R is None else R
    if R < radius:
        raise ValueError("ambient radius R must contain the domain (R >= radius)")
    gap = 2.0 * alpha1 - 4.0 * abs(lam)
    if not gap > 0:
        raise ValueError(f"bound needs alpha1 > 2|lambda| (alpha1={alpha1}, lambda={lam})")
    if gap < 1e-6:
        warnings.warn(f"near-degenerate bound: 2 alpha1 - 4|lambda| = {gap:.3g}",
                      DegenerateBoundWarning, stacklevel=2)
    ratio = radius**2 / (32.0 * R**2 * np.sqrt(gap))
    return 0.5 * ratio**2


def with_options(problem: MamProblem, **changes) -> MamProblem:
    return replace(problem, **changes)
