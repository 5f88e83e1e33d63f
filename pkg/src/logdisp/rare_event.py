"""Monte Carlo experiments on exits, small-noise exponents and scalings.

Every ensemble uses trajectory seeds ``base_seed + i`` and the same Brownian
path set for every noise level (common random numbers), so cell-to-cell
comparisons are pathwise. Exits are detected at step boundaries.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Optional, Sequence

import numpy as np

from . import grid as fc
from .grid import Grid
from .mam import MamProblem, mam_optimize
from .nonlinear import NonlinearParams
from .parallel import map_chunks
from .sde import evolve, n_steps, sample_paths

Z95 = NormalDist().inv_cdf(0.975)


# Estimates ------------------------------------------------------------------

def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval; for ``k = 0`` the exact one-sided 95% bound."""
    if n <= 0 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, n > 0 (k={k}, n={n})")
    if k == 0:
        return 0.0, 1.0 - 0.05 ** (1.0 / n)
    p = k / n
    z2 = z * z
    den = 1.0 + z2 / n
    mid = (p + z2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass(frozen=True)
class EstimateRow:
    eps: float
    count: int
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    eps_log_p: Optional[float]

    @property
    def defined(self) -> bool:
        return self.count > 0

    @classmethod
    def from_count(cls, eps: float, count: int, n: int) -> "EstimateRow":
        lo, hi = wilson_interval(count, n)
        p = count / n
        elp = eps * math.log(p) if count > 0 else None
        return cls(float(eps), int(count), int(n), p, lo, hi, elp)

    def as_list(self) -> list:
        return [self.eps, self.count, self.n, self.p_hat, self.ci_low, self.ci_high,
                "" if self.eps_log_p is None else self.eps_log_p]


ESTIMATE_HEADER = ["eps", "count", "n", "p_hat", "ci_low", "ci_high", "eps_log_p"]


@dataclass(frozen=True)
class ExitRecord:
    index: int
    step: Optional[int]
    value: float

    @property
    def censored(self) -> bool:
        return self.step is None


@dataclass(frozen=True)
class ExitConfig:
    radius: float
    norm: str
    eps_list: tuple
    ensemble: int
    T: float
    dt: float
    model: NonlinearParams
    base_seed: int = 0
    splitting: str = "strang"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if not eps or any(e < 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ValueError(f"eps list must be strictly decreasing and non-negative, got {eps}")
        if self.ensemble < 100:
            raise ValueError(f"ensemble must have at least 100 trajectories, got {self.ensemble}")
        if not self.radius > 0:
            raise ValueError(f"exit radius must be positive, got {self.radius}")
        if self.norm not in fc.NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        n_steps(self.T, self.dt)

    @property
    def steps(self) -> int:
        return n_steps(self.T, self.dt)


@dataclass
class ExitStudy:
    config: ExitConfig
    rows: list
    records: dict  # eps -> list[ExitRecord]
    boundary: float

    def exit_steps(self, eps: float) -> np.ndarray:
        """First exit step per trajectory, ``-1`` when censored at ``T``."""
        return np.array([-1 if r.step is None else r.step for r in self.records[eps]])


def _exit_chunk(idx: range, grid: Grid, u0, cfg: ExitConfig, norms: tuple):
    seeds = [cfg.base_seed + i for i in idx]
    B = sample_paths(seeds, cfg.T, cfg.dt)
    dB = np.diff(B, axis=-1)
    out = {}
    edge = 0.0
    for eps in cfg.eps_list:
        per_norm = {}
        for name in norms:
            per_norm[name] = (np.full(len(seeds), -1), np.zeros(len(seeds)))
        peak = np.zeros(len(seeds))
        for n, u in enumerate(evolve(grid, u0, cfg.model, cfg.T / cfg.steps, np.sqrt(eps) * dB, cfg.splitting)):
            for name in norms:
                first, val = per_norm[name]
                v = fc.norm(grid, u, name)
                new = (first < 0) & (v >= cfg.radius)
                first[new] = n
                val[new] = v[new]
                alive = first < 0
                val[alive] = np.maximum(val[alive], v[alive])
            peak = np.maximum(peak, fc.boundary_shell(grid, u))
        edge = max(edge, float(peak.max()))
        out[eps] = per_norm
    return out, edge


def _collect(parts, cfg: ExitConfig, name: str):
    rows, records = [], {}
    for eps in cfg.eps_list:
        first = np.concatenate([p[0][eps][name][0] for p in parts])
        vals = np.concatenate([p[0][eps][name][1] for p in parts])
        recs = [ExitRecord(i, None if s < 0 else int(s), float(v)) for i, (s, v) in enumerate(zip(first, vals))]
        records[eps] = recs
        rows.append(EstimateRow.from_count(eps, int((first >= 0).sum()), len(first)))
    return rows, records


def exit_mc(grid: Grid, u0, config: ExitConfig, workers: Optional[int] = None,
            extra_norms: Sequence[str] = ()) -> ExitStudy | dict:
    """Estimate ``P(tau <= T)`` per noise level for the ball of radius ``R``.

    With ``extra_norms`` the same path set is also scored against other norm
    selectors and a dict ``norm -> ExitStudy`` is returned.
    """
    u0 = grid.check(u0)
    norms = (config.norm,) + tuple(n for n in extra_norms if n != config.norm)
    parts = map_chunks(_exit_chunk, config.ensemble, grid, u0, config, norms, workers=workers)
    edge = max(p[1] for p in parts)
    studies = {}
    for name in norms:
        cfg = config if name == config.norm else _replace_norm(config, name)
        rows, records = _collect(parts, config, name)
        studies[name] = ExitStudy(cfg, rows, records, edge)
    if extra_norms:
        return studies
    return studies[config.norm]


def _replace_norm(cfg: ExitConfig, name: str) -> ExitConfig:
    from dataclasses import replace

    return replace(cfg, norm=name)


# Small-noise exponent --------------------------------------------------------

@dataclass
class Prop53Report:
    level: float
    moment0: float
    radius: float
    rows: list
    margins: list
    bound_holds: list
    non_asymptotic: list
    p_monotone: bool
    nested: bool
    boundary: float
    study: ExitStudy = field(repr=False, default=None)

    def smallest_defined(self) -> Optional[EstimateRow]:
        defined = [r for r in self.rows if r.defined]
        return min(defined, key=lambda r: r.eps) if defined else None

    def table(self) -> list:
        out = []
        for r, m, ok, na in zip(self.rows, self.margins, self.bound_holds, self.non_asymptotic):
            out.append(r.as_list() + [self.level, m, ok, na])
        return out


PROP53_HEADER = ESTIMATE_HEADER + ["level", "margin", "bound_holds", "non_asymptotic"]


def prop53_check(grid: Grid, u0, R: float, T: float, eps_list, ensemble: int, model: NonlinearParams,
                 dt: float = 0.01, base_seed: int = 0, margin_constant: float = 1.0,
                 workers: Optional[int] = None, splitting: str = "strang") -> Prop53Report:
    """One-sided check of ``eps log P(tau <= T) <= -(R^2 - || |x| u0 ||^2) + margin``.

    ``tau`` is the first time ``|| |x| u ||`` reaches ``R``. The margin is
    ``margin_constant * eps * ||u0||_{H^1}^2 / (2 (alpha1 - 2|lam|))``, the size of
    the eps-independent prefactor in the exponential Chebyshev bound.
    """
    if model.delta != 0:
        raise ValueError("the small-noise exponent check is for delta = 0")
    if not model.alpha1 > 2 * abs(model.lam):
        raise ValueError("the small-noise exponent check needs alpha1 > 2|lambda|")
    u0 = grid.check(u0)
    m0 = float(fc.x_moment(grid, u0))
    if not R > m0:
        raise ValueError(f"need R > || |x| u0 || = {m0:.6g}, got R = {R}")
    level = -(R * R - m0 * m0)
    cfg = ExitConfig(R, "xmoment", tuple(eps_list), ensemble, T, dt, model, base_seed, splitting)
    study = exit_mc(grid, u0, cfg, workers=workers)
    c = margin_constant * float(fc.h1_norm(grid, u0)) ** 2 / (2 * (model.alpha1 - 2 * abs(model.lam)))
    margins, holds, nonasym = [], [], []
    for r in study.rows:
        margins.append(c * r.eps)
        holds.append(r.eps_log_p is None or r.eps_log_p <= level + c * r.eps)
        nonasym.append(r.p_hat >= 0.5)
    counts = [r.count for r in study.rows]
    p_mono = all(a >= b for a, b in zip(counts, counts[1:]))
    nested = True
    for e1, e2 in zip(cfg.eps_list, cfg.eps_list[1:]):
        hi, lo = study.exit_steps(e1) >= 0, study.exit_steps(e2) >= 0
        nested &= bool(np.all(hi[lo]))
    return Prop53Report(level, m0, R, study.rows, margins, holds, nonasym, p_mono, nested,
                        study.boundary, study)


# Regularization convergence --------------------------------------------------

@dataclass
class DeltaStudy:
    deltas: list
    errors: np.ndarray  # (n_delta, ensemble)
    medians: np.ndarray
    slopes: np.ndarray  # per path
    median_slope: float
    monotone: np.ndarray  # per path, strictly decreasing in delta

    def table(self) -> list:
        return [[d, float(m), float(np.min(e)), float(np.max(e))]
                for d, m, e in zip(self.deltas, self.medians, self.errors)]


DELTA_HEADER = ["delta", "median_error", "min_error", "max_error"]


def _delta_chunk(idx: range, grid, u0, eps, deltas, lam, alpha1, potential, T, dt, base_seed, splitting):
    B = sample_paths([base_seed + i for i in idx], T, dt)
    chi = np.sqrt(eps) * np.diff(B, axis=-1)
    h = T / chi.shape[-1]
    models = [NonlinearParams(lam, d, alpha1, potential) for d in (0.0,) + tuple(deltas)]
    gens = [evolve(grid, u0, m, h, chi, splitting) for m in models]
    err = np.zeros((len(deltas), len(idx)))
    for states in zip(*gens):
        ref = states[0]
        for i, u in enumerate(states[1:]):
            err[i] = np.maximum(err[i], fc.l2_norm(grid, u - ref))
    return err


def delta_convergence_study(grid: Grid, u0, eps: float, deltas: Sequence[float], ensemble: int,
                            lam: float, alpha1: float, T: float = 1.0, dt: float = 0.01,
                            potential=None, base_seed: int = 0, splitting: str = "strang",
                            workers: Optional[int] = None) -> DeltaStudy:
    """Pathwise ``sup_n ||u^{eps,delta} - u^{eps,0}||`` on shared paths."""
    deltas = [float(d) for d in deltas]
    if any(a <= b for a, b in zip(deltas, deltas[1:])) or min(deltas) < 0:
        raise ValueError("delta list must be strictly decreasing and non-negative")
    u0 = grid.check(u0)
    parts = map_chunks(_delta_chunk, ensemble, grid, u0, eps, tuple(deltas), lam, alpha1, potential,
                       T, dt, base_seed, splitting, workers=workers)
    err = np.concatenate(parts, axis=1)
    slopes = np.full(err.shape[1], np.nan)
    pos = np.all(err > 0, axis=0)
    if len(deltas) >= 2 and min(deltas) > 0 and pos.any():
        slopes[pos] = np.polyfit(np.log(deltas), np.log(err[:, pos]), 1)[0]
    mono = np.all(np.diff(err, axis=0) < 0, axis=0)
    med_slope = float(np.nanmedian(slopes)) if np.isfinite(slopes).any() else float("nan")
    return DeltaStudy(deltas, err, np.median(err, axis=1), slopes, med_slope, mono)


# Spatial scaling ---------------------------------------------------------------

@dataclass
class ScalingReport:
    eps: float
    factor: float
    discrepancy: float
    literal_discrepancy: float
    grad_ratio: float
    grad_ratio_chain: float
    grad_ratio_literal_claim: float
    l2_ratio: float
    weighted_ratio: float

    def table(self) -> list:
        return [[k, v] for k, v in self.__dict__.items()]


def scaling_check(grid: Grid, profile: Callable, eps: float, model: NonlinearParams, T: float,
                  dt: float, seed: int = 0, splitting: str = "strang") -> ScalingReport:
    """Compare ``u^{eps}`` with the unit-noise solution under spatial dilation.

    ``profile(*coords)`` evaluates the initial datum anywhere. The chain-rule
    dilation is ``u(t, x) = v(t, eps^{-1/4} x)`` with ``v(0, y) = u0(eps^{1/4} y)``,
    solved on a grid of length ``eps^{-1/4} L`` so nodes coincide. The
    alternative convention ``v(0, y) = u0(eps^{-1/4} y)`` compared via
    ``v(t, eps^{1/4} x)`` is evaluated the same way and reported alongside.
    """
    if model.potential is not None:
        raise ValueError("scaling check requires V = 0 (convolution does not commute with dilation)")
    if not eps > 0:
        raise ValueError("eps must be positive")
    # same N on a rescaled length keeps nodes aligned for every eps
    s = eps ** -0.25
    gv = Grid(grid.d, grid.n, grid.length * s)
    gl = Grid(grid.d, grid.n, grid.length / s)
    u0 = np.asarray(profile(*grid.coordinates()), dtype=complex)
    v0 = np.asarray(profile(*(c / s for c in gv.coordinates())), dtype=complex)
    w0 = np.asarray(profile(*(c * s for c in gl.coordinates())), dtype=complex)
    B = sample_paths([seed], T, dt)[0]
    dB = np.diff(B)
    h = T / dB.size
    run_u = evolve(grid, u0, model, h, np.sqrt(eps) * dB, splitting)
    run_v = evolve(gv, v0, model, h, dB, splitting)
    run_w = evolve(gl, w0, model, h, dB, splitting)
    disc = lit = 0.0
    for u, v, w in zip(run_u, run_v, run_w):
        disc = max(disc, float(np.max(np.abs(u - v))))
        lit = max(lit, float(np.max(np.abs(u - w))))
    d = grid.d
    return ScalingReport(
        eps=eps, factor=s, discrepancy=disc, literal_discrepancy=lit,
        grad_ratio=float(fc.grad_l2(grid, u) / fc.grad_l2(gv, v)),
        grad_ratio_chain=eps ** ((d - 2) / 8.0),
        grad_ratio_literal_claim=eps**0.25,
        l2_ratio=float(fc.l2_norm(grid, u) / fc.l2_norm(gv, v)),
        weighted_ratio=float(fc.weighted_norm(grid, u, 1.0) / fc.weighted_norm(gv, v, 1.0)),
    )


# Large dispersion ----------------------------------------------------------------

@dataclass
class DispersionStudy:
    eps_list: list
    p: float
    lp: np.ndarray  # (n_eps, ensemble)
    mass_error: float
    exponent: float
    exponent_ci: tuple
    boundary: float

    def table(self) -> list:
        return [[e, float(np.mean(v)), float(np.median(v)), float(np.std(v))]
                for e, v in zip(self.eps_list, self.lp)]


DISP_HEADER = ["eps", "mean_lp", "median_lp", "std_lp"]


def _disp_chunk(idx, grid, u0, eps_list, lam, T, dt, p, base_seed, splitting):
    B = sample_paths([base_seed + i for i in idx], T, dt)
    dB = np.diff(B, axis=-1)
    model = NonlinearParams(lam, 0.0, 0.0)
    m0 = float(fc.l2_norm(grid, u0))
    lp, merr, edge = [], 0.0, 0.0
    for eps in eps_list:
        u = None
        for u in evolve(grid, u0, model, T / dB.shape[-1], np.sqrt(eps) * dB, splitting):
            merr = max(merr, float(np.max(np.abs(fc.l2_norm(grid, u) / m0 - 1.0))))
        lp.append(fc.lp_norm(grid, u, p))
        edge = max(edge, float(np.max(fc.boundary_shell(grid, u))))
    return np.array(lp), merr, edge


def large_dispersion_study(grid: Grid, u0, eps_list: Sequence[float], T: float, p: float,
                           ensemble: int, lam: float, dt: float = 0.01, base_seed: int = 0,
                           splitting: str = "strang", workers: Optional[int] = None) -> DispersionStudy:
    """``L^p`` norm at ``T`` versus noise intensity (``V = 0``, ``alpha1 = 0``, ``delta = 0``).

    Exploratory: the log-log slope and its 95% interval are reported, nothing
    is asserted.
    """
    if p not in (4, 6):
        raise ValueError(f"p must be 4 or 6, got {p}")
    eps_list = [float(e) for e in eps_list]
    if any(a >= b for a, b in zip(eps_list, eps_list[1:])) or eps_list[0] <= 0:
        raise ValueError("eps list must be positive and strictly increasing")
    u0 = grid.check(u0)
    parts = map_chunks(_disp_chunk, ensemble, grid, u0, tuple(eps_list), lam, T, dt, p, base_seed,
                       splitting, workers=workers)
    lp = np.concatenate([q[0] for q in parts], axis=1)
    merr = max(q[1] for q in parts)
    edge = max(q[2] for q in parts)
    x = np.repeat(np.log(eps_list), lp.shape[1])
    y = np.log(lp).ravel()
    slope, ci = _ols_slope(x, y)
    return DispersionStudy(eps_list, p, lp, merr, slope, ci, edge)


def _ols_slope(x, y):
    xm = x - x.mean()
    sxx = float(xm @ xm)
    if sxx == 0:
        return float("nan"), (float("nan"), float("nan"))
    slope = float(xm @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xm
    dof = max(1, x.size - 2)
    se = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, (slope - Z95 * se, slope + Z95 * se)


# Deviation from the deterministic path ---------------------------------------------

@dataclass
class LdpProbeReport:
    rho: float
    rows: list
    mam_action: Optional[float]
    mam_converged: bool
    boundary: float

    def table(self) -> list:
        a = "" if self.mam_action is None else self.mam_action
        return [r.as_list() + [self.rho, a, "" if r.eps_log_p is None else -r.eps_log_p] for r in self.rows]


LDP_HEADER = ESTIMATE_HEADER + ["rho", "mam_action", "minus_eps_log_p"]


def _ldp_chunk(idx, grid, u0, model, eps_list, rho, T, dt, base_seed, splitting):
    B = sample_paths([base_seed + i for i in idx], T, dt)
    dB = np.diff(B, axis=-1)
    h = T / dB.shape[-1]
    counts = []
    edge = 0.0
    for eps in eps_list:
        ref = evolve(grid, u0, model, h, np.zeros(dB.shape[-1]), splitting)
        sup = np.zeros(len(idx))
        for u, w in zip(evolve(grid, u0, model, h, np.sqrt(eps) * dB, splitting), ref):
            sup = np.maximum(sup, fc.x1_norm(grid, u - w))
            edge = max(edge, float(np.max(fc.boundary_shell(grid, u))))
        counts.append(int((sup >= rho).sum()))
    return counts, edge


def ldp_deviation_probe(grid: Grid, u0, rho: float, T: float, eps_list: Sequence[float], ensemble: int,
                        model: NonlinearParams, dt: float = 0.01, intervals: int = 4, base_seed: int = 0,
                        splitting: str = "strang", mam_options: Optional[dict] = None,
                        workers: Optional[int] = None) -> LdpProbeReport:
    """``P(sup_n ||u(t_n) - L_{u0}(0)(t_n)||_{X1} >= rho)`` and the matching MAM cost.

    The MAM side targets the final-time tube exit
    ``||L_{u0}(g)(T) - L_{u0}(0)(T)||_{X1} >= rho``, which upper-bounds the
    cheapest deviation anywhere on ``[0, T]``.
    """
    if model.delta <= 0:
        raise ValueError("the deviation probe is posed for delta > 0")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    u0 = grid.check(u0)
    eps_list = [float(e) for e in eps_list]
    parts = map_chunks(_ldp_chunk, ensemble, grid, u0, model, tuple(eps_list), rho, T, dt, base_seed,
                       splitting, workers=workers)
    counts = np.sum([q[0] for q in parts], axis=0)
    edge = max(q[1] for q in parts)
    rows = [EstimateRow.from_count(e, int(c), ensemble) for e, c in zip(eps_list, counts)]
    mam_action, mam_ok = None, False
    if rho == 0:
        mam_action, mam_ok = 0.0, True
    else:
        steps = n_steps(T, dt)
        if steps % intervals:
            warnings.warn(f"solver steps {steps} not a multiple of {intervals}; using {4 * intervals}")
            steps = 4 * intervals
        ref = None
        for ref in evolve(grid, u0, model, T / steps, np.zeros(steps), splitting):
            pass
        prob = MamProblem(grid, u0, model, T, intervals, rho, "x1", center=ref, steps=steps,
                          splitting=splitting, **(mam_options or {}))
        res = mam_optimize(prob)
        mam_action, mam_ok = res.action, res.converged
    return LdpProbeReport(rho, rows, mam_action, mam_ok, edge)
