"""Regularized logarithmic nonlinearity, convolution potential, exact drift flow.

The drift part of the equation,

    du/dt = i lam f_delta(|u|^2) u + i V[u] u - alpha1 u,

keeps every phase factor purely imaginary, so ``|u(r)| = exp(-alpha1 r) |u(0)|``
pointwise and the flow is closed form up to a scalar phase integral.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import Grid


def f_delta(s, delta: float):
    """``log((delta + s) / (1 + delta s))``; ``f_0 = log``."""
    if delta < 0:
        raise ValueError(f"regularization delta must be >= 0, got {delta}")
    s = np.asarray(s, dtype=float)
    if delta == 0:
        with np.errstate(divide="ignore"):
            return np.log(s)
    return np.log((delta + s) / (1.0 + delta * s))


@dataclass(frozen=True, eq=False)
class PotentialKernel:
    """Real convolution kernel ``V`` sampled on grid nodes.

    ``spectrum`` holds ``dx^d * FFT(V)`` with the kernel re-centered so index 0
    corresponds to offset zero; multiplying by the FFT of ``|u|^2`` and
    inverting gives the periodic convolution integral.
    """

    grid: Grid
    samples: np.ndarray
    spectrum: np.ndarray

    @classmethod
    def from_samples(cls, grid: Grid, samples) -> "PotentialKernel":
        v = np.asarray(samples)
        if v.shape != grid.shape:
            raise ValueError(f"kernel shape {v.shape} does not match grid {grid.shape}")
        if np.iscomplexobj(v):
            if np.max(np.abs(v.imag), initial=0.0) > 1e-12:
                raise ValueError("potential kernel must be real (imaginary part above 1e-12)")
            v = v.real
        v = np.array(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential kernel has non-finite entries")
        v.setflags(write=False)
        spec = np.fft.fftn(np.fft.ifftshift(v), axes=grid.axes) * grid.cell
        spec.setflags(write=False)
        return cls(grid, v, spec)

    @classmethod
    def gaussian(cls, grid: Grid, c: float = 1.0, sigma: float = 1.0) -> "PotentialKernel":
        """Isotropic ``c exp(-|x|^2 / (2 sigma^2))``."""
        if sigma <= 0:
            raise ValueError(f"kernel width must be positive, got {sigma}")
        return cls.from_samples(grid, c * np.exp(-grid.r2 / (2.0 * sigma**2)))

    @classmethod
    def from_file(cls, path) -> "PotentialKernel":
        from .snapshot import read_field

        grid, f = read_field(path)
        return cls.from_samples(grid, f)


@dataclass(frozen=True)
class NonlinearParams:
    lam: float
    delta: float = 0.0
    alpha1: float = 0.0
    potential: Optional[PotentialKernel] = None
    quad_order: int = 8

    def __post_init__(self):
        if self.lam == 0 or not np.isfinite(self.lam):
            raise ValueError(f"nonlinear coupling lambda must be nonzero and finite, got {self.lam}")
        if not self.delta >= 0:
            raise ValueError(f"regularization delta must be >= 0, got {self.delta}")
        if not self.alpha1 >= 0:
            raise ValueError(f"damping alpha1 must be >= 0, got {self.alpha1}")
        if self.quad_order < 1:
            raise ValueError(f"quadrature order must be >= 1, got {self.quad_order}")


def apply_potential(kernel: PotentialKernel, f: np.ndarray) -> np.ndarray:
    """``V[f](x) = int V(x - y) |f(y)|^2 dy`` on the torus (real array)."""
    grid = kernel.grid
    f = grid.check(f)
    rho_hat = np.fft.fftn(np.abs(f) ** 2, axes=grid.axes)
    return np.fft.ifftn(kernel.spectrum * rho_hat, axes=grid.axes).real


def _gauss_legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def phase_integral(s, dt: float, params: NonlinearParams):
    """``int_0^dt f_delta(s exp(-2 alpha1 r)) dr`` for modulus-squared ``s``.

    Exact for ``delta = 0`` (zero where ``s = 0``), Gauss-Legendre otherwise.
    """
    s = np.asarray(s, dtype=float)
    return NonlinearFlow(params, dt).phase(s)


class NonlinearFlow:
    """Exact flow of the drift substep, with step-dependent constants cached.

    Holding the per-``dt`` constants avoids recomputing quadrature nodes in the
    integrator's inner loop; ``__call__`` is equivalent to :func:`nonlinear_flow`.
    """

    def __init__(self, params: NonlinearParams, dt: float):
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        self.params = params
        self.dt = dt
        a = params.alpha1
        self.damp = np.exp(-a * dt)
        self.psi = dt if a == 0 else -np.expm1(-2.0 * a * dt) / (2.0 * a)
        if params.delta > 0:
            xi, w = _gauss_legendre(params.quad_order)
            r = 0.5 * dt * (xi + 1.0)
            self._decay = np.exp(-2.0 * a * r)
            self._weights = 0.5 * dt * w
        self._shift = a * dt * dt

    def phase(self, s: np.ndarray) -> np.ndarray:
        p = self.params
        if p.delta == 0:
            pos = s > 0
            with np.errstate(divide="ignore"):
                out = self.dt * np.log(np.where(pos, s, 1.0)) - self._shift
            return np.where(pos, out, 0.0)
        vals = f_delta(s[..., None] * self._decay, p.delta)
        return vals @ self._weights

    def __call__(self, f: np.ndarray) -> np.ndarray:
        p = self.params
        s = (f * f.conj()).real
        theta = p.lam * self.phase(s)
        if p.potential is not None:
            theta = theta + self.psi * apply_potential(p.potential, f)
        return f * (self.damp * np.exp(1j * theta))


def nonlinear_flow(f: np.ndarray, dt: float, params: NonlinearParams, grid: Optional[Grid] = None) -> np.ndarray:
    """Advance ``du/dt = i lam f_delta(|u|^2) u + i V[u] u - alpha1 u`` by ``dt``.

    With ``rho = |u(0)|^2`` the solution is
    ``u(0) exp(-alpha1 dt) exp(i lam Phi(rho) + i Psi V[u(0)])`` where ``Phi`` is
    :func:`phase_integral` and ``Psi = (1 - exp(-2 alpha1 dt)) / (2 alpha1)``.
    The potential is exact here, not a frozen-coefficient approximation, since
    ``V[u(r)] = exp(-2 alpha1 r) V[u(0)]``.
    """
    if grid is not None:
        f = grid.check(f)
    elif params.potential is not None:
        f = params.potential.grid.check(f)
    else:
        f = np.asarray(f, dtype=complex)
    return NonlinearFlow(params, dt)(f)
