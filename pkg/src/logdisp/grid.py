"""Periodic spatial grids, spectral transforms and the norms used throughout.

Fields are plain complex numpy arrays whose trailing ``d`` axes match
``grid.shape``. Any leading axes are treated as a batch (ensemble members,
finite-difference probes, ...) and every norm reduces over the spatial axes
only, so a batch of fields yields a batch of norms.

The physical domain is the torus ``[-L/2, L/2)^d`` sampled at ``N`` points per
axis. The spectral convention is

    fhat_k = dx^d * sum_j f_j exp(-i k.x_j),

which makes Parseval read ``dx^d sum |f_j|^2 = L^-d sum |fhat_k|^2`` and makes
the free Schrodinger group a pure multiplier ``exp(-i |k|^2 chi)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^d``."""

    d: int
    n: int
    length: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")
        if not self.length > 0 or not np.isfinite(self.length):
            raise ValueError(f"domain length must be positive, got {self.length}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def cell(self) -> float:
        """Quadrature weight ``dx^d``."""
        return self.dx**self.d

    @cached_property
    def x(self) -> np.ndarray:
        """Node coordinates along one axis, ``-L/2 + j dx``."""
        return -0.5 * self.length + self.dx * np.arange(self.n)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Centered wavenumbers ``2 pi j / L`` for ``j = -N/2 .. N/2-1``."""
        return 2.0 * np.pi / self.length * np.arange(-self.n // 2, self.n // 2)

    @cached_property
    def k_fft(self) -> np.ndarray:
        """Wavenumbers along one axis in numpy FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @cached_property
    def r2(self) -> np.ndarray:
        """``|x|^2`` on the grid."""
        if self.d == 1:
            return self.x**2
        X, Y = np.meshgrid(self.x, self.x, indexing="ij")
        return X**2 + Y**2

    @cached_property
    def k2_fft(self) -> np.ndarray:
        """``|k|^2`` in FFT order, shaped like the grid."""
        if self.d == 1:
            return self.k_fft**2
        KX, KY = np.meshgrid(self.k_fft, self.k_fft, indexing="ij")
        return KX**2 + KY**2

    @cached_property
    def _shift_phase(self) -> np.ndarray:
        # exp(-i k x_0) with x_0 = -L/2: equals (-1)^m per axis, FFT order
        m = np.fft.fftfreq(self.n, d=1.0 / self.n)
        s = np.where(m % 2 == 0, 1.0, -1.0)
        if self.d == 1:
            return s
        return np.multiply.outer(s, s)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of node coordinates (``ij`` indexing)."""
        if self.d == 1:
            return (self.x,)
        return tuple(np.meshgrid(self.x, self.x, indexing="ij"))

    def zeros(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros(batch + self.shape, dtype=complex)

    def check(self, f: np.ndarray) -> np.ndarray:
        """Return ``f`` as a complex array, validating its spatial shape."""
        f = np.asarray(f, dtype=complex)
        if f.shape[f.ndim - self.d:] != self.shape or f.ndim < self.d:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")
        return f


def make_grid(d: int, n: int, length: float) -> Grid:
    return Grid(int(d), int(n), float(length))


def _sum_space(grid: Grid, a: np.ndarray) -> np.ndarray:
    return a.sum(axis=grid.axes)


def spectral_transform(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Forward transform, coefficients in centered order (``grid.wavenumbers``)."""
    f = grid.check(f)
    fh = np.fft.fftn(f, axes=grid.axes) * (grid.cell * grid._shift_phase)
    return np.fft.fftshift(fh, axes=grid.axes)


def inverse_transform(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    coeffs = grid.check(coeffs)
    fh = np.fft.ifftshift(coeffs, axes=grid.axes) / (grid.cell * grid._shift_phase)
    return np.fft.ifftn(fh, axes=grid.axes)


def l2_norm(grid: Grid, f: np.ndarray):
    f = np.asarray(f)
    return np.sqrt(grid.cell * _sum_space(grid, np.abs(f) ** 2))


def weighted_norm(grid: Grid, f: np.ndarray, alpha: float = 1.0):
    """``||(1+|x|^2)^(alpha/2) f||`` in torus coordinates."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"weight exponent must lie in [0, 1], got {alpha}")
    f = np.asarray(f)
    if alpha == 0.0:
        return l2_norm(grid, f)
    w = (1.0 + grid.r2) ** alpha
    return np.sqrt(grid.cell * _sum_space(grid, w * np.abs(f) ** 2))


def x_moment(grid: Grid, f: np.ndarray):
    """``|| |x| f ||``, the position-moment part of the ``L^2_1`` norm."""
    f = np.asarray(f)
    return np.sqrt(grid.cell * _sum_space(grid, grid.r2 * np.abs(f) ** 2))


def grad_l2(grid: Grid, f: np.ndarray):
    """``||grad f||`` computed spectrally."""
    f = np.asarray(f)
    fh = np.fft.fftn(f, axes=grid.axes)
    # |fhat|^2 / L^d with fhat = dx^d * FFT reduces to dx^d / N^d * |FFT|^2
    s = _sum_space(grid, grid.k2_fft * np.abs(fh) ** 2)
    return np.sqrt(grid.cell * s / grid.size)


def h1_norm(grid: Grid, f: np.ndarray):
    return np.sqrt(l2_norm(grid, f) ** 2 + grad_l2(grid, f) ** 2)


def x1_norm(grid: Grid, f: np.ndarray):
    """``sqrt(||f||_{H^1}^2 + ||f||_{L^2_1}^2)``."""
    return np.sqrt(h1_norm(grid, f) ** 2 + weighted_norm(grid, f, 1.0) ** 2)


def lp_norm(grid: Grid, f: np.ndarray, p: float):
    f = np.asarray(f)
    return (grid.cell * _sum_space(grid, np.abs(f) ** p)) ** (1.0 / p)


def boundary_shell(grid: Grid, f: np.ndarray, fraction: float = 0.05):
    """Max modulus on the outermost ``fraction`` of nodes along any axis.

    Validity diagnostic for the periodic truncation: should stay far below
    the bulk amplitude for every reported run.
    """
    f = np.asarray(f)
    w = max(1, int(np.ceil(fraction * grid.n / 2)))
    idx = np.arange(grid.n)
    edge1 = (idx < w) | (idx >= grid.n - w)
    if grid.d == 1:
        mask = edge1
    else:
        mask = edge1[:, None] | edge1[None, :]
    return np.max(np.abs(f) * mask, axis=grid.axes)


NORMS = {
    "l2": l2_norm,
    "grad_l2": grad_l2,
    "h1": h1_norm,
    "weighted1": lambda g, f: weighted_norm(g, f, 1.0),
    "xmoment": x_moment,
    "x1": x1_norm,
}


def norm(grid: Grid, f: np.ndarray, name: str):
    try:
        fn = NORMS[name]
    except KeyError:
        raise ValueError(f"unknown norm {name!r}; expected one of {sorted(NORMS)}") from None
    return fn(grid, f)


# Initial data ------------------------------------------------------------

def gaussian(grid: Grid, amplitude: float = 1.0, width: float = 1.0, center=0.0) -> np.ndarray:
    """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    coords = grid.coordinates()
    r2 = sum((X - ci) ** 2 for X, ci in zip(coords, c))
    return amplitude * np.exp(-r2 / (2.0 * width**2)) + 0j


def plane_wave(grid: Grid, k, amplitude: float = 1.0) -> np.ndarray:
    """``amplitude * exp(i k.x)``; ``k`` is an integer mode index per axis."""
    kk = np.broadcast_to(np.asarray(k, dtype=float), (grid.d,)) * 2.0 * np.pi / grid.length
    coords = grid.coordinates()
    phase = sum(ki * X for ki, X in zip(kk, coords))
    return amplitude * np.exp(1j * phase)
