"""Exact free Schrodinger propagator ``u -> exp(i chi Laplacian) u``.

``chi`` is the dispersion increment: ``sqrt(eps) dB`` for the stochastic
equation, ``g(t_{n+1}) - g(t_n)`` for the controlled one. Because the
propagator is applied exactly over each increment, the Stratonovich product
in the noise term needs no correction.
"""
from __future__ import annotations

import numpy as np

from .grid import Grid


def dispersion_flow(grid: Grid, f: np.ndarray, chi) -> np.ndarray:
    """Multiply Fourier modes by ``exp(-i |k|^2 chi)``.

    ``chi`` may be a scalar or an array broadcasting against the batch axes
    of ``f`` (one increment per ensemble member).
    """
    f = grid.check(f)
    chi = np.asarray(chi, dtype=float)
    if chi.ndim:
        chi = chi.reshape(chi.shape + (1,) * grid.d)
    fh = np.fft.fftn(f, axes=grid.axes)
    fh *= np.exp(-1j * chi * grid.k2_fft)
    return np.fft.ifftn(fh, axes=grid.axes)
