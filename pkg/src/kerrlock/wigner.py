"""Wigner function of a truncated Fock density matrix and its negativity.

Convention: alpha = x + i y, W normalised so that the integral of W over
dx dy is one. The vacuum is (2/pi) exp(-2|alpha|^2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .errors import TrustRegionWarning
from .grids import CartesianLayout, PolarLayout, export_csv, save_grid

__all__ = [
    "displacement_matrix",
    "wigner_point",
    "wigner_values",
    "WignerGrid",
    "wigner_grid",
    "negativity",
    "default_layout",
]


def displacement_matrix(rows: int, cols: int, alpha: complex) -> np.ndarray:
    """Elements <m|D(alpha)|n> for m < rows, n < cols, from the closed Laguerre form."""
    alpha = complex(alpha)
    x = abs(alpha) ** 2
    m = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    lo = np.minimum(m, n)
    hi = np.maximum(m, n)
    d = hi - lo
    if x == 0.0:
        return (m == n).astype(complex)
    log_mag = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) + d * 0.5 * math.log(x) - 0.5 * x
    lag = eval_genlaguerre(lo, d, x)
    phase = np.where(m >= n, np.exp(1j * d * np.angle(alpha)), (-1.0) ** d * np.exp(-1j * d * np.angle(alpha)))
    return np.exp(log_mag) * lag * phase


def _trust_check(rho, alpha):
    n_cut = rho.shape[0] - 1
    if abs(alpha) ** 2 > n_cut / 2.0:
        warnings.warn(
            f"|alpha|^2={abs(alpha) ** 2:.3g} beyond truncation trust region n_cut/2={n_cut / 2:.3g}",
            TrustRegionWarning,
            stacklevel=3,
        )


def wigner_point(rho: np.ndarray, alpha: complex, pad: int | None = None) -> float:
    """W(alpha) = (2/pi) sum_k (-1)^k <k| D^dag(alpha) rho D(alpha) |k>."""
    rho = np.asarray(rho, dtype=complex)
    _trust_check(rho, alpha)
    dim = rho.shape[0]
    if pad is None:
        pad = int(4 * abs(alpha) ** 2 + 8 * abs(alpha) + 40)
    D = displacement_matrix(dim, dim + pad, alpha)
    displaced_diag = np.einsum("mk,mn,nk->k", D.conj(), rho, D)
    parity = (-1.0) ** np.arange(dim + pad)
    value = (2.0 / math.pi) * np.sum(parity * displaced_diag)
    if abs(value.imag) > 1e-10:
        raise FloatingPointError(f"Wigner value has imaginary part {value.imag:.3g}; state is not Hermitian")
    return float(value.real)


def wigner_values(rho: np.ndarray, alpha: np.ndarray, cutoff: float = 0.0) -> np.ndarray:
    """Wigner function at every point of ``alpha`` (any shape).

    Uses the three-term recursion for the Fock-basis Wigner kernels, working
    through the upper triangle of ``rho`` row by row. Elements with modulus
    ``<= cutoff`` are skipped.
    """
    rho = np.asarray(rho, dtype=complex)
    alpha = np.asarray(alpha, dtype=complex)
    dim = rho.shape[0]
    A = alpha.ravel()
    Ac = A.conj()
    kernels = [None] * dim
    kernels[0] = (2.0 / math.pi) * np.exp(-2.0 * np.abs(A) ** 2).astype(complex)
    W = rho[0, 0].real * kernels[0].real
    for n in range(1, dim):
        kernels[n] = 2.0 * A * kernels[n - 1] / math.sqrt(n)
        if abs(rho[0, n]) > cutoff:
            W += 2.0 * (rho[0, n] * kernels[n]).real
    for m in range(1, dim):
        temp = kernels[m]
        kernels[m] = (2.0 * Ac * temp - math.sqrt(m) * kernels[m - 1]) / math.sqrt(m)
        W += rho[m, m].real * kernels[m].real
        for n in range(m + 1, dim):
            nxt = (2.0 * A * kernels[n - 1] - math.sqrt(m) * temp) / math.sqrt(n)
            temp = kernels[n]
            kernels[n] = nxt
            if abs(rho[m, n]) > cutoff:
                W += 2.0 * (rho[m, n] * nxt).real
    return W.reshape(alpha.shape)


@dataclass
class WignerGrid:
    layout: CartesianLayout | PolarLayout
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.layout.weights()

    def mass(self) -> float:
        return float(np.sum(self.weights * self.values))

    def negativity(self) -> float:
        return negativity(self)

    def report(self) -> dict:
        """Negativity together with the grid it was measured on."""
        return {
            "negativity": negativity(self),
            "mass": self.mass(),
            "layout": self.layout.kind,
            "dims": list(self.layout.dims),
            "window": self.layout.window(),
        }

    def save(self, path):
        return save_grid(path, self.layout, self.values, self.meta)

    def to_csv(self, path):
        return export_csv(path, self.layout, self.values)


def wigner_grid(rho: np.ndarray, layout) -> WignerGrid:
    rho = np.asarray(rho, dtype=complex)
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > 1e-10:
        raise ValueError(f"density matrix is not Hermitian (residual {herm:.3g})")
    alpha = layout.alpha()
    n_cut = rho.shape[0] - 1
    reach = float(np.max(np.abs(alpha)) ** 2)
    if reach > n_cut / 2.0:
        # nodes far outside carry negligible weight for decaying states; still flag it
        warnings.warn(
            f"grid reaches |alpha|^2={reach:.3g} beyond n_cut/2={n_cut / 2:.3g}",
            TrustRegionWarning,
            stacklevel=2,
        )
    values = wigner_values(rho, alpha, cutoff=1e-16 * np.max(np.abs(rho)))
    return WignerGrid(layout, values, {"n_cut": n_cut})


def negativity(grid) -> float:
    """Integral of (W - |W|)/2 over the grid: minus the negative volume, <= 0."""
    values = grid.values
    return float(np.sum(grid.layout.weights() * np.minimum(values, 0.0)))


def default_layout(rho: np.ndarray, n: int = 256) -> CartesianLayout:
    dim = rho.shape[0]
    nbar = float(np.real(np.sum(np.arange(dim) * np.diag(rho))))
    return CartesianLayout.square(math.sqrt(max(nbar, 0.0)) + 4.0, n)
