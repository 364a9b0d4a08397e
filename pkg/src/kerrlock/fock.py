"""Truncated Fock-space operators and the two master-equation generators.

Dissipators use the sign convention

    L[O, rho] = rho O^dag O + O^dag O rho - 2 O rho O^dag

which is minus twice the usual ``D[O]rho``. A term written ``-kappa L[O, rho]``
is therefore the familiar ``2 kappa D[O] rho``.

Units: hbar = 1, every rate and energy shares one inverse-time unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.sparse as sps

from .errors import GuardError

__all__ = [
    "FockSpace",
    "LaserSpec",
    "PolaritonSpec",
    "LiouvillianSpec",
    "annihilation",
    "creation",
    "number",
    "kerr_hamiltonian",
    "lock_hamiltonian",
    "lindblad_dissipator",
    "saturation_term",
    "make_generator",
    "apply_liouvillian",
    "liouvillian_matrix",
    "fixed_point_photons",
    "default_n_cut",
    "fock_dm",
    "coherent_ket",
    "coherent_dm",
    "phase_diffused_dm",
]

MAX_DENSE_N_CUT = 80


@dataclass(frozen=True)
class FockSpace:
    """Basis |0>, ..., |n_cut>."""

    n_cut: int

    def __post_init__(self):
        if int(self.n_cut) != self.n_cut or self.n_cut < 1:
            raise ValueError(f"n_cut must be an integer >= 1, got {self.n_cut!r}")

    @property
    def dim(self) -> int:
        return self.n_cut + 1


@dataclass(frozen=True)
class LaserSpec:
    """Laser with linear gain, third-order saturation, cavity loss, Kerr and lock.

    ``saturation`` is the self-saturation coefficient and ``lock`` the product
    of the locking coupling with the injected amplitude.
    """

    gain: float
    saturation: float
    loss: float
    kerr: float = 0.0
    lock: float = 0.0

    def __post_init__(self):
        _check_nonneg(self, ("gain", "saturation", "loss", "kerr", "lock"))

    @property
    def max_rate(self) -> float:
        return self.gain + self.loss + self.saturation + self.lock


@dataclass(frozen=True)
class PolaritonSpec:
    """Condensate master equation.

    ``gamma1 + gamma0`` multiplies L[a], ``delta1`` L[a^dag], ``gamma2`` L[aa]
    and ``delta2`` L[a^dag a^dag]; all enter with a minus sign and no 1/2.
    """

    gamma1: float
    gamma2: float
    delta1: float
    delta2: float
    gamma0: float
    kerr: float = 0.0
    lock: float = 0.0

    def __post_init__(self):
        _check_nonneg(self, ("gamma1", "gamma2", "delta1", "delta2", "gamma0", "kerr", "lock"))

    @property
    def max_rate(self) -> float:
        return self.gamma1 + self.gamma2 + self.delta1 + self.delta2 + self.gamma0 + self.lock


LiouvillianSpec = Union[LaserSpec, PolaritonSpec]


def _check_nonneg(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{type(obj).__name__}.{name} must be finite and >= 0, got {value!r}")


def _space(space) -> FockSpace:
    return space if isinstance(space, FockSpace) else FockSpace(int(space))


@lru_cache(maxsize=64)
def _annihilation(n_cut: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, n_cut + 1, dtype=float)), 1).astype(complex)
    a.setflags(write=False)
    return a


def annihilation(space) -> np.ndarray:
    """Lowering operator with <n-1|a|n> = sqrt(n)."""
    return _annihilation(_space(space).n_cut).copy()


def creation(space) -> np.ndarray:
    return annihilation(space).conj().T


def number(space) -> np.ndarray:
    return np.diag(np.arange(_space(space).dim, dtype=float)).astype(complex)


def kerr_hamiltonian(space, U: float) -> np.ndarray:
    """(U/2) a^dag a^dag a a, diagonal with entries (U/2) n (n-1)."""
    n = np.arange(_space(space).dim, dtype=float)
    return np.diag(0.5 * U * n * (n - 1)).astype(complex)


def lock_hamiltonian(space, K: float) -> np.ndarray:
    """Resonant injection term i K (a^dag - a), master phase fixed to zero."""
    a = annihilation(space)
    return 1j * K * (a.conj().T - a)


def lindblad_dissipator(O: np.ndarray, rho: np.ndarray) -> np.ndarray:
    O = np.asarray(O)
    rho = np.asarray(rho)
    if O.shape != rho.shape or O.ndim != 2 or O.shape[0] != O.shape[1]:
        raise ValueError(f"shape mismatch: operator {O.shape} vs state {rho.shape}")
    OdO = O.conj().T @ O
    return rho @ OdO + OdO @ rho - 2.0 * O @ rho @ O.conj().T


def _saturation(a, ad, aad, rho):
    head = rho @ aad @ aad + 3.0 * aad @ rho @ aad - 4.0 * ad @ rho @ a @ ad @ a
    return head + head.conj().T


def saturation_term(space, B_sat: float, rho: np.ndarray) -> np.ndarray:
    """(B/8)[rho (a a^dag)^2 + 3 a a^dag rho a a^dag - 4 a^dag rho a a^dag a + h.c.].

    On populations this is ``B (n+1)^2 p_n - B n^2 p_{n-1}``; added to d rho/dt.
    """
    a = annihilation(space)
    ad = a.conj().T
    return (B_sat / 8.0) * _saturation(a, ad, a @ ad, np.asarray(rho))


def make_generator(spec: LiouvillianSpec, space):
    """Return ``f(rho) -> d rho / dt`` with operators precomputed for ``space``."""
    space = _space(space)
    a = annihilation(space)
    ad = a.conj().T
    H = kerr_hamiltonian(space, spec.kerr) + lock_hamiltonian(space, spec.lock)
    dim = space.dim

    if isinstance(spec, LaserSpec):
        aad = a @ ad
        ada = ad @ a
        A, B, g = spec.gain, spec.saturation, spec.loss

        def generator(rho):
            _check_shape(rho, dim)
            out = -1j * (H @ rho - rho @ H)
            # -(A/2) L[a^dag] - (g/2) L[a], expanded
            out += A * (ad @ rho @ a) - 0.5 * A * (aad @ rho + rho @ aad)
            out += g * (a @ rho @ ad) - 0.5 * g * (ada @ rho + rho @ ada)
            if B:
                out += (B / 8.0) * _saturation(a, ad, aad, rho)
            return out

        return generator

    if isinstance(spec, PolaritonSpec):
        a2 = a @ a
        ad2 = ad @ ad
        channels = [
            (spec.gamma1 + spec.gamma0, a),
            (spec.delta1, ad),
            (spec.gamma2, a2),
            (spec.delta2, ad2),
        ]
        channels = [(rate, O, O.conj().T, O.conj().T @ O) for rate, O in channels if rate > 0]

        def generator(rho):
            _check_shape(rho, dim)
            out = -1j * (H @ rho - rho @ H)
            for rate, O, Od, OdO in channels:
                out -= rate * (rho @ OdO + OdO @ rho - 2.0 * O @ rho @ Od)
            return out

        return generator

    raise TypeError(f"unsupported spec type {type(spec).__name__}")


def _check_shape(rho, dim):
    if rho.shape != (dim, dim):
        raise ValueError(f"state shape {rho.shape} does not match Fock dimension {dim}")


def apply_liouvillian(spec: LiouvillianSpec, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    return make_generator(spec, rho.shape[0] - 1)(rho)


def liouvillian_matrix(spec: LiouvillianSpec, space, max_n_cut: int = MAX_DENSE_N_CUT,
                       sparse: bool = False):
    """Superoperator acting on row-major ``rho.ravel()``.

    Built from Kronecker products, independently of :func:`make_generator`.
    Uses ``vec(X rho Y) = kron(X, Y.T) vec(rho)``. With ``sparse=True`` a
    CSR matrix is returned and the dense size guard does not apply.
    """
    space = _space(space)
    if not sparse and space.n_cut > max_n_cut:
        raise GuardError(
            f"n_cut={space.n_cut} exceeds the dense-superoperator guard {max_n_cut}; "
            "use time marching or raise max_n_cut"
        )
    dim = space.dim
    a = annihilation(space)
    ad = a.conj().T
    H = kerr_hamiltonian(space, spec.kerr) + lock_hamiltonian(space, spec.lock)
    if sparse:
        eye = sps.identity(dim, format="csr")

        def kron(X, Y):
            return sps.kron(sps.csr_matrix(X), sps.csr_matrix(Y), format="csr")
    else:
        eye = np.eye(dim)
        kron = np.kron

    def left(X):
        return kron(X, eye)

    def right(Y):
        return kron(eye, Y.T)

    def sandwich(X, Y):
        return kron(X, Y.T)

    def dissipator(O):
        OdO = O.conj().T @ O
        return right(OdO) + left(OdO) - 2.0 * sandwich(O, O.conj().T)

    L = -1j * (left(H) - right(H))
    if isinstance(spec, LaserSpec):
        L -= 0.5 * spec.gain * dissipator(ad)
        L -= 0.5 * spec.loss * dissipator(a)
        if spec.saturation:
            aad = a @ ad
            head = right(aad @ aad) + 3.0 * sandwich(aad, aad) - 4.0 * sandwich(ad, a @ ad @ a)
            # h.c. of X rho Y is Y^dag rho X^dag
            tail = left(aad @ aad) + 3.0 * sandwich(aad, aad) - 4.0 * sandwich((a @ ad @ a).conj().T, a)
            L += (spec.saturation / 8.0) * (head + tail)
    elif isinstance(spec, PolaritonSpec):
        L -= (spec.gamma1 + spec.gamma0) * dissipator(a)
        L -= spec.delta1 * dissipator(ad)
        L -= spec.gamma2 * dissipator(a @ a)
        L -= spec.delta2 * dissipator(ad @ ad)
    else:
        raise TypeError(f"unsupported spec type {type(spec).__name__}")
    return L


def fixed_point_photons(spec: LiouvillianSpec) -> float:
    """Squared amplitude of the deterministic locked fixed point (phase 0).

    Solves the mean-field radial balance including the lock drive; falls back
    to the below-threshold thermal occupation when no saturating channel exists.
    """
    if isinstance(spec, LaserSpec):
        lin, cub = 0.5 * (spec.gain - spec.loss), -0.5 * spec.saturation
        thermal = spec.gain / max(spec.loss - spec.gain, 1e-300)
    else:
        lin = spec.delta1 - spec.gamma1 - spec.gamma0
        cub = 2.0 * (spec.delta2 - spec.gamma2)
        thermal = spec.delta1 / max(spec.gamma1 + spec.gamma0 - spec.delta1, 1e-300)
    drive = spec.lock
    if cub < 0:
        roots = np.roots([cub, 0.0, lin, drive])
        real = [r.real for r in roots if abs(r.imag) < 1e-9 and r.real > 0]
        if real:
            return float(max(real) ** 2)
        return 0.0
    if lin < 0:
        # linear restoring drift only
        r = drive / -lin
        return float(r * r + thermal)
    return math.inf


def default_n_cut(spec: LiouvillianSpec) -> int:
    nbar = fixed_point_photons(spec)
    if not math.isfinite(nbar):
        raise GuardError("no saturating channel: photon number is unbounded, set n_cut explicitly")
    return int(math.ceil(nbar + 6.0 * math.sqrt(nbar) + 10.0))


def fock_dm(space, n: int) -> np.ndarray:
    space = _space(space)
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    rho[n, n] = 1.0
    return rho


def coherent_ket(space, alpha: complex) -> np.ndarray:
    space = _space(space)
    n = np.arange(space.dim)
    log_norm = -0.5 * abs(alpha) ** 2 - 0.5 * np.array([math.lgamma(k + 1) for k in n])
    if alpha == 0:
        psi = np.zeros(space.dim, dtype=complex)
        psi[0] = 1.0
        return psi
    return np.exp(log_norm + n * np.log(complex(alpha)))


def coherent_dm(space, alpha: complex) -> np.ndarray:
    psi = coherent_ket(space, alpha)
    return np.outer(psi, psi.conj())


def phase_diffused_dm(space, r: float) -> np.ndarray:
    """Uniform phase average of |r e^{i theta}>: Poissonian populations, no coherences."""
    space = _space(space)
    n = np.arange(space.dim)
    if r == 0:
        return fock_dm(space, 0)
    logp = -r * r + 2 * n * math.log(r) - np.array([math.lgamma(k + 1) for k in n])
    return np.diag(np.exp(logp)).astype(complex)
