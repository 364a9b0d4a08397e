"""Time marching of the master equations and steady-state extraction."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import DegenerateNullSpace, NonFinite, TruncationLeak
from .fock import (
    FockSpace,
    LaserSpec,
    LiouvillianSpec,
    default_n_cut,
    fixed_point_photons,
    fock_dm,
    liouvillian_matrix,
    make_generator,
)

log = logging.getLogger(__name__)

__all__ = [
    "EvolveConfig",
    "SteadyResult",
    "default_dt",
    "evolve",
    "steady_state_march",
    "steady_state_direct",
    "phase_sums",
    "observables",
    "trace_norm",
    "trace_distance",
    "edge_population",
]

LEAK_THRESHOLD = 1e-6


@dataclass(frozen=True)
class EvolveConfig:
    dt: float | None = None
    t_max: float = 200.0
    tol_steady: float = 1e-8
    method: str = "rk4"
    checkpoint_every: int = 200
    leak_threshold: float = LEAK_THRESHOLD

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.t_max > 0 and self.tol_steady > 0):
            raise ValueError("t_max and tol_steady must be positive")
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"method must be 'rk4' or 'euler', got {self.method!r}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass
class SteadyResult:
    rho: np.ndarray
    residual: float
    converged: bool
    iterations: int
    observables: dict = field(default_factory=dict)
    degenerate: bool = False


def trace_norm(X: np.ndarray) -> float:
    X = 0.5 * (X + X.conj().T)
    return float(np.sum(np.abs(np.linalg.eigvalsh(X))))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return 0.5 * trace_norm(np.asarray(rho) - np.asarray(sigma))


def phase_sums(rho: np.ndarray, kmax: int = 4) -> np.ndarray:
    """P_k = sum_n rho[n, n+k] for k = 0..kmax."""
    rho = np.asarray(rho)
    return np.array([np.trace(rho, offset=k) for k in range(kmax + 1)], dtype=complex)


def edge_population(rho: np.ndarray, levels: int = 2) -> float:
    return float(np.sum(np.real(np.diag(rho))[-levels:]))


def observables(rho: np.ndarray) -> dict:
    rho = np.asarray(rho)
    n = np.arange(rho.shape[0])
    P = phase_sums(rho)
    return {
        "mean_n": float(np.real(np.sum(n * np.diag(rho)))),
        "purity": float(np.real(np.vdot(rho.conj().T, rho))),
        "P": [complex(p) for p in P],
        "offdiag_l1": float(np.sum(np.abs(rho - np.diag(np.diag(rho))))),
        "edge_population": edge_population(rho),
    }


def default_dt(spec: LiouvillianSpec, n_cut: int) -> float:
    """0.01 / max_rate at the fixed-point occupation, capped for RK4 stability.

    The cap is 2 / (row-sum bound on the spectral radius of the truncated
    superoperator), since the top levels can be far stiffer than n-bar.
    """
    nbar = fixed_point_photons(spec)
    nbar = n_cut if not math.isfinite(nbar) else nbar
    max_rate = spec.max_rate * (1.0 + nbar) + spec.kerr * max(nbar, 1.0)
    if isinstance(spec, LaserSpec):
        max_rate += spec.saturation * (1.0 + nbar) ** 2
    else:
        max_rate += (spec.gamma2 + spec.delta2) * (1.0 + nbar) ** 2
    L = liouvillian_matrix(spec, FockSpace(n_cut), sparse=True)
    bound = float(abs(L).sum(axis=1).max())
    return min(0.01 / max(max_rate, 1e-12), 2.0 / max(bound, 1e-12))


def _hermitize(rho):
    return 0.5 * (rho + rho.conj().T)


def evolve(spec: LiouvillianSpec, rho0: np.ndarray, cfg: EvolveConfig = EvolveConfig()) -> Iterator[tuple[float, np.ndarray, dict]]:
    """Yield ``(t, rho, info)`` at t=0 and every ``checkpoint_every`` steps.

    ``info`` carries the residual trace norm of d rho/dt, the hermiticity and
    trace defects measured *before* the checkpoint renormalisation. Marching
    stops at ``t_max``.
    """
    rho = np.array(rho0, dtype=complex)
    n_cut = rho.shape[0] - 1
    f = make_generator(spec, FockSpace(n_cut))
    dt = cfg.dt if cfg.dt is not None else default_dt(spec, n_cut)
    steps = max(1, int(math.ceil(cfg.t_max / dt)))
    dt = cfg.t_max / steps

    if cfg.method == "rk4":
        def step(r):
            k1 = f(r)
            k2 = f(r + 0.5 * dt * k1)
            k3 = f(r + 0.5 * dt * k2)
            k4 = f(r + dt * k3)
            return r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        def step(r):
            return r + dt * f(r)

    def checkpoint(t, r):
        tr = np.real(np.trace(r))
        if not (np.all(np.isfinite(r)) and np.isfinite(tr) and tr > 0):
            hint = f"reduce dt (currently {dt:.3g})"
            if isinstance(spec, LaserSpec) and spec.saturation > 0:
                hint += ("; the saturation term turns births negative above n = gain/saturation, "
                         "which makes the truncated generator grow there unless n_cut is small")
            raise NonFinite(f"state became non-finite at t={t:.4g}; {hint}")
        info = {
            "dt": dt,
            "hermiticity": float(np.max(np.abs(r - r.conj().T))),
            "trace_defect": float(abs(np.trace(r) - 1.0)),
        }
        r = _hermitize(r)
        r = r / np.real(np.trace(r))
        leak = edge_population(r)
        if leak > cfg.leak_threshold:
            raise TruncationLeak(
                f"population {leak:.3g} in the top two Fock levels at t={t:.4g} exceeds "
                f"{cfg.leak_threshold:g}; raise n_cut (currently {n_cut})"
            )
        info["residual"] = trace_norm(f(r))
        return r, info

    rho, info = checkpoint(0.0, rho)
    yield 0.0, rho, info
    for i in range(1, steps + 1):
        rho = step(rho)
        if i % cfg.checkpoint_every == 0 or i == steps:
            rho, info = checkpoint(i * dt, rho)
            yield i * dt, rho, info


def steady_state_march(spec: LiouvillianSpec, rho0: np.ndarray | None = None,
                       cfg: EvolveConfig = EvolveConfig(), n_cut: int | None = None) -> SteadyResult:
    """March until the trace norm of d rho/dt drops below ``cfg.tol_steady``.

    Returns the last state with ``converged=False`` when ``t_max`` is reached.
    """
    if rho0 is None:
        rho0 = fock_dm(n_cut if n_cut is not None else default_n_cut(spec), 0)
    last = None
    iterations = 0
    for t, rho, info in evolve(spec, rho0, cfg):
        last = (rho, info)
        iterations = int(round(t / info["dt"]))
        if info["residual"] <= cfg.tol_steady:
            return SteadyResult(rho, info["residual"], True, iterations, observables(rho))
    rho, info = last
    log.warning("march not converged: residual %.3g > %.3g", info["residual"], cfg.tol_steady)
    return SteadyResult(rho, info["residual"], False, iterations, observables(rho))


def steady_state_direct(spec: LiouvillianSpec, space=None, null_tol: float = 1e-9,
                        svd_limit: int = 2500) -> SteadyResult:
    """Steady state from the null space of the superoperator.

    For ``dim**2`` up to ``svd_limit`` the null space is read off a dense SVD
    and its dimension checked; above that, one equation of the sparse
    superoperator is traded for the trace condition and the system solved by
    sparse LU.
    """
    if space is None:
        space = FockSpace(default_n_cut(spec))
    elif not isinstance(space, FockSpace):
        space = FockSpace(int(space))
    dim = space.dim
    degenerate = False

    if dim * dim <= svd_limit:
        L = liouvillian_matrix(spec, space)
        _, s, vh = sla.svd(L)
        scale = max(s[0], 1.0)
        null = vh[s <= null_tol * scale].conj()
        if null.shape[0] == 0:
            null = vh[-1:].conj()
        if null.shape[0] > 1:
            degenerate = True
            warnings.warn(
                f"numerical null space has dimension {null.shape[0]}; returning the projection of "
                "the vacuum onto it",
                stacklevel=2,
            )
            target = fock_dm(space, 0).ravel()
            coeff = null.conj() @ target
            vec = coeff @ null
        else:
            vec = null[0]
        rho = vec.reshape(dim, dim)
    else:
        L = liouvillian_matrix(spec, space, sparse=True).tocoo()
        # the trace row is a left null vector, so any one equation is redundant
        keep = L.row != 0
        diag = np.arange(dim) * (dim + 1)
        M = sps.csc_matrix(
            (np.concatenate([L.data[keep], np.ones(dim)]),
             (np.concatenate([L.row[keep], np.zeros(dim, int)]), np.concatenate([L.col[keep], diag]))),
            shape=L.shape,
        )
        rhs = np.zeros(dim * dim, dtype=complex)
        rhs[0] = 1.0
        rho = spla.splu(M).solve(rhs).reshape(dim, dim)
        L = L.tocsr()

    tr = np.trace(rho)
    if abs(tr) < 1e-300:
        raise DegenerateNullSpace("null vector is traceless; no normalisable steady state")
    rho = _hermitize(rho / tr)
    residual = float(np.max(np.abs(L @ rho.ravel())))
    evals = np.linalg.eigvalsh(rho)
    result = SteadyResult(rho, residual, residual <= 1e-9, 1, observables(rho), degenerate)
    result.observables["min_eigenvalue"] = float(evals[0])
    if degenerate:
        result.observables["null_dim"] = int(null.shape[0])
    return result
