"""Phase-space Fokker-Planck models on a staggered polar grid.

Two models share one discretisation:

* :class:`LaserFp` -- radial drift ``r (A - gamma - B r^2) / 2``, constant
  diffusion ``(A + gamma) / 8``, lock strength ``K``.
* :class:`PolaritonFp` -- radial drift ``G2 r + 2 G1 r^3``, diffusion
  ``D2/4 + D1 r^2 - G1/2``, lock strength ``2K``.

Both carry the Kerr terms ``U [(1 - r^2) dW/dtheta + (1/16) d/dtheta lap W]``
and one of two lock drifts:

* ``"as-printed"``: ``-c (cos(theta) - sin(theta)/r) dW/dr``, a purely radial
  advection that does not conserve probability.
* ``"physical"``: ``-c (cos(theta) dW/dr - sin(theta)/r dW/dtheta)``, rigid
  translation along the real axis.

Spatial operator: finite volumes for every conservative piece (radial and
angular fluxes, upwind-biased third-order reconstruction of advected values,
second-order diffusion), fourth-order central differences for the Kerr
third-derivative block. The pole is handled by reflection,
``W(-r, theta) = W(r, theta + pi)``; the face at r = 0 carries no flux. The
outer face is Dirichlet ``W = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import brentq

from .errors import GuardError, NonFinite, NotConverged
from .grids import PolarLayout

log = logging.getLogger(__name__)

__all__ = [
    "LaserFp",
    "PolaritonFp",
    "FpModel",
    "FpField",
    "FpSteadyResult",
    "DRIFT_VARIANTS",
    "assemble_operator",
    "fp_rhs",
    "fp_terms",
    "fp_steady",
    "fp_negativity",
    "fp_moments",
    "fixed_point",
    "fixed_point_radius",
    "support_mask",
    "prolong",
    "default_grid",
    "default_dt",
    "gaussian_field",
]

DRIFT_VARIANTS = ("as-printed", "physical")


def _variant(name: str) -> str:
    key = name.lower().replace("_", "-")
    aliases = {"asprinted": "as-printed", "printed": "as-printed", "physicallock": "physical"}
    key = aliases.get(key.replace("-", ""), key)
    if key not in DRIFT_VARIANTS:
        raise ValueError(f"drift_variant must be one of {DRIFT_VARIANTS}, got {name!r}")
    return key


@dataclass(frozen=True)
class LaserFp:
    gain: float
    saturation: float
    loss: float
    kerr: float = 0.0
    lock: float = 0.0
    drift_variant: str = "as-printed"

    lock_factor = 1.0

    def __post_init__(self):
        object.__setattr__(self, "drift_variant", _variant(self.drift_variant))
        for name in ("gain", "saturation", "loss", "kerr", "lock"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"LaserFp.{name} must be finite and >= 0, got {value!r}")

    def velocity(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * r * (self.gain - self.loss - self.saturation * r * r)

    def velocity_slope(self, r):
        return 0.5 * (self.gain - self.loss) - 1.5 * self.saturation * np.asarray(r) ** 2

    def diffusion(self, r):
        return np.full_like(np.asarray(r, dtype=float), (self.gain + self.loss) / 8.0)

    def diffusion_slope(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def check(self, layout: PolarLayout):
        if self.gain + self.loss <= 0:
            raise GuardError("LaserFp needs gain + loss > 0 for a positive diffusion coefficient")


@dataclass(frozen=True)
class PolaritonFp:
    g1: float
    g2: float
    d1: float
    d2: float
    kerr: float = 0.0
    lock: float = 0.0
    drift_variant: str = "as-printed"

    lock_factor = 2.0

    def __post_init__(self):
        object.__setattr__(self, "drift_variant", _variant(self.drift_variant))
        if not (self.d1 > 0 and self.d2 > 0):
            raise ValueError(f"PolaritonFp needs d1 > 0 and d2 > 0, got d1={self.d1!r}, d2={self.d2!r}")
        for name in ("kerr", "lock"):
            if getattr(self, name) < 0:
                raise ValueError(f"PolaritonFp.{name} must be >= 0")

    def velocity(self, r):
        r = np.asarray(r, dtype=float)
        return self.g2 * r + 2.0 * self.g1 * r ** 3

    def velocity_slope(self, r):
        return self.g2 + 6.0 * self.g1 * np.asarray(r, dtype=float) ** 2

    def diffusion(self, r):
        r = np.asarray(r, dtype=float)
        return self.d2 / 4.0 + self.d1 * r * r - self.g1 / 2.0

    def diffusion_slope(self, r):
        return 2.0 * self.d1 * np.asarray(r, dtype=float)

    def check(self, layout: PolarLayout):
        rr = np.concatenate([[0.0], layout.r, [layout.r_max]])
        dmin = float(np.min(self.diffusion(rr)))
        if dmin <= 0:
            raise GuardError(f"diffusion coefficient D2/4 + D1 r^2 - G1/2 reaches {dmin:.3g} <= 0 on the grid")


FpModel = Union[LaserFp, PolaritonFp]


@dataclass
class FpField:
    layout: PolarLayout
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.layout.dims:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.layout.dims}")

    @property
    def weights(self):
        return self.layout.weights()

    def mass(self) -> float:
        return float(np.sum(self.values * self.weights))

    def normalized(self) -> "FpField":
        return FpField(self.layout, self.values / self.mass(), self.time)


@dataclass
class FpSteadyResult:
    field: FpField
    residual: float
    converged: bool
    iterations: int
    method: str
    growth_rate: float = 0.0
    history: list = field(default_factory=list)


# --------------------------------------------------------------------------
# operator assembly
# --------------------------------------------------------------------------


class _Builder:
    """COO accumulator with pole reflection and outer Dirichlet ghosts.

    Rows outside ``active`` (flat boolean mask) are dropped.
    """

    def __init__(self, layout: PolarLayout, order: int = 3, active=None):
        self.nr, self.nt = layout.dims
        self.active = active
        self.face_stencils = _face_stencils(order)
        self.rows, self.cols, self.vals = [], [], []

    def add(self, row_j, row_i, col_j, col_i, vals):
        row_j, row_i, col_j, col_i, vals = np.broadcast_arrays(row_j, row_i, col_j, col_i, vals)
        nr, nt = self.nr, self.nt
        col_j = col_j.copy()
        col_i = col_i.copy()
        neg = col_j < 0
        col_j[neg] = -col_j[neg] - 1
        col_i[neg] += nt // 2
        keep = (row_j >= 0) & (row_j < nr) & (col_j < nr) & (vals != 0)
        if np.any(col_j[keep] < 0):
            raise ValueError("stencil reaches more than one ring through the pole")
        rows = row_j[keep] * nt + row_i[keep] % nt
        cols = col_j[keep] * nt + col_i[keep] % nt
        vals = vals[keep]
        if self.active is not None:
            on = self.active[rows]
            rows, cols, vals = rows[on], cols[on], vals[on]
        self.rows.append(rows)
        self.cols.append(cols)
        self.vals.append(vals)

    def csr(self):
        n = self.nr * self.nt
        if not self.rows:
            return sp.csr_matrix((n, n))
        return sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=(n, n)
        ).tocsr()


# upwind-biased third order face reconstruction, offsets from the cell left of the face
_FACE_POS = ((-1, -1.0 / 6.0), (0, 5.0 / 6.0), (1, 2.0 / 6.0))
_FACE_NEG = ((0, 2.0 / 6.0), (1, 5.0 / 6.0), (2, -1.0 / 6.0))
_FACE_POS1 = ((0, 1.0),)
_FACE_NEG1 = ((1, 1.0),)
# upwind-biased third order node derivative (times h)
_DERIV_POS = ((-2, 1.0 / 6.0), (-1, -1.0), (0, 0.5), (1, 1.0 / 3.0))
_DERIV_NEG = ((-1, -1.0 / 3.0), (0, -0.5), (1, 1.0), (2, -1.0 / 6.0))
_DERIV_POS1 = ((-1, -1.0), (0, 1.0))
_DERIV_NEG1 = ((0, -1.0), (1, 1.0))
# fourth order central
_D1_C4 = ((-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0))
_D2_C4 = ((-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0))


def _face_stencils(order):
    return (_FACE_POS, _FACE_NEG) if order == 3 else (_FACE_POS1, _FACE_NEG1)


def _deriv_stencils(order):
    return (_DERIV_POS, _DERIV_NEG) if order == 3 else (_DERIV_POS1, _DERIV_NEG1)


def _radial_flux(b: _Builder, layout, J, I, u_face, d_face):
    """-(1/r) d/dr [ r (u W - D dW/dr) ] with fluxes on faces r = (J+1) dr."""
    nr = layout.nr
    dr = layout.dr
    r = layout.r
    rf = (J + 1.0) * dr
    pos, neg = b.face_stencils
    up = u_face >= 0
    for target, sign in ((J, -1.0), (J + 1, 1.0)):
        scale = np.where(target < nr, sign / (r[np.minimum(target, nr - 1)] * dr), 0.0)
        for offs, coef in pos:
            b.add(target, I, J + offs, I, scale * rf * u_face * coef * up)
        for offs, coef in neg:
            b.add(target, I, J + offs, I, scale * rf * u_face * coef * ~up)
        b.add(target, I, J, I, scale * rf * d_face / dr)
        b.add(target, I, J + 1, I, -scale * rf * d_face / dr)


def _angular_flux(b: _Builder, layout, J, I, omega_face, d_cell):
    """-d/dtheta [ omega W ] + (D / r^2) d2W/dtheta2 with fluxes on theta_{I+1/2}."""
    dth = layout.dtheta
    r = layout.r[J]
    pos, neg = b.face_stencils
    if omega_face is not None:
        up = omega_face >= 0
        for target, sign in ((I, -1.0), (I + 1, 1.0)):
            for offs, coef in pos:
                b.add(J, target, J, I + offs, sign * omega_face * coef * up / dth)
            for offs, coef in neg:
                b.add(J, target, J, I + offs, sign * omega_face * coef * ~up / dth)
    if d_cell is not None:
        g = d_cell / (r * r * dth * dth)
        for target, sign in ((I, -1.0), (I + 1, 1.0)):
            b.add(J, target, J, I + 1, -sign * g)
            b.add(J, target, J, I, sign * g)


def _laplacian4(layout, J, I, active) -> sp.csr_matrix:
    dr, dth = layout.dr, layout.dtheta
    b = _Builder(layout, active=active)
    inv_r = 1.0 / layout.r[J]
    for offs, coef in _D2_C4:
        b.add(J, I, J + offs, I, np.full(J.shape, coef / dr ** 2))
        b.add(J, I, J, I + offs, coef * inv_r ** 2 / dth ** 2)
    for offs, coef in _D1_C4:
        b.add(J, I, J + offs, I, coef * inv_r / dr)
    return b.csr()


def _dtheta4(layout, J, I, active) -> sp.csr_matrix:
    b = _Builder(layout, active=active)
    for offs, coef in _D1_C4:
        b.add(J, I, J, I + offs, np.full(J.shape, coef / layout.dtheta))
    return b.csr()


def _dilate(mask2d, dj, di):
    from scipy.ndimage import maximum_filter

    return maximum_filter(mask2d, size=(2 * dj + 1, 2 * di + 1), mode=("nearest", "wrap"))


def _build(model: FpModel, layout: PolarLayout, order: int, active2d=None) -> dict[str, sp.csr_matrix]:
    model.check(layout)
    nr, nt = layout.dims
    dr = layout.dr
    c = model.lock * model.lock_factor
    if active2d is None:
        act = None
        J, I = (a.ravel() for a in np.meshgrid(np.arange(nr), np.arange(nt), indexing="ij"))
    else:
        act = active2d.ravel()
        # faces feeding an active cell sit on the cell itself or one step inward
        J, I = np.nonzero(_dilate(active2d, 1, 1))
    r = layout.r[J]
    theta = layout.theta[I]
    parts = {}

    b = _Builder(layout, order, act)
    rf = (J + 1.0) * dr
    _radial_flux(b, layout, J, I, model.velocity(rf), model.diffusion(rf))
    _angular_flux(b, layout, J, I, None, model.diffusion(r))
    parts["drift_diffusion"] = b.csr()

    if model.kerr:
        b = _Builder(layout, order, act)
        _angular_flux(b, layout, J, I, model.kerr * (r * r - 1.0), None)
        parts["kerr_rotation"] = b.csr()
        if act is None:
            lap = _laplacian4(layout, J, I, None)
            Jd, Id = J, I
        else:
            wide = _dilate(active2d, 0, 2)
            Jd, Id = np.nonzero(wide)
            lap = _laplacian4(layout, Jd, Id, wide.ravel())
        Ja, Ia = (J, I) if act is None else np.nonzero(active2d)
        parts["kerr_dispersion"] = ((model.kerr / 16.0) * (_dtheta4(layout, Ja, Ia, act) @ lap)).tocsr()

    if c:
        b = _Builder(layout, order, act)
        if model.drift_variant == "physical":
            zeros = np.zeros(J.shape)
            _radial_flux(b, layout, J, I, c * np.cos(theta), zeros)
            theta_face = theta + 0.5 * layout.dtheta
            _angular_flux(b, layout, J, I, -c * np.sin(theta_face) / r, None)
        else:
            speed = c * (np.cos(theta) - np.sin(theta) / r)
            pos, neg = _deriv_stencils(order)
            up = speed >= 0
            for offs, coef in pos:
                b.add(J, I, J + offs, I, -speed * coef * up / dr)
            for offs, coef in neg:
                b.add(J, I, J + offs, I, -speed * coef * ~up / dr)
        parts["lock"] = b.csr()

    parts["total"] = sp.csr_matrix(sum(parts.values()))
    return parts


@lru_cache(maxsize=8)
def _assemble(model: FpModel, layout: PolarLayout, order: int) -> dict[str, sp.csr_matrix]:
    return _build(model, layout, order)


def assemble_operator(model: FpModel, layout: PolarLayout, order: int = 3, parts: bool = False,
                      active: np.ndarray | None = None):
    """Sparse matrix of the spatial operator acting on ``values.ravel()``.

    With ``parts=True`` returns the dict of named pieces (their sum is
    ``"total"``). A boolean ``active`` mask of grid shape restricts the
    assembly to those rows; columns still address the whole grid.
    """
    if order not in (1, 3):
        raise ValueError("advection order must be 1 or 3")
    if active is not None:
        ops = _build(model, layout, order, np.asarray(active, dtype=bool))
    else:
        ops = _assemble(model, layout, order)
    return dict(ops) if parts else ops["total"]


def fp_rhs(model: FpModel, fld: FpField, order: int = 3) -> np.ndarray:
    L = assemble_operator(model, fld.layout, order)
    return (L @ fld.values.ravel()).reshape(fld.layout.dims)


# --------------------------------------------------------------------------
# pointwise evaluation of the equation term by term (test oracle)
# --------------------------------------------------------------------------


def _padded(values, layout, pad=3):
    """Values with ``pad`` ghost rings at both radial ends and ``pad`` periodic angular ghosts."""
    nr, nt = layout.dims
    inner = np.roll(values[:pad][::-1], nt // 2, axis=1)
    outer = np.zeros((pad, nt))
    W = np.concatenate([inner, values, outer], axis=0)
    return np.concatenate([W[:, -pad:], W, W[:, :pad]], axis=1)


def fp_terms(model: FpModel, fld: FpField) -> dict[str, np.ndarray]:
    """Each term of the equation in its written, non-conservative form.

    Derivatives are plain second-order central differences, independent of the
    finite-volume assembly.
    """
    lay = fld.layout
    nr, nt = lay.dims
    dr, dth = lay.dr, lay.dtheta
    P = _padded(fld.values, lay, pad=3)
    p = 3
    C = P[p:-p, p:-p]

    def sh(dj, di):
        return P[p + dj:p + dj + nr, p + di:p + di + nt]

    Wr = (sh(1, 0) - sh(-1, 0)) / (2 * dr)
    Wrr = (sh(1, 0) - 2 * C + sh(-1, 0)) / dr ** 2
    Wt = (sh(0, 1) - sh(0, -1)) / (2 * dth)
    Wtt = (sh(0, 1) - 2 * C + sh(0, -1)) / dth ** 2
    Wrt = (sh(1, 1) - sh(1, -1) - sh(-1, 1) + sh(-1, -1)) / (4 * dr * dth)
    Wrrt = ((sh(1, 1) - 2 * sh(0, 1) + sh(-1, 1)) - (sh(1, -1) - 2 * sh(0, -1) + sh(-1, -1))) / (2 * dth * dr ** 2)
    Wttt = (sh(0, 2) - 2 * sh(0, 1) + 2 * sh(0, -1) - sh(0, -2)) / (2 * dth ** 3)
    R, T = lay.mesh()
    U = model.kerr
    c = model.lock * model.lock_factor

    terms = {}
    if model.drift_variant == "physical":
        terms["lock"] = -c * (np.cos(T) * Wr - np.sin(T) / R * Wt)
    else:
        terms["lock"] = -c * (np.cos(T) - np.sin(T) / R) * Wr
    terms["kerr_rotation"] = U * (1 - R ** 2) * Wt
    terms["kerr_dispersion"] = (U / 16.0) * (Wrt / R + Wrrt + Wttt / R ** 2)
    lap = Wrr + Wr / R + Wtt / R ** 2
    if isinstance(model, LaserFp):
        A, B, g = model.gain, model.saturation, model.loss
        # -(1/2r) d/dr [ r^2 (A - g - B r^2) W ] expanded
        terms["drift"] = -(1.0 / (2 * R)) * ((2 * R * (A - g) - 4 * B * R ** 3) * C + R ** 2 * (A - g - B * R ** 2) * Wr)
        terms["diffusion"] = (A + g) / 8.0 * lap
    else:
        G1, G2, D1, D2 = model.g1, model.g2, model.d1, model.d2
        terms["growth"] = -(2 * G2 + 8 * G1 * R ** 2) * C
        terms["advection"] = (-G2 + 2 * D1 - 2 * G1 * R ** 2) * R * Wr
        terms["diffusion"] = (D2 / 4.0 + D1 * R ** 2 - G1 / 2.0) * lap
    return terms


# --------------------------------------------------------------------------
# steady state
# --------------------------------------------------------------------------


def _drift(model: FpModel):
    """Deterministic flow d(alpha)/dt of the model with the lock acting as a translation."""
    c = model.lock * model.lock_factor
    U = model.kerr

    def F(z):
        r = abs(z)
        rate = model.velocity(r) / r if r > 0 else float(model.velocity_slope(0.0))
        return z * rate + 1j * U * (r * r - 1.0) * z + c

    return F


def _saturates(model: FpModel) -> bool:
    if isinstance(model, LaserFp):
        lin, cub = 0.5 * (model.gain - model.loss), -0.5 * model.saturation
    else:
        lin, cub = model.g2, 2.0 * model.g1
    return cub < 0 or (cub == 0 and lin < 0)


def _jacobian(F, z, h=1e-6):
    f0 = F(z)
    fx = (F(z + h) - f0) / h
    fy = (F(z + 1j * h) - f0) / h
    return np.array([[fx.real, fy.real], [fx.imag, fy.imag]])


def fixed_point(model: FpModel) -> complex:
    """Stable fixed point of the deterministic flow (largest radius if several).

    Without lock the flow is rotationally symmetric and the returned point is
    the ring radius on the real axis (0 below threshold).
    """
    if not _saturates(model):
        return complex(math.inf)
    c = model.lock * model.lock_factor
    if c == 0:
        lin = float(model.velocity_slope(0.0))
        if lin <= 0:
            return 0j
        # bracket the zero of v(r)/r
        hi = 1.0
        while model.velocity(hi) > 0:
            hi *= 2.0
        return complex(brentq(lambda x: float(model.velocity(x)), 1e-12, hi))

    U = model.kerr

    def g(r):
        return model.velocity(r) ** 2 + (r * U * (r * r - 1.0)) ** 2 - c * c

    hi = 1.0
    while g(hi) < 0 or model.velocity(hi) > 0:
        hi *= 2.0
    rs = np.linspace(0.0, hi, 4001)
    vals = g(rs)
    F = _drift(model)
    best = None
    for k in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        r = brentq(g, rs[k], rs[k + 1])
        v = float(model.velocity(r))
        w = r * U * (r * r - 1.0)
        z = r * complex(-v / c, w / c)
        if np.all(np.linalg.eigvals(_jacobian(F, z)).real < 0):
            best = z
    if best is None:
        raise GuardError("no stable fixed point of the deterministic drift")
    return best


def fixed_point_radius(model: FpModel) -> float:
    z = fixed_point(model)
    return abs(z) if np.isfinite(z.real) else math.inf


def _widths(model: FpModel, z0: complex) -> tuple[float, float]:
    """Smallest and largest standard deviation of the linearised steady state.

    Unlocked rings only have a radial width; the tangential one is reported
    as infinite.
    """
    r0 = abs(z0)
    D = float(model.diffusion(r0))
    if model.lock == 0:
        lam = -float(model.velocity_slope(r0))
        sig = math.sqrt(D / lam) if lam > 0 else 1.0
        return sig, (sig if r0 == 0 else math.inf)
    J = _jacobian(_drift(model), z0)
    cov = solve_continuous_lyapunov(J, -2.0 * D * np.eye(2))
    ev = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    return math.sqrt(max(ev[0], 1e-300)), math.sqrt(ev[1])


def default_grid(model: FpModel, points_per_width: float = 6.0, max_nr: int = 1200,
                 max_ntheta: int = 2048, min_ntheta: int = 64) -> PolarLayout:
    """Grid sized from the linearised drift around the fixed point.

    The outer radius covers ten of the largest standard deviations beyond the
    fixed point; spacing resolves the smallest one with ``points_per_width``
    nodes, radially and along the arc through the fixed point.
    """
    z0 = fixed_point(model)
    if not np.isfinite(z0.real):
        raise GuardError("no saturating drift: the distribution is not normalisable")
    r0 = abs(z0)
    sig_min, sig_max = _widths(model, z0)
    reach = sig_max if math.isfinite(sig_max) else sig_min
    r_max = max(r0 + 10.0 * reach, 3.0)
    dr = min(sig_min, 0.5) / points_per_width
    nr = int(min(max_nr, max(32, math.ceil(r_max / dr))))
    if math.isfinite(sig_max) and r0 > 0:
        nt = math.ceil(2 * math.pi * r0 / dr)
    else:
        nt = min_ntheta
    nt = int(min(max_ntheta, max(min_ntheta, nt)))
    nt += nt % 2
    return PolarLayout(r_max, nr, nt)


def gaussian_field(layout: PolarLayout, center: complex = 0.0, sigma: float = 0.5) -> FpField:
    """Isotropic Gaussian of standard deviation ``sigma`` per quadrature, unit mass."""
    alpha = layout.alpha()
    W = np.exp(-np.abs(alpha - center) ** 2 / (2 * sigma ** 2))
    fld = FpField(layout, W)
    return fld.normalized()


def _spectral_bounds(model: FpModel, layout: PolarLayout, kmax):
    nr, nt = layout.dims
    r = layout.r
    dr = layout.dr
    rf = (np.arange(nr) + 1.0) * dr
    keff = np.asarray(kmax, dtype=float)
    c = model.lock * model.lock_factor
    adv = np.max(np.abs(model.velocity(rf))) / dr + c / dr
    if model.drift_variant == "physical":
        adv += np.max(c * keff / r)
    else:
        adv += np.max(c / r) / dr
    U = model.kerr
    adv += np.max(U * np.abs(r * r - 1.0) * keff)
    D = model.diffusion(r)
    diff = np.max(4 * D / dr ** 2 + D * keff ** 2 / r ** 2)
    disp = np.max((U / 16.0) * keff * (4.0 / dr ** 2 + keff ** 2 / r ** 2 + 2.0 / (r * dr)))
    return adv, diff, disp


def _pole_kmax(layout: PolarLayout) -> np.ndarray:
    """Highest angular mode kept on each ring: angular spacing no finer than dr."""
    nt = layout.ntheta
    k = np.floor(math.pi * layout.r / layout.dr).astype(int)
    return np.clip(k, 1, nt // 2)


def default_dt(model: FpModel, layout: PolarLayout, safety: float = 0.5) -> float:
    """Explicit RK4 step from advective, diffusive and dispersive rate bounds."""
    adv, diff, disp = _spectral_bounds(model, layout, _pole_kmax(layout))
    return safety * 2.5 / (adv + diff + disp)


def _pole_filter(layout: PolarLayout):
    kmax = _pole_kmax(layout)
    nt = layout.ntheta
    rings = np.nonzero(kmax < nt // 2)[0]
    if rings.size == 0:
        return lambda X: X
    k = np.abs(np.fft.fftfreq(nt, d=1.0 / nt))
    mask = (k[None, :] <= kmax[rings][:, None]).astype(float)

    def apply(X):
        X = X.copy()
        X[rings] = np.fft.ifft(np.fft.fft(X[rings], axis=1) * mask, axis=1).real
        return X

    return apply


def _march(model, fld, L, dt, t_max, tol, check_every, conservative):
    lay = fld.layout
    dims = lay.dims
    w = lay.weights()
    filt = _pole_filter(lay)

    def f(X):
        return filt((L @ X.ravel()).reshape(dims))

    W = fld.values.copy()
    W /= np.sum(W * w)
    steps = max(1, int(math.ceil(t_max / dt)))
    history = []
    residual = math.inf
    growth = 0.0
    for n in range(1, steps + 1):
        k1 = f(W)
        k2 = f(W + 0.5 * dt * k1)
        k3 = f(W + 0.5 * dt * k2)
        k4 = f(W + dt * k3)
        W = W + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not conservative:
            W /= np.sum(W * w)
        if n % check_every == 0 or n == steps:
            if not np.all(np.isfinite(W)):
                raise NonFinite(f"Fokker-Planck field became non-finite at t={n * dt:.4g}; dt={dt:.3g} too large")
            mass = np.sum(W * w)
            dW = f(W / mass)
            growth = float(np.sum(dW * w))
            if not conservative:
                dW = dW - growth * W / mass
            residual = float(np.sum(np.abs(dW) * w))
            history.append((n * dt, residual, float(mass)))
            if residual <= tol:
                return W / mass, residual, True, n, growth, history
    return W / np.sum(W * w), residual, False, steps, growth, history


def _replace_row_with_mass(L: sp.csr_matrix, w: np.ndarray, row: int) -> sp.csr_matrix:
    L = L.tocoo()
    keep = L.row != row
    n = L.shape[0]
    cols = np.arange(n)
    rows = np.concatenate([L.row[keep], np.full(n, row)])
    cols = np.concatenate([L.col[keep], cols])
    vals = np.concatenate([L.data[keep], w])
    return sp.csc_matrix((vals, (rows, cols)), shape=L.shape)


def _solve_restricted(model, layout, L, tol, idx, guess=None, max_newton=30):
    """Steady field with unknowns restricted to flat indices ``idx`` (others held at 0)."""
    w_full = layout.weights().ravel()
    n = w_full.size
    Ls = L[idx][:, idx].tocsc() if idx.size < n else L
    w = w_full[idx]
    m = idx.size
    W = np.zeros(n)
    if model.drift_variant == "physical" or model.lock == 0:
        # drop the equation of the lightest cell in the guess, impose unit mass instead
        row = int(np.argmin(np.abs(guess.ravel()[idx]))) if guess is not None else m - 1
        M = _replace_row_with_mass(Ls, w, row)
        rhs = np.zeros(m)
        rhs[row] = 1.0
        W[idx] = spla.splu(M).solve(rhs)
        return W, 1, 0.0

    # non-conservative lock: principal eigenpair L W = lam W, w.W = 1, by Newton
    x = guess.ravel()[idx].copy()
    x /= w @ x
    lam = float(w @ (Ls @ x))
    eye = sp.identity(m, format="csr")
    for it in range(1, max_newton + 1):
        F = Ls @ x - lam * x
        if float(np.sum(np.abs(F) * w)) <= 0.1 * tol:
            break
        J = sp.bmat([[Ls - lam * eye, -x[:, None]], [w[None, :], None]], format="csc")
        step = spla.splu(J).solve(np.concatenate([-F, [0.0]]))
        x = x + step[:m]
        lam = lam + step[m]
    W[idx] = x
    return W, it, lam


def _coarse_layout(layout: PolarLayout, max_cells: int) -> PolarLayout:
    f = 1
    while (layout.nr // f) * (layout.ntheta // f) > max_cells:
        f *= 2
    nt = max(4, (layout.ntheta // f) // 2 * 2)
    return PolarLayout(layout.r_max, max(2, layout.nr // f), nt)


def prolong(values: np.ndarray, coarse: PolarLayout, fine: PolarLayout) -> np.ndarray:
    """Piecewise-constant transfer of a coarse polar field onto a finer polar grid."""
    jj = np.minimum((fine.r / coarse.dr).astype(int), coarse.nr - 1)
    ii = np.round(fine.theta / coarse.dtheta).astype(int) % coarse.ntheta
    return values[np.ix_(jj, ii)]


def support_mask(values: np.ndarray, rel_tol: float = 1e-9, pad: int = 3) -> np.ndarray:
    """Cells where |W| exceeds ``rel_tol`` of its maximum, dilated by ``pad`` cells.

    Rings that reach within ``pad`` of the pole are activated whole, since the
    reflection couples them across the origin.
    """
    from scipy.ndimage import maximum_filter

    mask = np.abs(values) > rel_tol * np.max(np.abs(values))
    mask = maximum_filter(mask, size=2 * pad + 1, mode=("nearest", "wrap"))
    near = np.nonzero(mask[:pad + 1].any(axis=1))[0]
    if near.size:
        mask[:max(near.max(), pad) + 1] = True
    return mask


def _support_levels(first: float, last: float = 1e-16, factor: float = 1e-2):
    st = first
    while st >= last:
        yield st
        st *= factor


def fp_steady(model: FpModel, field0: FpField | None = None, layout: PolarLayout | None = None, *,
              method: str = "direct", dt: float | None = None, t_max: float = 50.0, tol: float = 1e-8,
              order: int = 3, check_every: int = 50, raise_on_failure: bool = False,
              support="auto", max_cells: int = 40000, support_tol: float = 1e-9,
              max_unknowns: int = 250000) -> FpSteadyResult:
    """Steady field of ``model``, normalised to unit mass.

    ``method="march"`` integrates with explicit RK4 (a pole filter drops the
    angular modes finer than ``dr`` on the inner rings). ``"direct"`` solves
    the sparse linear system with the mass constraint replacing one
    equation. On grids larger than ``max_cells`` the direct solve first runs
    on a coarsened grid and then keeps only the cells where that solution
    exceeds ``support_tol`` of its peak (``support="auto"``); the remaining
    cells are held at zero like the outer boundary; when the mass leaking
    across the support edge keeps the residual above ``tol``, the threshold
    is lowered a hundredfold and the solve repeated. Pass ``support=None`` to
    solve on every cell or a boolean mask to choose them.

    For the non-conservative lock the steady field is the principal
    eigenfunction, ``growth_rate`` its eigenvalue, and the residual measures
    ``L W - growth_rate W``.
    """
    if layout is None:
        layout = field0.layout if field0 is not None else default_grid(model)
    if field0 is not None and field0.layout != layout:
        raise ValueError("field0 is not on the requested layout")
    conservative = model.drift_variant == "physical" or model.lock == 0
    w = layout.weights()

    if method == "march":
        if field0 is None:
            z0 = fixed_point(model)
            field0 = gaussian_field(layout, center=z0 if np.isfinite(z0.real) else 0.0, sigma=0.5)
        L = assemble_operator(model, layout, order)
        step = dt if dt is not None else default_dt(model, layout)
        W, residual, ok, iters, growth, history = _march(model, field0, L, step, t_max, tol, check_every, conservative)
        result = FpSteadyResult(FpField(layout, W, iters * step), residual, ok, iters, "march", growth, history)
    elif method == "direct":
        ncell = layout.nr * layout.ntheta
        guess = field0.values if field0 is not None else None
        coarse = sub = None
        if isinstance(support, np.ndarray):
            masks = [support.astype(bool)]
        elif support == "auto" and ncell > max_cells:
            coarse = _coarse_layout(layout, max_cells)
            c0 = None
            if field0 is not None:
                c0 = FpField(coarse, prolong(field0.values, layout, coarse))
            sub = fp_steady(model, c0, coarse, method="direct", tol=math.inf, order=order, support=None)
            guess = prolong(sub.field.values, coarse, layout)
            # the support edge leaks mass; widen it until the residual meets tol
            masks = (prolong(support_mask(sub.field.values, st, pad=3), coarse, layout) |
                     support_mask(guess, st, pad=4)
                     for st in _support_levels(support_tol))
        elif support in ("auto", None):
            masks = [None]
        else:
            raise ValueError("support must be 'auto', None or a boolean mask")
        if guess is None and not conservative:
            z0 = fixed_point(model)
            g = gaussian_field(layout, center=z0 if np.isfinite(z0.real) else 0.0, sigma=0.5)
            L0 = assemble_operator(model, layout, order)
            guess = _march(model, g, L0, default_dt(model, layout), 2000 * default_dt(model, layout),
                           0.0, 200, False)[0]
        history = []
        for mask in masks:
            idx = np.flatnonzero(mask) if mask is not None else np.arange(ncell)
            if idx.size > max_unknowns:
                if history:
                    break
                raise GuardError(f"{idx.size} unknowns exceed the direct-solve limit {max_unknowns}; "
                                 "coarsen the grid or tighten the support")
            L = assemble_operator(model, layout, order, active=mask)
            Wf, iters, growth = _solve_restricted(model, layout, L, tol, idx, guess)
            mass = float(np.sum(Wf * w.ravel()))
            Wf /= mass
            F = L @ Wf - growth * Wf
            residual = float(np.sum(np.abs(F) * w.ravel()))
            history.append({"unknowns": int(idx.size), "cells": int(ncell), "residual": residual})
            result = FpSteadyResult(FpField(layout, Wf.reshape(layout.dims)), residual, residual <= tol,
                                    iters, "direct", growth, history)
            if result.converged:
                break
    else:
        raise ValueError(f"method must be 'direct' or 'march', got {method!r}")

    if not np.all(np.isfinite(result.field.values)):
        raise NonFinite("steady Fokker-Planck solve produced non-finite values")
    if not result.converged:
        msg = f"Fokker-Planck steady state not converged (residual {result.residual:.3g} > {tol:g})"
        log.warning(msg)
        if raise_on_failure:
            raise NotConverged(msg, result)
    return result


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def fp_negativity(fld: FpField) -> float:
    return float(np.sum(np.minimum(fld.values, 0.0) * fld.weights))


def fp_moments(fld: FpField) -> dict:
    R, T = fld.layout.mesh()
    w = fld.weights
    W = fld.values
    mass = float(np.sum(W * w))
    return {
        "mass": mass,
        "mean_r2": float(np.sum(R * R * W * w) / mass),
        "mean_cos": float(np.sum(np.cos(T) * W * w) / mass),
        "mean_alpha": complex(np.sum(R * np.exp(1j * T) * W * w) / mass),
    }


def radial_profile(fld: FpField) -> np.ndarray:
    """Angle average of W on each ring."""
    return fld.values.mean(axis=1)


def with_variant(model: FpModel, variant: str) -> FpModel:
    return replace(model, drift_variant=variant)
