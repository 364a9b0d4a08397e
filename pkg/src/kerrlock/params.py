"""Order-of-magnitude rate and interaction estimates from device parameters.

Scales (SI, all order-of-magnitude):

    V0      = 6 e^2 a_B / (4 pi eps A)             interaction energy
    a       = hbar / sqrt(2 m_exc k_B T)           thermal length, E0 = k_B T
    s1      = V0^2 A / (4 pi hbar E0 a^2)          two-body rate scale  (Delta1, Gamma1)
    s2      = V0^2 A^2 / (8 pi^3 hbar E0 a^4)      one-body rate scale  (Delta2, Gamma2)
    U       = 30 e^2 a_B |X|^4 / (pi^3 eps A)      Kerr energy

so that s1 / s2 = 2 pi^2 a^2 / A identically. Every quantity is carried as a
:class:`Quantity` whose SI dimension exponents are checked when combined.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from decimal import Decimal, getcontext

from .errors import ConfigError
from .fock import PolaritonSpec
from .fokker_planck import PolaritonFp

__all__ = [
    "CONSTANTS",
    "Quantity",
    "PhysicalInputs",
    "RateEstimates",
    "ModelBundle",
    "estimate",
    "estimate_decimal",
    "to_model",
    "regime_model",
    "polariton_bundle",
    "THRESHOLD_FRACTION",
]

# CODATA 2018 exact / recommended values
CONSTANTS = {
    "e": 1.602176634e-19,  # C
    "hbar": 1.054571817e-34,  # J s
    "k_B": 1.380649e-23,  # J / K
    "eps0": 8.8541878128e-12,  # F / m
    "m_e": 9.1093837015e-31,  # kg
}

THRESHOLD_FRACTION = 0.01

_BASE = ("m", "kg", "s", "A", "K")


@dataclass(frozen=True)
class Quantity:
    """A float with SI base-dimension exponents (m, kg, s, A, K)."""

    value: float
    dims: tuple = (0, 0, 0, 0, 0)

    def __mul__(self, other):
        if not isinstance(other, Quantity):
            return Quantity(self.value * other, self.dims)
        return Quantity(self.value * other.value, tuple(a + b for a, b in zip(self.dims, other.dims)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Quantity):
            return Quantity(self.value / other, self.dims)
        return Quantity(self.value / other.value, tuple(a - b for a, b in zip(self.dims, other.dims)))

    def __rtruediv__(self, other):
        return Quantity(other / self.value, tuple(-a for a in self.dims))

    def __pow__(self, p):
        return Quantity(self.value ** p, tuple(a * p for a in self.dims))

    def __add__(self, other):
        self._same(other)
        return Quantity(self.value + other.value, self.dims)

    def __sub__(self, other):
        self._same(other)
        return Quantity(self.value - other.value, self.dims)

    def _same(self, other):
        if not isinstance(other, Quantity) or tuple(other.dims) != tuple(self.dims):
            raise TypeError(f"dimension mismatch: {self.unit} vs {getattr(other, 'unit', 'scalar')}")

    def sqrt(self):
        return self ** 0.5

    def expect(self, unit: "Quantity | tuple", what: str = "quantity") -> "Quantity":
        dims = unit.dims if isinstance(unit, Quantity) else tuple(unit)
        if any(abs(a - b) > 1e-12 for a, b in zip(self.dims, dims)):
            raise TypeError(f"{what} has dimensions {self.unit}, expected {Quantity(1.0, dims).unit}")
        return self

    @property
    def unit(self) -> str:
        parts = []
        for name, p in zip(_BASE, self.dims):
            if abs(p) > 1e-12:
                parts.append(name if p == 1 else f"{name}^{p:g}")
        return " ".join(parts) or "1"

    def as_dict(self):
        return {"value": self.value, "unit": self.unit}


LENGTH = (1, 0, 0, 0, 0)
AREA = (2, 0, 0, 0, 0)
MASS = (0, 1, 0, 0, 0)
RATE = (0, 0, -1, 0, 0)
TEMPERATURE = (0, 0, 0, 0, 1)
ENERGY = (2, 1, -2, 0, 0)
CHARGE = (0, 0, 1, 1, 0)
PERMITTIVITY = (-3, -1, 4, 2, 0)  # F / m
ACTION = (2, 1, -1, 0, 0)
DIMENSIONLESS = (0, 0, 0, 0, 0)


def _constants():
    c = CONSTANTS
    return {
        "e": Quantity(c["e"], CHARGE),
        "hbar": Quantity(c["hbar"], ACTION),
        "k_B": Quantity(c["k_B"], (2, 1, -2, 0, -1)),
    }


@dataclass(frozen=True)
class PhysicalInputs:
    """Trap and material parameters in SI units."""

    A_area: float  # m^2
    T: float  # K
    a_B: float  # m
    eps: float  # F/m, the full permittivity (relative constant times eps0)
    m_exc: float  # kg
    X_hopfield: float  # |X|, dimensionless
    gamma0: float  # 1/s

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"physical input {name} must be a positive finite number, got {value!r}")
        if self.X_hopfield > 1:
            raise ConfigError(f"X_hopfield is a magnitude in (0, 1], got {self.X_hopfield!r}")

    @classmethod
    def circular_trap(cls, radius: float, **kw) -> "PhysicalInputs":
        return cls(A_area=math.pi * radius * radius, **kw)

    def quantities(self) -> dict:
        return {
            "A_area": Quantity(self.A_area, AREA),
            "T": Quantity(self.T, TEMPERATURE),
            "a_B": Quantity(self.a_B, LENGTH),
            "eps": Quantity(self.eps, PERMITTIVITY),
            "m_exc": Quantity(self.m_exc, MASS),
            "X": Quantity(self.X_hopfield, DIMENSIONLESS),
            "gamma0": Quantity(self.gamma0, RATE),
        }


@dataclass(frozen=True)
class RateEstimates:
    V0: Quantity
    a_thermal: Quantity
    E0: Quantity
    rate1_scale: Quantity  # Delta1, Gamma1 (two-body channels)
    rate2_scale: Quantity  # Delta2, Gamma2 (one-body channels)
    U_est: Quantity  # energy
    gamma0: Quantity

    @property
    def U_rate(self) -> Quantity:
        return self.U_est / _constants()["hbar"]

    @property
    def scale_ratio(self) -> float:
        """rate1_scale / rate2_scale, equal to 2 pi^2 a^2 / A."""
        return self.rate1_scale.value / self.rate2_scale.value

    def table(self, d1: float | None = None) -> dict:
        """SI values with units, and the rates also in units of ``d1`` (1/s) when given."""
        rows = {
            "V0": self.V0.as_dict(),
            "a_thermal": self.a_thermal.as_dict(),
            "E0": self.E0.as_dict(),
            "rate1_scale": self.rate1_scale.as_dict(),
            "rate2_scale": self.rate2_scale.as_dict(),
            "U_est": self.U_est.as_dict(),
            "U_rate": self.U_rate.as_dict(),
            "gamma0": self.gamma0.as_dict(),
            "scale_ratio": {"value": self.scale_ratio, "unit": "1"},
        }
        if d1:
            for key in ("rate1_scale", "rate2_scale", "U_rate", "gamma0"):
                rows[key]["in_D1"] = rows[key]["value"] / d1
        return rows


def estimate(inputs: PhysicalInputs) -> RateEstimates:
    q = inputs.quantities()
    c = _constants()
    e, hbar, kB = c["e"], c["hbar"], c["k_B"]
    A = q["A_area"]
    V0 = (6.0 * e ** 2 * q["a_B"] / (4.0 * math.pi * q["eps"] * A)).expect(ENERGY, "V0")
    E0 = (kB * q["T"]).expect(ENERGY, "E0")
    a = (hbar / (2.0 * q["m_exc"] * E0).sqrt()).expect(LENGTH, "a_thermal")
    s1 = (V0 ** 2 * A / (4.0 * math.pi * hbar * E0 * a ** 2)).expect(RATE, "rate1_scale")
    s2 = (V0 ** 2 * A ** 2 / (8.0 * math.pi ** 3 * hbar * E0 * a ** 4)).expect(RATE, "rate2_scale")
    U = (30.0 * e ** 2 * q["a_B"] * q["X"] ** 4 / (math.pi ** 3 * q["eps"] * A)).expect(ENERGY, "U_est")
    return RateEstimates(V0, a, E0, s1, s2, U, q["gamma0"])


def estimate_decimal(inputs: PhysicalInputs, digits: int = 50) -> dict:
    """Second evaluation path in 50-digit decimal arithmetic, unit-free."""
    getcontext().prec = digits
    D = Decimal
    pi = D("3.14159265358979323846264338327950288419716939937510")
    e, hbar, kB = (D(repr(CONSTANTS[k])) for k in ("e", "hbar", "k_B"))
    A, T, aB, eps, m, X = (D(repr(v)) for v in (inputs.A_area, inputs.T, inputs.a_B, inputs.eps,
                                                inputs.m_exc, inputs.X_hopfield))
    V0 = 6 * e * e * aB / (4 * pi * eps * A)
    E0 = kB * T
    a = hbar / (2 * m * E0).sqrt()
    s1 = V0 * V0 * A / (4 * pi * hbar * E0 * a * a)
    s2 = V0 * V0 * A * A / (8 * pi ** 3 * hbar * E0 * a ** 4)
    U = 30 * e * e * aB * X ** 4 / (pi ** 3 * eps * A)
    return {"V0": V0, "a_thermal": a, "E0": E0, "rate1_scale": s1, "rate2_scale": s2, "U_est": U}


@dataclass(frozen=True)
class ModelBundle:
    fp: PolaritonFp
    fock: PolaritonSpec
    rates: dict  # Delta1, Gamma1, Delta2, Gamma2, gamma0, G1, G2, D1, D2 in the emitted units
    threshold: bool
    g2_sign: int
    unit: float  # 1/s per model rate unit

    def summary(self) -> dict:
        return {
            "rates": dict(self.rates),
            "threshold": self.threshold,
            "G2_sign": self.g2_sign,
            "rate_unit_per_s": self.unit,
            "fp": asdict(self.fp),
            "fock": asdict(self.fock),
        }


def to_model(est: RateEstimates, ratio1: float, ratio2: float, *, gamma0: float | None = None,
             kerr: float | None = None, lock: float = 0.0, normalize: bool = True,
             drift_variant: str = "as-printed") -> ModelBundle:
    """Phase-space model and Fock-space spec from the rate scales.

    Each channel pair splits as Gamma = scale, Delta = ratio * scale. With
    ``normalize`` the rates are expressed in units of D1 = Delta1 + Gamma1.
    ``lock`` is the phase-space lock strength in the emitted units; the
    Fock-space spec receives twice that, since its Hamiltonian lock moves the
    amplitude at rate K while the phase-space drift carries 2K. The one-body
    pair (index 2 here) drives the a and a-dagger channels of the Fock
    generator and the two-body pair (index 1) the aa and a-dagger a-dagger
    channels.
    """
    if not (ratio1 >= 0 and ratio2 >= 0):
        raise ConfigError("split ratios must be non-negative")
    s1, s2 = est.rate1_scale.value, est.rate2_scale.value
    g0 = est.gamma0.value if gamma0 is None else gamma0
    D1 = (ratio1 + 1.0) * s1
    unit = D1 if normalize else 1.0
    U = est.U_rate.value if kerr is None else kerr * unit
    return _bundle_from_rates(s1 / unit, ratio1 * s1 / unit, ratio2 * s2 / unit, s2 / unit, g0 / unit,
                              U / unit, lock, drift_variant, unit)


def _bundle_from_rates(Gam1, Del1, Del2, Gam2, g0, U, lock, drift_variant, unit) -> ModelBundle:
    G1, G2 = Del1 - Gam1, Del2 - Gam2 - g0
    D1, D2 = Del1 + Gam1, Del2 + Gam2 + g0
    r = dict(Delta1=Del1, Gamma1=Gam1, Delta2=Del2, Gamma2=Gam2, gamma0=g0, G1=G1, G2=G2, D1=D1, D2=D2, U=U)
    threshold = abs(G2) <= THRESHOLD_FRACTION * D2
    fp = PolaritonFp(g1=G1, g2=G2, d1=D1, d2=D2, kerr=U, lock=lock, drift_variant=drift_variant)
    fock = PolaritonSpec(gamma1=Gam2, gamma2=Gam1, delta1=Del2, delta2=Del1, gamma0=g0, kerr=U, lock=2.0 * lock)
    sign = 0 if G2 == 0 else int(math.copysign(1, G2))
    return ModelBundle(fp, fock, r, threshold, sign, unit)


def polariton_bundle(g1: float, g2: float, d1: float, d2: float, *, kerr: float = 0.0, lock: float = 0.0,
                     gamma0_share: float = 0.5, drift_variant: str = "as-printed") -> ModelBundle:
    """Model bundle from the net gain and diffusion coefficients.

    The two-body pair is fixed by G1 and D1; the one-body gain is (D2 + G2)/2
    and the one-body loss (D2 - G2)/2 is shared between scattering and
    leakage, the leakage taking ``gamma0_share`` of it.
    """
    if not (d1 > 0 and d2 > 0):
        raise ConfigError("D1 and D2 must be positive")
    if abs(g1) > d1 or abs(g2) >= d2:
        raise ConfigError("|G1| <= D1 and |G2| < D2 are needed for non-negative rates")
    if not 0 <= gamma0_share < 1:
        raise ConfigError("gamma0_share must lie in [0, 1)")
    Del1, Gam1 = 0.5 * (d1 + g1), 0.5 * (d1 - g1)
    Del2, loss = 0.5 * (d2 + g2), 0.5 * (d2 - g2)
    g0 = gamma0_share * loss
    return _bundle_from_rates(Gam1, Del1, Del2, loss - g0, g0, kerr, lock, drift_variant, unit=1.0)


def regime_model(d2_over_d1: float, g1_over_d1: float, g2_over_d1: float = 0.0, *, kerr: float = 0.0,
                 lock: float = 0.0, gamma0_share: float = 0.5, drift_variant: str = "as-printed") -> ModelBundle:
    """Model bundle in units of D1 hitting target D2/D1, G1/D1 and G2/D1.

    The two-body pair follows from G1 and D1 = 1 (|G1/D1| = 1 leaves one of
    the pair at zero); the one-body gain is (D2 + G2)/2 and the one-body loss
    (D2 - G2)/2 is shared between scattering and leakage, the leakage taking
    ``gamma0_share`` of it.
    """
    if not -1 <= g1_over_d1 <= 1:
        raise ConfigError("G1/D1 must lie in [-1, 1] for non-negative rates")
    if not d2_over_d1 > abs(g2_over_d1):
        raise ConfigError("D2/D1 must exceed |G2/D1| for non-negative rates")
    if not 0 <= gamma0_share < 1:
        raise ConfigError("gamma0_share must lie in [0, 1)")
    Del1, Gam1 = 0.5 * (1 + g1_over_d1), 0.5 * (1 - g1_over_d1)
    Del2 = 0.5 * (d2_over_d1 + g2_over_d1)
    loss = 0.5 * (d2_over_d1 - g2_over_d1)
    g0 = gamma0_share * loss
    Gam2 = loss - g0
    return _bundle_from_rates(Gam1, Del1, Del2, Gam2, g0, kerr, lock, drift_variant, unit=1.0)
