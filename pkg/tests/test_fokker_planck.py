import math

import numpy as np
import pytest

from kerrlock.errors import GuardError
from kerrlock.fock import fock_dm
from kerrlock.fokker_planck import (
    FpField,
    LaserFp,
    PolaritonFp,
    assemble_operator,
    default_dt,
    default_grid,
    fixed_point,
    fp_moments,
    fp_negativity,
    fp_rhs,
    fp_steady,
    fp_terms,
    gaussian_field,
    radial_profile,
    with_variant,
)
from kerrlock.fokker_planck import _march
from kerrlock.grids import PolarLayout, load_grid, save_grid
from kerrlock.wigner import negativity, wigner_grid

FOCK1_N = 1.0 - 2.0 * math.exp(-0.5)
FREE = LaserFp(3.0, 1.0, 1.0)
# threshold polariton with net two-body loss; the opposite sign of G1 is not normalisable
LOCKED_POLARITON = dict(g1=-1.0, g2=0.0, d1=1.0, d2=10.0, kerr=10.0, lock=1000.0)


def smooth_field(layout, center=1.2 + 0.7j, sigma=0.6):
    return gaussian_field(layout, center, sigma)


def l1(x, layout):
    return float(np.sum(np.abs(x) * layout.weights()))


# --- models and guards --------------------------------------------------------


def test_variant_names():
    assert LaserFp(1, 1, 1, drift_variant="AsPrinted").drift_variant == "as-printed"
    assert LaserFp(1, 1, 1, drift_variant="PhysicalLock").drift_variant == "physical"
    with pytest.raises(ValueError):
        LaserFp(1, 1, 1, drift_variant="sideways")


def test_polariton_needs_positive_diffusion_rates():
    with pytest.raises(ValueError):
        PolaritonFp(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        PolaritonFp(0.0, 0.0, 1.0, -1.0)


def test_diffusion_positivity_checked_at_build():
    model = PolaritonFp(g1=1.0, g2=0.0, d1=1.0, d2=1.0)  # D2/4 - G1/2 < 0 at the pole
    with pytest.raises(GuardError):
        model.check(PolarLayout(3.0, 30, 16))
    with pytest.raises(GuardError):
        fp_steady(model, layout=PolarLayout(3.0, 30, 16))


def test_unsaturated_model_has_no_default_grid():
    with pytest.raises(GuardError):
        default_grid(PolaritonFp(1.0, 0.0, 1.0, 10.0))


# --- right-hand side -------------------------------------------------------------


def test_symmetric_field_reduces_to_radial_operator():
    lay = PolarLayout(5.0, 100, 32)
    R, _ = lay.mesh()
    fld = FpField(lay, np.exp(-(R - 1.4) ** 2))
    rhs = fp_rhs(FREE, fld)
    assert np.max(np.ptp(rhs, axis=1)) <= 1e-12
    terms = fp_terms(FREE, fld)
    for key in ("lock", "kerr_rotation", "kerr_dispersion"):
        assert np.max(np.abs(terms[key])) == 0


def test_constant_field_drift_divergence():
    # -(1/2r) d/dr [r^2 (A - g - B r^2)] = -(A - g) + 2 B r^2 for unit W
    lay = PolarLayout(6.0, 120, 32)
    R, _ = lay.mesh()
    hand = -(3.0 - 1.0) + 2.0 * 1.0 * R ** 2
    fld = FpField(lay, np.ones(lay.dims))
    terms = fp_terms(FREE, fld)
    oracle = terms["drift"] + terms["diffusion"]
    np.testing.assert_allclose(oracle[1:-3], hand[1:-3], atol=1e-12)
    interior = slice(0, lay.nr - 4)
    assert np.max(np.abs(fp_rhs(FREE, fld)[interior] - hand[interior])) <= lay.dr ** 2


@pytest.mark.parametrize("model", [
    LaserFp(3.0, 1.0, 1.0, kerr=0.7, lock=2.0, drift_variant="physical"),
    LaserFp(3.0, 1.0, 1.0, kerr=0.7, lock=2.0, drift_variant="as-printed"),
    PolaritonFp(-0.5, 0.3, 1.0, 4.0, kerr=1.5, lock=1.0, drift_variant="physical"),
    PolaritonFp(-0.5, 0.3, 1.0, 4.0, kerr=1.5, lock=1.0, drift_variant="as-printed"),
])
def test_operator_converges_to_written_terms(model):
    # finite-volume operator against the central-difference term oracle, second order
    errs = []
    for n in (40, 80):
        lay = PolarLayout(6.0, n, 2 * n)
        fld = smooth_field(lay)
        rhs = fp_rhs(model, fld)
        oracle = sum(fp_terms(model, fld).values())
        keep = (lay.r > 0.5) & (lay.r < 4.0)
        errs.append(np.max(np.abs(rhs - oracle)[keep]))
    assert errs[1] < errs[0] / 3.0
    assert errs[1] < 0.05 * np.max(np.abs(oracle))


def test_as_printed_lock_against_analytic_gradient():
    # -c (cos(theta) - sin(theta)/r) dW/dr with dW/dr of a Gaussian known in closed form
    z0, sig, c = 1.2 + 0.7j, 0.6, 2.0
    m = LaserFp(3.0, 1.0, 1.0, lock=c)
    errs = []
    for n in (60, 120):
        lay = PolarLayout(6.0, n, 2 * n)
        fld = gaussian_field(lay, z0, sig)
        R, T = lay.mesh()
        Wr = -fld.values * (R - (z0 * np.exp(-1j * T)).real) / sig ** 2
        exact = -c * (np.cos(T) - np.sin(T) / R) * Wr
        part = (assemble_operator(m, lay, parts=True)["lock"] @ fld.values.ravel()).reshape(lay.dims)
        keep = (lay.r > 0.5) & (lay.r < 4.0)
        assert np.max(np.abs(fp_terms(m, fld)["lock"] - exact)[keep]) <= 0.05 * np.max(np.abs(exact))
        errs.append(np.max(np.abs(part - exact)[keep]))
    assert errs[1] < errs[0] / 3.0
    # the physical variant differs by the angular advection
    P = fp_terms(with_variant(m, "physical"), fld)["lock"]
    assert np.max(np.abs(P - fp_terms(m, fld)["lock"])) > 0.1 * np.max(np.abs(exact))


def test_theta_shift_commutes_without_lock():
    lay = PolarLayout(5.0, 50, 64)
    rng = np.random.default_rng(3)
    fld = FpField(lay, rng.random(lay.dims))
    for model in (LaserFp(3, 1, 1, kerr=2.0), PolaritonFp(-1.0, 0.5, 1.0, 3.0, kerr=4.0)):
        a = np.roll(fp_rhs(model, fld), 5, axis=1)
        b = fp_rhs(model, FpField(lay, np.roll(fld.values, 5, axis=1)))
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_mass_conserved_by_physical_operator():
    lay = PolarLayout(8.0, 80, 64)
    m = LaserFp(3.0, 1.0, 1.0, kerr=0.5, lock=2.0, drift_variant="physical")
    L = assemble_operator(m, lay)
    w = lay.weights().ravel()
    fld = smooth_field(lay, 1.0, 0.5)
    assert abs(w @ (L @ fld.values.ravel())) <= 1e-10


def test_march_mass_drift_per_unit_time():
    lay = PolarLayout(8.0, 64, 64)
    m = LaserFp(3.0, 1.0, 1.0, kerr=0.3, lock=1.0, drift_variant="physical")
    fld = smooth_field(lay, 1.4, 0.5)
    L = assemble_operator(m, lay)
    dt = default_dt(m, lay)
    steps = 400
    W, *_ = _march(m, fld, L, dt, steps * dt, 0.0, steps, True)
    drift = abs(float(np.sum(W * lay.weights())) - 1.0) / (steps * dt)
    assert drift <= 1e-6


def test_locked_polariton_builds_and_steps_stably():
    # positive G1/D1 = +1 on a bounded grid, and the normalisable negative sign on its default grid
    for g1, lay in ((+1.0, PolarLayout(12.0, 120, 256)), (-1.0, None)):
        m = PolaritonFp(**dict(LOCKED_POLARITON, g1=g1))
        lay = lay or default_grid(m)
        m.check(lay)
        z0 = fixed_point(m) if g1 < 0 else 5.0
        fld = gaussian_field(lay, z0, 0.5)
        L = assemble_operator(m, lay)
        dt = default_dt(m, lay)
        W, *_ = _march(m, fld, L, dt, 300 * dt, 0.0, 100, m.drift_variant == "physical")
        assert np.all(np.isfinite(W))
        assert np.max(np.abs(W)) <= 2.0 * np.max(np.abs(fld.values))


# --- steady states -------------------------------------------------------------------


def test_free_laser_ring_at_drift_zero():
    res = fp_steady(FREE)
    assert res.converged
    prof = radial_profile(res.field)
    peak = res.field.layout.r[np.argmax(prof)]
    assert peak == pytest.approx(math.sqrt(2.0), abs=0.05)
    assert res.field.mass() == pytest.approx(1.0, abs=1e-12)


def test_free_laser_theta_independent():
    res = fp_steady(LaserFp(3.0, 1.0, 1.0, kerr=0.0))
    W = res.field.values
    k = int(np.argmax(W.mean(axis=1)))
    assert np.ptp(W[k]) <= 0.005 * W[k].mean()


def test_kerr_alone_keeps_ring_symmetric():
    res = fp_steady(LaserFp(3.0, 1.0, 1.0, kerr=10.0))
    W = res.field.values
    k = int(np.argmax(W.mean(axis=1)))
    assert np.ptp(W[k]) <= 0.005 * W[k].mean()
    assert abs(fp_negativity(res.field)) <= 1e-9


def test_march_and_direct_agree():
    lay = PolarLayout(6.0, 48, 64)
    m = LaserFp(3.0, 1.0, 1.0, kerr=0.5, lock=2.0, drift_variant="physical")
    d = fp_steady(m, layout=lay, method="direct")
    t = fp_steady(m, layout=lay, method="march", t_max=40.0, tol=1e-8, check_every=250)
    assert d.converged and t.converged
    assert l1(d.field.values - t.field.values, lay) <= 1e-5


def test_laser_polariton_seam():
    # G2 = (A - g)/2, 2 G1 = -B/2, D2/4 - G1/2 = (A + g)/8, D1 -> 0 reproduces the laser radial polynomials
    lay = PolarLayout(6.0, 240, 16)
    a = fp_steady(FREE, layout=lay)
    b = fp_steady(PolaritonFp(g1=-0.25, g2=1.0, d1=1e-9, d2=1.5), layout=lay)
    pa, pb = radial_profile(a.field), radial_profile(b.field)
    assert np.sum(np.abs(pa - pb) * lay.r) <= 0.02 * np.sum(pa * lay.r)


def test_locked_kerr_laser_has_negative_region():
    m = LaserFp(3.0, 1.0, 1.0, kerr=0.1, lock=50.0, drift_variant="physical")
    res = fp_steady(m, layout=default_grid(m, points_per_width=4))
    assert res.converged
    N = fp_negativity(res.field)
    assert N < -1e-3
    # the most negative node sits next to the locked peak
    alpha = res.field.layout.alpha()
    peak = alpha.ravel()[np.argmax(res.field.values)]
    hole = alpha.ravel()[np.argmin(res.field.values)]
    assert abs(hole - peak) <= 2.0


def test_locked_polariton_locks_phase():
    m = PolaritonFp(**LOCKED_POLARITON, drift_variant="physical")
    res = fp_steady(m)
    assert res.converged
    assert fp_moments(res.field)["mean_cos"] > 0


def test_locked_polariton_negative_region_toward_origin():
    m = PolaritonFp(**LOCKED_POLARITON, drift_variant="physical")
    res = fp_steady(m)
    W = res.field.values
    N = fp_negativity(res.field)
    assert N < -1e-9
    alpha = res.field.layout.alpha()
    w = res.field.layout.weights()
    neg = np.minimum(W, 0) * w
    centroid = np.sum(alpha * neg) / np.sum(neg)
    peak = alpha.ravel()[np.argmax(W)]
    assert abs(centroid) < abs(peak)


# --- negativity and moments ---------------------------------------------------------


def test_negativity_of_positive_field_is_zero():
    lay = PolarLayout(4.0, 40, 32)
    assert fp_negativity(gaussian_field(lay, 1.0, 0.5)) == 0.0


def test_fock1_sampled_on_polar_grid():
    lay = PolarLayout(4.0, 200, 64)
    g = wigner_grid(fock_dm(12, 1), lay)
    fld = FpField(lay, g.values)
    assert fp_negativity(fld) == pytest.approx(FOCK1_N, abs=2e-3)
    assert fp_negativity(fld) == pytest.approx(negativity(g), rel=1e-2)


def test_moments():
    lay = PolarLayout(4.0, 800, 64)
    R, _ = lay.mesh()
    ring = FpField(lay, np.exp(-((R - math.sqrt(2)) / 0.01) ** 2)).normalized()
    assert fp_moments(ring)["mean_r2"] == pytest.approx(2.0, abs=1e-3)
    vac = FpField(lay, (2 / np.pi) * np.exp(-2 * R ** 2))
    mom = fp_moments(vac)
    assert mom["mass"] == pytest.approx(1.0, abs=1e-5)
    assert mom["mean_r2"] == pytest.approx(0.5, abs=1e-4)


def test_polar_dump_round_trip(tmp_path):
    lay = PolarLayout(5.0, 30, 16)
    fld = smooth_field(lay)
    save_grid(tmp_path / "f.klgrid", lay, fld.values, {"route": "fp"})
    back = load_grid(tmp_path / "f.klgrid")
    assert back.layout == lay and np.array_equal(back.values, fld.values)
