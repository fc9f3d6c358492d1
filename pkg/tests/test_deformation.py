import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpmoduli.deformation import (
    ModuliTangent,
    cloud_deformation,
    deformation_data,
    dnu_components,
    hessian_fit,
    log_volume,
    quadratic_design,
    theta,
    theta_closed_form,
    theta_general,
    wp_direct,
    wp_from_components,
)
from wpmoduli.errors import SingularDesign
from wpmoduli.hermitian import HermitianForm
from wpmoduli.projective import (
    HomogeneousPolynomial,
    SurfacePoint,
    assign_charts,
    deformation_poly,
    polish_points,
    quintic_at,
)

from conftest import random_points_on

ZETA = np.exp(2j * np.pi / 5)
OTHER_DIRECTION = HomogeneousPolynomial(5, {(3, 1, 1, 0, 0): 1.0, (0, 0, 1, 2, 2): -0.5j}, 5)


def test_theta_vanishes_on_antipodal_pair(fermat):
    x = SurfacePoint.from_homogeneous(np.array([1, -1, 0, 0, 0], dtype=complex), fermat)
    np.testing.assert_array_equal(theta(x), 0)
    a, c = dnu_components(x)
    assert a == 0
    np.testing.assert_array_equal(c, 0)


def test_theta_solves_defining_relation(rng):
    P = quintic_at(0.246)
    dP = deformation_poly()
    Zn, dehom, dep, grad = random_points_on(P, 2000, rng)
    assert len(Zn) >= 10_000
    th = theta_closed_form(Zn, dehom, P, dP)
    mask = np.ones(Zn.shape, dtype=bool)
    mask[np.arange(len(Zn)), dehom] = False
    lhs = np.einsum("ni,ni->n", np.where(mask, grad, 0), th)
    gnorm = np.linalg.norm(np.where(mask, grad, 0), axis=1)
    assert np.all(np.abs(lhs + dP.evaluate(Zn)) <= 1e-8 * gnorm)


def test_theta_is_minimal_norm(rng):
    # any other solution differs by a tangent vector and has larger FS norm
    P = quintic_at(0.1)
    dP = deformation_poly()
    Zn, dehom, dep, grad = random_points_on(P, 4, rng)
    th = theta_closed_form(Zn, dehom, P, dP)
    th_g = theta_general(Zn, dehom, P, dP, HermitianForm.identity(5))
    np.testing.assert_allclose(th, th_g, atol=1e-12)


def test_theta_linear_in_deformation(rng):
    P = quintic_at(0.2j)
    Zn, dehom, *_ = random_points_on(P, 20, rng)
    q1, q2 = deformation_poly(), OTHER_DIRECTION
    lhs = theta_closed_form(Zn, dehom, P, q1.scaled(2.0) + q2.scaled(-1j))
    rhs = 2.0 * theta_closed_form(Zn, dehom, P, q1) - 1j * theta_closed_form(Zn, dehom, P, q2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


@pytest.mark.parametrize("dP", [deformation_poly(), OTHER_DIRECTION])
def test_analytic_derivatives_match_finite_differences(rng, dP):
    P = quintic_at(0.3 - 0.4j)
    Zn, dehom, dep, grad = random_points_on(P, 40, rng)
    an = deformation_data(Zn, dehom, dep, grad, P, dP, method="analytic")
    fd = deformation_data(Zn, dehom, dep, grad, P, dP, method="fd")
    scale = max(1.0, np.abs(an.c).max())
    np.testing.assert_allclose(an.a, fd.a, atol=1e-5 * scale)
    np.testing.assert_allclose(an.c, fd.c, atol=1e-5 * scale)


def test_general_metric_reduces_to_identity(rng):
    P = quintic_at(0.3)
    Zn, dehom, dep, grad = random_points_on(P, 10, rng)
    dP = deformation_poly()
    an = deformation_data(Zn, dehom, dep, grad, P, dP)
    gen = deformation_data(Zn, dehom, dep, grad, P, dP, G=HermitianForm.identity(5).scaled(3.0))
    np.testing.assert_allclose(an.a, gen.a, atol=1e-6)
    np.testing.assert_allclose(an.c, gen.c, atol=1e-6)


def _other_chart(P, Zn, dehom, dep, grad):
    rows = np.arange(len(Zn))
    order = np.argsort(-np.abs(Zn), axis=1)
    keep = np.abs(Zn[rows, order[:, 1]]) > 0.3
    Zn, dehom, dep, grad, order = Zn[keep], dehom[keep], dep[keep], grad[keep], order[keep]
    rows = np.arange(len(Zn))
    d2 = order[:, 1]
    Z2 = Zn / Zn[rows, d2][:, None]
    Z2[rows, d2] = 1.0
    g2 = P.gradient(Z2)
    ga = np.abs(g2).copy()
    ga[rows, d2] = -1
    return (Zn, dehom, dep, grad), (Z2, d2, np.argmax(ga, axis=1), g2)


def test_deformation_data_chart_independent(rng):
    P = quintic_at(0.3 + 0.2j)
    dP = deformation_poly()
    first, second = _other_chart(P, *random_points_on(P, 60, rng))
    A = deformation_data(*first, P, dP)
    B = deformation_data(*second, P, dP)
    np.testing.assert_allclose(A.a, B.a, atol=1e-12)
    trA = np.einsum("nij,nji->n", A.c, A.c.conj())
    trB = np.einsum("nij,nji->n", B.c, B.c.conj())
    np.testing.assert_allclose(trA, trB, atol=1e-12)
    # changing only the dependent coordinate
    Zn, dehom, dep, grad = first
    rows = np.arange(len(Zn))
    ga = np.abs(grad).copy()
    ga[rows, dehom] = -1
    ga[rows, dep] = -1
    C = deformation_data(Zn, dehom, np.argmax(ga, axis=1), grad, P, dP)
    np.testing.assert_allclose(A.a, C.a, atol=1e-12)
    np.testing.assert_allclose(trA, np.einsum("nij,nji->n", C.c, C.c.conj()), atol=1e-12)


def test_c_vanishes_where_deformation_vanishes(rng):
    # points with Z4 = 0 lie on the zero set of Z0 Z1 Z2 Z3 Z4
    P = quintic_at(0.4)
    sec = rng.standard_normal((200, 3, 5)) + 1j * rng.standard_normal((200, 3, 5))
    sec[:, 0] = 0
    sec[:, 0, 4] = 1.0
    from wpmoduli.sampler import line_roots

    Z, ok = line_roots(P, sec)
    Zn, dehom, dep, grad, _ = assign_charts(Z[ok].reshape(-1, 5), P)
    Zn, grad, _ = polish_points(Zn, dehom, dep, P)
    assert np.abs(Zn[:, 4]).max() < 1e-12
    data = deformation_data(Zn, dehom, dep, grad, P, deformation_poly())
    assert np.abs(data.c).max() < 1e-10
    assert np.abs(data.theta).max() < 1e-12


def test_wp_zero_tangent(cloud_small):
    est = wp_direct(cloud_small, ModuliTangent(0.0))
    assert est.value == 0


@settings(max_examples=10, deadline=None)
@given(st.complex_numbers(max_magnitude=3, allow_nan=False), st.complex_numbers(max_magnitude=3, allow_nan=False))
def test_wp_sesquilinear(alpha, beta):
    cloud = _fixed_cloud()
    base = wp_direct(cloud, ModuliTangent(1.0), ModuliTangent(1.0, OTHER_DIRECTION)).value
    scaled = wp_direct(cloud, ModuliTangent(alpha), ModuliTangent(beta, OTHER_DIRECTION)).value
    assert scaled == pytest.approx(alpha * np.conj(beta) * base, rel=1e-12, abs=1e-14)


_CACHE = {}


def _fixed_cloud():
    if "c" not in _CACHE:
        from wpmoduli.sampler import sample_cloud

        _CACHE["c"] = sample_cloud(0.3 + 0.1j, 2000, seed=103, t=0.3 + 0.1j)
    return _CACHE["c"]


def test_wp_hermitian_symmetry(cloud_small):
    v1, v2 = ModuliTangent(1.0), ModuliTangent(0.5 - 1j, OTHER_DIRECTION)
    g12 = wp_direct(cloud_small, v1, v2).value
    g21 = wp_direct(cloud_small, v2, v1).value
    assert g12 == pytest.approx(np.conj(g21), rel=1e-13)
    g11 = wp_direct(cloud_small, v1).value
    assert abs(g11.imag) <= 1e-12 * abs(g11)


def test_wp_invariant_under_volume_form_scaling(cloud_small):
    data = cloud_deformation(cloud_small)
    a = wp_from_components(cloud_small.mass, data.a, data.c)
    for c in (1e-3, 7.0, 1e4):
        b = wp_from_components(cloud_small.mass * c, data.a, data.c)
        assert b.value == pytest.approx(a.value, rel=1e-13)
        assert b.stderr == pytest.approx(a.stderr, rel=1e-10)


def test_log_volume_shift_under_scaling(cloud_small):
    from dataclasses import replace

    F = log_volume(cloud_small.t, cloud_small)
    scaled = replace(cloud_small, mass_scale=cloud_small.mass_scale * 4.0)
    G = log_volume(cloud_small.t, scaled)
    assert G.value - F.value == pytest.approx(-np.log(4.0), abs=1e-13)
    assert G.stderr == pytest.approx(F.stderr, rel=1e-12)


def test_zeta5_symmetry_pointwise(cloud_generic):
    """``Z0 -> zeta Z0`` maps the fiber at t to the fiber at t/zeta; the metric density is preserved."""
    c = cloud_generic.subset(np.arange(3000))
    t2 = c.t / ZETA
    P2 = quintic_at(t2)
    Z = c.Z.copy()
    Z[:, 0] *= ZETA
    Zn, dehom, dep, grad, _ = assign_charts(Z, P2)
    Zn, grad, _ = polish_points(Zn, dehom, dep, P2)
    d1 = cloud_deformation(c)
    d2 = deformation_data(Zn, dehom, dep, grad, P2, deformation_poly())
    from wpmoduli.sampler import raw_masses

    m2 = raw_masses(Zn, dehom, dep, grad, [HermitianForm.identity(5)])[:, 0]
    np.testing.assert_allclose(m2, c.raw_mass, rtol=1e-9)
    w1 = wp_from_components(c.mass, d1.a, d1.c).value
    w2 = wp_from_components(m2, d2.a, d2.c).value
    assert w2 == pytest.approx(w1, rel=1e-9)


def test_wp_positive_on_small_cloud(cloud_generic):
    est = wp_direct(cloud_generic)
    assert est.value.real > 3 * est.stderr


def test_hessian_fit_exact_quadratic(rng):
    coef = np.array([0.3, 0.1, -0.2, 0.05, 0.02, 0.19])
    ts = 0.4 * (rng.uniform(-1, 1, 30) + 1j * rng.uniform(-1, 1, 30))
    F = quadratic_design(ts) @ coef
    fit = hessian_fit([(t, f, 1e-3) for t, f in zip(ts, F)])
    assert fit.g == pytest.approx(0.19, abs=1e-12)
    np.testing.assert_allclose(fit.coefficients, coef, atol=1e-12)
    g, err = fit
    assert err > 0


def test_hessian_fit_recovers_noisy_curvature(rng):
    coef = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.2])
    ts = 0.5 * np.sqrt(rng.uniform(0, 1, 2000)) * np.exp(2j * np.pi * rng.uniform(0, 1, 2000))
    F = quadratic_design(ts) @ coef + rng.normal(0, 1e-3, 2000)
    fit = hessian_fit([(t, f, 1e-3) for t, f in zip(ts, F)])
    assert abs(fit.g - 0.2) < 3 * fit.err
    assert fit.chi2_reduced == pytest.approx(1.0, abs=0.1)


def test_hessian_fit_singular_designs():
    with pytest.raises(SingularDesign):
        hessian_fit([(0.1, 0.0, 1.0)] * 5)
    with pytest.raises(SingularDesign):
        hessian_fit([(x, 0.0, 1.0) for x in np.linspace(-0.1, 0.1, 10)])


def test_mean_a_is_holomorphic_derivative_of_log_volume():
    """``d/dt log vol = <a>``: compare with central differences of ``-log vol`` in x and y."""
    from wpmoduli.sampler import sample_cloud

    t0 = 0.6 + 0.3j
    c = sample_cloud(t0, 50_000, seed=1, t=t0)
    a = cloud_deformation(c).a
    mean_a = np.sum(c.mass * a) / c.mass.sum()
    d = 0.05
    for dt, expected in ((d, -2 * mean_a.real), (1j * d, 2 * mean_a.imag)):
        F = [log_volume(t0 + s * dt, sample_cloud(t0 + s * dt, 200_000, seed=7, t=t0 + s * dt)) for s in (1, -1)]
        fd = (F[0].value - F[1].value) / (2 * d)
        err = np.hypot(F[0].stderr, F[1].stderr) / (2 * d)
        assert abs(fd - expected) < 4 * err + 0.01
