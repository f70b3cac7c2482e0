"""Model-manifold checks against the embedding-FD oracle routes."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlab import geometry as G
from conftest import pair_at_distance
import oracles


def chart_data(M, x):
    axis = G.chart_axis(M, x)
    if M.kind is G.ManifoldKind.SPHERE:
        sign = 1.0 if np.asarray(x)[axis] >= 0 else -1.0
    else:
        sign, axis = 1.0, (axis if axis is not None else 0)
    return M.kind.value, M.dim, M.curvature_param, axis, sign


# ------------------------------------------------------------------- points

def test_check_point_rejects_off_surface():
    M = G.sphere(4)
    with pytest.raises(G.InvalidPointError):
        G.check_point(M, np.array([1.0, 0.0, 0.0, 0.0, 0.5]))
    with pytest.raises(G.InvalidPointError):
        G.check_point(M, np.zeros(4))  # wrong arity
    M = G.hyperbolic(3)
    with pytest.raises(G.InvalidPointError):
        G.check_point(M, np.array([0.0, 0.0, 0.0, -1.0]))  # wrong sheet


def test_random_points_are_on_surface(models, rng):
    for M in models:
        for _ in range(20):
            G.check_point(M, G.random_point(M, rng))


def test_model_invariants():
    assert G.sphere(4).scalar_curvature == pytest.approx(12.0)
    assert G.sphere(2, 2.0).scalar_curvature == pytest.approx(8.0)
    assert G.hyperbolic(3).scalar_curvature == pytest.approx(-6.0)
    assert G.flat(4).scalar_curvature == 0.0
    assert G.sphere(2).diameter == pytest.approx(math.pi)
    with pytest.raises(G.DomainError):
        G.ManifoldModel(G.ManifoldKind.SPHERE, 5, 1.0)
    with pytest.raises(G.DomainError):
        G.ManifoldModel(G.ManifoldKind.SPHERE, 3, -1.0)


# ------------------------------------------------------------------- metric

def test_metric_matches_embedding_fd(models, rng):
    for M in models:
        if M.kind is G.ManifoldKind.FLAT:
            continue
        for _ in range(5):
            x = G.random_point(M, rng, spread=0.8)
            kind, dim, c, axis, sign = chart_data(M, x)
            u = G.chart_coords(M, x, axis)
            got = G.metric_from_chart(M, u)
            want = oracles.metric_fd(kind, dim, c, axis, sign, u)
            assert np.allclose(got, want, atol=5e-9, rtol=1e-8)
            ginv = G.inverse_metric_at(M, x)
            assert np.allclose(ginv @ got, np.eye(dim), atol=1e-10)


def test_christoffels_match_metric_fd(models, rng):
    for M in models:
        for _ in range(3):
            x = G.random_point(M, rng, spread=0.8)
            kind, dim, c, axis, sign = chart_data(M, x)
            u = G.chart_coords(M, x, axis)
            got = G.christoffels_from_chart(M, u)
            if M.kind is G.ManifoldKind.FLAT:
                assert np.all(got == 0.0)
                continue
            want = oracles.christoffels_fd(kind, dim, c, axis, sign, u)
            assert np.allclose(got, want, atol=1e-5)


def test_scalar_curvature_sign_convention_unit_two_sphere(rng):
    # pins the sign convention of the oracle itself: unit two-sphere is +2
    M = G.sphere(2)
    x = G.random_point(M, rng)
    kind, dim, c, axis, sign = chart_data(M, x)
    u = G.chart_coords(M, x, axis)
    r_fd = oracles.scalar_curvature_fd(kind, dim, c, axis, sign, u)
    assert r_fd == pytest.approx(2.0, abs=1e-3)
    assert G.curvature_scalar(M, x) == 2.0


def test_scalar_curvature_matches_fd(models, rng):
    for M in models:
        if M.kind is G.ManifoldKind.FLAT:
            continue
        x = G.random_point(M, rng, spread=0.6)
        kind, dim, c, axis, sign = chart_data(M, x)
        u = G.chart_coords(M, x, axis)
        r_fd = oracles.scalar_curvature_fd(kind, dim, c, axis, sign, u)
        assert r_fd == pytest.approx(M.scalar_curvature, abs=5e-3)


# ----------------------------------------------------------------- geodesics

def test_distance_equals_path_length_of_claimed_geodesic(models, rng):
    for M in models:
        x, y = pair_at_distance(M, rng, 1.1)
        d = float(G.distance(M, x, y))
        kind, dim, c, axis, sign = chart_data(M, G.geodesic_point(M, x, y, 0.5))

        def curve(rho):
            return G.chart_coords(M, G.geodesic_point(M, x, y, rho), axis)

        L = oracles.path_length(kind, dim, c, axis, sign, curve)
        assert L == pytest.approx(d, rel=1e-6)


def test_exp_map_matches_geodesic_ode(models, rng):
    for M in models:
        if M.kind is G.ManifoldKind.FLAT:
            continue
        if M.kind is G.ManifoldKind.SPHERE:
            # start near a pole so the whole geodesic stays inside one chart
            raw = 0.25 * rng.standard_normal(M.ambient_dim)
            raw[0] += 1.0
            x = G.project_to_manifold(M, raw)
            r = 0.6
        else:
            x = G.random_point(M, rng, spread=0.5)
            r = 0.8
        v = G.random_tangent(M, x, rng)
        y = G.exp_map(M, x, v, r)
        kind, dim, c, axis, sign = chart_data(M, x)
        u0 = G.chart_coords(M, x, axis)
        v_chart = G.chart_components(M, x, r * np.asarray(v), axis)
        u_end = oracles.geodesic_shoot(kind, dim, c, axis, sign, u0, v_chart, r)
        want = G.chart_coords(M, y, axis)
        assert np.allclose(u_end, want, atol=1e-7)


def test_geodesic_interpolation_is_metric_affine(models, rng):
    for M in models:
        x, y = pair_at_distance(M, rng, 0.9)
        d = float(G.distance(M, x, y))
        for rho in (0.25, 0.5, 0.75):
            z = G.geodesic_point(M, x, y, rho)
            assert float(G.distance(M, x, z)) == pytest.approx(rho * d, abs=1e-12)
            assert float(G.distance(M, z, y)) == pytest.approx((1 - rho) * d, abs=1e-12)


def test_segment_velocity_norm_is_length(models, rng):
    for M in models:
        x, y = pair_at_distance(M, rng, 1.3)
        seg = G.GeodesicSegment.between(M, x, y)
        for rho in (0.0, 0.3, 1.0):
            vel = seg.velocity(rho)
            nrm = math.sqrt(float(G.induced_dot(M, vel, vel)))
            assert nrm == pytest.approx(seg.length, rel=1e-12)


def test_cut_locus_guard():
    M = G.sphere(2)
    x = np.array([1.0, 0.0, 0.0])
    y = -x
    with pytest.raises(G.CutLocusError):
        G.geodesic_point(M, x, y, 0.5)
    with pytest.raises(G.CutLocusError):
        G.sigma(M, x, y)


# --------------------------------------------------------------------- sigma

def test_sigma_is_half_gradient_of_distance_squared(models, rng):
    # sigma^mu(x, y) = (1/2) g^{mu nu}(y) d/dy^nu [d^2(x, y)]
    h = 1e-6
    for M in models:
        x, y = pair_at_distance(M, rng, 1.0)
        axis = G.chart_axis(M, y)
        if M.kind is G.ManifoldKind.SPHERE:
            sign = 1.0 if y[axis] >= 0 else -1.0
        else:
            sign = 1.0
        u0 = G.chart_coords(M, y, axis)
        grad = np.empty(M.dim)
        for nu in range(M.dim):
            du = np.zeros(M.dim)
            du[nu] = h
            dp = G.distance(M, x, G.chart_embed(M, u0 + du, axis, sign))
            dm = G.distance(M, x, G.chart_embed(M, u0 - du, axis, sign))
            grad[nu] = (float(dp) ** 2 - float(dm) ** 2) / (2 * h)
        ginv = np.linalg.inv(G.metric_from_chart(M, u0))
        want = 0.5 * ginv @ grad
        got = G.sigma(M, x, y, axis)
        assert np.allclose(got, want, atol=2e-6)


def test_sigma_vanishes_at_coincidence(models, rng):
    for M in models:
        x = G.random_point(M, rng)
        assert np.allclose(G.sigma(M, x, np.asarray(x)), 0.0, atol=1e-14)


def test_sigma_initial_velocity_convention(models, rng):
    # sigma(x, x0) = -s xdot(0) for the unit-speed geodesic leaving x0 toward x
    for M in models:
        x0, x = pair_at_distance(M, rng, 0.7)
        seg = G.GeodesicSegment.between(M, x0, x)
        # segment runs x0 -> x, velocity at rho=0 divided by length is xdot(0)
        xdot0 = seg.velocity(0.0) / seg.length
        want = -seg.length * G.chart_components(M, x0, xdot0)
        got = G.sigma(M, x, np.asarray(x0))
        assert np.allclose(got, want, atol=1e-10)


@pytest.mark.parametrize("dist", [1e-6, 1e-3, 0.5, 2.0])
def test_norm_identity_across_scales(models, rng, dist):
    for M in models:
        x, y = pair_at_distance(M, rng, dist)
        assert G.norm_identity_defect(M, x, y) < 1e-8


# --------------------------------------------------- expansion and remainder

def test_taylor_exact_on_flat_cubic(rng):
    M = G.flat(4)
    a = rng.standard_normal(4)
    B = rng.standard_normal((4, 4))
    C = rng.standard_normal((4, 4, 4))

    def f(p):
        return float(a @ p + p @ B @ p + np.einsum("ijk,i,j,k", C, p, p, p))

    x0 = rng.standard_normal(4)
    x = x0 + 0.3 * rng.standard_normal(4)
    val, rem, bound = G.covariant_taylor(M, f, x0, x, 3)
    # cubic has vanishing fourth derivatives: remainder is FD noise only
    assert abs(rem) < 1e-6
    assert val == pytest.approx(f(x), abs=1e-6)


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_taylor_reconstruction_and_majorant(models, rng, order):
    for M in models:
        w = rng.standard_normal(M.ambient_dim)

        def f(p, w=w):
            return math.exp(0.3 * float(w @ p))

        x0, x = pair_at_distance(M, rng, 0.4)
        fx = f(x)
        val, rem, bound = G.covariant_taylor(M, f, x0, x, order)
        scale = max(abs(fx), abs(val), 1.0)
        assert abs(val + rem - fx) < 1e-6 * scale
        assert abs(rem) <= bound * (1 + 1e-10) + 1e-12 * scale


def test_laplacian_eigenfunction_identities(rng):
    # ambient coordinate restricted to S^n: Delta x^A = -n kappa^2 x^A
    M = G.sphere(4, 1.0)
    x = G.random_point(M, rng)
    idx = int(np.argmin(np.abs(x)))  # avoid the chart axis slot

    def coord(p, idx=idx):
        return p[idx]

    lb = G.laplace_beltrami(M, coord, x)
    assert lb == pytest.approx(-4.0 * float(x[idx]), rel=1e-6, abs=1e-7)

    # hyperboloid coordinates: Delta x^A = n k^2 x^A
    M = G.hyperbolic(3, 1.0)
    x = G.random_point(M, rng)
    lb = G.laplace_beltrami(M, lambda p: p[3], x)
    assert lb == pytest.approx(3.0 * float(x[3]), rel=1e-6)

    # flat: Delta |x|^2 = 2n
    M = G.flat(4)
    x = G.random_point(M, rng)
    lb = G.laplace_beltrami(M, lambda p: float(p @ p), x)
    assert lb == pytest.approx(8.0, rel=1e-6)


# ------------------------------------------------------------------- volume

BALL_ORACLE = [
    # (kind, dim, curvature_param, r, volume by independent quadrature)
    ("flat", 4, 0.0, 1.1, 7.225043901817467),
    ("sphere", 2, 1.0, 2.0, 8.897912996201855),
    ("sphere", 4, 1.0, 1.2, 6.319872533497155),
    ("hyperbolic", 3, 1.0, 0.7, 1.5843098921544414),
    ("hyperbolic", 4, 1.0, 1.3, 24.629790956652613),
]


@pytest.mark.parametrize("kind,dim,c,r,expected", BALL_ORACLE)
def test_ball_volume_closed_forms(kind, dim, c, r, expected, rng):
    M = G.ManifoldModel(G.ManifoldKind(kind), dim, c)
    x = G.random_point(M, rng)
    assert G.ball_volume(M, x, r) == pytest.approx(expected, rel=1e-12)


def test_ball_volume_matches_fresh_quadrature(models, rng):
    for M in models:
        r = 0.9
        val, err = oracles.ball_volume_quad(M.kind.value, M.dim, M.curvature_param, r)
        x = G.random_point(M, rng)
        assert G.ball_volume(M, x, r) == pytest.approx(val, abs=10 * err + 1e-13)


def test_ball_volume_domain_errors(rng):
    M = G.sphere(2)
    x = G.random_point(M, rng)
    with pytest.raises(G.DomainError):
        G.ball_volume(M, x, math.pi + 0.1)
    with pytest.raises(G.DomainError):
        G.ball_volume(M, x, -1.0)


def test_comparison_functions_are_exact_volume_ratios(rng):
    # |B_{H^4}(r)| = (pi^2 r^4 / 2) h4(k r) and the sphere analog: identities,
    # not inequalities, on the constant-curvature models
    M = G.hyperbolic(4, 1.3)
    x = G.random_point(M, rng)
    for r in (0.15, 0.4, 1.1):
        lhs = G.ball_volume(M, x, r)
        rhs = (math.pi**2 * r**4 / 2.0) * G.comparison_h4(1.3 * r)
        assert lhs == pytest.approx(rhs, rel=5e-12)
    M = G.sphere(4, 0.9)
    x = G.random_point(M, rng)
    for r in (0.15, 0.7, 2.0):
        lhs = G.ball_volume(M, x, r)
        rhs = (math.pi**2 * r**4 / 2.0) * G.comparison_s4(0.9 * r)
        assert lhs == pytest.approx(rhs, rel=5e-12)


def test_comparison_series_switch_accuracy(rng):
    # both branches near the switch must agree with the volume route
    Mh = G.hyperbolic(4, 1.0)
    Ms = G.sphere(4, 1.0)
    xh = G.random_point(Mh, rng)
    xs = G.random_point(Ms, rng)
    for r in (0.0999, 0.1001):
        vh = G.ball_volume(Mh, xh, r) / (math.pi**2 * r**4 / 2.0)
        assert G.comparison_h4(r) == pytest.approx(vh, rel=2e-8)
        vs = G.ball_volume(Ms, xs, r) / (math.pi**2 * r**4 / 2.0)
        assert G.comparison_s4(r) == pytest.approx(vs, rel=2e-8)
    assert G.comparison_h4(0.0) == 1.0
    assert G.comparison_s4(0.0) == 1.0


def test_unit_sphere_area_values():
    assert G.unit_sphere_area(2) == pytest.approx(2 * math.pi)
    assert G.unit_sphere_area(3) == pytest.approx(4 * math.pi)
    assert G.unit_sphere_area(4) == pytest.approx(2 * math.pi**2)


# -------------------------------------------------------------- random pairs

@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    d=st.floats(1e-4, 2.0),
    model_idx=st.integers(0, 4),
)
def test_distance_properties(seed, d, model_idx):
    M = G.standard_models()[model_idx]
    rng = np.random.default_rng(seed)
    x, y = pair_at_distance(M, rng, d)
    z = np.asarray(G.random_point(M, rng), float)
    dxy = float(G.distance(M, x, y))
    assert dxy == pytest.approx(d, rel=1e-9, abs=1e-12)
    assert float(G.distance(M, y, x)) == pytest.approx(dxy, rel=1e-12)
    assert float(G.distance(M, x, x)) <= 1e-7
    assert dxy <= float(G.distance(M, x, z)) + float(G.distance(M, z, y)) + 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), model_idx=st.integers(0, 4))
def test_tangent_norm_and_exp_distance(seed, model_idx):
    M = G.standard_models()[model_idx]
    rng = np.random.default_rng(seed)
    x = G.random_point(M, rng)
    v = G.random_tangent(M, x, rng)
    assert float(G.induced_dot(M, v, v)) == pytest.approx(1.0, rel=1e-10)
    r = 0.3 + 0.5 * rng.random()
    y = G.exp_map(M, x, v, r)
    assert float(G.distance(M, x, y)) == pytest.approx(r, rel=1e-9)


def test_distance_broadcasts(models, rng):
    for M in models:
        xs = np.stack([np.asarray(G.random_point(M, rng), float) for _ in range(6)])
        y = np.asarray(G.random_point(M, rng), float)
        ds = G.distance(M, xs, y)
        assert ds.shape == (6,)
        for i in range(6):
            assert ds[i] == pytest.approx(float(G.distance(M, xs[i], y)), rel=1e-12)
