import numpy as np
import pytest

from conftest import random_spline
from spatialplan.ph_spline import PathPoint, assemble
from spatialplan.spatial_dynamics import (
    SingularityError,
    SpatialInput,
    SpatialState,
    reconstruct_position,
    rhs_batch,
    rk4_batch,
    rk4_step,
    roundtrip_check,
    spatial_rhs,
)


def straight_spline(m=1):
    from spatialplan.ph_spline import n_free_coeffs

    z = np.zeros(n_free_coeffs(m))
    z[0:20:4] = 1.0
    for k in range(1, m):
        z[20 + 4 * (k - 1)] = 1.0
    return assemble(z, np.zeros(3))


def linear_quaternion_spline():
    # section generator (1-xi) + xi*k: frame twists about the z axis
    z = np.zeros(20)
    z[0::4] = [1.0, 0.75, 0.5, 0.25, 0.0]
    z[3::4] = [0.0, 0.25, 0.5, 0.75, 1.0]
    return assemble(z, np.zeros(3))


class AnalyticHelix:
    """Arc-length helix with its Frenet frame; an independent fixture."""

    def __init__(self, radius=1.0, pitch=0.5):
        self.a = radius
        self.b = pitch
        self.c = np.hypot(radius, pitch)

    def path_point(self, xi, extrapolate=False):
        a, b, c = self.a, self.b, self.c
        t = xi / c
        position = np.array([a * np.cos(t), a * np.sin(t), b * t])
        tangent = np.array([-a * np.sin(t), a * np.cos(t), b]) / c
        normal = np.array([-np.cos(t), -np.sin(t), 0.0])
        binormal = np.cross(tangent, normal)
        frame = np.stack([tangent, normal, binormal], axis=-1)
        kappa = a / c**2
        tau = b / c**2
        return PathPoint(position=position, sigma=1.0, frame=frame,
                         chi=np.array([tau, 0.0, kappa]))


def test_rhs_straight_line():
    s = straight_spline()
    state = SpatialState(0.3, np.array([0.1, -0.2]), np.array([1.0, 0.0, 0.0]))
    xdot = spatial_rhs(state, SpatialInput(np.zeros(3)), s)
    assert xdot[:3] == pytest.approx([1.0, 0.0, 0.0])


def test_rhs_twisted_denominator():
    s = linear_quaternion_spline()
    state = SpatialState(0.0, np.array([0.1, 0.0]), np.array([1.0, 0.0, 0.0]))
    xdot = spatial_rhs(state, SpatialInput(np.zeros(3)), s)
    # sigma = 1, chi3 = 2 at the start, so progress rate is 1 / (1 - 0.2)
    assert xdot[0] == pytest.approx(1.25)


def test_rhs_matches_frenet_form():
    helix = AnalyticHelix()
    rng = np.random.default_rng(7)
    for _ in range(20):
        xi = rng.uniform(0, 5)
        w = rng.uniform(-0.3, 0.3, 2)
        v = rng.standard_normal(3)
        state = SpatialState(xi, w, v)
        got = spatial_rhs(state, SpatialInput(np.zeros(3)), helix)
        pp = helix.path_point(xi)
        kappa, tau = pp.chi[2], pp.chi[0]
        xi_dot = (pp.frame[:, 0] @ v) / (1.0 - kappa * w[0])
        expected = np.array(
            [
                xi_dot,
                pp.frame[:, 1] @ v + xi_dot * tau * w[1],
                pp.frame[:, 2] @ v - xi_dot * tau * w[0],
            ]
        )
        assert got[:3] == pytest.approx(expected, abs=1e-10)


def test_singularity_guard():
    s = linear_quaternion_spline()
    # chi3 = 2 at xi = 0: offset w1 = 0.5 puts the denominator at zero
    state = SpatialState(0.0, np.array([0.5, 0.0]), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(SingularityError):
        spatial_rhs(state, SpatialInput(np.zeros(3)), s)


def test_reconstruct_position(rng):
    s = random_spline(rng, m=2)
    st = SpatialState(0.7, np.zeros(2), np.zeros(3))
    assert reconstruct_position(st, s) == pytest.approx(s.position_at(0.7))

    line = straight_spline()
    st = SpatialState(0.2, np.array([0.3, 0.4]), np.zeros(3))
    assert reconstruct_position(st, line) == pytest.approx([0.2, 0.3, 0.4])

    for _ in range(20):
        st = SpatialState(rng.uniform(0, 2), rng.standard_normal(2), np.zeros(3))
        p = reconstruct_position(st, s)
        gamma = s.position_at(st.xi)
        assert np.linalg.norm(p - gamma) == pytest.approx(np.linalg.norm(st.w), abs=1e-12)


def test_rk4_fixed_point_and_translation():
    s = straight_spline()
    st = SpatialState(0.4, np.zeros(2), np.zeros(3))
    nxt = rk4_step(st, SpatialInput(np.zeros(3)), s, 0.05)
    assert nxt.as_vector() == pytest.approx(st.as_vector())

    st = SpatialState(0.0, np.zeros(2), np.array([1.0, 0.0, 0.0]))
    nxt = rk4_step(st, SpatialInput(np.zeros(3)), s, 0.05)
    assert nxt.xi == pytest.approx(0.05)


def test_rk4_order_of_convergence(rng):
    s = random_spline(rng, m=2, wobble=0.2)
    x0 = SpatialState(0.3, np.array([0.05, -0.04]), 0.5 * rng.standard_normal(3))
    inp = SpatialInput(np.array([0.2, -0.1, 0.05]))

    def propagate(dt, n):
        st = x0
        for _ in range(n):
            st = rk4_step(st, inp, s, dt)
        return st.as_vector()

    ref = propagate(0.4 / 256, 256)
    err_h = np.linalg.norm(propagate(0.4 / 8, 8) - ref)
    err_h2 = np.linalg.norm(propagate(0.4 / 16, 16) - ref)
    ratio = err_h / err_h2
    assert 16 * 0.7 < ratio < 16 * 1.3


def test_roundtrip_zero_velocity(rng):
    s = random_spline(rng, m=2)
    err = roundtrip_check(s, 0.5, np.array([0.05, 0.0]), lambda t: np.zeros(3), 0.5)
    assert err == 0.0


def test_roundtrip_straight_constant_velocity():
    s = straight_spline()
    v = np.array([0.7, 0.1, -0.05])
    err = roundtrip_check(s, 0.1, np.array([0.02, -0.03]), lambda t: v, 0.8)
    assert err < 1e-12


def test_roundtrip_curved_random(rng):
    # master chart-consistency property at module scale
    s = random_spline(rng, m=2, wobble=0.25)
    amp = 0.4 * s.section_lengths.min()
    coeff = rng.standard_normal((3, 3)) * 0.3

    def v_fn(t):
        base = np.array([amp, 0.15 * amp * np.sin(2.1 * t), 0.15 * amp * np.cos(1.3 * t)])
        wiggle = coeff @ np.array([np.sin(t), np.cos(2 * t), 1.0]) * 0.05 * amp
        pp = s.path_point(min(max(0.2 + 0.3 * t, 0.0), 2.0))
        return pp.frame @ (base + wiggle) / max(pp.sigma, 0.3)

    err = roundtrip_check(s, 0.2, np.array([0.02, -0.01]), v_fn, 2.0, dt=1e-3)
    assert err < 1e-6


def test_batch_rhs_matches_scalar(rng):
    s = random_spline(rng, m=3, wobble=0.25)
    batch = s.batch()
    X = np.column_stack(
        [
            rng.uniform(0.1, 2.9, 15),
            rng.uniform(-0.05, 0.05, (15, 2)),
            rng.standard_normal((15, 3)),
        ]
    )
    U = rng.standard_normal((15, 3))
    Xdot, _, _ = rhs_batch(batch, X, U, need_jac=False)
    for i in range(15):
        st = SpatialState.from_vector(X[i])
        ref = spatial_rhs(st, SpatialInput(U[i]), s)
        assert Xdot[i] == pytest.approx(ref, abs=1e-12)


def test_batch_jacobians_match_finite_differences(rng):
    s = random_spline(rng, m=2, wobble=0.25)
    batch = s.batch()
    X = np.column_stack(
        [
            rng.uniform(0.1, 1.9, 8),
            rng.uniform(-0.05, 0.05, (8, 2)),
            rng.standard_normal((8, 3)),
        ]
    )
    U = rng.standard_normal((8, 3))
    _, A, Bm = rhs_batch(batch, X, U)
    h = 1e-6
    for col in range(6):
        dX = np.zeros_like(X)
        dX[:, col] = h
        up, _, _ = rhs_batch(batch, X + dX, U, need_jac=False)
        dn, _, _ = rhs_batch(batch, X - dX, U, need_jac=False)
        assert A[:, :, col] == pytest.approx((up - dn) / (2 * h), abs=2e-5)
    for col in range(3):
        dU = np.zeros_like(U)
        dU[:, col] = h
        up, _, _ = rhs_batch(batch, X, U + dU, need_jac=False)
        dn, _, _ = rhs_batch(batch, X, U - dU, need_jac=False)
        assert Bm[:, :, col] == pytest.approx((up - dn) / (2 * h), abs=1e-7)


def test_batch_rk4_matches_scalar_and_fd(rng):
    s = random_spline(rng, m=2, wobble=0.2)
    batch = s.batch()
    X = np.column_stack(
        [
            rng.uniform(0.1, 1.9, 6),
            rng.uniform(-0.05, 0.05, (6, 2)),
            0.5 * rng.standard_normal((6, 3)),
        ]
    )
    U = 0.3 * rng.standard_normal((6, 3))
    dt = 0.05
    Xn, Fx, Fu = rk4_batch(batch, X, U, dt)
    for i in range(6):
        ref = rk4_step(SpatialState.from_vector(X[i]), SpatialInput(U[i]), s, dt)
        assert Xn[i] == pytest.approx(ref.as_vector(), abs=1e-12)
    h = 1e-6
    for col in range(6):
        dX = np.zeros_like(X)
        dX[:, col] = h
        up, _, _ = rk4_batch(batch, X + dX, U, dt, need_jac=False)
        dn, _, _ = rk4_batch(batch, X - dX, U, dt, need_jac=False)
        assert Fx[:, :, col] == pytest.approx((up - dn) / (2 * h), abs=2e-6)
    for col in range(3):
        dU = np.zeros_like(U)
        dU[:, col] = h
        up, _, _ = rk4_batch(batch, X, U + dU, dt, need_jac=False)
        dn, _, _ = rk4_batch(batch, X, U - dU, dt, need_jac=False)
        assert Fu[:, :, col] == pytest.approx((up - dn) / (2 * h), abs=2e-6)
