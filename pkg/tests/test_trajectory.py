"""Trajectory construction, evaluation, and gradient-propagation tests.

The oracle here is a dense brute-force assembly of every constraint row
(including all structurally zero entries) solved with generic LU, plus
exact polynomial algebra for energies.  The rest-to-rest literals below
(5/16, -1/8, 3/16, 60) were derived by hand from the boundary conditions.
"""

import math

import numpy as np
import pytest
from scipy.optimize import minimize

from tetherpick.errors import OutOfDomain, SingularSystem
from tetherpick.trajectory import (
    BoundaryState,
    FlatOutput,
    Trajectory,
    basis_row,
    construct,
    jerk_energy,
    jerk_energy_gradient,
    propagate_gradients,
    total_duration,
)


def brow(tau, order, ncoef=6):
    out = np.zeros(ncoef)
    for k in range(order, ncoef):
        out[k] = math.factorial(k) / math.factorial(k - order) * tau ** (k - order)
    return out


def dense_construct(waypoints, total_time, start, goal_pos, goal_vel):
    """Brute-force oracle: stack every constraint row, solve dense."""
    q = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    n = q.shape[0] + 1
    dt = total_time / n
    size = 6 * n
    mat = np.zeros((size, size))
    rhs = np.zeros((size, 3))
    for o, value in enumerate((start.position, start.velocity,
                               start.acceleration, start.jerk)):
        mat[o, 0:6] = brow(0.0, o)
        rhs[o] = value
    row = 4
    for i in range(1, n):
        mat[row, 6 * (i - 1):6 * i] = brow(dt, 0)
        rhs[row] = q[i - 1]
        row += 1
        mat[row, 6 * i:6 * (i + 1)] = brow(0.0, 0)
        rhs[row] = q[i - 1]
        row += 1
        for o in range(1, 5):
            mat[row, 6 * (i - 1):6 * i] = brow(dt, o)
            mat[row, 6 * i:6 * (i + 1)] = -brow(0.0, o)
            row += 1
    mat[row, -6:] = brow(dt, 0)
    rhs[row] = np.asarray(goal_pos, dtype=float)
    row += 1
    mat[row, -6:] = brow(dt, 1)
    rhs[row] = np.asarray(goal_vel, dtype=float)
    coeffs = np.linalg.solve(mat, rhs)
    return coeffs.reshape(n, 6, 3), dt


def random_problem(rng, max_segments=6, min_dt=0.0):
    n_seg = int(rng.integers(1, max_segments + 1))
    total_time = float(rng.uniform(max(0.8, min_dt * n_seg), 4.0))
    start = BoundaryState(position=rng.normal(size=3),
                          velocity=rng.normal(size=3),
                          acceleration=rng.normal(size=3),
                          jerk=rng.normal(size=3))
    waypoints = rng.normal(size=(n_seg - 1, 3))
    goal_pos = rng.normal(size=3)
    goal_vel = rng.normal(size=3)
    return waypoints, total_time, start, goal_pos, goal_vel


def planner_like_problem(rng, max_segments=8):
    """Waypoints jittered around a straight path, like a planner's guess."""
    n_seg = int(rng.integers(1, max_segments + 1))
    total_time = float(rng.uniform(0.5 * n_seg, 4.0 + 0.5 * n_seg))
    start_pos = rng.uniform(-1, 1, size=3)
    goal_pos = start_pos + rng.uniform(-4, 4, size=3)
    start = BoundaryState(position=start_pos,
                          velocity=0.5 * rng.normal(size=3),
                          acceleration=0.5 * rng.normal(size=3),
                          jerk=0.5 * rng.normal(size=3))
    fractions = np.arange(1, n_seg)[:, None] / n_seg
    waypoints = (start_pos + fractions * (goal_pos - start_pos)
                 + 0.3 * rng.normal(size=(n_seg - 1, 3)))
    goal_vel = 0.5 * rng.normal(size=3)
    return waypoints, total_time, start, goal_pos, goal_vel


def rest_to_rest():
    return construct([], 2.0, BoundaryState.at_rest([0.0, 0.0, 0.0]),
                     [1.0, 0.0, 0.0], [0.0, 0.0, 0.0])


class TestConstruct:
    def test_rest_to_rest_coefficients(self):
        traj = rest_to_rest()
        coeffs = traj.coefficients
        np.testing.assert_allclose(coeffs[0, :4, :], 0.0, atol=1e-12)
        assert coeffs[0, 4, 0] == pytest.approx(5.0 / 16.0, rel=1e-12)
        assert coeffs[0, 5, 0] == pytest.approx(-1.0 / 8.0, rel=1e-12)

    def test_rest_to_rest_midpoint(self):
        traj = rest_to_rest()
        mid = traj.evaluate(1.0)
        assert mid[0] == pytest.approx(3.0 / 16.0, rel=1e-12)
        np.testing.assert_allclose(mid[1:], 0.0, atol=1e-14)

    def test_start_state_exact(self):
        rng = np.random.default_rng(42)
        wp, total_time, start, gp, gv = random_problem(rng)
        traj = construct(wp, total_time, start, gp, gv)
        np.testing.assert_allclose(traj.evaluate(0.0, 0), start.position, atol=1e-12)
        np.testing.assert_allclose(traj.evaluate(0.0, 1), start.velocity, atol=1e-12)
        np.testing.assert_allclose(traj.evaluate(0.0, 2), start.acceleration, atol=1e-12)
        np.testing.assert_allclose(traj.evaluate(0.0, 3), start.jerk, atol=1e-12)

    def test_terminal_constraints(self):
        rng = np.random.default_rng(43)
        wp, total_time, start, gp, gv = random_problem(rng)
        traj = construct(wp, total_time, start, gp, gv)
        np.testing.assert_allclose(traj.evaluate(total_time, 0), gp, atol=1e-11)
        np.testing.assert_allclose(traj.evaluate(total_time, 1), gv, atol=1e-11)

    def test_matches_dense_oracle(self):
        # instances shaped like real plans: waypoints jittered around a
        # straight path (white-noise waypoints at sub-second spacing drive
        # coefficients past 1e5, where abs-1e-9 is below the double floor)
        rng = np.random.default_rng(1234)
        for _ in range(20):
            wp, total_time, start, gp, gv = planner_like_problem(rng)
            traj = construct(wp, total_time, start, gp, gv)
            expected, dt = dense_construct(wp, total_time, start, gp, gv)
            assert traj.segment_duration == pytest.approx(dt, rel=1e-15)
            assert np.max(np.abs(traj.coefficients - expected)) < 1e-9

    def test_matches_dense_oracle_short_segments_relative(self):
        rng = np.random.default_rng(4321)
        for _ in range(10):
            wp, total_time, start, gp, gv = random_problem(rng, max_segments=8)
            traj = construct(wp, total_time, start, gp, gv)
            expected, _ = dense_construct(wp, total_time, start, gp, gv)
            scale = max(1.0, float(np.max(np.abs(expected))))
            assert np.max(np.abs(traj.coefficients - expected)) < 1e-9 * scale

    def test_waypoint_interpolation(self):
        rng = np.random.default_rng(77)
        wp, total_time, start, gp, gv = random_problem(rng, max_segments=6)
        traj = construct(wp, total_time, start, gp, gv)
        dt = traj.segment_duration
        for i, q in enumerate(np.asarray(wp).reshape(-1, 3), start=1):
            np.testing.assert_allclose(traj.evaluate(i * dt), q, atol=1e-9)

    def test_joint_continuity_orders_0_to_4(self):
        rng = np.random.default_rng(8)
        wp, total_time, start, gp, gv = random_problem(rng, max_segments=5)
        if len(wp) == 0:
            wp = rng.normal(size=(2, 3))
        traj = construct(wp, total_time, start, gp, gv)
        dt = traj.segment_duration
        for i in range(1, traj.segment_count):
            for order in range(5):
                left = traj.evaluate_segment(i - 1, dt, order)
                right = traj.evaluate_segment(i, 0.0, order)
                assert np.max(np.abs(left - right)) < 1e-10

    def test_linear_in_waypoints_with_zero_boundaries(self):
        rng = np.random.default_rng(55)
        start = BoundaryState.at_rest([0.0, 0.0, 0.0])
        zero3 = [0.0, 0.0, 0.0]
        q1 = rng.normal(size=(3, 3))
        q2 = rng.normal(size=(3, 3))
        alpha, beta = 0.7, -1.3
        t1 = construct(q1, 2.5, start, zero3, zero3)
        t2 = construct(q2, 2.5, start, zero3, zero3)
        t3 = construct(alpha * q1 + beta * q2, 2.5, start, zero3, zero3)
        np.testing.assert_allclose(
            t3.coefficients,
            alpha * t1.coefficients + beta * t2.coefficients, atol=1e-10)

    def test_zero_duration_rejected(self):
        start = BoundaryState.at_rest([0, 0, 0])
        with pytest.raises(SingularSystem):
            construct([], 0.0, start, [1, 0, 0], [0, 0, 0])
        with pytest.raises(SingularSystem):
            construct([], -1.0, start, [1, 0, 0], [0, 0, 0])

    def test_nan_waypoint_rejected(self):
        start = BoundaryState.at_rest([0, 0, 0])
        with pytest.raises(ValueError):
            construct([[np.nan, 0, 0]], 2.0, start, [1, 0, 0], [0, 0, 0])


class TestEvaluate:
    def test_out_of_domain(self):
        traj = rest_to_rest()
        with pytest.raises(OutOfDomain):
            traj.evaluate(-0.5)
        with pytest.raises(OutOfDomain):
            traj.evaluate(2.5)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        wp, total_time, start, gp, gv = random_problem(rng, max_segments=4)
        traj = construct(wp, total_time, start, gp, gv)
        ts = np.linspace(0.0, total_time, 37)
        for order in range(5):
            batch = traj.evaluate_batch(ts, order)
            for j, t in enumerate(ts):
                np.testing.assert_allclose(batch[j], traj.evaluate(t, order),
                                           atol=1e-12)

    def test_order_beyond_degree_is_zero(self):
        traj = rest_to_rest()
        np.testing.assert_allclose(traj.evaluate(1.0, 6), 0.0, atol=1e-15)

    def test_total_duration(self):
        traj = Trajectory(coefficients=np.zeros((4, 6, 3)), segment_duration=0.5)
        assert total_duration(traj) == 2.0
        traj = Trajectory(coefficients=np.zeros((1, 6, 3)), segment_duration=3.0)
        assert total_duration(traj) == 3.0
        built = construct(np.zeros((8, 3)), 2.7, BoundaryState.at_rest([0, 0, 0]),
                          [0, 0, 0], [0, 0, 0])
        assert total_duration(built) == pytest.approx(2.7, abs=1e-12)


class TestJerkEnergy:
    def test_rest_to_rest_energy(self):
        assert jerk_energy(rest_to_rest()) == pytest.approx(60.0, rel=1e-12)

    def test_matches_polynomial_quadrature(self):
        """Exact polynomial integration of the squared third derivative."""
        rng = np.random.default_rng(21)
        wp, total_time, start, gp, gv = random_problem(rng, max_segments=5)
        traj = construct(wp, total_time, start, gp, gv)
        dt = traj.segment_duration
        total = 0.0
        for seg in range(traj.segment_count):
            for ax in range(3):
                c = traj.coefficients[seg, :, ax]
                third = np.polynomial.polynomial.polyder(c, 3)
                sq = np.polynomial.polynomial.polymul(third, third)
                integ = np.polynomial.polynomial.polyint(sq)
                total += np.polynomial.polynomial.polyval(dt, integ)
        assert jerk_energy(traj) == pytest.approx(total, rel=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        wp, total_time, start, gp, gv = random_problem(rng, max_segments=3)
        traj = construct(wp, total_time, start, gp, gv)
        grad_c, ddt_direct = jerk_energy_gradient(traj)
        h = 1e-6
        for _ in range(10):
            seg = rng.integers(traj.segment_count)
            k = rng.integers(6)
            ax = rng.integers(3)
            up = traj.coefficients.copy()
            dn = traj.coefficients.copy()
            up[seg, k, ax] += h
            dn[seg, k, ax] -= h
            fd = (jerk_energy(Trajectory(up, traj.segment_duration))
                  - jerk_energy(Trajectory(dn, traj.segment_duration))) / (2 * h)
            assert grad_c[seg, k, ax] == pytest.approx(fd, rel=1e-5, abs=1e-5)
        fd_dt = (jerk_energy(Trajectory(traj.coefficients, traj.segment_duration + h))
                 - jerk_energy(Trajectory(traj.coefficients, traj.segment_duration - h))) / (2 * h)
        assert ddt_direct == pytest.approx(fd_dt, rel=1e-5)


def build_orthogonal_perturbation(traj, rng, scale=0.3):
    """A perturbation vanishing wherever the construction is constrained.

    Zero position/velocity/acceleration/jerk at t=0, zero value at every
    joint, C2 across joints, zero position/velocity/acceleration at t=T.
    Returns per-segment degree-7 coefficient arrays, shape (N, 8, 3).
    """
    n_seg = traj.segment_count
    dt = traj.segment_duration
    eta = np.zeros((n_seg, 8, 3))

    def hermite(left, right):
        mat = np.zeros((6, 6))
        rhs = np.zeros((6, 3))
        for o in range(3):
            mat[o] = brow(0.0, o)
            mat[3 + o] = brow(dt, o)
            rhs[o] = left[o]
            rhs[3 + o] = right[o]
        return np.linalg.solve(mat, rhs)

    def first_segment(right):
        # degree 7, coefficients 0..3 zero; one free direction
        c7 = scale * rng.normal(size=3)
        mat = np.zeros((3, 3))
        rhs = np.zeros((3, 3))
        for o in range(3):
            for idx, k in enumerate((4, 5, 6)):
                mat[o, idx] = math.factorial(k) / math.factorial(k - o) * dt ** (k - o)
            rhs[o] = right[o] - math.factorial(7) / math.factorial(7 - o) * dt ** (7 - o) * c7
        c456 = np.linalg.solve(mat, rhs)
        out = np.zeros((8, 3))
        out[4:7] = c456
        out[7] = c7
        return out

    zero = np.zeros(3)
    if n_seg == 1:
        eta[0] = first_segment((zero, zero, zero))
        return eta
    w = scale * rng.normal(size=(n_seg - 1, 3))
    x = scale * rng.normal(size=(n_seg - 1, 3))
    eta[0] = first_segment((zero, w[0], x[0]))
    for j in range(1, n_seg - 1):
        eta[j, :6] = hermite((zero, w[j - 1], x[j - 1]), (zero, w[j], x[j]))
    eta[n_seg - 1, :6] = hermite((zero, w[-1], x[-1]), (zero, zero, zero))
    return eta


def poly_jerk_energy(coeff_per_seg, dt):
    """Exact squared-jerk integral for per-segment coefficient arrays."""
    total = 0.0
    for seg in range(coeff_per_seg.shape[0]):
        for ax in range(3):
            third = np.polynomial.polynomial.polyder(coeff_per_seg[seg, :, ax], 3)
            sq = np.polynomial.polynomial.polymul(third, third)
            total += np.polynomial.polynomial.polyval(
                dt, np.polynomial.polynomial.polyint(sq))
    return float(total)


class TestEnergyMinimality:
    def test_constructed_trajectory_minimizes_jerk_energy(self):
        """Any feasible perturbation raises the cost, exactly additively."""
        rng = np.random.default_rng(2024)
        for _ in range(15):
            wp, total_time, start, gp, gv = random_problem(rng, max_segments=5)
            traj = construct(wp, total_time, start, gp, gv)
            base = np.zeros((traj.segment_count, 8, 3))
            base[:, :6, :] = traj.coefficients
            j_base = poly_jerk_energy(base, traj.segment_duration)
            eta = build_orthogonal_perturbation(traj, rng)
            j_eta = poly_jerk_energy(eta, traj.segment_duration)
            j_sum = poly_jerk_energy(base + eta, traj.segment_duration)
            assert j_eta > 0.0
            assert j_sum >= j_base - 1e-10 * max(1.0, j_base)
            # orthogonality: energies add exactly, certifying minimality
            assert j_sum == pytest.approx(j_base + j_eta,
                                          rel=1e-8, abs=1e-8)

    def test_perturbation_is_feasible(self):
        """The competitor class really satisfies all construction constraints."""
        rng = np.random.default_rng(9)
        wp = rng.normal(size=(3, 3))
        start = BoundaryState(position=rng.normal(size=3),
                              velocity=rng.normal(size=3),
                              acceleration=rng.normal(size=3),
                              jerk=rng.normal(size=3))
        traj = construct(wp, 3.0, start, rng.normal(size=3), rng.normal(size=3))
        dt = traj.segment_duration
        eta = build_orthogonal_perturbation(traj, rng)

        def eval_eta(seg, tau, order):
            c = eta[seg, :, :]
            out = np.zeros(3)
            for ax in range(3):
                d = np.polynomial.polynomial.polyder(c[:, ax], order) if order else c[:, ax]
                out[ax] = np.polynomial.polynomial.polyval(tau, d)
            return out

        for o in range(4):
            np.testing.assert_allclose(eval_eta(0, 0.0, o), 0.0, atol=1e-12)
        for seg in range(eta.shape[0] - 1):
            np.testing.assert_allclose(eval_eta(seg, dt, 0), 0.0, atol=1e-9)
            for o in range(3):
                np.testing.assert_allclose(eval_eta(seg, dt, o),
                                           eval_eta(seg + 1, 0.0, o), atol=1e-9)
        for o in range(3):
            np.testing.assert_allclose(eval_eta(eta.shape[0] - 1, dt, o),
                                       0.0, atol=1e-9)


def midpoint_cost_and_gradients(traj):
    """J = |p(T/2)|^2 with its coefficient-space and dT partials."""
    n_seg = traj.segment_count
    dt = traj.segment_duration
    t_mid = 0.5 * n_seg * dt
    seg = min(int(t_mid / dt), n_seg - 1)
    tau = t_mid - seg * dt
    p = traj.evaluate_segment(seg, tau, 0)
    v = traj.evaluate_segment(seg, tau, 1)
    cost = float(p @ p)
    dj_dc = np.zeros_like(traj.coefficients)
    dj_dc[seg] = np.outer(basis_row(tau, 0), 2.0 * p)
    # the sample time t = T/2 itself moves with dT
    dj_ddt = float(2.0 * (p @ v) * (0.5 * n_seg - seg))
    return cost, dj_dc, dj_ddt


class TestPropagateGradients:
    def test_midpoint_cost_waypoint_gradient(self):
        rng = np.random.default_rng(101)
        wp, total_time, start, gp, gv = random_problem(rng, max_segments=5)
        if len(wp) == 0:
            wp = rng.normal(size=(2, 3))
        traj = construct(wp, total_time, start, gp, gv)
        _, dj_dc, dj_ddt = midpoint_cost_and_gradients(traj)
        dj_dq, dj_dtime = propagate_gradients(traj, dj_dc, dj_ddt)
        h = 1e-6
        wp = np.asarray(wp, dtype=float)
        for i in range(wp.shape[0]):
            for ax in range(3):
                up = wp.copy(); up[i, ax] += h
                dn = wp.copy(); dn[i, ax] -= h
                ju = midpoint_cost_and_gradients(construct(up, total_time, start, gp, gv))[0]
                jd = midpoint_cost_and_gradients(construct(dn, total_time, start, gp, gv))[0]
                fd = (ju - jd) / (2 * h)
                assert dj_dq[i, ax] == pytest.approx(fd, rel=1e-4, abs=1e-6)
        ju = midpoint_cost_and_gradients(construct(wp, total_time + h, start, gp, gv))[0]
        jd = midpoint_cost_and_gradients(construct(wp, total_time - h, start, gp, gv))[0]
        assert dj_dtime == pytest.approx((ju - jd) / (2 * h), rel=1e-4, abs=1e-6)

    def test_cost_independent_of_waypoints(self):
        traj = construct(np.zeros((3, 3)), 2.0, BoundaryState.at_rest([0, 0, 0]),
                         [1, 0, 0], [0, 0, 0])
        dj_dq, dj_dtime = propagate_gradients(traj, np.zeros_like(traj.coefficients),
                                              dj_ddt=float(traj.segment_count))
        np.testing.assert_array_equal(dj_dq, 0.0)
        assert dj_dtime == pytest.approx(1.0, rel=1e-12)

    def test_stationary_at_inner_optimum(self):
        """After optimizing waypoints, the propagated gradient vanishes."""
        start = BoundaryState.at_rest([0.0, 0.0, 0.0])
        goal = np.array([2.0, 0.0, 1.0])
        total_time = 3.0
        n_wp = 2

        def cost(flat):
            traj = construct(flat.reshape(n_wp, 3), total_time, start, goal,
                             [0, 0, 0])
            return jerk_energy(traj)

        guess = np.linspace(0, 1, n_wp + 2)[1:-1, None] * goal
        res = minimize(cost, guess.ravel(), method="L-BFGS-B",
                       options={"ftol": 1e-15, "gtol": 1e-12})
        traj = construct(res.x.reshape(n_wp, 3), total_time, start, goal, [0, 0, 0])
        grad_c, ddt = jerk_energy_gradient(traj)
        dj_dq, _ = propagate_gradients(traj, grad_c, ddt)
        # compare against the gradient magnitude away from the optimum
        off = construct(res.x.reshape(n_wp, 3) + 0.5, total_time, start, goal,
                        [0, 0, 0])
        grad_off, ddt_off = jerk_energy_gradient(off)
        dj_dq_off, _ = propagate_gradients(off, grad_off, ddt_off)
        assert np.max(np.abs(dj_dq)) < 1e-3
        assert np.max(np.abs(dj_dq)) < 1e-4 * np.max(np.abs(dj_dq_off))

    def test_fifty_randomized_sampled_costs(self):
        """Sampled quadratic costs: propagated gradients match central FD."""
        rng = np.random.default_rng(650)
        for _ in range(50):
            wp, total_time, start, gp, gv = random_problem(rng, max_segments=6)
            n_seg = len(wp) + 1

            draws = []
            for _ in range(3):
                frac = float(rng.uniform(0.05, 0.95))
                if abs(frac * n_seg - round(frac * n_seg)) < 0.05:
                    frac = min(frac + 0.1 / n_seg, 0.97)
                draws.append((frac, int(rng.integers(0, 4))))

            def cost_terms(traj):
                dt = traj.segment_duration
                n = traj.segment_count
                total = 0.0
                dj_dc = np.zeros_like(traj.coefficients)
                dj_ddt = 0.0
                for frac, order in draws:
                    t = frac * n * dt
                    seg = min(int(t / dt), n - 1)
                    tau = t - seg * dt
                    d = traj.evaluate_segment(seg, tau, order)
                    d_next = traj.evaluate_segment(seg, tau, order + 1)
                    total += float(d @ d)
                    dj_dc[seg] += np.outer(basis_row(tau, order), 2.0 * d)
                    dj_ddt += float(2.0 * (d @ d_next) * (frac * n - seg))
                return total, dj_dc, dj_ddt

            traj = construct(wp, total_time, start, gp, gv)
            _, dj_dc, dj_ddt = cost_terms(traj)
            dj_dq, dj_dtime = propagate_gradients(traj, dj_dc, dj_ddt)

            h = 1e-6
            wp_arr = np.asarray(wp, dtype=float).reshape(-1, 3)
            if wp_arr.shape[0]:
                i = int(rng.integers(wp_arr.shape[0]))
                ax = int(rng.integers(3))
                up = wp_arr.copy(); up[i, ax] += h
                dn = wp_arr.copy(); dn[i, ax] -= h
                fd = (cost_terms(construct(up, total_time, start, gp, gv))[0]
                      - cost_terms(construct(dn, total_time, start, gp, gv))[0]) / (2 * h)
                assert dj_dq[i, ax] == pytest.approx(fd, rel=1e-4, abs=1e-5)
            fd_t = (cost_terms(construct(wp_arr, total_time + h, start, gp, gv))[0]
                    - cost_terms(construct(wp_arr, total_time - h, start, gp, gv))[0]) / (2 * h)
            assert dj_dtime == pytest.approx(fd_t, rel=1e-4, abs=1e-5)


class TestFlatOutput:
    def test_yaw_range(self):
        FlatOutput(position=[0, 0, 0], yaw=math.pi)
        with pytest.raises(ValueError):
            FlatOutput(position=[0, 0, 0], yaw=-math.pi)
        with pytest.raises(ValueError):
            FlatOutput(position=[0, 0, 0], yaw=4.0)
