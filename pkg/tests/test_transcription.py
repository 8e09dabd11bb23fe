import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from berthplan import dynamics as dyn
from berthplan import geometry as geo
from berthplan import transcription as tr


def make_problem(ship, harbor, footprint, x_init, x_fin, n_segments=20, wind=None):
    wind = wind or dyn.WindCondition.calm()
    return tr.build_nlp(ship, wind, harbor, footprint, x_init,
                        tr.DockingTarget(x_fin), tr.ControlLimits(), n_segments)


def spiral_blocks():
    """Analytic 6-state linear ODE: three damped-rotation blocks."""
    params = [(0.05, 0.9), (0.02, 0.4), (0.08, 1.3)]

    def solution(t, x0):
        out = np.empty(6)
        for i, (a, b) in enumerate(params):
            x, y = x0[2 * i], x0[2 * i + 1]
            decay = math.exp(-a * t)
            out[2 * i] = decay * (x * math.cos(b * t) + y * math.sin(b * t))
            out[2 * i + 1] = decay * (-x * math.sin(b * t) + y * math.cos(b * t))
        return out

    A = np.zeros((6, 6))
    for i, (a, b) in enumerate(params):
        A[2 * i: 2 * i + 2, 2 * i: 2 * i + 2] = [[-a, b], [-b, -a]]
    return A, solution


class TestGrid:
    def test_point_count(self):
        assert tr.CollocationGrid(20).n_points == 41
        assert tr.CollocationGrid(1).n_points == 3

    def test_times_spacing(self):
        grid = tr.CollocationGrid(4)
        times = grid.times(8.0)
        assert len(times) == 9
        assert np.allclose(np.diff(times), 1.0)  # half a segment

    def test_rejects_empty_grid(self):
        with pytest.raises(tr.TranscriptionError):
            tr.CollocationGrid(0)


class TestHermitePieces:
    def test_zero_slope_midpoint(self):
        x_a, x_b = np.array([1.0, 2.0]), np.array([3.0, 6.0])
        zero = np.zeros(2)
        assert np.allclose(tr.hermite_state(x_a, zero, x_b, zero, 2.0), [2.0, 4.0])

    def test_linear_trajectory(self):
        c = np.array([0.7, -0.3])
        x_a = np.array([1.0, 1.0])
        hs = 2.0
        x_b = x_a + hs * c
        assert np.allclose(tr.hermite_state(x_a, c, x_b, c, hs), x_a + 0.5 * hs * c)

    def test_cubic_reproduction(self):
        # x(t) = t^3 on [1, 3]: the cubic interpolant is exact at mid-segment
        hs = 2.0
        t_a, t_b, t_m = 1.0, 3.0, 2.0
        mid = tr.hermite_state(t_a**3, 3 * t_a**2, t_b**3, 3 * t_b**2, hs)
        assert mid == pytest.approx(t_m**3, abs=1e-12)

    def test_constant_slope_is_zero(self):
        x = np.array([4.0])
        assert np.allclose(tr.hermite_slope(x, np.zeros(1), x, np.zeros(1), 1.5), 0.0)

    def test_quadratic_slope_exact(self):
        # x(t) = t^2 on [2, 5]: slope at midpoint is 2 * 3.5
        hs = 3.0
        slope = tr.hermite_slope(4.0, 4.0, 25.0, 10.0, hs)
        assert slope == pytest.approx(7.0, abs=1e-12)

    def test_slope_constraint_implies_simpson_rule(self):
        # defining the mid dynamics by the interpolant slope makes the segment
        # integral close exactly under Simpson quadrature
        rng = np.random.default_rng(9)
        for _ in range(50):
            x_a, x_b, f_a, f_b = rng.normal(size=(4, 6))
            hs = float(rng.uniform(0.1, 10.0))
            f_mid = tr.hermite_slope(x_a, f_a, x_b, f_b, hs)
            closure = x_b - x_a - (hs / 6.0) * (f_a + 4.0 * f_mid + f_b)
            assert np.max(np.abs(closure)) < 1e-10


class TestPackUnpack:
    def test_round_trip(self):
        grid = tr.CollocationGrid(3)
        rng = np.random.default_rng(0)
        z = rng.normal(size=grid.n_variables)
        tf, states, delta, n = tr.unpack(z, grid)
        assert np.array_equal(tr.pack(tf, states, np.column_stack([delta, n])), z)

    def test_layout_indices(self):
        grid = tr.CollocationGrid(2)
        z = np.zeros(grid.n_variables)
        z[0] = 77.0          # tf
        z[1 + 4] = 0.5       # psi of the first knot: 1 + 6*0 + 4
        tf, states, _, _ = tr.unpack(z, grid)
        assert tf == 77.0
        assert states[0, 4] == 0.5

    def test_length_mismatch(self):
        with pytest.raises(tr.TranscriptionError, match="decision vector"):
            tr.unpack(np.zeros(10), tr.CollocationGrid(2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=50), st.integers(min_value=0, max_value=2**32 - 1))
    def test_round_trip_fuzzed(self, n_segments, seed):
        grid = tr.CollocationGrid(n_segments)
        z = np.random.default_rng(seed).normal(size=grid.n_variables)
        tf, states, delta, n = tr.unpack(z, grid)
        assert np.array_equal(tr.pack(tf, states, np.column_stack([delta, n])), z)


class TestBuildNlp:
    def test_reference_problem_sizes(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference)
        assert nlp.n_variables == 329
        assert nlp.n_equalities == 463
        res = nlp.residuals(cold_vector(nlp))
        assert res.shape == (463,)
        assert res[nlp.sl_initial].shape == (6,)
        assert res[nlp.sl_terminal].shape == (6,)
        assert res[nlp.sl_terminal_simpson].shape == (6,)
        assert res[nlp.sl_interpolation].shape == (120,)
        assert res[nlp.sl_quadrature].shape == (120,)
        assert res[nlp.sl_collision].shape == (205,)

    def test_small_problem_sizes(self, ship, harbor, x_init_reference, x_final_reference):
        triangle = geo.ShipFootprint(np.array([[1.5, 0.0], [-1.5, 0.24], [-1.5, -0.24]]))
        nlp = tr.build_nlp(ship, dyn.WindCondition.calm(), harbor, triangle,
                           x_init_reference, tr.DockingTarget(x_final_reference),
                           tr.ControlLimits(), 1)
        assert nlp.n_variables == 25
        assert nlp.n_equalities == 39

    def test_bounds_layout(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference, 2)
        nc = nlp.grid.n_points
        assert nlp.lower_bounds[0] == tr.TF_BOUNDS[0]
        assert nlp.upper_bounds[0] == tr.TF_BOUNDS[1]
        assert np.all(nlp.lower_bounds[1:1 + 6 * nc] == -np.inf)
        assert np.all(nlp.upper_bounds[1 + 6 * nc:1 + 7 * nc] == 25.0)
        assert np.all(nlp.lower_bounds[1 + 7 * nc:] == -15.0)

    def test_limit_validation(self):
        with pytest.raises(tr.TranscriptionError):
            tr.ControlLimits(delta_max=36.0)
        with pytest.raises(tr.TranscriptionError):
            tr.ControlLimits(n_max=0.0)

    def test_rejects_bad_x_init(self, ship, harbor, footprint, x_final_reference):
        with pytest.raises(tr.TranscriptionError):
            make_problem(ship, harbor, footprint, np.array([1.0, np.nan, 0, 0, 0, 0]),
                         x_final_reference)

    def test_residuals_deterministic(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference, 5)
        rng = np.random.default_rng(4)
        z = cold_vector(nlp) + 0.01 * rng.normal(size=nlp.n_variables)
        first = nlp.residuals(z)
        second = nlp.residuals(z)
        assert np.array_equal(first, second)


class TestDefectOrder:
    def test_defects_vanish_at_fourth_order(self):
        # exact analytic samples of a linear ODE: defects shrink ~16x per halving
        A, solution = spiral_blocks()
        x0 = np.array([1.0, -0.5, 0.8, 0.3, -1.1, 0.6])
        tf = 4.0
        maxima = []
        for n_seg in (4, 8, 16):
            grid = tr.CollocationGrid(n_seg)
            times = grid.times(tf)
            states = np.array([solution(t, x0) for t in times])
            rates = states @ A.T
            interp, quad = tr.segment_defects(states, rates, grid.segment_length(tf))
            maxima.append(max(np.max(np.abs(interp)), np.max(np.abs(quad))))
        assert maxima[0] / maxima[1] > 12.0
        assert maxima[1] / maxima[2] > 12.0

    def test_solved_knot_error_is_fourth_order(self):
        # Newton/linear solve of the collocation system for the linear ODE,
        # then compare knot states with the analytic solution
        A, solution = spiral_blocks()
        x0 = np.array([1.0, -0.5, 0.8, 0.3, -1.1, 0.6])
        tf = 4.0
        errors = [collocation_error(A, solution, x0, tf, n_seg) for n_seg in (4, 8)]
        assert errors[0] / errors[1] >= 12.0


class TestObjective:
    def test_zero_when_on_target_everywhere(self, ship, harbor, footprint, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_final_reference, x_final_reference, 4)
        states = np.tile(x_final_reference, (nlp.grid.n_points, 1))
        z = tr.pack(100.0, states, np.zeros((nlp.grid.n_points, 2)))
        assert nlp.objective(z) == 0.0

    def test_zero_when_terminal_on_target(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference, 4)
        nc = nlp.grid.n_points
        states = np.linspace(x_init_reference, x_final_reference, nc)
        z = tr.pack(100.0, states, np.zeros((nc, 2)))
        assert nlp.objective(z) == 0.0

    def test_constant_deviation_value(self, ship, harbor, footprint, x_final_reference):
        # one state off by c everywhere: terminal c^2 times integral c^2*tf
        nlp = make_problem(ship, harbor, footprint, x_final_reference, x_final_reference, 5)
        nc = nlp.grid.n_points
        c, tf = 0.3, 120.0
        states = np.tile(x_final_reference, (nc, 1))
        states[:, 2] += c
        z = tr.pack(tf, states, np.zeros((nc, 2)))
        assert nlp.objective(z) == pytest.approx(c**4 * tf, rel=1e-12)

    def test_shift_invariance(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp_a = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference, 3)
        shift = np.array([2.0, 0.1, -1.0, 0.05, 0.4, -0.02])
        nlp_b = make_problem(ship, harbor, footprint, x_init_reference,
                             x_final_reference + shift, 3)
        nc = nlp_a.grid.n_points
        rng = np.random.default_rng(8)
        states = x_final_reference + rng.normal(size=(nc, 6))
        z_a = tr.pack(90.0, states, np.zeros((nc, 2)))
        z_b = tr.pack(90.0, states + shift, np.zeros((nc, 2)))
        assert nlp_a.objective(z_a) == pytest.approx(nlp_b.objective(z_b), rel=1e-12)

    def test_gradient_matches_finite_differences(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference, 2)
        rng = np.random.default_rng(12)
        z = cold_vector(nlp) + 0.05 * rng.normal(size=nlp.n_variables)
        grad = nlp.objective_gradient(z)
        for idx in rng.choice(nlp.n_variables, size=12, replace=False):
            h = 1e-6 * max(1.0, abs(z[idx]))
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            fd = (nlp.objective(zp) - nlp.objective(zm)) / (2 * h)
            assert grad[idx] == pytest.approx(fd, rel=2e-5, abs=1e-7)


class TestRestoration:
    def test_exterior_points_pulled_inside(self, ship, harbor, footprint, x_init_reference, x_final_reference):
        nlp = make_problem(ship, harbor, footprint, x_init_reference, x_final_reference, 4)
        nc = nlp.grid.n_points
        states = np.linspace(x_init_reference, x_final_reference, nc)
        states[3, 0] = 40.0   # push one pose far east of the pond
        states[3, 2] = 20.0
        z = tr.pack(160.0, states, np.zeros((nc, 2)))
        assert np.max(np.abs(nlp.residuals(z)[nlp.sl_collision])) > 1.0
        restored = nlp.restoration(z)
        assert np.allclose(nlp.residuals(restored)[nlp.sl_collision], 0.0, atol=1e-9)
        # only positions move: controls and tf untouched
        tf_r, states_r, delta_r, n_r = tr.unpack(restored, nlp.grid)
        assert tf_r == 160.0
        assert np.allclose(states_r[:, (1, 3, 4, 5)], states[:, (1, 3, 4, 5)])


def cold_vector(nlp: tr.NlpProblem) -> np.ndarray:
    """Straight-line guess between the problem's boundary states."""
    nc = nlp.grid.n_points
    states = np.linspace(nlp.x_init, nlp.target.x_fin, nc)
    controls = np.column_stack([np.full(nc, 12.5), np.full(nc, 7.5)])
    return tr.pack(160.0, states, controls)


def collocation_error(A, solution, x0, tf, n_segments):
    """Solve the (linear) collocation system exactly; max knot-state error."""
    grid = tr.CollocationGrid(n_segments)
    nc = grid.n_points
    hs = grid.segment_length(tf)
    n_unknown = 6 * (nc - 1)

    def defect_vector(free):
        states = np.vstack([x0, free.reshape(nc - 1, 6)])
        rates = states @ A.T
        interp, quad = tr.segment_defects(states, rates, hs)
        return np.concatenate([interp.ravel(), quad.ravel()])

    base = defect_vector(np.zeros(n_unknown))
    columns = np.empty((n_unknown, n_unknown))
    for j in range(n_unknown):
        e = np.zeros(n_unknown)
        e[j] = 1.0
        columns[:, j] = defect_vector(e) - base
    free = np.linalg.solve(columns, -base)
    states = np.vstack([x0, free.reshape(nc - 1, 6)])
    knots = states[::2]
    exact = np.array([solution(t, x0) for t in grid.times(tf)[::2]])
    return float(np.max(np.abs(knots - exact)))
