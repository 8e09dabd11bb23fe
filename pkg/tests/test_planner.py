import math

import numpy as np
import pytest

from berthplan import cmaes, data_file, planner, sqp
from berthplan import dynamics as dyn
from berthplan import geometry as geo
from berthplan import transcription as tr

# printed norm column of the bundled evaluation table
TABLE_NORMS = {
    "M1": 0.00, "M2": 1.03, "M3": 1.03, "M4": 2.06, "A1": 0.32, "A2": 0.53,
    "A3": 0.79, "A4": 0.92, "A5": 0.58, "A6": 0.41, "A7": 1.25, "A8": 1.51,
    "A9": 2.24, "A10": 2.31,
}


@pytest.fixture(scope="module")
def scenario_table():
    return planner.load_scenarios(data_file("scenarios.cfg"))


class TestScenarios:
    def test_reference_states(self, scenario_table, x_init_reference, x_final_reference):
        x_init, x_final, _ = scenario_table
        assert np.allclose(x_init, x_init_reference)
        assert np.allclose(x_final, x_final_reference)

    def test_all_cases_present(self, scenario_table):
        _, _, scenarios = scenario_table
        assert [s.name for s in scenarios] == list(TABLE_NORMS)

    def test_norms_match_table(self, scenario_table):
        _, _, scenarios = scenario_table
        for scenario in scenarios:
            assert scenario.norm_l == pytest.approx(TABLE_NORMS[scenario.name], abs=0.005)

    def test_multiplicative_initial_state(self, scenario_table):
        x_init, _, scenarios = scenario_table
        m4 = next(s for s in scenarios if s.name == "M4")
        x0 = m4.initial_state(x_init)
        assert x0[1] == pytest.approx(0.36)     # tripled surge speed
        assert x0[4] == pytest.approx(math.pi)  # 1.5 * 2pi/3
        a10 = next(s for s in scenarios if s.name == "A10")
        assert a10.initial_state(x_init)[4] == pytest.approx(22.0 * math.pi / 15.0)

    def test_norm_requires_six_entries(self):
        with pytest.raises(planner.PlannerError):
            planner.norm_l([1.0, 1.0])


class TestSpeedup:
    def test_printed_values(self):
        # printed table values are rounded percentages; match within 1
        assert planner.speedup(31.877, 0.478) == pytest.approx(98.0, abs=1.0)
        assert planner.speedup(19.903, 14.313) == pytest.approx(28.0, abs=1.0)

    def test_equal_times(self):
        assert planner.speedup(5.0, 5.0) == 0.0

    def test_rejects_nonpositive_baseline(self):
        with pytest.raises(planner.PlannerError):
            planner.speedup(0.0, 1.0)


class TestColdStart:
    def test_endpoints_and_controls(self, x_init_reference, x_final_reference):
        grid = tr.CollocationGrid(20)
        z = planner.cold_start_linear(x_init_reference, tr.DockingTarget(x_final_reference),
                                      grid, tr.ControlLimits())
        tf, states, delta, n = tr.unpack(z, grid)
        assert tf == 160.0
        assert np.allclose(states[0], x_init_reference)
        assert np.allclose(states[-1], x_final_reference)
        assert np.all(delta == 12.5)
        assert np.all(n == 7.5)
        mid = (grid.n_points - 1) // 2
        assert np.allclose(states[mid], 0.5 * (x_init_reference + x_final_reference))


@pytest.fixture(scope="module")
def simulated_offline(ship, calm, x_init_reference):
    """Dynamics-consistent offline solution from a fixed control schedule."""
    rng = np.random.default_rng(3)
    n_segments = 20
    controls = np.column_stack([rng.uniform(-10, 10, n_segments),
                                rng.uniform(2, 10, n_segments)])
    tf = 160.0
    hs = tf / n_segments

    def signal(t):
        seg = min(int(t / hs), n_segments - 1)
        return controls[seg, 0], controls[seg, 1]

    times, states = dyn.integrate_rk4(dyn.ShipState.from_array(x_init_reference),
                                      signal, calm, ship, (0.0, tf), 0.25)
    return planner.OfflineSolution(
        tf_off=tf, segment_controls=controls, times=times, states=states,
        x_init=x_init_reference.copy(), objective=1.0, collision_free=True)


class TestWarmStart:
    def test_resampling_preserves_tf_and_controls(self, simulated_offline):
        grid = tr.CollocationGrid(20)
        z = planner.warm_start_from_offline(simulated_offline, grid)
        tf, states, delta, n = tr.unpack(z, grid)
        assert tf == simulated_offline.tf_off
        # every discretization point sits in a known segment: knots on the
        # breakpoints take the starting segment, collocation points the middle
        schedule = simulated_offline.segment_controls
        for k, t in enumerate(grid.times(tf)):
            seg = min(int(t / (tf / 20)), 19)
            assert delta[k] == schedule[seg, 0]
            assert n[k] == schedule[seg, 1]
        assert np.allclose(states[0], simulated_offline.x_init)

    def test_resampled_defects_are_small(self, simulated_offline, ship, harbor,
                                         footprint, calm, x_final_reference):
        nlp = tr.build_nlp(ship, calm, harbor, footprint, simulated_offline.x_init,
                           tr.DockingTarget(x_final_reference), tr.ControlLimits(), 20)
        z = planner.warm_start_from_offline(simulated_offline, nlp.grid)
        res = nlp.residuals(z)
        interp = np.abs(res[nlp.sl_interpolation])
        quad = np.abs(res[nlp.sl_quadrature])
        assert np.max(interp) < 1e-2
        assert np.max(interp) > 0.0
        assert np.max(quad) < 5e-2

    def test_select_minimizes_norm(self, simulated_offline):
        near = simulated_offline
        far = planner.OfflineSolution(
            tf_off=100.0, segment_controls=near.segment_controls,
            times=near.times, states=near.states,
            x_init=near.x_init * 3.0, objective=2.0, collision_free=True)
        request = near.x_init * 1.05
        chosen = planner.select_warm_start([far, near], request)
        assert chosen is near

    def test_round_trip_file(self, simulated_offline, tmp_path):
        path = tmp_path / "offline.cfg"
        planner.save_offline_solution(path, simulated_offline)
        loaded = planner.load_offline_solution(path)
        assert loaded.tf_off == simulated_offline.tf_off
        assert np.array_equal(loaded.segment_controls, simulated_offline.segment_controls)
        assert np.array_equal(loaded.states, simulated_offline.states)
        # identical bytes on rewrite: the artifact is reproducible
        second = tmp_path / "again.cfg"
        planner.save_offline_solution(second, loaded)
        assert path.read_bytes() == second.read_bytes()


class TestOfflineSearch:
    def test_single_segment_matches_grid_oracle(self, ship, calm, x_init_reference,
                                                x_final_reference):
        # one-segment shooting (3 unknowns) checked against a dense grid search
        big_box = geo.HarborPolygon(np.array([[-200.0, -200.0], [200.0, -200.0],
                                              [200.0, 200.0], [-200.0, 200.0]]))
        fp = geo.default_footprint(3.0, 0.489)
        target = tr.DockingTarget(x_final_reference)
        # one segment spans the whole horizon, so the per-segment step count
        # must carry the full integration resolution
        fitness = planner._ShootingFitness(
            x_init_reference, x_final_reference, ship, calm, big_box, fp,
            n_segments=1, steps_per_segment=160, collision_samples_per_segment=2)
        tf_grid = np.linspace(*planner.OFFLINE_TF_BOUNDS, 35)
        d_grid = np.linspace(-25.0, 25.0, 35)
        n_grid = np.linspace(-15.0, 15.0, 35)
        mesh = np.array(np.meshgrid(tf_grid, d_grid, n_grid)).reshape(3, -1).T
        oracle_best = float(np.min(fitness(mesh)))

        solution = planner.solve_offline(
            x_init_reference, target, ship, big_box, fp,
            cmaes.CmaesSettings(max_evaluations=4000, sigma0=0.3, seed=0, restarts=1),
            n_segments=1, steps_per_segment=160)
        assert solution.objective <= oracle_best * 1.05

    def test_already_docked_needs_nothing(self, ship, harbor, footprint, x_final_reference):
        target = tr.DockingTarget(x_final_reference)
        solution = planner.solve_offline(
            x_final_reference, target, ship, harbor, footprint,
            cmaes.CmaesSettings(max_evaluations=3000, sigma0=0.3, seed=1),
            n_segments=4)
        assert solution.objective < 1.0
        assert solution.tf_off <= 120.0
        assert np.max(np.abs(solution.segment_controls[:, 1])) < 6.0


class TestPlan:
    def test_start_outside_polygon_is_immediately_infeasible(
            self, ship, harbor, footprint, x_init_reference, x_final_reference):
        scenario = planner.Scenario("bad", np.array([3.0, 1, 1, 1, 1, 1]),
                                    dyn.WindCondition.calm())
        request = planner.PlanRequest(scenario=scenario, guess="cold")
        outcome = planner.plan(request, ship, harbor, footprint, x_init_reference,
                               tr.DockingTarget(x_final_reference))
        assert not outcome.result.feasible
        assert outcome.result.iterations == 0
        assert "outside" in outcome.result.message
        assert outcome.result.max_violation > 1.0

    def test_unknown_guess_kind_rejected(self):
        scenario = planner.Scenario("s", np.ones(6), dyn.WindCondition.calm())
        with pytest.raises(planner.PlannerError):
            planner.PlanRequest(scenario=scenario, guess="psychic")

    def test_warm_solution_guess_shape_checked(self, ship, harbor, footprint,
                                               x_init_reference, x_final_reference):
        scenario = planner.Scenario("s", np.ones(6), dyn.WindCondition.calm())
        request = planner.PlanRequest(scenario=scenario, guess="warm-solution")
        with pytest.raises(planner.PlannerError, match="shape"):
            planner.plan(request, ship, harbor, footprint, x_init_reference,
                         tr.DockingTarget(x_final_reference), warm_solution=np.zeros(5))

    def test_cold_plan_m1_converges(self, ship, harbor, footprint,
                                    x_init_reference, x_final_reference):
        scenario = planner.Scenario("M1", np.ones(6), dyn.WindCondition.calm())
        request = planner.PlanRequest(scenario=scenario, guess="cold")
        outcome = planner.plan(request, ship, harbor, footprint, x_init_reference,
                               tr.DockingTarget(x_final_reference))
        assert outcome.result.feasible
        assert outcome.result.max_violation <= 1e-6
        # wind freezing: the built problem holds exactly one wind condition
        assert outcome.nlp.wind == scenario.wind