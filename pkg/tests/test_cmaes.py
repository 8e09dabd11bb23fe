import numpy as np
import pytest

from berthplan import cmaes


def sphere(x):
    return float(np.sum(x * x))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


class TestSettings:
    def test_validation(self):
        with pytest.raises(cmaes.CmaesError):
            cmaes.CmaesSettings(population=3)
        with pytest.raises(cmaes.CmaesError):
            cmaes.CmaesSettings(sigma0=0.0)
        with pytest.raises(cmaes.CmaesError):
            cmaes.CmaesSettings(max_evaluations=0)

    def test_bad_bounds(self):
        with pytest.raises(cmaes.CmaesError):
            cmaes.minimize(sphere, [(0.0, 0.0)])
        with pytest.raises(cmaes.CmaesError):
            cmaes.minimize(sphere, [(0.0, np.inf)])


class TestBenchmarks:
    def test_one_dimensional_quadratic(self):
        res = cmaes.minimize(lambda x: float((x[0] - 3.0) ** 2), [(-10.0, 10.0)],
                             cmaes.CmaesSettings(max_evaluations=4000, seed=1,
                                                 target_objective=1e-14))
        assert res.best[0] == pytest.approx(3.0, abs=1e-6)

    def test_sphere_ten_dimensional(self):
        # median over 10 seeds: < 1e-10 within 5000 evaluations
        finals = []
        for seed in range(10):
            res = cmaes.minimize(sphere, [(-5.0, 5.0)] * 10,
                                 cmaes.CmaesSettings(max_evaluations=5000, seed=seed,
                                                     sigma0=1.0, target_objective=1e-10))
            assert res.evaluations <= 5000
            finals.append(res.best_objective)
        assert np.median(finals) < 1e-10

    def test_rosenbrock_five_dimensional(self):
        # median over 10 seeds: < 1e-6 within 50000 evaluations
        finals = []
        for seed in range(10):
            res = cmaes.minimize(rosenbrock, [(-3.0, 3.0)] * 5,
                                 cmaes.CmaesSettings(max_evaluations=50000, seed=seed,
                                                     restarts=3, target_objective=1e-6))
            assert res.evaluations <= 50000
            finals.append(res.best_objective)
        assert np.median(finals) < 1e-6


class TestBehavior:
    def test_seeded_reproducibility(self):
        settings = cmaes.CmaesSettings(max_evaluations=2000, seed=42)
        a = cmaes.minimize(rosenbrock, [(-2.0, 2.0)] * 4, settings)
        b = cmaes.minimize(rosenbrock, [(-2.0, 2.0)] * 4, settings)
        assert np.array_equal(a.best, b.best)
        assert a.best_objective == b.best_objective
        assert a.history == b.history
        assert a.evaluations == b.evaluations

    def test_history_non_increasing(self):
        res = cmaes.minimize(rosenbrock, [(-2.0, 2.0)] * 4,
                             cmaes.CmaesSettings(max_evaluations=3000, seed=7, restarts=2))
        hist = np.array(res.history)
        assert np.all(np.diff(hist) <= 0.0)
        assert res.best_objective == hist[-1]

    def test_nonfinite_objective_treated_as_worst(self):
        def partial(x):
            if x[0] > 0.5:
                return float("nan")
            return float((x[0] + 1.0) ** 2)

        res = cmaes.minimize(partial, [(-2.0, 2.0)],
                             cmaes.CmaesSettings(max_evaluations=2000, seed=3))
        assert res.best[0] == pytest.approx(-1.0, abs=1e-4)
        assert np.isfinite(res.best_objective)

    def test_optimum_outside_box_lands_on_boundary(self):
        res = cmaes.minimize(lambda x: float((x[0] - 10.0) ** 2), [(-1.0, 1.0)],
                             cmaes.CmaesSettings(max_evaluations=3000, seed=5))
        assert -1.0 <= res.best[0] <= 1.0
        assert res.best[0] == pytest.approx(1.0, abs=1e-5)

    def test_vectorized_matches_scalar(self):
        settings = cmaes.CmaesSettings(max_evaluations=1500, seed=11)
        scalar = cmaes.minimize(sphere, [(-4.0, 4.0)] * 6, settings)
        batch = cmaes.minimize(lambda xs: np.sum(xs * xs, axis=1),
                               [(-4.0, 4.0)] * 6, settings, vectorized=True)
        assert np.array_equal(scalar.best, batch.best)
        assert scalar.history == batch.history

    def test_restarts_engage_on_stall(self):
        # rugged multimodal function with a tight stall patience
        def rastrigin(x):
            return float(10 * x.size + np.sum(x * x - 10 * np.cos(2 * np.pi * x)))

        res = cmaes.minimize(rastrigin, [(-5.12, 5.12)] * 8,
                             cmaes.CmaesSettings(max_evaluations=40000, seed=2,
                                                 restarts=3, stall_generations=25))
        assert res.restarts_used >= 1
