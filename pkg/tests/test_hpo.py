import math

import numpy as np
import pytest

from fingerloc import hpo
from fingerloc.errors import ExperimentFailedError, GridExhausted
from fingerloc.nn import TrainConfig

PHI_AT_ZERO = 1.0 / math.sqrt(2.0 * math.pi)  # standard normal density at 0


def dense_gp_oracle(x, y, query, lengthscale, signal_var, noise_var):
    """Direct matrix-formula GP posterior, no Cholesky."""
    def kernel(a, b):
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return signal_var * np.exp(-d2 / (2.0 * lengthscale ** 2))

    y_mean = np.mean(y)
    k = kernel(x, x) + noise_var * np.eye(len(x))
    k_inv = np.linalg.inv(k)
    k_star = kernel(x, query)
    mean = y_mean + k_star.T @ k_inv @ (y - y_mean)
    var = signal_var - np.einsum("ij,ik,kj->j", k_star, k_inv, k_star)
    return mean, np.maximum(var, 0.0)


class TestGpSurrogate:
    def test_interpolates_single_observation(self):
        g = hpo.gp_fit(np.array([[0.5]]), np.array([2.0]), noise_var=0.0)
        mean, var = g.predict(np.array([[0.5]]))
        assert mean[0] == pytest.approx(2.0)
        assert var[0] == pytest.approx(0.0, abs=1e-9)

    def test_reverts_to_prior_far_away(self):
        x = np.array([[0.1], [0.2]])
        y = np.array([1.0, 3.0])
        g = hpo.gp_fit(x, y, lengthscale=0.05)
        mean, var = g.predict(np.array([[50.0]]))
        assert mean[0] == pytest.approx(g.y_mean)
        assert var[0] == pytest.approx(g.signal_var, rel=1e-9)

    def test_matches_dense_oracle(self):
        rng = np.random.Generator(np.random.PCG64(0))
        for trial in range(20):
            d = int(rng.integers(1, 4))
            n = int(rng.integers(2, 8))
            x = rng.uniform(size=(n, d))
            y = rng.normal(size=n)
            g = hpo.gp_fit(x, y)
            query = rng.uniform(size=(5, d))
            mean, var = g.predict(query)
            o_mean, o_var = dense_gp_oracle(x, y, query, g.lengthscale,
                                            g.signal_var, g.noise_var)
            np.testing.assert_allclose(mean, o_mean, atol=1e-8)
            np.testing.assert_allclose(var, o_var, atol=1e-8)

    def test_posterior_variance_below_prior(self):
        rng = np.random.Generator(np.random.PCG64(1))
        x = rng.uniform(size=(6, 2))
        y = rng.normal(size=6)
        g = hpo.gp_fit(x, y)
        _, var = g.predict(rng.uniform(size=(50, 2)))
        assert np.all(var <= g.signal_var + 1e-9)

    def test_observation_never_increases_variance(self):
        rng = np.random.Generator(np.random.PCG64(2))
        for _ in range(5):
            x = rng.uniform(size=(5, 1))
            y = rng.normal(size=5)
            extra_x = rng.uniform(size=(1, 1))
            extra_y = rng.normal(size=1)
            queries = rng.uniform(size=(20, 1))
            sf, nv = 1.0, 1e-6
            g1 = hpo.gp_fit(x, y, signal_var=sf, noise_var=nv)
            g2 = hpo.gp_fit(np.vstack([x, extra_x]), np.append(y, extra_y),
                            signal_var=sf, noise_var=nv)
            _, v1 = g1.predict(queries)
            _, v2 = g2.predict(queries)
            assert np.all(v2 <= v1 + 1e-9)

    def test_requires_finite_objectives(self):
        with pytest.raises(ValueError):
            hpo.gp_fit(np.array([[0.5]]), np.array([np.nan]))


class TestExpectedImprovement:
    def test_zero_sigma_at_best(self):
        assert hpo.expected_improvement(np.array([1.0]), np.array([0.0]), 1.0)[0] == 0.0

    def test_zero_sigma_below_best(self):
        assert hpo.expected_improvement(np.array([0.5]), np.array([0.0]), 1.0)[0] == pytest.approx(0.5, abs=1e-12)

    def test_phi_zero_case(self):
        # mu = best, sigma = 1: EI = phi(0)
        ei = hpo.expected_improvement(np.array([1.0]), np.array([1.0]), 1.0)[0]
        assert ei == pytest.approx(PHI_AT_ZERO, abs=1e-12)

    def test_nonnegative_everywhere(self):
        rng = np.random.Generator(np.random.PCG64(3))
        ei = hpo.expected_improvement(rng.normal(size=1000), np.abs(rng.normal(size=1000)),
                                      best=0.0)
        assert np.all(ei >= 0.0)

    def test_increases_with_sigma_at_best(self):
        sigmas = np.array([0.1, 0.5, 1.0, 2.0])
        ei = hpo.expected_improvement(np.full(4, 1.0), sigmas, 1.0)
        assert np.all(np.diff(ei) > 0.0)

    def test_zero_at_noiseless_observed_point(self):
        x = np.array([[0.3], [0.7]])
        y = np.array([1.0, 2.0])
        g = hpo.gp_fit(x, y, noise_var=0.0)
        ei = hpo.surrogate_ei(g, x, best=float(y.min()))
        assert np.all(ei <= 1e-8)


class TestSuggest:
    SPACE = hpo.SearchSpace((("learning_rate", 0.001, 0.002), ("beta1", 0.88, 0.93)))

    def test_random_within_bounds(self):
        s = hpo.Suggester("random", self.SPACE, seed=0)
        for _ in range(1000):
            a = s.suggest([])
            assert self.SPACE.contains(a)

    def test_grid_lattice_and_exhaustion(self):
        space = hpo.SearchSpace((("x", 0.0, 1.0),))
        s = hpo.Suggester("grid", space, seed=0, max_trials=3)
        points = [s.suggest([])["x"] for _ in range(3)]
        assert points == [0.0, 0.5, 1.0]
        with pytest.raises(GridExhausted):
            s.suggest([])

    def test_bayesian_avoids_observed_point(self):
        space = hpo.SearchSpace((("x", 0.0, 1.0),))
        s = hpo.Suggester("bayesian", space, seed=0)
        history = [hpo.Trial(i, {"x": v}, o, "ok")
                   for i, (v, o) in enumerate([(0.2, 5.0), (0.5, 1.0), (0.8, 4.0)], 1)]
        a = s.suggest(history)
        assert all(abs(a["x"] - t.assignment["x"]) > 1e-6 for t in history)

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            hpo.Suggester("hyperband", self.SPACE, seed=0)


class TestRunSearch:
    SPACE = hpo.SearchSpace((("learning_rate", 0.001, 0.002),))

    @staticmethod
    def quadratic(a):
        return (a["learning_rate"] - 0.0015) ** 2

    def test_infinite_goal_runs_all_trials(self):
        cfg = hpo.ExperimentConfig(algorithm="random", max_trials=7, goal=1e-18, seed=0)
        result = hpo.run_search(self.quadratic, self.SPACE, cfg)
        assert len(result.trials) == 7

    def test_goal_reached_stops_immediately(self):
        cfg = hpo.ExperimentConfig(algorithm="random", max_trials=15, goal=1.0, seed=0)
        result = hpo.run_search(lambda a: 0.9, self.SPACE, cfg)
        assert len(result.trials) == 1

    def test_bayesian_finds_quadratic_optimum(self):
        cfg = hpo.ExperimentConfig(algorithm="bayesian", max_trials=15, goal=1e-18, seed=5)
        result = hpo.run_search(self.quadratic, self.SPACE, cfg)
        assert abs(result.best.assignment["learning_rate"] - 0.0015) <= 0.05 * 0.001

    def test_diverged_trials_excluded_from_best(self):
        calls = iter([float("nan"), 2.0, 1.0, 3.0, 4.0])
        cfg = hpo.ExperimentConfig(algorithm="random", max_trials=5, goal=1e-18, seed=1)
        result = hpo.run_search(lambda a: next(calls), self.SPACE, cfg)
        assert result.best.objective == 1.0
        assert result.trials[0].status == "diverged"
        assert result.trials[0].objective is None

    def test_all_diverged_fails(self):
        cfg = hpo.ExperimentConfig(algorithm="random", max_trials=3, goal=1e-18, seed=1)
        with pytest.raises(ExperimentFailedError):
            hpo.run_search(lambda a: float("inf"), self.SPACE, cfg)

    def test_reproducible_from_seed(self):
        cfg = hpo.ExperimentConfig(algorithm="bayesian", max_trials=8, goal=1e-18, seed=9)
        a = hpo.run_search(self.quadratic, self.SPACE, cfg)
        b = hpo.run_search(self.quadratic, self.SPACE, cfg)
        assert a.trials == b.trials

    def test_assignments_within_bounds(self):
        cfg = hpo.ExperimentConfig(algorithm="bayesian", max_trials=10, goal=1e-18, seed=2)
        result = hpo.run_search(self.quadratic, self.SPACE, cfg)
        assert len(result.trials) <= 10
        for t in result.trials:
            assert self.SPACE.contains(t.assignment)


class TestRunExperiment:
    def test_tunes_model_on_synthetic_data(self, synth_dataset):
        cfg = hpo.ExperimentConfig(algorithm="random", max_trials=2, goal=0.001, seed=0)
        base = TrainConfig(epochs=5, seed=0)
        result = hpo.run_experiment("dnn", synth_dataset, hpo.ADAM_SPACE, cfg, base_config=base)
        assert result.best.objective is not None
        assert len(result.trials) <= 2

    def test_unbindable_space_rejected(self, synth_dataset):
        space = hpo.SearchSpace((("dropout", 0.0, 1.0),))
        cfg = hpo.ExperimentConfig(max_trials=1, seed=0)
        with pytest.raises(ValueError):
            hpo.run_experiment("dnn", synth_dataset, space, cfg,
                               base_config=TrainConfig(epochs=1, seed=0))
