"""
Tests for core/analysis.py: closed-form oracles, the bounded-gradient check,
variance estimation and convergence summaries.
"""
import numpy as np
import pytest

from core import analysis, engine
from core import graph as graph_ops
from core.data import ClientDataset, FederatedDataset
from core.errors import InvalidConfig, PreconditionViolated, SingularSystem
from core.models import Batch, MLRModel, QuadraticModel

CENTERS = np.array([[0.0], [4.0]])


def _single_client(n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = rng.integers(0, 3, size=n)
    client = ClientDataset(train=Batch(X, y), test=Batch(X[:2], y[:2]), label_set=(0, 1, 2))
    return FederatedDataset(clients=(client,), n_features=3, n_classes=3)


class TestQuadraticOptimum:

    def test_reference_instance(self, pair_graph):
        W = analysis.solve_quadratic_optimum(pair_graph, CENTERS, 1.0, 0.5)
        np.testing.assert_allclose(W, [[1.0], [3.0]], atol=1e-12)

    def test_eta_zero_is_centers(self, pair_graph):
        np.testing.assert_allclose(analysis.solve_quadratic_optimum(pair_graph, CENTERS, 1.0, 0.0), CENTERS)

    def test_consensus_limit(self, pair_graph):
        W = analysis.solve_quadratic_optimum(pair_graph, CENTERS, 1.0, 1e6)
        np.testing.assert_allclose(W, [[2.0], [2.0]], atol=1e-5)

    def test_residual(self):
        g = graph_ops.assign_weights(graph_ops.complete_graph(6), graph_ops.RandomWeights(seed=1))
        rng = np.random.default_rng(2)
        centers, curv = rng.normal(size=(6, 3)), rng.uniform(0.5, 2.0, size=6)
        W = analysis.solve_quadratic_optimum(g, centers, curv, 0.7)
        residual = curv[:, None] * (W - centers) + 0.7 * graph_ops.laplacian_apply(g, W)
        assert np.linalg.norm(residual) <= 1e-10

    def test_disagreement_non_increasing_in_eta(self):
        g = graph_ops.complete_graph(4)
        centers = np.random.default_rng(3).normal(scale=2.0, size=(4, 2))
        values = [graph_ops.disagreement(g, analysis.solve_quadratic_optimum(g, centers, 1.0, eta))
                  for eta in (0.0, 0.1, 1.0, 10.0, 1e3, 1e6)]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_large_residual_warns(self, pair_graph, monkeypatch, caplog):
        monkeypatch.setattr(analysis, "RESIDUAL_TOL", -1.0)
        W = analysis.solve_quadratic_optimum(pair_graph, CENTERS, 1.0, 0.5)
        np.testing.assert_allclose(W, [[1.0], [3.0]], atol=1e-12)
        assert "residual" in caplog.text

    def test_accurate_solve_is_quiet(self, pair_graph, caplog):
        analysis.solve_quadratic_optimum(pair_graph, CENTERS, 1.0, 0.5)
        assert not [r for r in caplog.records if r.levelname == "WARNING"]

    def test_singular(self, pair_graph):
        with pytest.raises(SingularSystem):
            analysis.solve_quadratic_optimum(pair_graph, CENTERS, 0.0, 0.0)


class TestRoundFixedPoint:

    def test_reference_offset(self, pair_graph):
        W = analysis.solve_round_fixed_point(pair_graph, CENTERS, 1.0, 0.5, 0.5, 1)
        np.testing.assert_allclose(W, [[4 / 3], [8 / 3]], atol=1e-12)

    @pytest.mark.parametrize("mu", [0.2, 0.05, 0.01])
    def test_offset_vanishes_linearly(self, pair_graph, mu):
        W = analysis.solve_round_fixed_point(pair_graph, CENTERS, 1.0, 0.5, mu, 1)
        np.testing.assert_allclose(W - [[1.0], [3.0]], [[mu / (2 - mu)], [-mu / (2 - mu)]], atol=1e-10)

    def test_run_converges_to_fixed_point(self, pair_graph, pair_models):
        config = engine.TrainConfig(local_lr=0.2, local_steps=3, rounds=300, eta=0.5, batch_size=1,
                                    keep_iterates=True)
        history = engine.run_fedu(pair_graph, pair_models, None, config)
        W_fp = analysis.solve_round_fixed_point(pair_graph, CENTERS, 1.0, 0.5, 0.2, 3)
        np.testing.assert_allclose(history.final_params, W_fp, atol=1e-9)


class TestLemmaOne:

    def test_reference_instance(self, pair_graph, pair_models):
        report = analysis.check_lemma1(pair_models, pair_graph, 2.0, 1000, np.random.default_rng(0))
        assert report.sigma2_squared == pytest.approx(32.0, rel=1e-12)
        assert report.passed
        assert report.to_dict()["passed"] is True

    def test_origin_is_dominated(self, pair_graph, pair_models):
        report = analysis.check_lemma1(pair_models, pair_graph, 2.0, 1, np.random.default_rng(0))
        assert report.grad_at_zero_sq == 16.0
        assert report.sigma2_squared >= report.grad_at_zero_sq

    def test_ring_instance(self):
        g = graph_ops.ring_graph(6)
        rng = np.random.default_rng(4)
        # shared curvature: with unequal curvatures the inequality fails far from the origin
        models = [QuadraticModel(c, curvature=0.7) for c in rng.normal(size=(6, 2))]
        report = analysis.check_lemma1(models, g, 3 * 0.7 / g.rho, 500, rng)
        assert report.passed

    def test_precondition(self, pair_graph, pair_models):
        with pytest.raises(PreconditionViolated):
            analysis.check_lemma1(pair_models, pair_graph, 0.5, 10, np.random.default_rng(0))


class TestVariance:

    def test_full_batch_is_zero(self):
        ds = _single_client()
        models = [MLRModel(3, 3)]
        assert analysis.estimate_variance(models, ds, 100, 100, np.random.default_rng(0)) == 0.0

    def test_quadratic_is_zero(self, pair_models):
        assert analysis.estimate_variance(pair_models, None, 5, 100, np.random.default_rng(0)) == 0.0

    def test_needs_draws(self, pair_models):
        with pytest.raises(InvalidConfig):
            analysis.estimate_variance(pair_models, None, 5, 50, np.random.default_rng(0))

    def test_monotone_in_batch_size(self):
        ds = _single_client()
        models = [MLRModel(3, 3, 0.01)]
        W = np.random.default_rng(1).normal(size=(1, models[0].param_dim))
        values = [analysis.estimate_variance(models, ds, b, 2000, np.random.default_rng(b), params=W)
                  for b in (1, 5, 20, 100)]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert values[2] > values[3] == 0.0

    def test_sampling_scale(self):
        ds = _single_client()
        models = [MLRModel(3, 3)]
        W = np.random.default_rng(2).normal(size=(1, models[0].param_dim))
        v10 = analysis.estimate_variance(models, ds, 10, 2000, np.random.default_rng(3), params=W)
        v40 = analysis.estimate_variance(models, ds, 40, 2000, np.random.default_rng(4), params=W)
        expected = (1 / 10 - 1 / 100) / (1 / 40 - 1 / 100)
        assert v10 / v40 == pytest.approx(expected, rel=0.2)


class TestConvergenceMetrics:

    def test_constant_history(self):
        history = engine.RunHistory(rounds=[0, 1, 2], objective=[5.0, 5.0, 5.0])
        summary = analysis.convergence_metrics(history)
        assert summary.decay_rate == 1.0
        assert summary.final_gap == 0.0

    def test_geometric_rate(self):
        rounds = np.arange(40)
        assert analysis.fit_decay_rate(rounds, 0.5 ** rounds) == pytest.approx(0.5, rel=1e-6)

    def test_floor_excluded(self):
        rounds = np.arange(100)
        gaps = np.maximum(0.5 ** rounds, 1e-16)
        assert analysis.fit_decay_rate(rounds, gaps) == pytest.approx(0.5, rel=1e-6)

    def test_quadratic_run_decays(self, pair_graph, pair_models):
        config = engine.TrainConfig(local_lr=0.1, local_steps=2, rounds=200, eta=0.5, batch_size=1,
                                    keep_iterates=True)
        history = engine.run_fedu(pair_graph, pair_models, None, config)
        W_fp = analysis.solve_round_fixed_point(pair_graph, CENTERS, 1.0, 0.5, 0.1, 2)
        summary = analysis.convergence_metrics(history, W_star=W_fp)
        assert summary.decay_rate < 1
        assert summary.rounds_to_tol is not None
        assert summary.to_dict()["tol"] == 1e-4

    def test_needs_iterates(self, pair_graph, pair_models):
        history = engine.run_fedu(pair_graph, pair_models, None, engine.TrainConfig(rounds=3, batch_size=1))
        with pytest.raises(InvalidConfig):
            analysis.convergence_metrics(history, W_star=CENTERS)

    def test_empty_history(self):
        with pytest.raises(InvalidConfig):
            analysis.convergence_metrics(engine.RunHistory())
