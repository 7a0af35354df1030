import math

import numpy as np
import pytest

from certfair import train as train_mod
from certfair.evaluation import accuracy, empirical_fairness
from certfair.initialize import InitConfig, bernoulli_init, zero_init
from certfair.network import GradientSet, build_input, forward_inputs, logits
from certfair.response import GammaSolution, RRConfig
from certfair.train import (CertificateError, InfeasibleGammaError, TrainConfig,
                            chebyshev_report, expectation_gradient, preserve_step,
                            stochastic_gradient, train_erm, train_fair, train_side_by_side)
from certfair.verify import InputDomain, certificate_spread, grid_falsify, structural_certificate
from conftest import random_params, toy_data, toy_spec


def gradient_with_block(spec, block, rng=None):
    rng = rng or np.random.default_rng(0)
    sizes = spec.layer_sizes
    w = [rng.normal(size=(sizes[i + 1], sizes[i])) for i in range(spec.n_layers)]
    start, stop = spec.sensitive_slice
    w[0][:, start:stop] = block
    return GradientSet(w, [rng.normal(size=sizes[i + 1]) for i in range(spec.n_layers)])


def unit_domain(data):
    dims = data.x.shape[1]
    return InputDomain(np.zeros(dims), np.ones(dims), data.sensitive)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"lr": 0.0}, {"batch_size": 0}, {"delta": 0},
                                    {"tol_fair": -1.0}, {"mode": "adam"},
                                    {"gamma_schedule": "never"}, {"epochs": -1}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_size, cfg.epochs, cfg.delta, cfg.tol_fair) == (0.01, 64, 100, 8, 1e-9)


class TestPreserveStep:
    def test_equal_group_gradients_unchanged(self):
        spec = toy_spec(2, (3,), 1, 2)
        params = zero_init(spec)
        grad = gradient_with_block(spec, np.full((3, 2), 0.7))
        new, info = preserve_step(spec, params, grad, 0.0, TrainConfig(lr=1.0))
        assert not info.projected and not info.rolled_back
        np.testing.assert_array_equal(new.weights[0], -grad.weights[0])

    def test_opposite_group_gradients_projected_to_mean(self):
        spec = toy_spec(2, (1,), 1, 2)
        grad = gradient_with_block(spec, np.array([[1.0, -1.0]]))
        new, info = preserve_step(spec, zero_init(spec), grad, 0.0, TrainConfig(lr=1.0))
        assert info.projected
        np.testing.assert_array_equal(new.weights[0][0, 2:], [0.0, 0.0])

    def test_signed_column_zeroed(self):
        spec = toy_spec(2, (3,), 1, 2, "signed")
        grad = gradient_with_block(spec, np.array([[0.3], [-2.0], [1.0]]))
        new, info = preserve_step(spec, zero_init(spec), grad, 0.0, TrainConfig(lr=1.0))
        assert info.projected
        np.testing.assert_array_equal(new.weights[0][:, 2], 0.0)

    def test_violation_without_projection_rolls_back(self):
        spec = toy_spec(2, (3,), 1, 2)
        params = zero_init(spec)
        grad = gradient_with_block(spec, np.array([[1.0, 0.0]] * 3))
        new, info = preserve_step(spec, params, grad, 0.0, TrainConfig(projection=False))
        assert info.rolled_back
        assert new is params

    @pytest.mark.parametrize("encoding", ["onehot", "signed"])
    def test_preservation_over_random_networks(self, encoding):
        rng = np.random.default_rng(31)
        m = 3 if encoding == "onehot" else 2
        for trial in range(100):
            spec = toy_spec(3, (5, 4), 2, m, encoding)
            params = random_params(spec, rng, tie=True)
            pre = float(certificate_spread(spec, params).max())
            grad = GradientSet([rng.normal(size=w.shape) for w in params.weights],
                               [rng.normal(size=b.shape) for b in params.biases])
            new, _ = preserve_step(spec, params, grad, 0.0, TrainConfig(lr=0.1))
            assert float(certificate_spread(spec, new).max()) <= pre + 1e-15
            x = rng.random((1000, 3))
            s1, s2 = rng.integers(0, m, 1000), rng.integers(0, m, 1000)
            diff = logits(spec, new, x, s1) - logits(spec, new, x, s2)
            assert np.abs(diff).max() <= 1e-12


class TestGradients:
    @pytest.mark.parametrize("gamma", [0.0, math.log(3), 5.0])
    def test_soft_encoding_path_matches_per_value_sum(self, rng, gamma):
        spec = toy_spec(3, (6, 4), 2, 3)
        params = random_params(spec, rng, tie=True)
        data = toy_data(50, 3, 3, seed=7)
        rr = RRConfig(gamma, data.sensitive)
        fast = expectation_gradient(spec, params, data.x, data.s, data.y, rr)
        exact = expectation_gradient(spec, params, data.x, data.s, data.y, rr, exact=True)
        np.testing.assert_allclose(fast.flat(), exact.flat(), atol=1e-14, rtol=0)

    @pytest.mark.parametrize("tie", [True, False])
    def test_stochastic_average_matches_expectation(self, tie):
        """Mean of 10^4 single-response gradients within 3 Monte-Carlo standard errors."""
        rng = np.random.default_rng(17)
        spec = toy_spec(2, (3,), 1, 2)
        params = random_params(spec, rng, tie=tie)
        data = toy_data(16, 2, 2, seed=8)
        rr = RRConfig(math.log(2), data.sensitive)
        expected = expectation_gradient(spec, params, data.x, data.s, data.y, rr, exact=True).flat()
        draws = np.array([stochastic_gradient(spec, params, data.x, data.s, data.y, rr, 1, rng).flat()
                          for _ in range(10_000)])
        mean = draws.mean(axis=0)
        se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
        # entries with zero spread can only differ by summation rounding
        assert np.all(np.abs(mean - expected) <= 3 * se + 1e-13)
        assert np.any(se > 0)


class TestTrainFair:
    def test_zero_epochs_is_identity(self):
        spec = toy_spec(2, (4,), 1, 2)
        params = bernoulli_init(spec, InitConfig(seed=0))
        result = train_fair(spec, params, toy_data(50), TrainConfig(epochs=0))
        for a, b in zip(params.arrays(), result.params.arrays()):
            np.testing.assert_array_equal(a, b)
        assert len(result.stats) == 1 and result.stats[0].epoch == 0
        assert structural_certificate(spec, result.params).passed

    def test_requires_certified_start(self, rng):
        spec = toy_spec(2, (4,), 1, 2)
        with pytest.raises(CertificateError):
            train_fair(spec, random_params(spec, rng), toy_data(20), TrainConfig(epochs=1))

    def test_toy_run_keeps_certificate_every_epoch(self):
        data = toy_data(300, 2, 2, seed=1)
        spec = toy_spec(2, (8, 4), 1, 2)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=1))
        result = train_fair(spec, params, data, TrainConfig(epochs=50, batch_size=32, lr=0.1),
                            probe=data)
        assert all(s.spread <= 1e-9 for s in result.stats)
        assert all(s.fairness_pct == 100.0 for s in result.stats)
        assert grid_falsify(spec, result.params, unit_domain(data), resolution=200) is None
        assert result.stats[-1].loss < result.stats[0].loss
        walls = [s.wall for s in result.stats]
        assert walls == sorted(walls)

    def test_deterministic(self):
        data = toy_data(100, 2, 3, seed=2)
        spec = toy_spec(2, (6,), 2, 3)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=2))
        cfg = TrainConfig(epochs=3, mode="stochastic", delta=2, seed=9)
        a = train_fair(spec, params, data, cfg)
        b = train_fair(spec, params, data, cfg)
        for u, v in zip(a.params.arrays(), b.params.arrays()):
            np.testing.assert_array_equal(u, v)
        assert [s.loss for s in a.stats] == [s.loss for s in b.stats]

    @pytest.mark.parametrize("schedule", ["epoch", "step"])
    def test_stochastic_mode_with_projection(self, schedule):
        data = toy_data(120, 2, 2, seed=3)
        spec = toy_spec(2, (6,), 1, 2)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=3))
        cfg = TrainConfig(epochs=4, mode="stochastic", gamma_schedule=schedule, batch_size=16)
        result = train_fair(spec, params, data, cfg)
        assert structural_certificate(spec, result.params).passed
        assert result.rollbacks == 0
        assert sum(s.projections for s in result.stats) > 0
        n_steps = 4 * math.ceil(120 / 16)
        assert len(result.gamma_reports) == (n_steps if schedule == "step" else 4)

    def test_disabled_projection_counts_rollbacks(self):
        data = toy_data(120, 2, 2, seed=4)
        spec = toy_spec(2, (6,), 1, 2)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=4))
        cfg = TrainConfig(epochs=2, mode="stochastic", projection=False, batch_size=16)
        result = train_fair(spec, params, data, cfg)
        assert result.rollbacks > 0
        assert structural_certificate(spec, result.params).passed

    def test_infeasible_budget_halts_without_projection(self, monkeypatch):
        def infeasible(*args, **kwargs):
            return GammaSolution(0.0, 0.5, 1.0, np.array([1.0]), False)

        monkeypatch.setattr(train_mod, "solve_for_batch", infeasible)
        data = toy_data(40, 2, 2)
        spec = toy_spec(2, (4,), 1, 2)
        params = bernoulli_init(spec, InitConfig())
        with pytest.raises(InfeasibleGammaError):
            train_fair(spec, params, data, TrainConfig(epochs=1, projection=False))
        result = train_fair(spec, params, data, TrainConfig(epochs=1))
        assert not result.gamma_reports[0]["feasible"]


class TestTrainErm:
    def test_deterministic(self):
        data = toy_data(100, 2, 2, seed=5)
        spec = toy_spec(2, (6,), 1, 2)
        params = bernoulli_init(spec, InitConfig(phi=-1.0))
        a = train_erm(spec, params, data, TrainConfig(epochs=3))
        b = train_erm(spec, params, data, TrainConfig(epochs=3))
        for u, v in zip(a.params.arrays(), b.params.arrays()):
            np.testing.assert_array_equal(u, v)

    def test_separable_toy_reaches_95_percent(self):
        data = toy_data(400, 2, 2, seed=6, separable=True)
        spec = toy_spec(2, (8,), 1, 2)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=6, tie_groups=False))
        result = train_erm(spec, params, data, TrainConfig(epochs=200, batch_size=32))
        assert accuracy(spec, result.params, data) >= 95.0

    def test_learns_from_sensitive_value(self):
        # labels equal the sensitive value, so plain SGD becomes unfair
        data = toy_data(200, 2, 2, seed=7)
        data.y = data.s + 1
        spec = toy_spec(2, (6,), 1, 2)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=7))
        erm = train_erm(spec, params, data, TrainConfig(epochs=30, lr=0.1))
        assert empirical_fairness(spec, erm.params, data).fairness_pct < 100.0
        fair = train_fair(spec, params, data, TrainConfig(epochs=30, lr=0.1))
        assert empirical_fairness(spec, fair.params, data).fairness_pct == 100.0


class TestSideBySide:
    @pytest.mark.parametrize("mode", ["expectation", "stochastic"])
    def test_matches_separate_runs(self, mode):
        data = toy_data(90, 2, 3, seed=5)
        spec = toy_spec(2, (5,), 2, 3)
        params = bernoulli_init(spec, InitConfig(phi=-1.0, seed=5))
        cfg = TrainConfig(epochs=3, batch_size=16, mode=mode, delta=2, seed=4)
        fair, erm = train_side_by_side(spec, params, data, cfg, probe=data)
        for got, want in ((fair, train_fair(spec, params, data, cfg, probe=data)),
                          (erm, train_erm(spec, params, data, cfg, probe=data))):
            for a, b in zip(got.params.arrays(), want.params.arrays()):
                np.testing.assert_array_equal(a, b)
            assert [s.loss for s in got.stats] == [s.loss for s in want.stats]
        assert len(fair.gamma_reports) == 3 and erm.gamma_reports == []

    def test_zero_epochs(self):
        spec = toy_spec(2, (4,), 1, 2)
        fair, erm = train_side_by_side(spec, zero_init(spec), toy_data(20), TrainConfig(epochs=0))
        assert len(fair.stats) == len(erm.stats) == 1

    def test_requires_certified_start(self, rng):
        spec = toy_spec(2, (4,), 1, 2)
        with pytest.raises(CertificateError):
            train_side_by_side(spec, random_params(spec, rng), toy_data(20), TrainConfig(epochs=1))


class TestChebyshev:
    @pytest.fixture
    def setup(self):
        data = toy_data(200, 2, 2, seed=10)
        spec = toy_spec(2, (6,), 1, 2)
        return spec, bernoulli_init(spec, InitConfig(phi=-1.0, seed=10)), data

    def test_zero_variance_when_always_kept(self, setup):
        spec, params, data = setup
        rep = chebyshev_report(spec, params, data, math.inf, 8, 1e-3, trials=200)
        assert np.all(rep.bound == 0.0) and np.all(rep.frequency == 0.0)

    def test_doubling_delta_halves_bound(self, setup):
        spec, params, data = setup
        a = chebyshev_report(spec, params, data, 0.0, 8, 1e-3, trials=10)
        b = chebyshev_report(spec, params, data, 0.0, 16, 1e-3, trials=10)
        np.testing.assert_array_equal(b.bound * 2, a.bound)

    def test_rejects_bad_arguments(self, setup):
        spec, params, data = setup
        with pytest.raises(ValueError):
            chebyshev_report(spec, params, data, 0.0, 1, 1e-3)
        with pytest.raises(ValueError):
            chebyshev_report(spec, params, data, 0.0, 8, 0.0)

    def test_frequency_within_bound_for_large_delta(self, setup):
        spec, params, data = setup
        rep = chebyshev_report(spec, params, data, 0.0, 10_000, 1e-3, trials=200)
        assert rep.holds
        assert 0.0 <= rep.frequency.min() and rep.frequency.max() <= 1.0
