"""Finite-sample pipeline: seeding, poisoning, solvers, evaluation.

The ridge path has an exact linear-algebra oracle; the logistic path is
certified through its own gradient recomputed here from first
principles.  The final class compares replicate averages against the
asymptotic predictions at 4 standard errors on a frozen seed.
"""

import math

import numpy as np
import pytest
from scipy.special import expit

from poisonlab import covariance as cov
from poisonlab import fixed_point as fp
from poisonlab import simulate as sim


def iso_spec(p, n, alpha=1.0, phi=0.2, lam=0.5):
    return cov.ProblemSpec(
        cov=cov.IsotropicCovariance(p),
        mu=cov.basis_vector(p, 0),
        v=cov.basis_vector(p, 1),
        alpha=alpha,
        phi=phi,
        lam=lam,
        n=n,
    )


def manual_dataset(labels):
    labels = np.asarray(labels, dtype=float)
    n = labels.size
    features = np.arange(n * 3, dtype=float).reshape(n, 3)
    return sim.RawDataset(
        features=features, labels=labels, poisoned=np.zeros(n, dtype=bool)
    )


class TestStreams:
    def test_same_cell_reproduces(self):
        a = sim.stream_rng(7, 3, sim.PHASE_DATA).standard_normal(5)
        b = sim.stream_rng(7, 3, sim.PHASE_DATA).standard_normal(5)
        assert np.array_equal(a, b)

    def test_cells_are_independent_streams(self):
        base = sim.stream_rng(7, 3, sim.PHASE_DATA).standard_normal(5)
        for rep, phase in ((4, sim.PHASE_DATA), (3, sim.PHASE_POISON), (3, sim.PHASE_TEST)):
            other = sim.stream_rng(7, rep, phase).standard_normal(5)
            assert not np.array_equal(base, other)


class TestSampling:
    def test_shapes_and_labels(self):
        spec = iso_spec(12, 40)
        ds = sim.sample_clean(spec, 40, sim.stream_rng(0, 0, 0))
        assert ds.features.shape == (40, 12)
        assert set(np.unique(ds.labels)) <= {-1.0, 1.0}
        assert not ds.poisoned.any()
        assert ds.n == 40 and ds.p == 12

    def test_absorbed_mean_matches_clean_mean(self):
        # z = y x = mu + y * noise, and y * noise is again centered.
        spec = iso_spec(6, 10)
        ds = sim.sample_clean(spec, 200_000, sim.stream_rng(5, 0, 0))
        zbar = sim.absorb(ds).mean(axis=0)
        assert np.allclose(zbar, spec.mu, atol=0.012)

    def test_absorb_oracle(self):
        ds = manual_dataset([1.0, -1.0])
        z = sim.absorb(ds)
        assert np.array_equal(z[0], ds.features[0])
        assert np.array_equal(z[1], -ds.features[1])


class TestPoison:
    def test_exact_bookkeeping(self):
        labels = [-1.0] * 6 + [1.0] * 4
        ds = manual_dataset(labels)
        v = np.array([0.0, 1.0, 0.0])
        out = sim.poison(ds, phi=0.3, alpha=2.5, v=v, rng=sim.stream_rng(1, 0, 1))
        assert out.poisoned.sum() == 3  # round(0.3 * 10)
        assert np.all(out.labels[out.poisoned] == 1.0)
        assert np.all(ds.labels[out.poisoned] == -1.0)  # drawn from negatives
        diff = out.features - ds.features
        assert np.allclose(diff[out.poisoned], 2.5 * v)
        assert np.all(diff[~out.poisoned] == 0.0)
        assert np.array_equal(out.labels[~out.poisoned], ds.labels[~out.poisoned])
        # Source dataset untouched.
        assert not ds.poisoned.any() and np.all(ds.labels == np.asarray(labels))

    def test_count_uses_bankers_rounding(self):
        ds = manual_dataset([-1.0] * 10)
        out = sim.poison(ds, 0.25, 1.0, np.zeros(3), sim.stream_rng(0, 0, 1))
        assert out.poisoned.sum() == 2  # round(2.5) -> 2

    def test_phi_zero_is_noop_copy(self):
        ds = manual_dataset([-1.0, 1.0])
        out = sim.poison(ds, 0.0, 5.0, np.ones(3), sim.stream_rng(0, 0, 1))
        assert np.array_equal(out.features, ds.features)
        assert out.features is not ds.features

    def test_insufficient_negatives(self):
        ds = manual_dataset([1.0] * 8 + [-1.0] * 2)
        with pytest.raises(ValueError, match="negatives"):
            sim.poison(ds, 0.4, 1.0, np.zeros(3), sim.stream_rng(0, 0, 1))

    def test_argument_validation(self):
        ds = manual_dataset([-1.0, 1.0])
        with pytest.raises(ValueError):
            sim.poison(ds, 0.5, 1.0, np.zeros(3), sim.stream_rng(0, 0, 1))
        with pytest.raises(ValueError):
            sim.poison(ds, 0.1, -1.0, np.zeros(3), sim.stream_rng(0, 0, 1))


class TestRidgeFit:
    def test_single_sample_oracle(self):
        z = np.array([[1.0, 0.0]])
        fit = sim.ridge_fit(z, lam=1.0)
        assert np.allclose(fit.theta, [0.5, 0.0], atol=1e-14)
        assert fit.converged

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(42)
        z = rng.standard_normal((30, 8))
        lam = 0.3
        fit = sim.ridge_fit(z, lam)
        want = np.linalg.solve(z.T @ z / 30 + lam * np.eye(8), z.mean(axis=0))
        assert np.allclose(fit.theta, want, atol=1e-12)

    def test_norm_bound_holds(self):
        rng = np.random.default_rng(3)
        for lam in (0.01, 0.5, 2.0):
            z = rng.standard_normal((50, 20)) * 3.0
            fit = sim.ridge_fit(z, lam)
            assert fit.theta @ fit.theta <= 2 * 0.5 / lam * (1 + 1e-9)

    def test_rejects_nonpositive_lam(self):
        with pytest.raises(ValueError):
            sim.ridge_fit(np.ones((2, 2)), 0.0)


class TestLogisticFit:
    def test_gradient_certificate(self):
        rng = np.random.default_rng(9)
        z = rng.standard_normal((60, 15)) + 0.3
        fit = sim.logistic_fit(z, lam=0.2)
        assert fit.converged
        # Recompute the gradient here, independently of the solver loop.
        grad = -(z.T @ expit(-(z @ fit.theta))) / 60 + 0.2 * fit.theta
        assert np.abs(grad).max() <= sim.LOGISTIC_GRAD_TOL
        assert fit.grad_norm == pytest.approx(np.abs(grad).max(), abs=1e-15)

    def test_minimum_beats_perturbations(self):
        rng = np.random.default_rng(19)
        z = rng.standard_normal((40, 6))
        lam = 0.5
        fit = sim.logistic_fit(z, lam)

        def obj(t):
            return float(np.mean(np.logaddexp(0.0, -(z @ t)))) + 0.5 * lam * float(t @ t)

        best = obj(fit.theta)
        for _ in range(10):
            assert best <= obj(fit.theta + 0.01 * rng.standard_normal(6))

    def test_norm_bound_holds(self):
        rng = np.random.default_rng(23)
        z = rng.standard_normal((80, 10)) * 2.0 + 1.0
        lam = 0.05
        fit = sim.logistic_fit(z, lam)
        assert fit.theta @ fit.theta <= 2 * math.log(2.0) / lam * (1 + 1e-9)

    def test_iteration_cap_reported(self):
        rng = np.random.default_rng(31)
        z = rng.standard_normal((20, 4))
        fit = sim.logistic_fit(z, lam=0.5, max_iter=1)
        assert not fit.converged
        assert fit.iters == 1


class TestEvaluation:
    def test_analytic_oracle(self):
        spec = iso_spec(5, 10, alpha=2.0)
        theta = spec.mu.copy()  # theta' mu = 1, theta' v = 0, var = 1
        acc, asr = sim.evaluate_analytic(theta, spec, alpha_test=3.0)
        phi1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert acc == pytest.approx(phi1, abs=1e-15)
        assert asr == pytest.approx(1 - phi1, abs=1e-15)

    def test_empirical_agrees_with_analytic(self):
        spec = iso_spec(20, 50)
        rng = np.random.default_rng(77)
        theta = rng.standard_normal(20)
        acc, asr = sim.evaluate_analytic(theta, spec, alpha_test=0.8)
        n_test = 400_000
        acc_mc, asr_mc = sim.evaluate_empirical(
            theta, spec, 0.8, n_test, sim.stream_rng(2, 0, sim.PHASE_TEST)
        )
        # 4-sigma binomial windows.
        for exact, mc in ((acc, acc_mc), (asr, asr_mc)):
            se = math.sqrt(exact * (1 - exact) / n_test)
            assert abs(mc - exact) <= 4 * se


class TestReplicates:
    SPEC = iso_spec(150, 300, alpha=1.0, phi=0.2, lam=0.5)
    SEED = 3021

    def test_deterministic(self):
        a = sim.run_replicate(self.SPEC, "squared", 2, self.SEED, 0.5)
        b = sim.run_replicate(self.SPEC, "squared", 2, self.SEED, 0.5)
        assert a == b
        c = sim.run_replicate(self.SPEC, "squared", 3, self.SEED, 0.5)
        assert c.theta_mu != a.theta_mu

    def test_logistic_replicates_match_asymptotics(self):
        """Eight fits at p=150, n=300 land within 4 SE of the
        self-consistent predictions for every tracked functional."""
        state = fp.solve_self_consistent(
            self.SPEC, "logistic", fp.SolverConfig(tol=1e-12)
        )
        pred = fp.theory_predictions(state, self.SPEC, 0.5)
        reps = [
            sim.run_replicate(self.SPEC, "logistic", r, self.SEED, 0.5)
            for r in range(8)
        ]
        assert all(r.converged for r in reps)
        checks = [
            (np.array([r.theta_mu for r in reps]), pred.h_mu),
            (np.array([r.theta_v for r in reps]), pred.h_v),
            (np.array([r.theta_var for r in reps]), pred.sigma_sq),
            (
                np.array([r.theta_norm_sq for r in reps]),
                fp.proxy_expected_norm_sq(state, self.SPEC),
            ),
        ]
        for emp, theory in checks:
            se = emp.std(ddof=1) / math.sqrt(emp.size)
            assert abs(emp.mean() - theory) <= 4 * se
