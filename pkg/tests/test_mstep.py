"""Newton update of the membership concentration and the interior-point
update of the support vectors."""
import numpy as np
import pytest

from rankmm.estep import run_estep
from rankmm.mstep import (
    BarrierSchedule,
    LineSearchConfig,
    MStepDiagnostics,
    alpha_gradient,
    alpha_hessian,
    backtracking_line_search,
    kkt_step,
    theta_gradient_hessian,
    update_alpha,
    update_theta,
)
from rankmm.model import (
    ModelParams,
    VariationalParams,
    compute_elbo,
    generate_dataset,
)


def _setup(seed=0, t=30, k=2, vs=(4, 3), n_levels=(3, 2), alpha=None):
    rng = np.random.default_rng(seed)
    theta = [rng.dirichlet(np.full(v, 0.8), size=k) for v in vs]
    a = np.asarray(alpha) if alpha is not None else rng.uniform(0.1, 1.0, size=k)
    params = ModelParams(a, theta).validate()
    data, _, _ = generate_dataset(params, t, list(n_levels), rng)
    var = run_estep(data, params, VariationalParams.uniform_init(data, k), tol=1e-8).var
    return data, params, var


def _fd_alpha_gradient(data, params, var, h=1e-6):
    grad = np.zeros(params.K)
    for k in range(params.K):
        for sign in (1.0, -1.0):
            p = params.copy()
            p.alpha[k] += sign * h
            grad[k] += sign * compute_elbo(data, params=p, var=var) / (2 * h)
    return grad


class TestAlpha:
    def test_gradient_finite_differences(self):
        data, params, var = _setup(seed=1)
        grad = alpha_gradient(data, params, var)
        assert np.allclose(grad, _fd_alpha_gradient(data, params, var), rtol=2e-5, atol=1e-4)

    def test_hessian_finite_differences(self):
        data, params, var = _setup(seed=2, k=3, vs=(4,), n_levels=(2,))
        hess = alpha_hessian(params, data.T)
        h = 1e-5
        for k in range(params.K):
            pp, pm = params.copy(), params.copy()
            pp.alpha[k] += h
            pm.alpha[k] -= h
            fd = (alpha_gradient(data, pp, var) - alpha_gradient(data, pm, var)) / (2 * h)
            assert np.allclose(hess[k], fd, rtol=1e-4, atol=1e-4)
        assert np.allclose(hess, hess.T)

    def test_update_improves_bound_and_kills_gradient(self):
        data, params, var = _setup(seed=3)
        before = compute_elbo(data, params, var)
        alpha, converged = update_alpha(data, params, var, tol=1e-10)
        assert converged
        new = params.copy()
        new.alpha = alpha
        assert compute_elbo(data, new, var) >= before - 1e-10
        assert np.max(np.abs(alpha_gradient(data, new, var))) < 1e-10 * data.T * 10

    def test_update_beats_random_neighbors(self):
        data, params, var = _setup(seed=4)
        alpha, _ = update_alpha(data, params, var, tol=1e-12)
        new = params.copy()
        new.alpha = alpha
        best = compute_elbo(data, new, var)
        rng = np.random.default_rng(0)
        for _ in range(30):
            trial = params.copy()
            trial.alpha = alpha * np.exp(rng.uniform(-1e-3, 1e-3, params.K))
            assert compute_elbo(data, trial, var) <= best + 1e-10

    def test_recovers_concentration_from_large_sample(self):
        # symmetric truth with well-separated supports: the fitted-stage
        # alpha update applied to the converged variational state should
        # land near the generating concentration
        truth_alpha = np.array([0.05, 0.05])
        theta = [
            np.array([[0.85, 0.09, 0.04, 0.02], [0.02, 0.04, 0.09, 0.85]]),
            np.array([[0.80, 0.12, 0.08], [0.08, 0.12, 0.80]]),
        ]
        params = ModelParams(truth_alpha, theta).validate()
        rng = np.random.default_rng(6)
        data, _, _ = generate_dataset(params, 5000, [4, 3], rng)
        var = run_estep(data, params, VariationalParams.uniform_init(data, 2), tol=1e-9).var
        alpha, converged = update_alpha(data, params, var, tol=1e-10)
        assert converged
        assert np.all(np.abs(alpha - truth_alpha) / truth_alpha < 0.25)


class TestKKTStep:
    def test_sum_zero_and_matches_qp(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = int(rng.integers(2, 7))
            m = rng.normal(size=(v, v))
            hess = m @ m.T + 0.5 * np.eye(v)
            grad = rng.normal(size=v)
            step, fallback = kkt_step(grad, hess)
            assert not fallback
            assert abs(step.sum()) < 1e-9
            # independent equality-constrained QP solve via the full
            # bordered system
            kkt = np.zeros((v + 1, v + 1))
            kkt[:v, :v] = hess
            kkt[:v, v] = 1.0
            kkt[v, :v] = 1.0
            rhs = np.concatenate([-grad, [0.0]])
            ref = np.linalg.solve(kkt, rhs)[:v]
            assert np.allclose(step, ref, rtol=1e-9, atol=1e-10)

    def test_singular_fallback(self):
        step, fallback = kkt_step(np.array([1.0, -3.0]), np.zeros((2, 2)))
        assert fallback
        assert abs(step.sum()) < 1e-12


class TestThetaUpdate:
    def test_gradient_matches_finite_differences_of_bound(self):
        # the minimization objective's gradient (barrier off) must be the
        # negative bound gradient in that block
        data, params, var = _setup(seed=8)
        j, k = 0, 1
        grad, _ = theta_gradient_hessian(data, var, j, k, params.theta[j][k], 0.0)
        h = 1e-7
        for a in range(params.theta[j].shape[1]):
            pp, pm = params.copy(), params.copy()
            pp.theta[j][k, a] += h
            pm.theta[j][k, a] -= h
            fd = (compute_elbo(data, pp, var) - compute_elbo(data, pm, var)) / (2 * h)
            assert -grad[a] == pytest.approx(fd, rel=5e-5, abs=1e-4)

    def test_line_search_feasible_and_non_increasing(self):
        data, params, var = _setup(seed=9)
        j, k = 1, 0
        theta = params.theta[j][k]
        grad, hess = theta_gradient_hessian(data, var, j, k, theta, 0.01)
        step, _ = kkt_step(grad, hess)
        tau, ok = backtracking_line_search(
            data, var, params, j, k, theta, step, LineSearchConfig(), 0.01
        )
        assert ok and 0.0 < tau <= 1.0
        assert np.all(theta + tau * step > 0.0)

    def test_update_improves_bound_preserves_simplex(self):
        data, params, var = _setup(seed=10, t=60)
        before = compute_elbo(data, params, var)
        diag = MStepDiagnostics()
        new_theta = update_theta(data, var, params, diagnostics=diag)
        new = params.copy()
        new.theta = new_theta
        new.validate()
        for block in new_theta:
            assert np.allclose(block.sum(axis=1), 1.0, rtol=1e-12)
            assert np.all(block > 0.0)
        assert compute_elbo(data, new, var) >= before - 1e-9
        assert all(d >= -1e-12 for d in diag.stage_elbo_deltas)

    def test_stationary_point_has_projected_zero_gradient(self):
        data, params, var = _setup(seed=11, t=80)
        new = params.copy()
        schedule = BarrierSchedule(b0=10.0, stages=6)
        new.theta = update_theta(data, var, new, schedule=schedule, tol=1e-12, max_iters=200)
        j, k = 0, 0
        grad, _ = theta_gradient_hessian(data, var, j, k, new.theta[j][k], schedule.weights()[-1])
        projected = grad - grad.mean()
        assert np.max(np.abs(projected)) < 1e-3 * max(1.0, np.max(np.abs(grad)))

    def test_frozen_subgroups_untouched(self):
        data, params, var = _setup(seed=12)
        params.fixed_mask = np.array([True, False])
        frozen = params.theta[0][0].copy()
        new_theta = update_theta(data, var, params)
        assert np.array_equal(new_theta[0][0], frozen)
        assert not np.array_equal(new_theta[0][1], params.theta[0][1])


class TestBarrierSchedule:
    def test_weights_decrease_geometrically(self):
        s = BarrierSchedule(b0=10.0, stages=3)
        assert s.weights() == pytest.approx([1e-1, 1e-2, 1e-3])

    def test_validation(self):
        with pytest.raises(ValueError):
            BarrierSchedule(b0=1.0)
        with pytest.raises(ValueError):
            BarrierSchedule(stages=0)
        with pytest.raises(ValueError):
            LineSearchConfig(tau0=1.0)
