"""Closed-form variational updates and the coordinate-ascent sweep."""
import numpy as np
import pytest

from rankmm.estep import run_estep, update_delta, update_phi
from rankmm.model import (
    ModelParams,
    VariationalParams,
    compute_elbo,
    exact_log_marginal,
    generate_dataset,
)


def _setup(seed=0, t=8, k=2, vs=(4, 3), n_levels=(3, 2)):
    rng = np.random.default_rng(seed)
    theta = [rng.dirichlet(np.full(v, 0.8), size=k) for v in vs]
    params = ModelParams(rng.uniform(0.1, 1.0, size=k), theta).validate()
    data, _, _ = generate_dataset(params, t, list(n_levels), rng)
    var = VariationalParams.uniform_init(data, k)
    var.phi = rng.uniform(0.2, 3.0, size=(t, k))
    return data, params, var


def _perturb_simplex(row, rng, eps=1e-3):
    noise = rng.uniform(-eps, eps, size=row.shape)
    out = np.clip(row + noise, 1e-6, None)
    return out / out.sum()


class TestUpdateDelta:
    def test_is_argmax_of_bound(self):
        # the closed-form row must beat random perturbations of itself
        data, params, var = _setup()
        rng = np.random.default_rng(5)
        i, j, n = 3, 0, 1
        row = update_delta(data, params, var, i, j, n)
        assert row.shape == (params.K,)
        assert row.sum() == pytest.approx(1.0, rel=1e-12)
        base = var.copy()
        base.delta[j][i, n] = row
        best = compute_elbo(data, params, base)
        for _ in range(25):
            trial = base.copy()
            trial.delta[j][i, n] = _perturb_simplex(row, rng)
            assert compute_elbo(data, params, trial) <= best + 1e-12

    def test_out_of_range_slot(self):
        data, params, var = _setup()
        with pytest.raises(ValueError):
            update_delta(data, params, var, 0, 0, int(data.lengths[0][0]))


class TestUpdatePhi:
    def test_is_alpha_plus_slot_totals(self):
        data, params, var = _setup(seed=2)
        rng = np.random.default_rng(3)
        for j in range(data.J):
            d = rng.dirichlet(np.ones(params.K), size=var.delta[j].shape[:2])
            valid = np.arange(d.shape[1])[None, :] < data.lengths[j][:, None]
            var.delta[j] = np.where(valid[:, :, None], d, 0.0)
        i = 4
        row = update_phi(params, var, i)
        expect = params.alpha + sum(var.delta[j][i].sum(axis=0) for j in range(data.J))
        assert np.allclose(row, expect, rtol=1e-13)

    def test_is_argmax_of_bound(self):
        data, params, var = _setup(seed=4)
        rng = np.random.default_rng(6)
        i = 1
        var.phi[i] = update_phi(params, var, i)
        best = compute_elbo(data, params, var)
        for _ in range(25):
            trial = var.copy()
            trial.phi[i] = var.phi[i] * np.exp(rng.uniform(-1e-3, 1e-3, params.K))
            assert compute_elbo(data, params, trial) <= best + 1e-10


class TestRunEstep:
    def test_monotone_and_converged(self):
        data, params, var = _setup(seed=7, t=25)
        res = run_estep(data, params, var, tol=1e-10, max_iters=500)
        assert res.converged
        assert res.min_sweep_delta >= -1e-9  # ascent up to roundoff
        assert res.elbo == pytest.approx(compute_elbo(data, params, res.var), rel=1e-12)
        res.var.validate(data)

    def test_bound_stays_below_exact_marginal(self):
        data, params, var = _setup(seed=8, t=4, n_levels=(2, 1))
        res = run_estep(data, params, var, tol=1e-12)
        assert res.elbo <= exact_log_marginal(data, params) + 1e-9

    def test_fixed_point(self):
        # re-running from a converged state must change nothing material
        data, params, var = _setup(seed=9, t=10)
        res1 = run_estep(data, params, var, tol=1e-12, max_iters=1000)
        res2 = run_estep(data, params, res1.var, tol=1e-12, max_iters=5)
        assert res2.elbo == pytest.approx(res1.elbo, rel=1e-10)

    def test_max_iters_reported(self):
        data, params, var = _setup(seed=10, t=30)
        res = run_estep(data, params, var, tol=1e-14, max_iters=2)
        assert not res.converged
        assert res.iters == 2

    def test_bad_tol(self):
        data, params, var = _setup()
        with pytest.raises(ValueError):
            run_estep(data, params, var, tol=0.0)

    def test_tighter_tolerance_never_lowers_bound(self):
        data, params, var = _setup(seed=11, t=15)
        loose = run_estep(data, params, var, tol=1e-3).elbo
        tight = run_estep(data, params, var, tol=1e-11).elbo
        assert tight >= loose - 1e-9

    def test_k_one_recovers_plain_likelihood(self):
        rng = np.random.default_rng(12)
        theta = [rng.dirichlet(np.ones(4), size=1)]
        params = ModelParams(np.array([1.0]), theta).validate()
        data, _, _ = generate_dataset(params, 6, [3], rng)
        var = VariationalParams.uniform_init(data, 1)
        var.phi = np.full((6, 1), 1.0)
        res = run_estep(data, params, var, tol=1e-12)
        assert res.elbo == pytest.approx(exact_log_marginal(data, params), rel=1e-10)
