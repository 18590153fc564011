import math
import warnings

import numpy as np
import pytest

from conftest import random_instance, tiny_sample
from memcal.calibrate import (
    CalibrationProblem,
    SolverOptions,
    calibrate,
    check_feasibility,
    constraint_jacobian,
    constraint_residual,
    greg_closed_form,
    primal_objective,
    solve_dual,
)
from memcal.design import Sample
from memcal.errors import InfeasibleError, SingularityError, SolverError
from memcal.priors import chi2_distance, exponential_prior, gaussian_prior, poisson_prior

T = [1.25]


def test_gaussian_tiny_oracle(tiny):
    sol = calibrate(tiny, tiny.x_s, T, "gaussian")
    assert sol.lambda_hat[0] == pytest.approx(-0.1, abs=1e-12)
    np.testing.assert_allclose(sol.weights, [1.8, 1.6], atol=1e-12)
    assert sol.estimate == pytest.approx(1.65, abs=1e-12)
    assert sol.grad_norm <= 1e-10


def test_poisson_tiny_oracle(tiny):
    sol = calibrate(tiny, tiny.x_s, T, "poisson")
    # a = e^{2 lambda} solves 2a^2 + a - 2.5 = 0
    a = (-1 + math.sqrt(21)) / 4
    assert sol.lambda_hat[0] == pytest.approx(0.5 * math.log(a), abs=1e-10)
    np.testing.assert_allclose(sol.weights, [2 * a, 2 * a * a], atol=1e-10)
    np.testing.assert_allclose(sol.weights, [1.7913, 1.6044], atol=1e-4)
    assert sol.estimate == pytest.approx((2 * a + 6 * a * a) / 4, abs=1e-10)


def test_exponential_tiny(tiny):
    sol = calibrate(tiny, tiny.x_s, T, "exponential")
    np.testing.assert_allclose(sol.weights, [1.78300943, 1.60849528], atol=1e-8)
    np.testing.assert_allclose(sol.weights / tiny.d, 1 / (1 - sol.lambda_hat[0] * tiny.d * tiny.x_s[:, 0]))


@pytest.mark.parametrize("prior", ["gaussian", "exponential", "poisson"])
def test_already_calibrated_returns_design_weights(prior, tiny):
    sol = calibrate(tiny, tiny.x_s, [tiny.ht_mean(tiny.x_s[:, 0])], prior)
    assert sol.iterations == 0
    assert np.all(sol.lambda_hat == 0)
    np.testing.assert_array_equal(sol.weights, tiny.d)


def test_greg_tiny(tiny):
    est, B = greg_closed_form(tiny, tiny.x_s, T)
    assert B[0] == pytest.approx(1.4)
    assert est == pytest.approx(1.65)
    est_ht, _ = greg_closed_form(tiny, tiny.x_s, [1.5])
    assert est_ht == pytest.approx(tiny.ht_mean(tiny.y_s))


def test_greg_constant_y():
    rng = np.random.default_rng(5)
    s, x, t = random_instance(rng, n=20, k=2)
    x[:, 0] = 1.0
    t[0] = 1.0
    c = 3.7
    est, _ = greg_closed_form(s, x, t, y=np.full(s.n, c))
    assert est == pytest.approx(c, rel=1e-12)
    sol = calibrate(s, x[:, 1:], t[1:], "gaussian")
    est2, _ = greg_closed_form(s, x[:, 1:], t[1:], y=np.full(s.n, c))
    assert est2 == pytest.approx(c * sol.weights.sum() / s.N, rel=1e-10)


def test_primal_objective_tiny(tiny):
    prob = CalibrationProblem(tiny, tiny.x_s, T, "gaussian")
    w = np.array([1.8, 1.6])
    assert primal_objective(prob, tiny.d) == 0.0
    # Lambda* = (t-1)^2/(2 pi q); the chi-square distance D1 carries no 1/2
    assert primal_objective(prob, w) == pytest.approx(0.05)
    assert chi2_distance(tiny.pi, w) == pytest.approx(0.1)
    sol = solve_dual(prob)
    assert sol.dissimilarity_value == pytest.approx(0.05, abs=1e-12)
    # feasible line through w_hat: w1 + 2 w2 = 5
    for dw in np.linspace(-0.5, 0.5, 41):
        if dw == 0:
            continue
        wt = w + dw * np.array([2.0, -1.0])
        assert primal_objective(prob, wt) > 0.05


def test_feasibility_examples(tiny):
    rep = check_feasibility(CalibrationProblem(tiny, tiny.x_s, T, "gaussian"))
    assert rep.feasible and rep.method == "rank"
    rep = check_feasibility(CalibrationProblem(tiny, tiny.x_s, [0.0], "poisson"))
    assert not rep.feasible
    rep = check_feasibility(CalibrationProblem(tiny, tiny.x_s, T, "poisson"))
    assert rep.feasible and rep.margin > 0
    assert set(rep.to_dict()) == {"feasible", "full_rank", "method", "margin", "message"}


@pytest.mark.parametrize("prior", ["poisson", "exponential"])
@pytest.mark.parametrize("target", [0.0, -1.0])
def test_infeasible_positive_prior(prior, target, tiny):
    with pytest.raises(InfeasibleError) as err:
        calibrate(tiny, tiny.x_s, [target], prior)
    assert err.value.report is not None and not err.value.report.feasible


def test_solver_error_carries_trace():
    rng = np.random.default_rng(0)
    s, x, t = random_instance(rng, n=30, k=3, positive=True)
    with pytest.raises(SolverError) as err:
        calibrate(s, x, t * 1.02, "poisson", options=SolverOptions(max_iter=1))
    assert not isinstance(err.value, InfeasibleError)
    assert len(err.value.trace) == 2


def test_gaussian_equals_greg_random():
    rng = np.random.default_rng(11)
    for _ in range(100):
        s, x, t = random_instance(rng)
        q = rng.uniform(0.5, 2.0, s.n)
        sol = calibrate(s, x, t, "gaussian", q=q)
        est, _ = greg_closed_form(s, x, t, q=q)
        assert sol.estimate == pytest.approx(est, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("prior", ["gaussian", "exponential", "poisson"])
def test_constraints_and_weight_formula(prior):
    rng = np.random.default_rng(21)
    for _ in range(40):
        s, x, t = random_instance(rng, positive=True)
        prob = CalibrationProblem(s, x, t, prior)
        sol = solve_dual(prob)
        tol = 1e-10 * max(1.0, np.max(np.abs(t)))
        assert np.max(np.abs(sol.weights @ x / s.N - t)) <= tol
        from memcal.priors import PriorBank

        bank = PriorBank(prob.priors, s.n)
        np.testing.assert_array_equal(sol.weights, s.d * bank.dlog_laplace((s.d[:, None] * x) @ sol.lambda_hat))
        if prior != "gaussian":
            assert np.all(sol.weights > 0)
        # dual objective decreases strictly over Armijo steps; a final step
        # taken below the rounding floor of G may only move it by noise
        for a, b in zip(sol.trace, sol.trace[1:]):
            if a["accept"] == "armijo":
                assert b["objective"] < a["objective"]
            else:
                assert b["objective"] <= a["objective"] + 64 * np.finfo(float).eps * max(1, abs(a["objective"]))
                assert b["grad_norm"] < a["grad_norm"]


def test_jacobian_finite_difference():
    rng = np.random.default_rng(2)
    for prior in ["gaussian", "exponential", "poisson"]:
        s, x, t = random_instance(rng, n=15, k=3, positive=True)
        prob = CalibrationProblem(s, x, t, prior)
        lam = rng.normal(scale=0.02, size=3)
        J = constraint_jacobian(prob, lam)
        h = 1e-6
        num = np.column_stack(
            [
                (constraint_residual(prob, lam + h * e) - constraint_residual(prob, lam - h * e)) / (2 * h)
                for e in np.eye(3)
            ]
        )
        np.testing.assert_allclose(num, J, rtol=1e-6, atol=1e-8 * np.abs(J).max())


def test_mixed_prior_list():
    rng = np.random.default_rng(8)
    s, x, t = random_instance(rng, n=12, k=2, positive=True)
    pri = [poisson_prior() if i % 2 else exponential_prior() for i in range(s.n)]
    sol = calibrate(s, x, t, pri)
    assert np.max(np.abs(sol.weights @ x / s.N - t)) <= 1e-10 * max(1, np.abs(t).max())


def test_negative_gaussian_weights_flagged(tiny):
    sol = calibrate(tiny, tiny.x_s, [0.2], "gaussian")
    assert sol.negative_weights and np.any(sol.weights < 0)
    assert sol.diagnostics()["negative_weights"] is True


def test_degenerate_column_warns():
    s = Sample(np.arange(3), np.full(3, 2.0), np.array([[2.0, 1.0], [2.0, 2.0], [2.0, 4.0]]), None, 6, np.arange(1, 4))
    with pytest.warns(RuntimeWarning, match="constant"):
        calibrate(s, s.x_s, [2.0, 2.0])


def test_rank_deficient_gaussian_consistent_target():
    s = Sample(np.arange(3), np.full(3, 2.0), np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]), None, 6, np.arange(1, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            sol = calibrate(s, s.x_s, [2.2, 4.4])
        except SingularityError:
            return
    assert np.max(np.abs(sol.weights @ s.x_s / 6 - [2.2, 4.4])) <= 1e-9


def test_problem_validation(tiny):
    with pytest.raises(ValueError, match="target has length"):
        CalibrationProblem(tiny, tiny.x_s, [1.0, 2.0])
    with pytest.raises(ValueError):
        CalibrationProblem(tiny, tiny.x_s, [np.nan])
    with pytest.raises(ValueError):
        CalibrationProblem(tiny, tiny.x_s, T, q=[1.0, -1.0])


def test_custom_family(tiny):
    g = gaussian_prior(np.array([0.5, 0.5]))
    sol = calibrate(tiny, tiny.x_s, T, g)
    np.testing.assert_allclose(sol.weights, [1.8, 1.6], atol=1e-12)
