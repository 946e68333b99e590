import numpy as np
import pytest

from sensorgp import optim
from sensorgp.errors import InputError, NumericalError


def quadratic(center):
    center = np.asarray(center, dtype=float)

    def value_and_grad(x):
        d = x - center
        return float(-np.sum(d * d)), -2.0 * d

    return value_and_grad


def test_maximize_concave_quadratic():
    opts = optim.OptimizerOptions(learning_rate=0.1, max_iters=2000, tol=1e-12, patience=100)
    best_x, best_v, iters, converged, trace = optim.maximize(
        quadratic([1.0, -2.0, 0.5]), np.zeros(3), opts
    )
    np.testing.assert_allclose(best_x, [1.0, -2.0, 0.5], atol=1e-3)
    assert best_v > -1e-5
    assert iters <= opts.max_iters
    assert trace[-1] == pytest.approx(best_v)


def test_best_iterate_is_returned_not_last():
    # objective with a narrow peak: overshooting after the peak must not
    # degrade the reported optimum
    calls = []

    def vag(x):
        v = float(-((x[0] - 3.0) ** 2))
        calls.append(v)
        return v, np.array([-2.0 * (x[0] - 3.0)])

    opts = optim.OptimizerOptions(learning_rate=0.5, max_iters=300, tol=0.0, patience=300)
    best_x, best_v, *_ = optim.maximize(vag, np.array([0.0]), opts)
    assert best_v == pytest.approx(max(calls), abs=1e-12)


def test_trace_best_matches_objective():
    opts = optim.OptimizerOptions(learning_rate=0.05, max_iters=200)
    _, best_v, _, _, trace = optim.maximize(quadratic([0.7]), np.array([5.0]), opts)
    assert max(trace) == pytest.approx(best_v)


def test_patience_stops_early():
    opts = optim.OptimizerOptions(learning_rate=1e-9, max_iters=5000, tol=1e-3, patience=5)
    _, _, iters, converged, _ = optim.maximize(quadratic([1.0]), np.array([0.0]), opts)
    assert converged
    assert iters < 200


def test_non_finite_start_rejected():
    with pytest.raises(InputError):
        optim.maximize(quadratic([0.0]), np.array([np.nan]), optim.OptimizerOptions())


def test_recovers_from_numerical_errors():
    # objective blows up beyond x=2; the optimizer should back off and still
    # converge toward the peak at 1.9
    def vag(x):
        if x[0] > 2.0:
            raise NumericalError("region not factorizable")
        return float(-((x[0] - 1.9) ** 2)), np.array([-2.0 * (x[0] - 1.9)])

    opts = optim.OptimizerOptions(learning_rate=0.3, max_iters=3000, tol=1e-10, patience=200)
    best_x, best_v, *_ = optim.maximize(vag, np.array([0.0]), opts)
    assert best_x[0] == pytest.approx(1.9, abs=1e-2)


def test_adam_state_step_direction():
    adam = optim.AdamState(2, learning_rate=0.1)
    x = np.zeros(2)
    g = np.array([1.0, -1.0])
    x2 = adam.step(x, g)
    # maximization: step moves along the gradient
    assert x2[0] > 0 and x2[1] < 0


def test_options_validation():
    with pytest.raises(InputError):
        optim.maximize(quadratic([0.0]), np.zeros(1), optim.OptimizerOptions(learning_rate=-1.0))
    with pytest.raises(InputError):
        optim.maximize(quadratic([0.0]), np.zeros(1), optim.OptimizerOptions(max_iters=0))
