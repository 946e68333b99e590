"""First-order optimization shared by all backends.

Adam-style gradient ascent with per-parameter adaptive steps, a fixed
iteration budget, a relative-improvement stopping rule, and best-iterate
tracking so the returned parameters never score worse than the starting
point.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError


@dataclass
class OptimizerOptions:
    learning_rate: float = 0.05
    max_iters: int = 500
    tol: float = 1e-6          # relative-improvement stopping tolerance
    patience: int = 20         # consecutive non-improving iterations before stopping
    seed: int = 0
    batch_size: int = 256      # minibatch backends only
    eval_every: int = 50       # steps between best-iterate evaluations (minibatch)


@dataclass
class FitResult:
    """Outcome of a hyperparameter fit: best iterate and bookkeeping."""

    params: dict
    objective: float
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)


class AdamState:
    """Plain Adam moment accumulator (maximization convention)."""

    def __init__(self, n, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, x, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return x + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def reset(self):
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0


def maximize(value_and_grad, x0, opts):
    """Gradient-ascend a deterministic objective, returning the best iterate.

    value_and_grad(x) -> (value, gradient). Non-finite starting objectives are
    an input error; a candidate step that fails numerically (or goes
    non-finite) is rejected, the learning rate halved, and optimization
    resumes from the incumbent.

    Returns (best_x, best_value, iterations, converged, trace); the caller
    labels parameters and packs a FitResult.
    """
    if opts.learning_rate <= 0.0:
        raise InputError(f"learning_rate must be positive, got {opts.learning_rate}")
    if opts.max_iters < 1:
        raise InputError(f"max_iters must be at least 1, got {opts.max_iters}")
    x = np.asarray(x0, dtype=float).copy()
    value, grad = value_and_grad(x)
    if not np.isfinite(value):
        raise InputError(f"objective is non-finite at the starting point ({value})")

    best_x, best_value = x.copy(), value
    trace = [value]
    adam = AdamState(x.size, opts.learning_rate)
    stall = 0
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iters + 1):
        candidate = adam.step(x, grad)
        try:
            cand_value, cand_grad = value_and_grad(candidate)
            ok = np.isfinite(cand_value) and np.all(np.isfinite(cand_grad))
        except NumericalError:
            ok = False
        if not ok:
            # reject, back off and restart the moments from the incumbent
            adam.lr *= 0.5
            adam.reset()
            x = best_x.copy()
            _, grad = value_and_grad(x)
            trace.append(best_value)
            stall += 1
        else:
            x, value, grad = candidate, cand_value, cand_grad
            trace.append(value)
            if value > best_value + opts.tol * (1.0 + abs(best_value)):
                best_value = value
                best_x = x.copy()
                stall = 0
            else:
                if value > best_value:
                    best_value = value
                    best_x = x.copy()
                stall += 1
        if stall >= opts.patience:
            converged = True
            break

    return best_x, best_value, iterations, converged, trace
