"""Sparse variational GP against the dense solver it approximates.

Two claims, demonstrated live: the ELBO never exceeds the exact log
marginal likelihood, and with inducing points equal to the data the
approximation collapses onto the exact posterior.

Run: python demos/sparse_vs_dense.py
"""

import time

import numpy as np

from sensorgp import (
    GPModel,
    OptimizerOptions,
    SVGPModel,
    SquaredExponential,
    init_inducing,
)


def main():
    rng = np.random.default_rng(8)

    # collapse: M = N, q(u) set to the exact posterior
    X = rng.uniform(-3, 3, size=(100, 2))
    kernel = SquaredExponential(1.0, 1.0)
    y = rng.multivariate_normal(np.zeros(100), kernel.gram(X) + 0.1 * np.eye(100))
    exact = GPModel(kernel.copy(), X, y, noise_variance=0.1)
    sparse = SVGPModel(kernel.copy(), X, y, X.copy(), noise_variance=0.1)
    sparse.set_optimal_variational()
    print(f"collapse with M=N: lml {exact.log_marginal_likelihood():.6f}, "
          f"elbo {sparse.elbo():.6f}, gap {abs(sparse.elbo() - exact.log_marginal_likelihood()):.2e}")

    # the bound, at a few inducing counts
    print("\ninducing points vs bound tightness (same data):")
    lml = exact.log_marginal_likelihood()
    for m in (5, 20, 50, 100):
        s = SVGPModel(kernel.copy(), X, y, init_inducing(X, m, seed=1),
                      noise_variance=0.1)
        s.set_optimal_variational()
        print(f"  M={m:3d}: elbo {s.elbo():9.3f}  (lml {lml:.3f}, "
              f"slack {lml - s.elbo():.4f})")

    # bigger problem: minibatch SVGP vs exact GP on a subsample
    n = 4000
    Xb = rng.uniform(-5, 5, size=(n, 2))
    kb = SquaredExponential(2.0, 1.5)
    # sample cheaply from the prior via inducing-style features
    W = rng.normal(size=(2, 200)) / 1.5
    phi = np.exp(1j * (Xb @ W))
    f = np.sqrt(2.0 / 200) * (phi * rng.normal(size=200)).real.sum(axis=1) * np.sqrt(2.0)
    yb = f + rng.normal(0, 0.3, size=n)

    t0 = time.perf_counter()
    svgp = SVGPModel(kb.copy(), Xb, yb, init_inducing(Xb, 60, seed=0),
                     noise_variance=0.5, seed=0)
    svgp.fit(OptimizerOptions(max_iters=800, learning_rate=0.05, batch_size=256, seed=0))
    t_svgp = time.perf_counter() - t0

    keep = rng.choice(n, size=800, replace=False)
    t0 = time.perf_counter()
    dense = GPModel(kb.copy(), Xb[keep], yb[keep], noise_variance=0.5)
    dense.fit(OptimizerOptions(max_iters=150, learning_rate=0.05, seed=0))
    t_dense = time.perf_counter() - t0

    Xq = rng.uniform(-5, 5, size=(500, 2))
    # compare both against held-back noisy draws along the same features
    phi_q = np.exp(1j * (Xq @ W))
    print(f"\nn={n}: svgp (M=60, minibatch 256) fitted in {t_svgp:.1f}s, "
          f"dense on 800-point subsample in {t_dense:.1f}s")
    gap = np.abs(svgp.predict(Xq).mean - dense.predict(Xq).mean)
    print(f"prediction disagreement on 500 fresh points: "
          f"mean {gap.mean():.3f}, max {gap.max():.3f} "
          f"(target std {yb.std():.2f})")


if __name__ == "__main__":
    main()
