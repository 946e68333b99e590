"""Fit an exact GP to a noisy daily cycle and inspect what it learned.

Run: python demos/exact_gp_daily_cycle.py
"""

import numpy as np

from sensorgp import GPModel, OptimizerOptions, Periodic, SquaredExponential


def main():
    rng = np.random.default_rng(4)
    t = np.sort(rng.uniform(0, 96, size=120))[:, None]   # four days, hours
    truth = 30.0 + 6.0 * np.sin(2 * np.pi * t[:, 0] / 24.0)
    y = truth + rng.normal(0, 1.0, size=len(t))

    kernel = Periodic(variance=4.0, lengthscale=2.0, period=24.0) + SquaredExponential(
        variance=1.0, lengthscale=30.0
    )
    model = GPModel(kernel, t, y, noise_variance=4.0)
    print(f"before fit: log marginal likelihood {model.log_marginal_likelihood():.1f}")

    result = model.fit(OptimizerOptions(max_iters=300, learning_rate=0.05, seed=0))
    print(f"after  fit: log marginal likelihood {result.objective:.1f} "
          f"({result.iterations} iterations, converged={result.converged})")
    print(f"learned noise std {np.sqrt(model.noise_variance):.2f} (true 1.0)")

    # predict a fifth day the model never saw
    tq = np.arange(96.0, 120.0)[:, None]
    p = model.predict(tq)
    expected = 30.0 + 6.0 * np.sin(2 * np.pi * tq[:, 0] / 24.0)
    print(f"\nday-5 forecast rmse vs noise-free truth: "
          f"{np.sqrt(np.mean((p.mean - expected) ** 2)):.2f}")

    print("\n hour   truth   mean    95% interval")
    for i in range(0, 24, 3):
        lo = p.mean[i] - 1.96 * np.sqrt(p.observed_variance[i])
        hi = p.mean[i] + 1.96 * np.sqrt(p.observed_variance[i])
        print(f"  {int(tq[i, 0]) % 24:3d}  {expected[i]:6.1f}  {p.mean[i]:6.1f}"
              f"    [{lo:5.1f}, {hi:5.1f}]")

    inside = np.mean(
        np.abs(p.mean - expected) <= 1.96 * np.sqrt(p.observed_variance)
    )
    print(f"\nfraction of truth inside the 95% band: {inside:.2f}")


if __name__ == "__main__":
    main()
