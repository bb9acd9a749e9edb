"""Compare threshold choices and the recommended window length.

Analytic thresholds come from two approximations of the false-alarm rate. The
Monte Carlo threshold is the one whose simulated mean run length under no
change reaches the target. The script prints the three side by side, then
suggests a window length for a given change and checks the predicted delay.

This is a small-scale run (about a minute). Increase TRIALS for tighter
Monte Carlo estimates.
"""

from kcpd import DetectorConfig, KernelSpec, estimate_moments, median_heuristic
from kcpd.calibration import (
    edd_predict,
    monte_carlo_edd,
    monte_carlo_threshold,
    recommend_window,
    threshold_for_arl,
)
from kcpd.distributions import gaussian, gaussian_mixture, sample
from kcpd.moments import mmd_population_estimate

D, N, W, GAMMA, TRIALS = 10, 10, 30, 200, 100
pre = gaussian(D)
post = gaussian_mixture(D, [(0.3, 0.0, 1.0), (0.7, 2.0, 9.0)])

reference = sample(pre, 5000, seed=1)
spec = KernelSpec(median_heuristic(reference, max_samples=2000))
moments = estimate_moments(reference, spec, N, n_draws=50_000)
config = DetectorConfig(W, N, spec, float("inf"), moments)

print(f"thresholds for ARL {GAMMA} with w={W}:")
for method in ("gaussian_order", "skewness_corrected"):
    print(f"  {method:<20} {threshold_for_arl(GAMMA, W, moments, method).threshold:.3f}")
mc = monte_carlo_threshold(config, pre, GAMMA, TRIALS, horizon=10 * GAMMA, seed=5,
                           reference=reference)
print(f"  {'monte_carlo':<20} {mc.threshold:.3f} (empirical ARL {mc.predicted_arl:.0f})")

d_hat = mmd_population_estimate(sample(pre, 3000, seed=6), sample(post, 3000, seed=7), spec)
w_rec = recommend_window(mc.threshold, moments.rho, d_hat, 1.0, N, 1.0)
print(f"\nestimated MMD^2 of the change {d_hat:.4f}; recommended window {w_rec}")
print(f"first-order delay prediction {edd_predict(mc.threshold, moments.rho, d_hat):.2f}")

edd = monte_carlo_edd(config.with_threshold(mc.threshold), pre, post, TRIALS, horizon=60,
                      seed=8, reference=reference)
print(f"simulated delay at w={W}: {edd.mean:.2f} +/- {edd.stderr:.2f} ({edd.miss_count} misses)")
