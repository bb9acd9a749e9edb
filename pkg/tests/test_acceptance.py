"""End-to-end acceptance checks; a PASS/FAIL line per criterion is printed in the summary."""

import gc
import math
import time

import numpy as np
import pytest
from scipy.stats import skew

from conftest import mmd_triple_loop, scratch_statistics
from test_moments import atom_constants, atom_tensor, enumerate_block_mmd

from kcpd import calibration as cal
from kcpd.baselines import HotellingState, KcusumState, hotelling_split, kcusum_step
from kcpd.bench import load_experiment, prepare, run_experiment, with_overrides
from kcpd.detector import DetectorConfig, KernelCusum, init_detector, mmd_unbiased
from kcpd.distributions import gaussian, sample
from kcpd.kernel import KernelSpec, median_heuristic
from kcpd.moments import (
    MomentEstimates,
    estimate_moments,
    mmd_population_estimate,
    third_moment_h0,
    third_moment_raw,
    var_h0,
)

pytestmark = pytest.mark.slow


def gaussian_setup(d, N, seed, M=10_000, draws=100_000):
    ref = sample(gaussian(d), M, [seed, 0])
    spec = KernelSpec(median_heuristic(ref, max_samples=2000, seed=seed))
    return ref, spec, estimate_moments(ref, spec, N, draws, seed)


@pytest.fixture(scope="module")
def shipped():
    exp = load_experiment("table3_mu2_sigma9")
    return exp, prepare(exp)


# -- exactness --------------------------------------------------------------------
@pytest.mark.acceptance(1, "recursive statistics equal scratch recomputation")
def test_recursive_matches_scratch_over_long_stream(record_property):
    start = time.perf_counter()
    ref, spec, m = gaussian_setup(5, 5, seed=1, M=2000, draws=20_000)
    cfg = DetectorConfig(20, 5, spec, math.inf, m)
    det = init_detector(cfg, ref, seed=2)
    rng = np.random.default_rng(3)
    window = []
    worst = 0.0
    for _ in range(1000):
        y = rng.normal(0.0, 1.0, size=5) + (rng.random() < 0.1) * 2.0
        window = (window + [y])[-cfg.w:]
        got = dict(det.step(y).per_b_pairs())
        want = scratch_statistics(det.ref_blocks, np.array(window), spec, m)
        assert set(got) == set(want)
        worst = max([worst] + [abs(got[B] - want[B]) for B in want])
    elapsed = time.perf_counter() - start
    record_property("detail", f"max |diff| {worst:.1e}, {elapsed:.1f} s")
    assert worst <= 1e-10
    assert elapsed < 30


@pytest.mark.acceptance(2, "unbiased MMD equals triple-loop oracle")
def test_mmd_unbiased_matches_triple_loop(record_property):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        B, d = int(rng.integers(2, 7)), int(rng.integers(1, 6))
        r = float(rng.uniform(0.3, 3.0))
        X, Y = rng.normal(size=(B, d)), rng.normal(0.5, 1.5, size=(B, d))
        worst = max(worst, abs(mmd_unbiased(KernelSpec(r), X, Y) - mmd_triple_loop(X, Y, r)))
    record_property("detail", f"max |diff| {worst:.1e}")
    assert worst <= 1e-12


# -- null distribution ---------------------------------------------------------------
@pytest.mark.acceptance(3, "H0 mean 0 and variance 1 for B in {5, 20, 50}")
def test_h0_self_normalization(record_property):
    d, N, w, trials = 20, 15, 50, 2000
    _, spec, m = gaussian_setup(d, N, seed=5)
    cfg = DetectorConfig(w, N, spec, math.inf, m)
    sizes = (5, 20, 50)
    z = np.empty((trials, len(sizes)))
    for i in range(trials):
        rng = np.random.default_rng([5, 1, i])
        det = KernelCusum(cfg, rng.standard_normal((N, w, d)))
        det.prime(rng.standard_normal((w, d)))
        bs, vals = det.scan()
        z[i] = vals[np.searchsorted(bs, sizes)]
    failures = []
    notes = []
    for k, B in enumerate(sizes):
        col = z[:, k]
        mean, mean_se = col.mean(), col.std(ddof=1) / math.sqrt(trials)
        var = col.var(ddof=1)
        var_se = np.std((col - mean) ** 2, ddof=1) / math.sqrt(trials)
        notes.append(f"B={B}: mean {mean:+.3f}, var {var:.3f}")
        if abs(mean) > 3 * mean_se or abs(var - 1) > 3 * var_se:
            failures.append(B)
    record_property("detail", ", ".join(notes))
    assert not failures


@pytest.mark.acceptance(4, "third moment matches empirical skewness")
def test_third_moment_matches_empirical_skewness(record_property):
    d, N, B, trials = 5, 15, 10, 5000
    _, spec, m = gaussian_setup(d, N, seed=6, draws=200_000)
    cfg = DetectorConfig(B, N, spec, math.inf, m, b_min=B)
    z = np.empty(trials)
    for i in range(trials):
        rng = np.random.default_rng([6, 1, i])
        det = KernelCusum(cfg, rng.standard_normal((N, B, d)))
        det.prime(rng.standard_normal((B, d)))
        z[i] = det.scan()[1][0]
    g1 = skew(z)
    boot = np.random.default_rng(7).integers(0, trials, size=(400, trials))
    se = np.std([skew(z[idx]) for idx in boot], ddof=1)
    want = third_moment_h0(m, B)
    record_property("detail", f"empirical {g1:.3f} +/- {se:.3f}, formula {want:.3f}")
    assert abs(g1 - want) <= 3 * se


@pytest.mark.acceptance(4, "third moment matches empirical skewness")
@pytest.mark.parametrize("N", [1, 2, 3])
def test_third_moment_terms_exact_on_six_atoms(N):
    H = atom_tensor(np.random.default_rng(9).normal(size=(6, 3)), KernelSpec(1.1))
    C1, C2, terms = atom_constants(H)
    m = MomentEstimates.build(C1, C2, terms, N)
    D = enumerate_block_mmd(H, 2, N)
    assert (D**2).mean() == pytest.approx(var_h0(m, 2), abs=1e-10)
    assert (D**3).mean() == pytest.approx(third_moment_raw(m, 2), abs=1e-10)


# -- ARL approximation -----------------------------------------------------------------
@pytest.mark.acceptance(5, "skewness-corrected ARL approximation")
def test_skew_threshold_arl_accuracy(record_property):
    d, N, w, trials = 20, 15, 50, 500
    targets = (100, 300, 500)
    ref, spec, m = gaussian_setup(d, N, seed=10)
    cfg = DetectorConfig(w, N, spec, math.inf, m)
    skew_b = {g: cal.threshold_for_arl(g, w, m, "skewness_corrected").threshold for g in targets}
    gauss_b = {g: cal.threshold_for_arl(g, w, m, "gaussian_order").threshold for g in targets}
    pre = gaussian(d)

    def make(i):
        s = cal.trial_seed(10, 5, i)
        det = init_detector(cfg, ref, seed=s + [0])
        det.prime(sample(pre, w, s + [1]))
        return det, cal._Stream(pre, s + [2])

    horizon = 10 * max(targets)
    cap = 1.02 * max(skew_b.values())
    recs = [tr.rec for tr in cal.simulate_records(make, trials, horizon, cap)]
    ratio_ok, closer = 0, 0
    notes = []
    for g in targets:
        arl = cal.empirical_arl(recs, skew_b[g], 10 * g)[0]
        mc_b = cal.calibrate_from_records(recs, g, 10 * g)
        ratio_ok += 0.5 <= arl / g <= 2.0
        closer += abs(skew_b[g] - mc_b) < abs(gauss_b[g] - mc_b)
        notes.append(f"ARL {g}: skew b {skew_b[g]:.2f} -> {arl:.0f}, "
                     f"gauss b {gauss_b[g]:.2f}, MC b {mc_b:.2f}")
    record_property("detail", "; ".join(notes))
    assert ratio_ok == len(targets)
    assert closer >= 2


# -- detection delay ---------------------------------------------------------------------
@pytest.mark.acceptance(6, "desk-scale EDD ordering and magnitude")
def test_shipped_config_edd_ordering(shipped, record_property):
    exp, setup = shipped
    rows = {r.procedure: r for r in run_experiment(exp, setup=setup)}
    record_property("detail", ", ".join(f"{p} {r.edd_mean:.2f}" for p, r in rows.items()))
    assert 2.5 <= rows["proposed"].edd_mean <= 4.5
    assert 6.5 <= rows["scanb"].edd_mean <= 11
    assert rows["proposed"].edd_mean < rows["kcusum"].edd_mean
    assert rows["proposed"].edd_mean < rows["scanb"].edd_mean


def _post_change_scan(exp, setup, trials, t, sizes):
    cfg = setup.config
    z = np.empty((trials, len(sizes)))
    for i in range(trials):
        s = [exp.seed, 7, i]
        det = init_detector(cfg, setup.reference, seed=s + [0])
        det.prime(sample(exp.pre, cfg.w, s + [1]))
        for y in sample(exp.post, t, s + [2]):
            r = det.step(y)
        got = dict(r.per_b_pairs())
        z[i] = [got[B] for B in sizes]
    return z


@pytest.fixture(scope="module")
def h1_means(shipped):
    exp, setup = shipped
    d_hat = mmd_population_estimate(sample(exp.pre, 5000, [exp.seed, 8]),
                                    sample(exp.post, 5000, [exp.seed, 9]), setup.spec)
    z = _post_change_scan(exp, setup, 1000, 10, (5, 20))
    return setup.config.moments.rho, d_hat, z.mean(axis=0)


def _mean_formula(rho, d_hat, B, t, factor):
    root = math.sqrt(B * (B - 1))
    return factor * rho * d_hat * (root if B <= t else t * (t - 1) / root)


@pytest.mark.acceptance(7, "post-change mean of the scan statistic")
def test_h1_mean_formula(h1_means, record_property):
    rho, d_hat, means = h1_means
    errs = [means[k] / _mean_formula(rho, d_hat, B, 10, 1.0) - 1 for k, B in enumerate((5, 20))]
    record_property("detail", "relative error " + ", ".join(f"{e:+.2f}" for e in errs))
    assert max(abs(e) for e in errs) <= 0.10


def test_h1_mean_with_exact_normalization(h1_means):
    """Z_B is standardized by the exact H0 sd 2 / (rho sqrt(B(B-1))), halving the mean."""
    rho, d_hat, means = h1_means
    for k, B in enumerate((5, 20)):
        assert means[k] == pytest.approx(_mean_formula(rho, d_hat, B, 10, 0.5), rel=0.10)


# -- streaming cost ---------------------------------------------------------------------------
@pytest.mark.acceptance(8, "constant per-step cost")
def test_per_step_cost_is_flat(record_property):
    d, N, w, steps = 20, 15, 50, 20_000
    ref = sample(gaussian(d), N * w, 11)
    m = MomentEstimates.build(1.0, 0.1, (0.0,) * 6, N)
    det = init_detector(DetectorConfig(w, N, KernelSpec(5.0), math.inf, m), ref)
    ys = sample(gaussian(d), steps, 12)
    cost = np.empty(steps)
    gc.disable()
    try:
        for i, y in enumerate(ys):
            t0 = time.perf_counter()
            det.step(y)
            cost[i] = time.perf_counter() - t0
    finally:
        gc.enable()
    early, late = cost[w:2 * w].mean(), cost[9 * w:10 * w].mean()
    tail = cost[-w:].mean()
    record_property("detail", f"{early * 1e6:.0f} vs {late * 1e6:.0f} us/step, "
                              f"last w steps {tail * 1e6:.0f} us/step")
    assert late <= 2 * early


# -- window recommendation ------------------------------------------------------------------------
@pytest.mark.acceptance(9, "recommended window versus four times larger")
def test_recommended_window_diminishing_returns(shipped, record_property):
    exp, setup = shipped
    m = setup.config.moments
    d_hat = mmd_population_estimate(sample(exp.pre, 5000, [exp.seed, 8]),
                                    sample(exp.post, 5000, [exp.seed, 9]), setup.spec)
    b = cal.threshold_for_arl(500, exp.w, m, "skewness_corrected").threshold
    w_rec = cal.recommend_window(b, m.rho, d_hat, 1.0, exp.N, 1.0)
    res = {}
    for w in (w_rec, 4 * w_rec):
        spec = with_overrides(exp, w=w, procedures=["proposed"], arl_targets=[500.0])
        res[w] = run_experiment(spec)[0]
    a, c = res[w_rec], res[4 * w_rec]
    gap, se = abs(a.edd_mean - c.edd_mean), math.hypot(a.edd_stderr, c.edd_stderr)
    record_property("detail", f"w={w_rec}: {a.edd_mean:.2f}+/-{a.edd_stderr:.2f}, "
                              f"w={4 * w_rec}: {c.edd_mean:.2f}+/-{c.edd_stderr:.2f}")
    assert a.miss_count == c.miss_count == 0
    assert gap <= 2 * se


# -- baselines -------------------------------------------------------------------------------------
@pytest.mark.acceptance(10, "baseline hand examples and invariance")
def test_kcusum_six_step_trace():
    st = KcusumState(KernelSpec(1.0), [[0.0], [0.0], [0.0], [0.0], [0.0], [5.0]],
                     delta=0.5, shuffle=False)
    e = math.exp(-25)
    want = [0.0, 1.5 - 2 * e, 1.5 - 2 * e, 1.0 - 2 * e, 1.0 - 2 * e, 0.0]
    got = [kcusum_step(st, [y])[1] for y in (5.0, 5.0, 0.0, 0.0, 5.0, 0.0)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)


@pytest.mark.acceptance(10, "baseline hand examples and invariance")
def test_hotelling_one_dimensional_example():
    assert abs(hotelling_split([[0.0]], [[2.0], [3.0], [5.0]], 2) - 4.5) <= 1e-12
    h = HotellingState([[0.0]])
    for v in (2.0, 3.0, 5.0):
        h.step([v])
    kappas, vals = h.statistics()
    assert abs(vals[list(kappas).index(2)] - 4.5) <= 1e-12


@pytest.mark.acceptance(10, "baseline hand examples and invariance")
def test_hotelling_affine_invariance():
    rng = np.random.default_rng(13)
    ref, ys = rng.normal(size=(40, 4)), rng.normal(0.5, 1.3, size=(20, 4))
    A, c = rng.normal(size=(4, 4)) + 3 * np.eye(4), rng.normal(size=4) * 10
    a, b = HotellingState(ref), HotellingState(ref @ A.T + c)
    for y in ys:
        a.step(y)
        b.step(A @ y + c)
        np.testing.assert_allclose(a.statistics()[1], b.statistics()[1], rtol=1e-8, atol=1e-8)
