"""Threshold calibration: analytic ARL approximations and Monte Carlo estimates.

Analytic ARL for threshold b and window w:

    ARL(b) ~ sqrt(2 pi) / b * [ sum_{B=2}^{w} exp(psi_B - theta_B b)
                                * (2B-1)/(B(B-1)) * nu(theta_B sqrt(2(2B-1)/(B(B-1)))) ]^{-1}

with theta_B = b, psi_B = b^2/2 at Gaussian order, and theta_B the root of the
cubic-truncated log-MGF when the H0 skewness of Z_B is taken into account.

Monte Carlo runs store, per trial, the running-maximum record of the detection
statistic until it reaches a cap. The stopping time at any threshold below the
cap is then read off the records, so empirical ARL curves and threshold
searches need a single batch of simulations.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf, logsumexp, ndtr

from .detector import DetectorConfig, KernelCusum, init_detector
from .distributions import DistributionSpec, sample
from .moments import MomentEstimates, third_moment_h0

METHODS = ("gaussian_order", "skewness_corrected", "gaussian_collapsed")
_SQRT2PI = math.sqrt(2.0 * math.pi)


# -- analytic ------------------------------------------------------------------
def nu(mu):
    """Overshoot correction factor; accepts scalars or arrays of positive values."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("nu requires mu > 0")
    half = mu / 2.0
    # Phi(x) - 1/2 via erf keeps full relative accuracy for small x
    num = (2.0 / mu) * 0.5 * erf(half / math.sqrt(2.0))
    den = half * ndtr(half) + np.exp(-half**2 / 2.0) / _SQRT2PI
    out = num / den
    return float(out) if out.ndim == 0 else out


def skew_theta(b: float, m3: float) -> float:
    """Root of theta + m3 theta^2 / 2 = b nearest to b."""
    if abs(m3) < 1e-12:
        return float(b)
    disc = 1.0 + 2.0 * b * m3
    if disc < 0:
        raise ValueError("skewness correction infeasible; fall back to gaussian_order")
    # rationalized form of (-1 + sqrt(disc)) / m3, stable as m3 -> 0
    return 2.0 * b / (1.0 + math.sqrt(disc))


def per_b_theta(b: float, w: int, m: MomentEstimates | None, method: str):
    """theta_B and psi_B for B = 2..w."""
    Bs = np.arange(2, w + 1)
    if method == "skewness_corrected":
        if m is None:
            raise ValueError("skewness_corrected needs moment estimates")
        m3 = np.array([third_moment_h0(m, int(B)) for B in Bs])
        theta = np.array([skew_theta(b, v) for v in m3])
        psi = theta**2 / 2.0 + m3 * theta**3 / 6.0
    else:
        theta = np.full(len(Bs), float(b))
        psi = theta**2 / 2.0
    return Bs, theta, psi


def arl_approx(b: float, w: int, m: MomentEstimates | None = None,
               method: str = "gaussian_order") -> float:
    """Analytic ARL of the window-limited procedure at threshold ``b``.

    ``gaussian_collapsed`` is the closed form sqrt(2 pi) b e^{b^2/2} / w and
    needs no moments.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if b <= 0:
        raise ValueError("threshold b must be positive")
    if w < 2:
        raise ValueError("window length w must be >= 2")
    if method == "gaussian_collapsed":
        return _exp_or_inf(math.log(_SQRT2PI * b / w) + b * b / 2.0)
    Bs, theta, psi = per_b_theta(b, w, m, method)
    if np.any(theta <= 0):
        raise ValueError("non-positive theta_B; threshold too small for this model")
    ratio = (2 * Bs - 1) / (Bs * (Bs - 1))
    log_terms = psi - theta * b + np.log(ratio) + np.log(nu(theta * np.sqrt(2.0 * ratio)))
    return _exp_or_inf(math.log(_SQRT2PI / b) - logsumexp(log_terms))


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 700 else math.inf


@dataclass
class CalibrationResult:
    threshold: float
    target_arl: float
    method: str
    predicted_arl: float
    w: int
    per_b_theta: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["threshold"]), float(d["target_arl"]), d["method"],
                   float(d["predicted_arl"]), int(d["w"]), d.get("per_b_theta"),
                   dict(d.get("extra", {})))

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        return cls.from_dict(json.loads(text))


def threshold_for_arl(gamma: float, w: int, m: MomentEstimates | None = None,
                      method: str = "gaussian_order", rtol: float = 1e-6,
                      bracket=(0.1, 50.0)) -> CalibrationResult:
    """Smallest b with predicted ARL >= gamma, by bisection on a widening bracket."""
    if gamma <= 1:
        raise ValueError("target ARL must exceed 1")

    def f(b):
        return arl_approx(b, w, m, method)

    lo, hi = bracket
    for _ in range(60):
        try:
            if f(lo) < gamma:
                break
        except ValueError:
            pass
        lo /= 2.0
    else:
        raise ValueError(f"target ARL {gamma} unreachable: ARL exceeds it for every b in bracket")
    for _ in range(10):
        if f(hi) >= gamma:
            break
        hi *= 2.0
    else:
        raise ValueError(f"target ARL {gamma} unreachable within the threshold bracket")
    # feasibility of the skewness correction can fail near lo; move lo up until defined
    while True:
        try:
            f(lo)
            break
        except ValueError:
            lo = (lo + hi) / 2.0
    while hi - lo > rtol * hi * 1e-3:
        mid = 0.5 * (lo + hi)
        if f(mid) >= gamma:
            hi = mid
        else:
            lo = mid
    thetas = None
    if method != "gaussian_collapsed":
        thetas = per_b_theta(hi, w, m, method)[1].tolist()
    return CalibrationResult(hi, float(gamma), method, f(hi), int(w), thetas)


def edd_predict(b: float, rho: float, d_hat: float) -> float:
    """First-order detection delay b / (rho D)."""
    if d_hat <= 0:
        raise ValueError("change undetectable with this kernel (D <= 0)")
    if b <= 0 or rho <= 0:
        raise ValueError("b and rho must be positive")
    return b / (rho * d_hat)


def recommend_window(b: float, rho: float, d_hat: float, K: float, N: int, eps: float) -> int:
    """Window length balancing detection delay against the window-limit penalty."""
    if d_hat <= 0:
        raise ValueError("change undetectable with this kernel (D <= 0)")
    if min(b, rho, K, N, eps) <= 0:
        raise ValueError("all arguments must be positive")
    if eps >= 3:
        raise ValueError("eps must be < 3")
    delay = b / (rho * d_hat)
    floor = 7.0 * delay
    opt = 6.0 * delay + 512.0 * K**2 * math.log(3.0 / eps) / (b**2 * min(N / 4.0, delay))
    return int(math.ceil(max(floor, opt) - 1e-9))


# -- Monte Carlo -----------------------------------------------------------------
def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("KCPD_THREADS", "1")))
    except ValueError:
        return 1


def trial_seed(seed, tag: int, i: int):
    """Entropy list for trial ``i`` of a stream tagged ``tag``."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [int(tag), int(i)]


class _Stream:
    """Lazily sampled i.i.d. observations in chunks."""

    def __init__(self, dist: DistributionSpec, seed, chunk: int = 256):
        self.dist = dist
        self.rng = np.random.default_rng(seed)
        self.chunk = chunk

    def __iter__(self):
        while True:
            yield from sample(self.dist, self.chunk, self.rng)


@dataclass
class Records:
    """Running-maximum record of one trial.

    ``times[k]`` is the first step at which the running max reached ``values[k]``;
    ``steps`` is how far the trial was simulated.
    """

    times: list
    values: list
    steps: int

    def stop_time(self, b: float, horizon: int):
        """First alarm time at threshold b, or None if censored at ``horizon``."""
        for t, v in zip(self.times, self.values):
            if v >= b:
                return t if t <= horizon else None
        if self.steps < horizon:
            raise ValueError("trial not simulated far enough for this threshold")
        return None


class _Trial:
    def __init__(self, state, stream):
        self.state = state
        self.it = iter(stream)
        self.rec = Records([], [], 0)
        self.best = -math.inf

    def advance(self, cap: float, horizon: int):
        while self.best < cap and self.rec.steps < horizon:
            r = self.state.step(next(self.it))
            self.rec.steps += 1
            if r.statistic > self.best:
                self.best = r.statistic
                self.rec.times.append(self.rec.steps)
                self.rec.values.append(r.statistic)
        return self


def _map(fn, items, progress=None):
    out = []
    n = thread_count()
    if n > 1:
        with ThreadPoolExecutor(n) as ex:
            for k, r in enumerate(ex.map(fn, items)):
                out.append(r)
                if progress:
                    progress(k + 1, len(items))
    else:
        for k, item in enumerate(items):
            out.append(fn(item))
            if progress:
                progress(k + 1, len(items))
    return out


def simulate_records(make_trial, trials: int, horizon: int, cap: float, progress=None):
    """Run ``trials`` trials until each running max reaches ``cap`` or ``horizon``.

    ``make_trial(i)`` returns (state, observation iterable); the state's own
    threshold is ignored. Returns the list of live trial objects, which can be
    advanced further with :func:`extend_records`.
    """
    def run(i):
        state, stream = make_trial(i)
        return _Trial(state, stream).advance(cap, horizon)

    return _map(run, list(range(trials)), progress)


def extend_records(live, cap: float, horizon: int):
    _map(lambda tr: tr.advance(cap, horizon), live)
    return live


def empirical_arl(records, b: float, horizon: int):
    """(mean, stderr, censored fraction) of stopping times censored at horizon."""
    times = []
    censored = 0
    for r in records:
        s = r.stop_time(b, horizon)
        if s is None:
            censored += 1
            s = horizon
        times.append(s)
    times = np.asarray(times, dtype=float)
    se = times.std(ddof=1) / math.sqrt(len(times)) if len(times) > 1 else 0.0
    return float(times.mean()), float(se), censored / len(times)


def calibrate_from_records(records, gamma: float, horizon: int):
    """Smallest threshold whose empirical ARL reaches ``gamma``.

    Empirical ARL is a step function of b that jumps just above record values;
    the midpoint of the first qualifying step is returned. Raises if even the
    largest recorded value leaves ARL short of ``gamma``.
    """
    values = np.unique(np.concatenate([np.asarray(r.values) for r in records if r.values]))
    values = values[np.isfinite(values)]
    if len(values) == 0:
        raise ValueError("no finite statistics recorded")
    # ARL at b in (values[k-1], values[k]] is constant; evaluate at each values[k]
    for k, v in enumerate(values):
        if empirical_arl(records, v, horizon)[0] >= gamma:
            lo = values[k - 1] if k > 0 else v - 1.0
            return 0.5 * (lo + v)
    top = values[-1]
    if empirical_arl(records, np.nextafter(top, np.inf), horizon)[0] >= gamma:
        return float(top + 1e-9 * max(1.0, abs(top)))
    raise ValueError("records do not reach the target ARL; raise the cap")


def mc_threshold(make_trial, gamma: float, trials: int, horizon: int, start_cap: float,
                 growth: float = 1.15, max_rounds: int = 60, progress=None):
    """Monte Carlo threshold for target ARL ``gamma`` with an adaptively raised cap.

    Returns (threshold, records).
    """
    cap = float(start_cap)
    live = simulate_records(make_trial, trials, horizon, cap, progress)
    for _ in range(max_rounds):
        recs = [tr.rec for tr in live]
        if empirical_arl(recs, np.nextafter(cap, -np.inf), horizon)[0] >= gamma or \
                all(tr.rec.steps >= horizon for tr in live):
            try:
                return calibrate_from_records(recs, gamma, horizon), recs
            except ValueError:
                pass
        cap = cap * growth if cap > 0 else cap + 1.0
        extend_records(live, cap, horizon)
    raise ValueError("Monte Carlo threshold search did not converge")


@dataclass
class MonteCarloResult:
    mean: float
    stderr: float
    trials: int
    censored_fraction: float = 0.0
    miss_count: int = 0
    stop_times: list = field(default_factory=list, repr=False)


def _detector_trials(config: DetectorConfig, pre: DistributionSpec, post: DistributionSpec,
                     seed, reference, warm_start: bool, tag: int):
    def make(i):
        s = trial_seed(seed, tag, i)
        if reference is not None:
            state = init_detector(config, reference, seed=s + [0])
        else:
            blocks = sample(pre, config.N * config.w, s + [0]).reshape(config.N, config.w, -1)
            state = KernelCusum(config, blocks)
        if warm_start:
            state.prime(sample(pre, config.w, s + [1]))
        return state, _Stream(post, s + [2])

    return make


def _run_stop_times(make_trial, trials, horizon, progress):
    def run(i):
        state, stream = make_trial(i)
        it = iter(stream)
        for _ in range(horizon):
            r = state.step(next(it))
            if r.alarm:
                return r.t
        return None

    return _map(run, list(range(trials)), progress)


def monte_carlo_arl(config: DetectorConfig, sampler: DistributionSpec, trials: int, horizon: int,
                    seed=0, reference=None, warm_start: bool = True, progress=None) -> MonteCarloResult:
    """Mean stopping time under H0, censored at ``horizon``.

    Reference blocks are drawn per trial from ``reference`` when given, else
    sampled fresh from ``sampler``. With ``warm_start`` the window starts full
    of pre-change observations.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    make = _detector_trials(config, sampler, sampler, seed, reference, warm_start, tag=1)
    stops = _run_stop_times(make, trials, horizon, progress)
    times = np.array([horizon if s is None else s for s in stops], dtype=float)
    cens = sum(s is None for s in stops) / trials
    se = times.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    return MonteCarloResult(float(times.mean()), float(se), trials, cens, 0, stops)


def summarize_delays(stops, trials) -> MonteCarloResult:
    hits = np.array([s for s in stops if s is not None], dtype=float)
    miss = trials - len(hits)
    if len(hits) == 0:
        return MonteCarloResult(math.nan, math.nan, trials, 1.0, miss, list(stops))
    se = hits.std(ddof=1) / math.sqrt(len(hits)) if len(hits) > 1 else 0.0
    return MonteCarloResult(float(hits.mean()), float(se), trials, miss / trials, miss, list(stops))


def monte_carlo_edd(config: DetectorConfig, pre: DistributionSpec, post: DistributionSpec,
                    trials: int, horizon: int, seed=0, reference=None, warm_start: bool = True,
                    progress=None) -> MonteCarloResult:
    """Mean delay over trials that alarm within ``horizon``; misses counted separately."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    make = _detector_trials(config, pre, post, seed, reference, warm_start, tag=2)
    return summarize_delays(_run_stop_times(make, trials, horizon, progress), trials)


def monte_carlo_threshold(config: DetectorConfig, sampler: DistributionSpec, gamma: float,
                          trials: int, horizon: int, seed=0, reference=None,
                          warm_start: bool = True, start: float | None = None,
                          progress=None) -> CalibrationResult:
    """Threshold whose empirical ARL (censored at ``horizon``) first reaches ``gamma``."""
    if start is None:
        start = threshold_for_arl(gamma, config.w, config.moments, "gaussian_order").threshold
    make = _detector_trials(config.with_threshold(math.inf), sampler, sampler, seed, reference,
                            warm_start, tag=3)
    b, recs = mc_threshold(make, gamma, trials, horizon, start, progress=progress)
    mean, se, cens = empirical_arl(recs, b, horizon)
    return CalibrationResult(float(b), float(gamma), "monte_carlo", mean, config.w, None,
                             {"stderr": se, "censored_fraction": cens, "trials": trials,
                              "horizon": horizon})
