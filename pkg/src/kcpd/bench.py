"""EDD-at-matched-ARL experiments.

An experiment is described by an INI file::

    [experiment]
    procedures = proposed, scanb, kcusum, hotelling
    arl_targets = 500
    N = 15
    w = 50

    [pre]
    kind = gaussian
    dim = 20

    [post]
    kind = gaussian_mixture
    dim = 20
    weights = 0.3, 0.7
    means = 0, 2
    vars = 1, 9

For each procedure the threshold is calibrated by Monte Carlo under the
pre-change law (records of the running maximum, see
:mod:`kcpd.calibration`), then the detection delay is measured with the change
at t = 0 and the window warm-started with pre-change data.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import calibration as cal
from .baselines import HotellingState, KcusumState, scan_b_config
from .detector import DetectorConfig, init_detector
from .distributions import DistributionSpec, sample
from .kernel import KernelSpec, median_heuristic
from .moments import estimate_moments

PROCEDURES = ("proposed", "scanb", "kcusum", "hotelling")
LABELS = {"proposed": "Proposed", "scanb": "Scan B", "kcusum": "KCUSUM", "hotelling": "Hotelling T2"}
CONFIG_DIR = Path(__file__).parent / "configs"


@dataclass
class ExperimentSpec:
    pre: DistributionSpec
    post: DistributionSpec
    procedures: list = field(default_factory=lambda: list(PROCEDURES))
    arl_targets: list = field(default_factory=lambda: [500.0])
    trials_calibrate: int = 200
    trials_edd: int = 200
    horizon: int = 50
    reference_size: int = 10000
    N: int = 15
    w: int = 50
    b_min: int = 2
    seed: int = 0
    calibration_horizon_factor: float = 10.0
    moment_draws: int = 100_000
    bandwidth: float | None = None
    kcusum_delta: float = 1 / 50
    hotelling_max_lag: int | None = 50
    name: str = "experiment"

    def __post_init__(self):
        unknown = [p for p in self.procedures if p not in PROCEDURES]
        if unknown:
            raise ValueError(f"unknown procedures {unknown}; choose from {PROCEDURES}")
        if self.reference_size < self.N * self.w:
            raise ValueError("reference_size must be >= N * w")
        if self.pre.dim != self.post.dim:
            raise ValueError("pre and post distributions differ in dimension")
        if not self.arl_targets or min(self.arl_targets) <= 1:
            raise ValueError("ARL targets must exceed 1")
        for name in ("trials_calibrate", "trials_edd", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["pre"] = self.pre.to_dict()
        d["post"] = self.post.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["pre"] = DistributionSpec.from_dict(d["pre"])
        d["post"] = DistributionSpec.from_dict(d["post"])
        return cls(**d)


@dataclass
class ResultRow:
    procedure: str
    arl_target: float
    threshold: float
    edd_mean: float
    edd_stderr: float
    miss_count: int
    trials: int


# -- config files ------------------------------------------------------------------
def _floats(text):
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    return vals[0] if len(vals) == 1 else vals


def _dist_from_section(sec) -> DistributionSpec:
    kind = sec.get("kind", "gaussian")
    dim = sec.getint("dim")
    if dim is None:
        raise ValueError("distribution section needs dim")
    if kind == "gaussian_mixture":
        weights = np.atleast_1d(_floats(sec["weights"]))
        k = len(weights)

        def per_comp(key, default):
            if key not in sec:
                return [default] * k
            v = np.atleast_1d(_floats(sec[key]))
            if len(v) != k:
                raise ValueError(f"{key} needs one value per mixture component")
            return list(v)

        comps = [{"weight": float(w_), "mean": float(m), "var": float(v)}
                 for w_, m, v in zip(weights, per_comp("means", 0.0), per_comp("vars", 1.0))]
        return DistributionSpec(kind, dim, {"components": comps})
    params = {key: _floats(val) for key, val in sec.items() if key not in ("kind", "dim")}
    return DistributionSpec(kind, dim, params)


_INT_KEYS = ("trials_calibrate", "trials_edd", "horizon", "reference_size", "N", "w", "b_min",
             "seed", "moment_draws")
_FLOAT_KEYS = ("calibration_horizon_factor", "kcusum_delta")


def parse_experiment(text: str, name: str = "experiment") -> ExperimentSpec:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    for sec in ("experiment", "pre", "post"):
        if sec not in cp:
            raise ValueError(f"config missing [{sec}] section")
    ex = cp["experiment"]
    kw = {"name": ex.get("name", name)}
    for key in _INT_KEYS:
        if key in ex:
            kw[key] = int(ex[key])
    for key in _FLOAT_KEYS:
        if key in ex:
            kw[key] = float(ex[key])
    if "procedures" in ex:
        kw["procedures"] = [p.strip() for p in ex["procedures"].split(",") if p.strip()]
    if "arl_targets" in ex:
        kw["arl_targets"] = [float(v) for v in np.atleast_1d(_floats(ex["arl_targets"]))]
    if "bandwidth" in ex and ex["bandwidth"].strip() != "median":
        kw["bandwidth"] = float(ex["bandwidth"])
    if "hotelling_max_lag" in ex:
        v = ex["hotelling_max_lag"].strip()
        kw["hotelling_max_lag"] = None if v in ("none", "") else int(v)
    return ExperimentSpec(_dist_from_section(cp["pre"]), _dist_from_section(cp["post"]), **kw)


def load_experiment(path) -> ExperimentSpec:
    """Read a config file; bare names resolve to the shipped configs."""
    p = Path(path)
    if not p.exists() and (CONFIG_DIR / f"{p.name}.ini").exists():
        p = CONFIG_DIR / f"{p.name}.ini"
    return parse_experiment(p.read_text(), name=p.stem)


# -- running -----------------------------------------------------------------------
@dataclass
class Setup:
    """Quantities shared by all procedures of one experiment."""

    reference: np.ndarray
    spec: KernelSpec
    config: DetectorConfig


def prepare(spec: ExperimentSpec) -> Setup:
    ref = sample(spec.pre, spec.reference_size, [spec.seed, 0])
    bw = spec.bandwidth or median_heuristic(ref, max_samples=2000, seed=spec.seed)
    kspec = KernelSpec(bw)
    moments = estimate_moments(ref, kspec, spec.N, spec.moment_draws, spec.seed)
    config = DetectorConfig(spec.w, spec.N, kspec, math.inf, moments, spec.b_min)
    return Setup(ref, kspec, config)


def make_state(proc: str, setup: Setup, spec: ExperimentSpec, threshold: float, seed):
    """Fresh, warm-started procedure state for one trial."""
    cfg = setup.config.with_threshold(threshold)
    if proc == "proposed":
        state = init_detector(cfg, setup.reference, seed=seed + [0])
    elif proc == "scanb":
        state = init_detector(scan_b_config(cfg), setup.reference, seed=seed + [0])
    elif proc == "kcusum":
        return KcusumState(setup.spec, setup.reference, threshold, spec.kcusum_delta, seed=seed + [0])
    elif proc == "hotelling":
        return HotellingState(setup.reference, threshold, spec.hotelling_max_lag)
    else:
        raise ValueError(f"unknown procedure {proc!r}")
    state.prime(sample(spec.pre, spec.w, seed + [1]))
    return state


def _start_cap(proc, setup, gamma):
    if proc in ("proposed", "scanb"):
        w = setup.config.w if proc == "proposed" else 2
        try:
            return cal.threshold_for_arl(gamma, w, setup.config.moments, "gaussian_order").threshold
        except ValueError:
            return 3.0
    return {"kcusum": 1.0, "hotelling": 20.0}[proc]


def calibrate_procedure(proc: str, setup: Setup, spec: ExperimentSpec, progress=None):
    """Monte Carlo thresholds for every ARL target, from one batch of H0 records."""
    tag = 10 + PROCEDURES.index(proc)
    targets = sorted(spec.arl_targets)
    horizon = int(math.ceil(spec.calibration_horizon_factor * targets[-1]))

    def make(i):
        s = cal.trial_seed(spec.seed, tag, i)
        return make_state(proc, setup, spec, math.inf, s), cal._Stream(spec.pre, s + [2])

    _, recs = cal.mc_threshold(make, targets[-1], spec.trials_calibrate, horizon,
                               _start_cap(proc, setup, targets[-1]), progress=progress)
    out = {}
    for g in targets:
        h = int(math.ceil(spec.calibration_horizon_factor * g))
        out[g] = cal.calibrate_from_records(recs, g, h)
    return out


def measure_edd(proc: str, setup: Setup, spec: ExperimentSpec, threshold: float, post=None,
                progress=None) -> cal.MonteCarloResult:
    tag = 20 + PROCEDURES.index(proc)
    post = post or spec.post

    def make(i):
        s = cal.trial_seed(spec.seed, tag, i)
        return make_state(proc, setup, spec, threshold, s), cal._Stream(post, s + [2])

    stops = cal._run_stop_times(make, spec.trials_edd, spec.horizon, progress)
    return cal.summarize_delays(stops, spec.trials_edd)


def run_experiment(spec: ExperimentSpec, progress=None, setup: Setup | None = None) -> list:
    """Rows ordered by procedure (as listed) then ARL target (ascending)."""
    setup = setup or prepare(spec)
    rows = []
    for proc in spec.procedures:
        try:
            thresholds = calibrate_procedure(proc, setup, spec)
            for g in sorted(spec.arl_targets):
                res = measure_edd(proc, setup, spec, thresholds[g])
                rows.append(ResultRow(proc, float(g), float(thresholds[g]), res.mean, res.stderr,
                                      int(res.miss_count), int(res.trials)))
                if progress:
                    progress(rows[-1])
        except Exception as exc:
            raise RuntimeError(f"procedure {proc!r} failed: {exc}") from exc
    return rows


# -- output ------------------------------------------------------------------------
FIELDS = [f.name for f in fields(ResultRow)]


def _fmt(v):
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(v) if isinstance(v, float) else str(v)


def emit_table(rows, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(FIELDS)
        for r in rows:
            wr.writerow([_fmt(getattr(r, k)) for k in FIELDS])
        return buf.getvalue()
    if fmt == "json":
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        return json.dumps([{k: clean(v) for k, v in asdict(r).items()} for r in rows], indent=2) + "\n"
    if fmt == "markdown":
        # procedures as rows, ARL targets as columns, EDD in the cells
        targets = sorted({r.arl_target for r in rows})
        procs = list(dict.fromkeys(r.procedure for r in rows))
        lines = ["| ARL | " + " | ".join(f"{t:g}" for t in targets) + " |",
                 "|---|" + "---|" * len(targets)]
        cell = {(r.procedure, r.arl_target): r for r in rows}
        for p in procs:
            vals = []
            for t in targets:
                r = cell.get((p, t))
                if r is None or math.isnan(r.edd_mean):
                    vals.append("-")
                else:
                    vals.append(f"{r.edd_mean:.2f}" + (f" (miss {r.miss_count})" if r.miss_count else ""))
            lines.append(f"| {LABELS.get(p, p)} | " + " | ".join(vals) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def rows_from_json(text: str) -> list:
    return [ResultRow(**{k: (math.nan if v is None and k in ("edd_mean", "edd_stderr") else v)
                         for k, v in d.items()}) for d in json.loads(text)]


def write_outputs(rows, spec: ExperimentSpec, outdir, extra_meta: dict | None = None):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(emit_table(rows, "csv"))
    (out / "results.json").write_text(emit_table(rows, "json"))
    meta = {"experiment": spec.to_dict()}
    meta.update(extra_meta or {})
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return out


def with_overrides(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    return replace(spec, **{k: v for k, v in kw.items() if v is not None})
