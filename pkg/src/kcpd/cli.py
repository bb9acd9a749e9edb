"""Command-line interface.

Exit codes: 0 alarm raised (or command succeeded), 3 stream ended without an
alarm, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench
from .calibration import METHODS, CalibrationResult, monte_carlo_threshold, threshold_for_arl
from .detector import DetectorConfig, StoppingReport, init_detector
from .kernel import KernelSpec, median_heuristic
from .moments import MomentEstimates, estimate_moments, third_moment_h0

EXIT_ALARM, EXIT_CONFIG, EXIT_DATA, EXIT_NO_ALARM = 0, 1, 2, 3
METHOD_ALIASES = {"gaussian": "gaussian_order", "skew": "skewness_corrected",
                  "collapsed": "gaussian_collapsed", "mc": "monte_carlo"}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# -- CSV ---------------------------------------------------------------------------
def iter_rows(handle, name="<input>"):
    """Yield (line number, vector) from a numeric CSV; a non-numeric first row is a header."""
    width = None
    for lineno, row in enumerate(csv.reader(handle), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vec = np.array([float(c) for c in row], dtype=float)
        except ValueError:
            if width is None and lineno == 1:
                continue
            raise DataError(f"{name}:{lineno}: non-numeric value in row {row!r}") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{name}:{lineno}: non-finite value")
        if width is None:
            width = len(vec)
        elif len(vec) != width:
            raise DataError(f"{name}:{lineno}: expected {width} columns, got {len(vec)}")
        yield lineno, vec


def read_csv(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [v for _, v in iter_rows(fh, str(path))]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.vstack(rows)


# -- helpers -----------------------------------------------------------------------
def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _bandwidth(arg, reference, seed):
    if arg in (None, "median"):
        return median_heuristic(reference, max_samples=2000, seed=seed)
    try:
        bw = float(arg)
    except ValueError:
        raise ConfigError(f"--bandwidth must be 'median' or a positive number, got {arg!r}") from None
    if bw <= 0:
        raise ConfigError("--bandwidth must be positive")
    return bw


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _moments_doc(m: MomentEstimates, spec: KernelSpec) -> dict:
    d = m.to_dict()
    d["kernel"] = spec.to_dict()
    return d


def _moments_from_doc(d) -> tuple[MomentEstimates, KernelSpec | None]:
    try:
        m = MomentEstimates.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid moments document: {exc}") from exc
    spec = KernelSpec.from_dict(d["kernel"]) if "kernel" in d else None
    return m, spec


def _check_reference(ref, N, w):
    if len(ref) < N * w:
        raise DataError(f"insufficient reference data: need N*w = {N * w} rows, got {len(ref)}")


# -- commands ----------------------------------------------------------------------
def cmd_moments(args):
    ref = read_csv(args.reference)
    _check_reference(ref, args.N, args.w)
    spec = KernelSpec(_bandwidth(args.bandwidth, ref, args.seed))
    try:
        m = estimate_moments(ref, spec, args.N, args.draws, args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    _write(json.dumps(_moments_doc(m, spec), indent=2) + "\n", args.output)
    print(f"bandwidth={spec.bandwidth:.6g} C1={m.C1:.6g} C2={m.C2:.6g} rho={m.rho:.6g} "
          f"skew(B=2)={third_moment_h0(m, 2):.4g} skew(B={args.w})={third_moment_h0(m, args.w):.4g}",
          file=sys.stderr)
    return 0


def _calibrate(moments: MomentEstimates, spec, gamma, w, method, args, reference=None):
    method = METHOD_ALIASES.get(method, method)
    if method == "monte_carlo":
        if reference is None:
            if not getattr(args, "reference", None):
                raise ConfigError("--method mc needs --reference data to bootstrap H0 streams")
            reference = read_csv(args.reference)
        if spec is None:
            raise ConfigError("moments document has no kernel; rerun `kcpd moments`")
        config = DetectorConfig(w, moments.N, spec, math.inf, moments, getattr(args, "b_min", 2))
        _check_reference(reference, moments.N, w)

        def progress(k, n):
            if k == n or k % max(1, n // 10) == 0:
                print(f"  trial {k}/{n}", file=sys.stderr)

        return monte_carlo_threshold(config, reference, gamma, args.trials, args.cal_horizon or
                                     int(10 * gamma), args.seed, reference=reference,
                                     progress=progress if args.verbose else None)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    try:
        return threshold_for_arl(gamma, w, moments, method)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_calibrate(args):
    moments, spec = _moments_from_doc(_load_json(args.moments))
    if args.arl <= 1:
        raise ConfigError("--arl must exceed 1")
    res = _calibrate(moments, spec, args.arl, args.w, args.method, args)
    _write(res.to_json(indent=2) + "\n", args.output)
    print(f"threshold={res.threshold:.6g} method={res.method} predicted_arl={res.predicted_arl:.6g}",
          file=sys.stderr)
    return 0


REPORT_SCHEMA = {
    "stopped_at": "int | null  observation index (1-based) of the first alarm",
    "row": "int | null  input line number of the alarming observation",
    "statistic_at_stop": "float | null  Z_t at the last processed step",
    "argmax_b": "int  block size attaining Z_t",
    "threshold": "float",
    "horizon": "int  observations allowed",
    "observations": "int  observations processed",
    "seed": "int",
    "w": "int", "N": "int", "b_min": "int", "bandwidth": "float",
}


def cmd_detect(args):
    given = [args.threshold is not None, args.calibration is not None, args.arl is not None]
    if sum(given) != 1:
        raise ConfigError("supply exactly one of --threshold, --calibration, --arl")
    ref = read_csv(args.reference)
    if args.moments:
        moments, spec = _moments_from_doc(_load_json(args.moments))
        N = moments.N
    else:
        N = args.N
        spec = None
        moments = None
    _check_reference(ref, N, args.w)
    if spec is None:
        spec = KernelSpec(_bandwidth(args.bandwidth, ref, args.seed))
    if moments is None:
        try:
            moments = estimate_moments(ref, spec, N, args.draws, args.seed)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    if args.threshold is not None:
        b = args.threshold
    elif args.calibration is not None:
        cal = CalibrationResult.from_dict(_load_json(args.calibration))
        if cal.w != args.w:
            raise ConfigError(f"calibration was computed for w={cal.w}, detect uses --w {args.w}")
        b = cal.threshold
    else:
        b = _calibrate(moments, spec, args.arl, args.w, args.method, args, reference=ref).threshold
    try:
        config = DetectorConfig(args.w, N, spec, b, moments, args.b_min)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    state = init_detector(config, ref, seed=args.seed)

    stats_fh = open(args.emit_stats, "w", newline="") if args.emit_stats else None
    stats = csv.writer(stats_fh) if stats_fh else None
    if stats:
        stats.writerow(["t", "statistic", "argmax_b"])
    horizon = args.horizon or sys.maxsize
    source = sys.stdin if args.stream in (None, "-") else None
    name = "<stdin>" if source else args.stream
    first = None
    last = None
    alarms = 0
    try:
        fh = source or open(args.stream, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {args.stream}: {exc}") from exc
    try:
        for lineno, y in iter_rows(fh, name):
            if state.t >= horizon:
                break
            if len(y) != state.dim:
                raise DataError(f"{name}:{lineno}: observation has {len(y)} columns, reference has {state.dim}")
            last = state.step(y)
            if stats:
                stats.writerow([last.t, repr(last.statistic) if math.isfinite(last.statistic) else "",
                                last.argmax_b])
            if last.alarm:
                alarms += 1
                event = {"event": "alarm", "t": last.t, "row": lineno, "statistic": last.statistic,
                         "argmax_b": last.argmax_b, "threshold": b}
                print(json.dumps(event), flush=True)
                if first is None:
                    first = (last, lineno)
                if not args.keep_going:
                    break
    finally:
        if fh is not sys.stdin:
            fh.close()
        if stats_fh:
            stats_fh.close()

    hit = first[0] if first else last
    rep = StoppingReport(first[0].t if first else None,
                         hit.statistic if hit else -math.inf, hit.argmax_b if hit else 0,
                         b, args.horizon or state.t, args.seed)
    doc = rep.to_dict()
    doc.update({"row": first[1] if first else None, "observations": state.t, "alarms": alarms,
                "w": args.w, "N": N, "b_min": args.b_min, "bandwidth": spec.bandwidth})
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n")
    if first is None:
        print(json.dumps({"event": "end", "t": state.t, "alarm": False}), flush=True)
        return EXIT_NO_ALARM
    return EXIT_ALARM


def cmd_bench(args):
    try:
        spec = bench.load_experiment(args.config)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad experiment config: {exc}") from exc
    over = {}
    if args.procedures:
        over["procedures"] = [p.strip() for p in args.procedures.split(",") if p.strip()]
    if args.trials:
        over["trials_calibrate"] = over["trials_edd"] = args.trials
    if args.arl:
        over["arl_targets"] = [float(v) for v in args.arl.split(",")]
    if args.seed is not None:
        over["seed"] = args.seed
    try:
        spec = bench.with_overrides(spec, **over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def progress(row):
        print(f"  {row.procedure} ARL {row.arl_target:g}: b={row.threshold:.4g} "
              f"EDD={row.edd_mean:.3f} +/- {row.edd_stderr:.3f} miss={row.miss_count}", file=sys.stderr)

    rows = bench.run_experiment(spec, progress=progress)
    if args.out:
        bench.write_outputs(rows, spec, args.out)
    sys.stdout.write(bench.emit_table(rows, args.format))
    return 0


# -- parser ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kcpd", description="Online kernel CUSUM change-point detection")
    sub = p.add_subparsers(dest="command", required=True)

    def kernel_opts(sp, with_n=True):
        if with_n:
            sp.add_argument("--N", type=int, default=15, help="number of reference blocks")
        sp.add_argument("--w", type=int, default=50, help="window length")
        sp.add_argument("--bandwidth", default="median", help="'median' or a positive number")
        sp.add_argument("--draws", type=int, default=100_000, help="Monte Carlo draws for moments")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("moments", help="estimate H0 moment constants from reference data")
    sp.add_argument("reference")
    kernel_opts(sp)
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_moments)

    sp = sub.add_parser("calibrate", help="threshold for a target ARL")
    sp.add_argument("moments")
    sp.add_argument("--arl", type=float, required=True)
    sp.add_argument("--w", type=int, default=50)
    sp.add_argument("--b-min", dest="b_min", type=int, default=2)
    sp.add_argument("--method", default="skew", choices=sorted(set(METHOD_ALIASES) | set(METHODS) | {"monte_carlo"}))
    sp.add_argument("--reference", help="reference CSV (needed for --method mc)")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--cal-horizon", dest="cal_horizon", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("detect", help="run the detector over a stream")
    sp.add_argument("reference")
    sp.add_argument("stream", nargs="?", default="-", help="CSV file or '-' for stdin")
    kernel_opts(sp)
    sp.add_argument("--b-min", dest="b_min", type=int, default=2)
    sp.add_argument("--moments", help="moments JSON from `kcpd moments`")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--calibration", help="calibration JSON from `kcpd calibrate`")
    sp.add_argument("--arl", type=float, help="calibrate on the fly for this target ARL")
    sp.add_argument("--method", default="skew")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--cal-horizon", dest="cal_horizon", type=int, default=None)
    sp.add_argument("--horizon", type=int, default=None, help="stop after this many observations")
    sp.add_argument("--emit-stats", dest="emit_stats", help="write per-step t,statistic,argmax_b CSV")
    sp.add_argument("--report", help="write report JSON here")
    sp.add_argument("--keep-going", dest="keep_going", action="store_true",
                    help="keep streaming after the first alarm")
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("bench", help="run an EDD-at-matched-ARL experiment")
    sp.add_argument("config", help="INI file or a shipped config name, e.g. table3_mu2_sigma9")
    sp.add_argument("--procedures", help="comma-separated subset of " + ",".join(bench.PROCEDURES))
    sp.add_argument("--trials", type=int, help="override calibration and EDD trial counts")
    sp.add_argument("--arl", help="comma-separated ARL targets")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--format", default="markdown", choices=["csv", "json", "markdown"])
    sp.add_argument("--out", help="directory for results.csv, results.json, meta.json")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
