"""Command-line pipeline: simulate -> flow -> eval / bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io as evio
from .errors import ConfigError, DataError, EvflowError, NumericError
from .events import FLOW_DTYPE, SensorGeometry, events_view, validate_events
from .filtering import FR_ACCEPT, FR_REFRACTORY
from .metrics import benchmark, flow_error_stats, lifetime_histogram
from .simulate import (GradedStripes, RotatingBar, SceneSpec, TranslatingEdge,
                       VerticalStripes, generate)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_duration(text):
    text = text.strip().lower()
    for suffix, scale in (("us", 1), ("ms", 1_000), ("s", 1_000_000)):
        if text.endswith(suffix):
            return int(round(float(text[: -len(suffix)]) * scale))
    return int(text)


def _parse_pair(text, what):
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{what} must be two comma-separated numbers, got '{text}'")
    return float(parts[0]), float(parts[1])


def _cmd_simulate(args):
    geometry = SensorGeometry(args.width, args.height)
    duration = _parse_duration(args.duration)
    if args.pattern == "stripes":
        if args.lifetimes:
            l1, l2 = _parse_pair(args.lifetimes, "--lifetimes")
            if l1 <= 0 or l2 <= 0:
                raise ConfigError("lifetimes must be positive")
            speeds = (1.0 / l1, 1.0 / l2)
        elif args.speeds:
            speeds = _parse_pair(args.speeds, "--speeds")
        else:
            speeds = (1.0 / 6.0, 1.0 / 12.0)
        if speeds[0] == speeds[1]:
            raise ConfigError("the two stripe speeds must differ")
        pattern = VerticalStripes(speeds=speeds, spacing=args.spacing)
    elif args.pattern == "edge":
        vx, vy = _parse_pair(args.velocity, "--velocity")
        pattern = TranslatingEdge(vx, vy)
    elif args.pattern == "rotor":
        center = _parse_pair(args.center, "--center") if args.center else None
        pattern = RotatingBar(args.omega, center)
    elif args.pattern == "graded":
        sl, sr = _parse_pair(args.speeds or "0.5,0.9", "--speeds")
        pattern = GradedStripes(sl, sr, _parse_duration(args.period))
    else:  # pragma: no cover - argparse enforces choices
        raise ConfigError(f"unknown pattern '{args.pattern}'")
    spec = SceneSpec(
        geometry=geometry,
        pattern=pattern,
        duration_us=duration,
        contrast_threshold=args.contrast,
        noise_rate_hz=args.noise_rate,
        jitter_std_us=args.jitter,
    )
    gt = generate(spec, args.seed)
    evio.write_events(args.out, events_view(gt))
    gt_path = args.gt or _default_gt_path(args.out)
    evio.write_ground_truth(gt_path, gt)
    print(f"wrote {len(gt)} events to {args.out} (ground truth: {gt_path})")
    return 0


def _default_gt_path(out_path):
    base = str(out_path)
    for ext in (".csv", ".bin"):
        if base.endswith(ext):
            return base[: -len(ext)] + "_gt.csv"
    return base + "_gt.csv"


def _cmd_flow(args):
    cfg = evio.load_config(args.config, args.set or [])
    filt = evio.build_filter(cfg)
    estimator = evio.build_estimator(cfg, args.estimator, args.regularizer)
    filt.fit()
    estimator.fit()
    fstate = filt.stream_state()
    estate = estimator.stream_state()
    geometry = cfg.geometry()
    total = 0
    with open(args.out, "w", newline="\n") as out:
        evio.write_flow_header(out)
        for chunk in evio.iter_event_chunks(args.infile, geometry=geometry):
            validate_events(chunk, geometry, check_sorted=False)
            reasons, _ = filt.filter_chunk(chunk, fstate)
            mask = reasons == FR_ACCEPT
            rows = np.zeros(len(chunk), dtype=FLOW_DTYPE)
            for name in ("t", "x", "y", "p"):
                rows[name] = chunk[name]
            rows["lifetime_ms"] = np.nan
            rows["status"] = np.where(
                reasons == FR_REFRACTORY,
                evio.STATUS_FILTER_REFRACTORY,
                evio.STATUS_FILTER_ACTIVITY,
            ).astype(np.uint8)
            if mask.any():
                flows = estimator.stream_chunk(chunk[mask], estate)
                rows[mask] = flows
            evio.write_flow_rows(out, rows)
            total += len(chunk)
    print(f"estimated flow for {total} events -> {args.out}")
    return 0


def _cmd_eval(args):
    flow = evio.read_flow(args.flow)
    truth = evio.read_ground_truth(args.gt)
    stats = flow_error_stats(flow, truth)
    hist = lifetime_histogram(flow["lifetime_ms"][flow["valid"]], args.bin_width)
    report = {
        "flow_errors": stats.as_dict(),
        "lifetime": hist.as_dict(),
        "rows": len(flow),
        "valid_fraction": float(np.count_nonzero(flow["valid"]) / len(flow)),
    }
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"{'':<18}{'mean':>12}{'std':>12}")
    print(f"{'Magnitude (rel.)':<18}{stats.aepe_rel_mean:>12.4f}{stats.aepe_rel_std:>12.4f}")
    print(f"{'Orientation (deg)':<18}{stats.aae_deg_mean:>12.3f}{stats.aae_deg_std:>12.3f}")
    print(f"{'Magnitude (px/ms)':<18}{stats.aepe_abs_mean:>12.4f}{stats.aepe_abs_std:>12.4f}")
    c, f = hist.max_bin
    print(f"lifetime max bin: {c:.2f} ms ({100.0 * f:.2f}% of valid events)")
    print(f"evaluated pairs: {stats.count}")
    return 0


def _parse_estimator_spec(spec):
    est, _, reg = spec.partition("+")
    return est, (reg or "none")


def _cmd_bench(args):
    cfg = evio.load_config(args.config, args.set or [])
    events = evio.read_events(args.infile, cfg.geometry())
    if len(events) < args.warmup + 10_000:
        raise ConfigError(
            f"bench needs at least warmup + 10000 events, got {len(events)} "
            f"(warmup {args.warmup})"
        )
    filt = evio.build_filter(cfg)
    filt.fit()
    accepted = filt.transform(events)
    if len(accepted) < args.warmup + 1000:
        raise ConfigError(
            f"only {len(accepted)} events survive filtering; not enough after warmup"
        )
    names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    results = {}
    for name in names:
        est, reg = _parse_estimator_spec(name)
        estimator = evio.build_estimator(cfg, est, reg)
        stats = benchmark(estimator, accepted, args.warmup, args.mode)
        results[name] = stats
    print(f"{'estimator':<16}{'us/event':>12}{'std':>10}{'events':>10}")
    for name, s in results.items():
        print(f"{name:<16}{s.per_event_us_mean:>12.3f}{s.per_event_us_std:>10.3f}"
              f"{s.events_measured:>10}")
    ref = names[0]
    for name in names[1:]:
        ratio = results[name].per_event_us_mean / results[ref].per_event_us_mean
        print(f"{name} / {ref}: {ratio:.2f}x")
    if args.out:
        payload = {name: s.as_dict() for name, s in results.items()}
        payload["input_events"] = len(events)
        payload["accepted_events"] = len(accepted)
        with open(args.out, "w", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def build_parser():
    parser = _Parser(prog="evflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic event stream with ground truth")
    p.add_argument("--pattern", required=True, choices=["stripes", "edge", "rotor", "graded"])
    p.add_argument("--out", default="events.csv")
    p.add_argument("--gt", default=None, help="ground-truth sidecar path")
    p.add_argument("--width", type=int, default=480)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--duration", default="100ms", help="e.g. 500000us, 200ms, 1s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speeds", default=None,
                   help="stripes: px/ms for left,right halves; graded: profile endpoints")
    p.add_argument("--lifetimes", default=None, help="stripes: ms lifetimes for left,right halves")
    p.add_argument("--spacing", type=int, default=16)
    p.add_argument("--period", default="40ms", help="graded: temporal stripe period")
    p.add_argument("--velocity", default="2,0", help="edge velocity vx,vy in px/ms")
    p.add_argument("--omega", type=float, default=3.141592653589793, help="rotor rad/s")
    p.add_argument("--center", default=None, help="rotor center x,y")
    p.add_argument("--noise-rate", type=float, default=0.0, dest="noise_rate")
    p.add_argument("--jitter", type=float, default=0.0, help="timestamp jitter std, us")
    p.add_argument("--contrast", type=int, default=1, help="events per edge crossing")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("flow", help="filter a stream and estimate per-event flow")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--estimator", default=None, choices=[None, "pca", "plane", "lk"])
    p.add_argument("--regularizer", default=None, choices=[None, "none", "weighted", "leveled"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_flow)

    p = sub.add_parser("eval", help="compare a flow file against ground truth")
    p.add_argument("--flow", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--bin-width", type=float, default=0.1, dest="bin_width")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="per-event timing of the estimators")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--estimators", default="pca,plane,lk",
                   help="comma list, e.g. pca,pca+leveled,plane,lk")
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--mode", default="chunked", choices=["chunked", "per_event"],
                   help="chunked exposes the per-event cost floor; per_event "
                        "times every call individually (includes dispatch)")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default=None, help="JSON report path")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EvflowError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
