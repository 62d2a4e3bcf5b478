"""Command-line interface: ``lgpr synth | train | predict | sample | bench-psi``.

Every command writes its outputs atomically together with a JSON manifest
(``<output>.manifest.json``) holding the resolved configuration and SHA-256
checksums of inputs and outputs.  Wall-clock timings live only in the
manifest and in ``*.timing.csv`` sidecars, so all other outputs are
bitwise reproducible under a fixed ``--seed``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time

import numpy as np

from .data import GENERATORS, Dataset, load_dataset, load_jura, save_dataset
from .files import atomic_write_text, fmt, sha256
from .kernels import AnnealingSchedule
from .optimize import TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train
from .plots import mixture_svg, trace_svg
from .predict import predict_mixture, prediction_to_csv, sample_posterior

log = logging.getLogger("lgpr")

BENCH_T = "1,10,50,250,500"

# train options that may also come from a --config file: name -> parser
TRAIN_KEYS = {
    "components": int, "inducing": int, "samples": int, "iterations": int, "seed": int,
    "step_size": float, "alpha0": float, "alpha_growth": float, "alpha_max": float,
    "psi": str, "kernel": str, "component_kernels": str, "restarts": int,
    "latent_step_scale": float, "warmup": int,
}
TRAIN_DEFAULTS = {
    "components": 2, "inducing": 20, "samples": 1, "iterations": 1000, "seed": 0,
    "step_size": 1e-2, "alpha0": 1.0, "alpha_growth": 1.005, "alpha_max": 50.0,
    "psi": "mc", "kernel": "factorizing", "component_kernels": None, "restarts": 1,
    "latent_step_scale": 0.1, "warmup": 0,
}


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------

def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment; dashes and underscores are equivalent."""
    out = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in TRAIN_KEYS:
                raise UsageError(f"{path}:{n}: unknown key {key!r}")
            value = value.strip("\"'")
            try:
                out[key] = TRAIN_KEYS[key](value)
            except ValueError:
                raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def resolve_train_options(args):
    """Flags override the config file, which overrides the defaults."""
    resolved = dict(TRAIN_DEFAULTS)
    if getattr(args, "config", None):
        resolved.update(read_config_file(args.config))
    for key in TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def make_config(opts):
    kernels = opts["component_kernels"]
    if kernels is not None:
        kernels = [k.strip() for k in kernels.split(",") if k.strip()]
    try:
        return TrainConfig(components=opts["components"], inducing=opts["inducing"], samples=opts["samples"],
                           iterations=opts["iterations"], step_size=opts["step_size"],
                           annealing=AnnealingSchedule(opts["alpha0"], opts["alpha_growth"], opts["alpha_max"]),
                           seed=opts["seed"], kernel=opts["kernel"], component_kernels=kernels,
                           psi=opts["psi"], latent_step_scale=opts["latent_step_scale"],
                           restarts=opts["restarts"], warmup=opts["warmup"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_grid(specs):
    """``min:max:steps`` per input dimension -> product grid, first axis slowest."""
    axes = []
    for spec in specs:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid spec {spec!r} is not min:max:steps")
        try:
            lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"grid spec {spec!r} is not min:max:steps") from None
        if steps < 1:
            raise UsageError(f"grid spec {spec!r}: steps must be positive")
        axes.append(np.linspace(lo, hi, steps))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def read_query_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty query file")
    header, body = rows[0], rows[1:]
    cols = [i for i, h in enumerate(header) if h.strip().startswith("x")]
    if not cols:
        # headerless numeric file
        cols, body = list(range(len(header))), rows
    return np.array([[float(r[i]) for i in cols] for r in body], dtype=float).reshape(len(body), len(cols))


def _queries(args, model):
    if args.grid and args.query:
        raise UsageError("give either --query or --grid, not both")
    if args.grid:
        x = parse_grid(args.grid)
    elif args.query:
        x = read_query_csv(args.query)
    else:
        raise UsageError("one of --query or --grid is required")
    if x.shape[1] != model.state.D:
        raise ValueError(f"queries have {x.shape[1]} input columns but the model expects {model.state.D}")
    return x


def _to_model_space(model, x):
    t = model.data_meta.get("input_transform") if model.data_meta else None
    if not t:
        return x
    std = np.asarray(t["std"], dtype=float)
    return (x - np.asarray(t["mean"], dtype=float)) / np.where(std > 0, std, 1.0)


def _to_output_units(model, pred):
    """Undo output standardisation (Jura) so predictions are in measured units."""
    t = model.data_meta.get("output_transform") if model.data_meta else None
    if not t:
        return pred
    scale = t["std"] if t["std"] > 0 else 1.0
    pred.means = pred.means * scale + t["mean"]
    pred.stds = pred.stds * scale
    return pred


def write_manifest(command, args, config, inputs, outputs, seed, timings, primary):
    doc = {
        "command": command,
        "argv": [str(a) for a in (args.argv or [])],
        "config": config,
        "seed": seed,
        "inputs": {p: sha256(p) for p in inputs},
        "outputs": {p: sha256(p) for p in outputs},
        "timings": timings,
    }
    path = primary + ".manifest.json"
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _stem(path):
    return path[:-5] if path.endswith(".json") else path


# -- commands -------------------------------------------------------------------------

def cmd_synth(args):
    start = time.perf_counter()
    gen = GENERATORS[args.name]
    kwargs = {"seed": args.seed}
    if args.n is not None:
        kwargs["n_points" if args.name == "gpdraws" else "n"] = args.n
    ds = gen(**kwargs)
    csv_path, meta_path = save_dataset(ds, args.out)
    write_manifest("synth", args, {"name": args.name, **{k: v for k, v in kwargs.items()}}, [],
                   [csv_path, meta_path], args.seed, {"wall_seconds": time.perf_counter() - start}, args.out)
    print(f"wrote {ds.N} rows to {csv_path}")
    return 0


def _load_training_data(args):
    if args.jura:
        return load_jura(args.data, element=args.element)
    return load_dataset(args.data)


def cmd_train(args):
    start = time.perf_counter()
    opts = resolve_train_options(args)
    config = make_config(opts)
    ds = _load_training_data(args)
    if config.inducing > ds.N:
        raise UsageError(f"--inducing {config.inducing} exceeds the {ds.N} data points")
    model = train(ds, config)
    stem = _stem(args.out)
    save_checkpoint(model, args.out)
    trace_path, assign_path, timing_path = stem + ".trace.csv", stem + ".assignments.csv", stem + ".timing.csv"
    atomic_write_text(trace_path, _csv([(t, fmt(a), fmt(v)) for (t, v), a in zip(model.bound_trace, model.alpha_trace)],
                                       ["iteration", "alpha", "bound"]))
    atomic_write_text(assign_path, _csv(list(enumerate(int(a) for a in model.hard_assignments)),
                                        ["index", "component"]))
    atomic_write_text(timing_path, _csv([(t, f"{ms:.6f}") for (t, _), ms in zip(model.bound_trace, model.time_trace)],
                                        ["iteration", "milliseconds"]))
    outputs = [args.out, trace_path, assign_path]
    if args.svg:
        traces = {"bound": ([t for t, _ in model.bound_trace], [v for _, v in model.bound_trace])}
        if model.bound_trace:
            atomic_write_text(args.svg, trace_svg(traces))
            outputs.append(args.svg)
    wall = time.perf_counter() - start
    write_manifest("train", args, config.to_dict(), [args.data], outputs, config.seed,
                   {"wall_seconds": wall, "timing_file": timing_path}, args.out)
    final = model.bound_trace[-1][1] if model.bound_trace else float("nan")
    print(f"trained {config.iterations} iterations, final bound {final:.6g}; wrote {args.out}")
    return 0


def cmd_predict(args):
    start = time.perf_counter()
    model = load_checkpoint(args.model)
    x_raw = _queries(args, model)
    pred = predict_mixture(model, _to_model_space(model, x_raw))
    pred = _to_output_units(model, pred)
    pred.x = x_raw
    atomic_write_text(args.out, prediction_to_csv(pred))
    outputs = [args.out]
    if args.svg:
        if model.state.D != 1:
            raise UsageError("--svg needs a model with one input dimension")
        atomic_write_text(args.svg, mixture_svg(model.state.X, model.Y, model.hard_assignments, pred))
        outputs.append(args.svg)
    inputs = [args.model] + ([args.query] if args.query else [])
    write_manifest("predict", args, {"grid": args.grid, "query": args.query}, inputs, outputs,
                   model.config.seed, {"wall_seconds": time.perf_counter() - start}, args.out)
    print(f"wrote {len(pred)} predictions to {args.out}")
    return 0


def cmd_sample(args):
    start = time.perf_counter()
    model = load_checkpoint(args.model)
    x_raw = _queries(args, model)
    pred = _to_output_units(model, predict_mixture(model, _to_model_space(model, x_raw)))
    samples, comps = sample_posterior(model, None, args.count, args.seed, prediction=pred)
    P = samples.shape[2]
    rows = []
    for s in range(args.count):
        for i in range(x_raw.shape[0]):
            rows.append([s, i] + [fmt(v) for v in x_raw[i]] + [int(comps[s, i])] + [fmt(v) for v in samples[s, i]])
    header = ["sample", "query"] + [f"x{d}" for d in range(x_raw.shape[1])] + ["component"] + [f"y{p}" for p in range(P)]
    atomic_write_text(args.out, _csv(rows, header))
    inputs = [args.model] + ([args.query] if args.query else [])
    write_manifest("sample", args, {"count": args.count, "grid": args.grid, "query": args.query}, inputs,
                   [args.out], args.seed, {"wall_seconds": time.perf_counter() - start}, args.out)
    print(f"wrote {args.count * x_raw.shape[0]} samples to {args.out}")
    return 0


def cmd_bench_psi(args):
    from .data import gen_gp_draws
    start = time.perf_counter()
    try:
        Ts = [int(t) for t in args.T.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--T must be a comma-separated list of integers, got {args.T!r}") from None
    if not Ts or min(Ts) < 1:
        raise UsageError("--T needs positive sample counts")
    ds = gen_gp_draws(args.n_points, args.n_draws, seed=args.seed)
    base = dict(components=1, inducing=args.inducing, iterations=args.iterations, kernel="se",
                step_size=args.step_size, seed=args.seed)
    runs = [(str(T), TrainConfig(samples=T, **base)) for T in Ts] + [("analytic", TrainConfig(psi="analytic", **base))]
    trace_rows, timing_rows, summary, traces = [], [], [], {}
    for name, cfg in runs:
        log.info("bench-psi: %s", name)
        m = train(ds, cfg)
        ts = [t for t, _ in m.bound_trace]
        vs = [v for _, v in m.bound_trace]
        traces[name] = (ts, vs)
        trace_rows += [(name, t, fmt(v)) for t, v in zip(ts, vs)]
        timing_rows += [(name, t, f"{ms:.6f}") for t, ms in zip(ts, m.time_trace)]
        # the first iterations include compilation, so cost is summarised by the median
        summary.append((name, vs[-1] if vs else float("nan"), float(np.median(m.time_trace)) if m.time_trace else float("nan")))
    final_analytic = summary[-1][1]
    stem = args.out[:-4] if args.out.endswith(".csv") else args.out
    summary_path, timing_path = stem + ".summary.csv", stem + ".timing.csv"
    atomic_write_text(args.out, _csv(trace_rows, ["config", "iteration", "bound"]))
    atomic_write_text(summary_path, _csv(
        [(n, fmt(b), fmt(abs(b - final_analytic) / abs(final_analytic))) for n, b, _ in summary],
        ["config", "final_bound", "relative_gap_to_analytic"]))
    atomic_write_text(timing_path, _csv(
        timing_rows + [(n, "median", f"{ms:.6f}") for n, _, ms in summary], ["config", "iteration", "milliseconds"]))
    outputs = [args.out, summary_path]
    if args.svg:
        atomic_write_text(args.svg, trace_svg(traces))
        outputs.append(args.svg)
    timings = {"wall_seconds": time.perf_counter() - start,
               "median_ms_per_iteration": {n: ms for n, _, ms in summary}, "timing_file": timing_path}
    write_manifest("bench-psi", args, {"T": Ts, **{k: v for k, v in base.items()}, "n_points": args.n_points,
                                       "n_draws": args.n_draws}, [], outputs, args.seed, timings, args.out)
    for n, b, ms in summary:
        print(f"{n:>9}: final bound {b:.6g}, median {ms:.3f} ms/iteration")
    return 0


# -- parser -----------------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--config", help="key = value file; flags take precedence")
    p.add_argument("--components", type=int, help="number of components L (default 2)")
    p.add_argument("--inducing", type=int, help="number of inducing points M (default 20)")
    p.add_argument("--samples", type=int, help="Monte Carlo samples T per iteration (default 1)")
    p.add_argument("--iterations", type=int, help="optimisation steps (default 1000)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--step-size", dest="step_size", type=float, help="optimiser step size (default 0.01)")
    p.add_argument("--alpha0", type=float, help="initial discretisation strength (default 1)")
    p.add_argument("--alpha-growth", dest="alpha_growth", type=float, help="per-iteration growth (default 1.005)")
    p.add_argument("--alpha-max", dest="alpha_max", type=float, help="cap on alpha (default 50)")
    p.add_argument("--psi", choices=["mc", "analytic"], help="statistics: Monte Carlo or closed form (SE only)")
    p.add_argument("--kernel", choices=["factorizing", "se"], help="model kernel (default factorizing)")
    p.add_argument("--component-kernels", dest="component_kernels",
                   help="comma-separated per-component kernels, e.g. 'se,se+white'")
    p.add_argument("--restarts", type=int, help="independent initialisations; best bound kept (default 1)")
    p.add_argument("--latent-step-scale", dest="latent_step_scale", type=float,
                   help="step multiplier for latent means/variances (default 0.1)")
    p.add_argument("--warmup", type=int, help="steps with kernel hyperparameters and noise frozen (default 0)")


def _add_query_flags(p):
    p.add_argument("model", help="checkpoint written by 'train'")
    p.add_argument("--query", help="CSV of query inputs (x0.. columns)")
    p.add_argument("--grid", action="append", default=[], metavar="MIN:MAX:STEPS",
                   help="grid axis; repeat once per input dimension")


def build_parser():
    parser = argparse.ArgumentParser(prog="lgpr", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("name", choices=sorted(GENERATORS))
    p.add_argument("--n", type=int, help="number of points (rows)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model to a dataset CSV")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--jura", action="store_true", help="read DATA as a Jura-style CSV")
    p.add_argument("--element", default="Co", help="Jura output column (default Co)")
    p.add_argument("--svg", help="also draw the bound trace")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-component predictions at query inputs")
    _add_query_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="also draw the fit (1-D inputs)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sample", help="draw outputs from the predictive mixture")
    _add_query_flags(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench-psi", help="Monte Carlo versus closed-form statistics on GP draws")
    p.add_argument("--T", default=BENCH_T, help=f"sample counts (default {BENCH_T})")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--inducing", type=int, default=20)
    p.add_argument("--step-size", dest="step_size", type=float, default=1e-2)
    p.add_argument("--n-points", dest="n_points", type=int, default=100)
    p.add_argument("--n-draws", dest="n_draws", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.set_defaults(func=cmd_bench_psi)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad usage
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "count", 1) is not None and getattr(args, "count", 1) < 1:
            raise UsageError("--count must be positive")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lgpr: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"lgpr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
