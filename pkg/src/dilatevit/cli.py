"""Command-line interface.

Subcommands: flops, gradcheck, bench, train, attnstats, gen-data. Exit codes
are a stable contract: 0 success, 1 assertion/accuracy failure, 2 usage
error. Every subcommand honors --seed and --threads; apart from measured
timings in bench output, results are byte-identical across runs and thread
counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
import time

import numpy as np

from . import dft1, metrics, model as model_mod, profiler, runtime, train as train_mod
from .data import DatasetSpec, make_dataset
from .errors import DilateVitError
from .gradsuite import GRAD_TOL, run_gradient_suite
from .msda import MsdaBlockSpec
from .swda import SwdaConfig, swda_forward, swda_forward_naive

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    parser.add_argument(
        "--threads",
        type=int,
        default=runtime.default_thread_count(),
        help="internal thread count (results are identical at any value)",
    )
    parser.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    parser.add_argument("--out", default=None, help="output path (file or directory)")
    parser.add_argument("--config", default=None, help="JSON model config path")


def _resolve_config(args, default_preset="tiny") -> model_mod.ModelConfig:
    if args.config:
        return model_mod.load_config(args.config)
    preset = getattr(args, "preset", None) or default_preset
    if preset not in model_mod.PRESETS:
        raise DilateVitError(f"unknown preset {preset!r}")
    return model_mod.PRESETS[preset]()


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# flops
# ---------------------------------------------------------------------------


def _expect_arg(spec: str) -> tuple[str, float, float]:
    try:
        key, rest = spec.split("=", 1)
        value, tol = rest.split(":", 1)
        key = key.strip()
        if key not in ("flops", "params"):
            raise ValueError(key)
        return key, float(value), float(tol)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"bad expectation {spec!r}, want flops|params=value:tolerance (e.g. flops=3.2e9:0.10)"
        ) from exc


def _pattern_arg(pattern: str) -> str:
    if len(pattern) != 4 or any(c not in "DG" for c in pattern):
        raise argparse.ArgumentTypeError(
            f"pattern must be 4 characters over D/G, got {pattern!r}"
        )
    return pattern


def cmd_flops(args) -> int:
    config = _resolve_config(args, default_preset="tiny")
    if args.ablation_base:
        config = model_mod.tiny()
    if args.pattern:
        config = model_mod.build_from_pattern(args.pattern, config)
    if args.kernel_w:
        from dataclasses import replace

        stages = tuple(
            replace(s, kernel_w=args.kernel_w) if s.kind == "D" else s
            for s in config.stages
        )
        config = replace(config, stages=stages)

    if args.suite:
        suite = profiler.count_pattern_suite(
            config, ["GGGG", "DGGG", "DDGG", "DDDG", "DDDD"], args.input
        )
        lines = [f"{'pattern':<8}{'params':>12}{'flops_mac':>16}"]
        for pattern, report in suite:
            lines.append(f"{pattern:<8}{report.total_params:>12}{report.total_macs:>16}")
        _write_or_print("\n".join(lines), args.out)
        return EXIT_OK

    report = profiler.count_model(config, args.input)
    _write_or_print(report.to_csv() if args.csv else report.to_text(), args.out)

    status = EXIT_OK
    for key, value, tol in args.expect or []:
        if key == "flops":
            actual = report.headline_flops(flops_per_mac=args.flops_per_mac)
        else:
            actual = report.total_params
        ok = abs(actual - value) <= tol * value
        print(
            f"expect {key}={value:g} tol {tol:.0%}: actual {actual:g} "
            f"({(actual - value) / value:+.2%}) -> {'ok' if ok else 'VIOLATED'}"
        )
        if not ok:
            status = EXIT_FAIL
    return status


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    report = run_gradient_suite(
        seed=args.seed, cases=args.cases, budget=args.budget, corrupt=args.corrupt
    )
    text = "\n".join(report.to_lines())
    _write_or_print(text, args.out)
    return EXIT_OK if report.passed(args.tol) else EXIT_FAIL


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _time_median_ns(fn, reps: int, warmup: int) -> int:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        start = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - start)
    return int(statistics.median(samples))


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    mhsa_sizes = [int(s) for s in (args.mhsa_sizes or args.sizes).split(",")]
    cfg = SwdaConfig(w=args.window, r=args.rate, d_k=args.dk)
    rng = np.random.default_rng(args.seed)
    dtype = np.float32 if args.dtype == "f32" else np.float64
    rows = []
    mismatch = False
    for size in sizes:
        q, k, v = (
            rng.standard_normal((size, size, args.dk)).astype(dtype) for _ in range(3)
        )
        blocked, _ = swda_forward(q, k, v, cfg)
        naive, _ = swda_forward_naive(q, k, v, cfg)
        if np.abs(blocked - naive).max() > 1e-6:
            print(
                f"blocked/naive mismatch at {size}x{size}: "
                f"{np.abs(blocked - naive).max():.3e}",
                file=sys.stderr,
            )
            mismatch = True
        for impl, fn in (
            ("swda_blocked", lambda: swda_forward(q, k, v, cfg)),
            ("swda_naive", lambda: swda_forward_naive(q, k, v, cfg)),
        ):
            ns = _time_median_ns(fn, args.reps, args.warmup)
            rows.append(
                (impl, size, size, cfg.w, cfg.r, cfg.d_k, ns, ns / (size * size))
            )

    from .autograd import Parameter, Tape, graph
    from .msda import mhsa_attention

    for size in mhsa_sizes:
        dim = args.dk  # single head keeps the memory footprint bounded
        spec = MsdaBlockSpec(dim=dim, n_heads=1, dilation_rates=(1,))
        x = rng.standard_normal((size, size, dim)).astype(dtype)
        params = {
            "m.qkv.weight": Parameter("m.qkv.weight", rng.standard_normal((dim, 3 * dim)).astype(dtype) * 0.1),
            "m.qkv.bias": Parameter("m.qkv.bias", np.zeros(3 * dim, dtype=dtype)),
            "m.proj.weight": Parameter("m.proj.weight", rng.standard_normal((dim, dim)).astype(dtype) * 0.1),
            "m.proj.bias": Parameter("m.proj.bias", np.zeros(dim, dtype=dtype)),
        }

        def run_mhsa():
            g = graph(Tape())
            mhsa_attention(g, g.leaf(x), 1, params, "m", spec=spec)

        ns = _time_median_ns(run_mhsa, args.reps, args.warmup)
        rows.append(("mhsa", size, size, 0, 0, dim, ns, ns / (size * size)))

    lines = ["impl,H,W,w,r,d_k,median_ns,ns_per_query"]
    for row in rows:
        lines.append(
            f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]},{row[5]},{row[6]},{row[7]:.1f}"
        )
    _write_or_print("\n".join(lines), args.out)
    return EXIT_FAIL if mismatch else EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_dataset_dir(path: str) -> tuple[np.ndarray, np.ndarray]:
    images = dft1.read_tensor(os.path.join(path, "images.dft1"))
    labels = []
    with open(os.path.join(path, "labels.csv"), "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            labels.append(int(row["label"]))
    return images, np.asarray(labels, dtype=np.int64)


def cmd_train(args) -> int:
    config = _resolve_config(args, default_preset="toy")
    if args.classes and config.num_classes != args.classes:
        from dataclasses import replace

        config = replace(config, num_classes=args.classes)

    if args.data:
        images, labels = _load_dataset_dir(args.data)
    else:
        spec = DatasetSpec(classes=config.num_classes, size=config.input_size, noise=args.noise)
        images, labels = make_dataset(args.count, spec, seed=args.seed)

    result = train_mod.train(
        config,
        steps=args.steps,
        batch_size=args.batch,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        images=images,
        labels=labels,
        dtype=np.float32 if args.dtype == "f32" else np.float64,
    )

    out_dir = args.out or "train_out"
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "train_log.csv"), "w", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "step", "loss", "accuracy"])
        for row in result.log:
            writer.writerow([row.epoch, row.step, f"{row.loss:.6f}", f"{row.accuracy:.4f}"])
    model_mod.save_checkpoint(os.path.join(out_dir, "checkpoint"), config, result.params)

    print(f"final train accuracy {result.final_accuracy:.4f} after {args.steps} steps")
    return EXIT_OK if result.final_accuracy >= args.min_acc else EXIT_FAIL


# ---------------------------------------------------------------------------
# attnstats
# ---------------------------------------------------------------------------


def _maps_from_checkpoint(args) -> list[tuple[str, metrics.AttentionMap]]:
    config, params = model_mod.load_checkpoint(args.checkpoint)
    spec = DatasetSpec(classes=config.num_classes, size=config.input_size, noise=0.1)
    images, _ = make_dataset(1, spec, seed=args.seed)

    from .autograd import Tape, graph

    sink: list = []
    g = graph(Tape())
    model_mod.forward(g, g.leaf(images[0]), config, params, attn_sink=sink)
    maps = []
    for layer, cfg, weights in sink:
        if cfg is not None:
            maps.append((layer, metrics.from_swda_weights(weights, cfg)))
        else:
            n = weights.shape[0]
            side = int(round(n**0.5))
            maps.append((layer, metrics.from_dense(weights.astype(np.float64), side, side)))
    return maps


def _map_from_file(args) -> list[tuple[str, metrics.AttentionMap]]:
    arr = dft1.read_tensor(args.input)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DilateVitError(
            f"attention file must hold a square [H*W, H*W] matrix, got {arr.shape}"
        )
    if args.grid:
        h, w = (int(x) for x in args.grid.split(","))
    else:
        side = int(round(arr.shape[0] ** 0.5))
        if side * side != arr.shape[0]:
            raise DilateVitError(
                f"cannot infer grid for {arr.shape[0]} keys; pass --grid H,W"
            )
        h = w = side
    return [(os.path.basename(args.input), metrics.from_dense(arr, h, w))]


def cmd_attnstats(args) -> int:
    if not args.input and not args.checkpoint:
        raise DilateVitError("need --input FILE.dft1 or --checkpoint DIR")
    named_maps = _map_from_file(args) if args.input else _maps_from_checkpoint(args)
    radii = [int(r) for r in args.radii.split(",")]
    lines = ["layer,radius_or_threshold,metric,value"]
    for layer, amap in named_maps:
        for radius in radii:
            _, mean = metrics.locality_mass(amap, radius)
            lines.append(f"{layer},{radius},locality_mass,{mean:.10f}")
        stats = metrics.sparsity_profile(amap, args.threshold)
        lines.append(f"{layer},{args.threshold},active_keys,{stats.mean_active_keys:.10f}")
        lines.append(
            f"{layer},{args.threshold},participation_ratio,{stats.participation_ratio:.10f}"
        )
        lines.append(f"{layer},{args.threshold},entropy_nats,{stats.entropy_nats:.10f}")
    _write_or_print("\n".join(lines), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = DatasetSpec(classes=args.classes, size=args.size, noise=args.noise)
    images, labels = make_dataset(args.count, spec, seed=args.seed)
    out_dir = args.out or "synthetic_data"
    os.makedirs(out_dir, exist_ok=True)
    dft1.write_tensor(os.path.join(out_dir, "images.dft1"), images)
    with open(os.path.join(out_dir, "labels.csv"), "w", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label"])
        for i, label in enumerate(labels):
            writer.writerow([i, int(label)])
    with open(os.path.join(out_dir, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "format_version": "1",
                "classes": spec.classes,
                "size": spec.size,
                "noise": spec.noise,
                "count": args.count,
                "seed": args.seed,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {args.count} images to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dilatevit",
        description="Dilated window attention kernels, model builder, profiler and analysis tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flops", help="analytic parameter/FLOPs report")
    _add_shared(p)
    p.add_argument("--preset", choices=sorted(model_mod.PRESETS), default=None)
    p.add_argument("--input", type=int, default=None, help="input resolution override")
    p.add_argument("--pattern", type=_pattern_arg, default=None, help="4-char D/G stage pattern")
    p.add_argument("--ablation-base", action="store_true", help="use the tiny-scale ablation base config")
    p.add_argument("--kernel-w", type=int, default=None, help="override D-stage window size")
    p.add_argument("--suite", action="store_true", help="run the 5-pattern ablation table")
    p.add_argument("--csv", action="store_true", help="emit CSV instead of a text table")
    p.add_argument("--flops-per-mac", type=int, choices=[1, 2], default=1)
    p.add_argument(
        "--expect", action="append", type=_expect_arg, help="assert key=value:tol (flops/params)"
    )
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_shared(p)
    p.add_argument("--cases", type=int, default=30)
    p.add_argument("--budget", type=int, default=6, help="probed elements per parameter")
    p.add_argument("--tol", type=float, default=GRAD_TOL)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)  # harness self-test
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="time attention kernels across map sizes")
    _add_shared(p)
    p.add_argument("--sizes", default="28,56,112")
    p.add_argument("--mhsa-sizes", default=None, help="map sizes for the dense baseline")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--rate", type=int, default=2)
    p.add_argument("--dk", type=int, default=24)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("train", help="SGD training on synthetic data")
    _add_shared(p)
    p.add_argument("--preset", choices=sorted(model_mod.PRESETS), default=None)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--count", type=int, default=64, help="synthetic dataset size")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--data", default=None, help="directory from gen-data")
    p.add_argument("--min-acc", type=float, default=0.95)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attnstats", help="locality/sparsity metrics of attention maps")
    _add_shared(p)
    p.add_argument("--input", default=None, help="DFT1 file holding a [H*W, H*W] matrix")
    p.add_argument("--grid", default=None, help="H,W of the query grid")
    p.add_argument("--checkpoint", default=None, help="model checkpoint to generate maps from")
    p.add_argument("--radii", default="0,1,2,3")
    p.add_argument("--threshold", type=float, default=0.01)
    p.set_defaults(fn=cmd_attnstats)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    _add_shared(p)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(fn=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    runtime.set_num_threads(args.threads)
    try:
        return args.fn(args)
    except DilateVitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
