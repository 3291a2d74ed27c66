"""Command-line pipeline: geometry, gen, train, eval, reconstruct, bench.

Every run writes a manifest.txt (resolved config, seeds, versions, input
and output hashes) into the output directory; re-running the recorded
argv reproduces the outputs bit-identically in single-threaded mode.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric error.

All randomness derives from the single --seed via numpy SeedSequence
spawn keys: (1,) dataset generation, (2,) network init, (3,) shuffling,
(4,) benchmark inputs.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import (ConfigError, apply_overrides, default_config, format_value,
                     load_config, make_grid, make_layout, make_network_config,
                     make_phantom_spec, make_train_config)
from .datastore import (DatastoreError, export_composite, export_image,
                        generate_dataset, load_checkpoint, load_dataset,
                        save_checkpoint, save_dataset, save_operator, sha256_file,
                        split)
from .geometry import GeometryError, assemble_projection, build_cameras, trace_ray
from .metrics import MetricRow, aggregate, nrmse, psnr, ssim, write_aggregate_csv, write_rows_csv
from .model import TrainingDivergedError, build_network, train
from .nn import make_rng
from .pca import transform

_SEED_PURPOSE = {"gen": 1, "init": 2, "shuffle": 3, "bench": 4}


def derive_seed(master: int, purpose: str) -> int:
    key = _SEED_PURPOSE[purpose]
    ss = np.random.SeedSequence(entropy=master, spawn_key=(key,))
    return int(ss.generate_state(1, np.uint64)[0])


def _resolve_config(args) -> dict:
    cfg = (load_config(args.config, args.scale) if args.config
           else default_config(args.scale))
    return apply_overrides(cfg, args.override)


def _set_threads(n: int):
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    if kernels.backend() == "numba":
        import numba
        numba.set_num_threads(n)


def _write_manifest(out: Path, command: str, args, cfg: dict,
                    inputs: dict, outputs: dict, extra: dict | None = None):
    lines = {
        "command": command,
        "argv": " ".join(args.raw_argv),
        "package_version": __version__,
        "kernel_backend": kernels.backend(),
        "numpy_version": np.__version__,
        "seed": args.seed,
        "threads": args.threads,
        "scale": args.scale,
    }
    for key, value in sorted(cfg.items()):
        lines[f"config.{key}"] = format_value(value)
    for name, path in inputs.items():
        lines[f"input.{name}.name"] = Path(path).name
        lines[f"input.{name}.sha256"] = sha256_file(path).hex()
    for name, path in outputs.items():
        lines[f"output.{name}.name"] = Path(path).name
        lines[f"output.{name}.sha256"] = sha256_file(path).hex()
    for key, value in (extra or {}).items():
        lines[key] = value
    with open(out / "manifest.txt", "w") as f:
        for key in lines:
            f.write(f"{key} = {lines[key]}\n")


def cmd_geometry(args) -> int:
    cfg = _resolve_config(args)
    grid = make_grid(cfg)
    cams = build_cameras(make_layout(cfg), grid)
    op = assemble_projection(grid, cams)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    op_path = out / "operator.ptop"
    save_operator(op, op_path)
    # geometric coverage of all 48 sight lines (dead channels included)
    coverage = np.zeros(grid.n_pixels)
    for los in cams.lines:
        pix, seg = trace_ray(grid, los)
        coverage[pix] += seg
    coverage = coverage.reshape(grid.height_px, grid.width_px)
    cov_path = out / "coverage.png"
    export_image(coverage[::-1], cov_path, "png")  # row 0 at the top of the PNG
    nonempty = int(np.diff(op.matrix.indptr).astype(bool).sum())
    print(f"operator: {op.matrix.shape[0]} channels x {op.matrix.shape[1]} pixels, "
          f"{op.matrix.nnz} entries, {nonempty} nonempty rows")
    _write_manifest(out, "geometry", args, cfg, {},
                    {"operator": op_path, "coverage": cov_path})
    return 0


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    grid = make_grid(cfg)
    cams = build_cameras(make_layout(cfg), grid)
    spec = make_phantom_spec(cfg)
    ds = generate_dataset(args.n, spec, grid, cams, args.mode, args.noise_std,
                          derive_seed(args.seed, "gen"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds_path = out / "dataset.ptds"
    save_dataset(ds, ds_path)
    print(f"dataset: {ds.n_examples} examples, PCA rank {ds.pca_rank}, "
          f"peak {ds.peak:.6g}")
    _write_manifest(out, "gen", args, cfg, {}, {"dataset": ds_path},
                    {"n": args.n, "mode": args.mode, "noise_std": args.noise_std,
                     "pca_rank": ds.pca_rank})
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ds = load_dataset(args.dataset)
    net_cfg = make_network_config(cfg, input_dim=ds.pca_rank)
    if (net_cfg.out_h, net_cfg.out_w) != (ds.grid.pad_height_px, ds.grid.pad_width_px):
        raise ConfigError(
            f"network output {net_cfg.out_h}x{net_cfg.out_w} does not match "
            f"dataset images {ds.grid.pad_height_px}x{ds.grid.pad_width_px}")
    train_idx, val_idx, _ = split(ds, ds.split)
    coords = transform(ds.pca, net_cfg.input_dim, ds.readings.astype(np.float64))
    X = coords.astype(np.float32)
    net = build_network(net_cfg, make_rng(derive_seed(args.seed, "init")))
    tc = make_train_config(cfg, shuffle_seed=derive_seed(args.seed, "shuffle"))

    def log(epoch, tr, vl, secs):
        print(f"epoch {epoch:4d}  train {tr:.6f}  val {vl:.6f}  ({secs:.2f} s)",
              flush=True)

    history = train(net, (X[train_idx], ds.images[train_idx]),
                    (X[val_idx], ds.images[val_idx]), tc, log_fn=log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.ptck"
    save_checkpoint(net, ds.pca, net_cfg.input_dim, args.seed,
                    history.best_val_loss, sha256_file(args.dataset), ckpt_path)
    hist_path = out / "history.csv"
    with open(hist_path, "w") as f:
        f.write("epoch,train_loss,val_loss,seconds\n")
        for i in range(history.n_epochs):
            secs = f"{history.seconds[i]:.3f}" if args.timing else "0.000"
            f.write(f"{i + 1},{history.train_loss[i]!r},{history.val_loss[i]!r},"
                    f"{secs}\n")
    print(f"best validation loss {history.best_val_loss!r} "
          f"(epoch {history.best_epoch + 1} of {history.n_epochs})")
    _write_manifest(out, "train", args, cfg, {"dataset": args.dataset},
                    {"checkpoint": ckpt_path, "history": hist_path},
                    {"timing": args.timing, "epochs_run": history.n_epochs,
                     "input_dim": net_cfg.input_dim})
    return 0


def _load_compatible(args):
    net, pca_model, rank, _, _, ds_hash = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    if ds_hash != bytes(32) and ds_hash != sha256_file(args.dataset):
        raise DatastoreError(
            "checkpoint was trained on a different dataset (hash mismatch)")
    return net, pca_model, rank, ds


def cmd_eval(args) -> int:
    net, pca_model, rank, ds = _load_compatible(args)
    _, _, test_idx = split(ds, ds.split)
    Y = ds.images[test_idx].astype(np.float64)
    if args.self_test:
        preds = Y
    else:
        X = transform(pca_model, rank,
                      ds.readings[test_idx].astype(np.float64)).astype(np.float32)
        preds = None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    outputs = []
    for j, idx in enumerate(test_idx):
        pred = preds[j] if preds is not None else np.asarray(net.forward(X[j]),
                                                             dtype=np.float64)
        outputs.append(pred)
        rows.append(MetricRow(int(idx), ssim(pred, Y[j]), psnr(pred, Y[j]),
                              nrmse(pred, Y[j])))
    report = aggregate(rows)
    rows_path = out / "metrics.csv"
    agg_path = out / "aggregate.csv"
    write_rows_csv(report.rows, rows_path, dataset=Path(args.dataset).stem)
    write_aggregate_csv(report, agg_path)
    composite_paths = {}
    for j in range(min(args.samples, len(test_idx))):
        comp = out / f"sample_{int(test_idx[j]):05d}.png"
        export_composite(Y[j][::-1], outputs[j][::-1], comp, "png")
        composite_paths[f"sample_{j}"] = comp
    for metric, (mean, best, worst) in report.aggregates.items():
        print(f"{metric}: mean {mean:.6f} best {best:.6f} worst {worst:.6f}")
    _write_manifest(out, "eval", args, {},
                    {"checkpoint": args.checkpoint, "dataset": args.dataset},
                    {"metrics": rows_path, "aggregate": agg_path, **composite_paths},
                    {"self_test": args.self_test, "n_test": len(test_idx)})
    return 0


def cmd_reconstruct(args) -> int:
    net, pca_model, rank, ds = _load_compatible(args)
    indices = [int(s) for s in args.indices.split(",")] if args.indices else [0]
    for idx in indices:
        if not 0 <= idx < ds.n_examples:
            raise ConfigError(f"example index {idx} out of range")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X = transform(pca_model, rank,
                  ds.readings[indices].astype(np.float64)).astype(np.float32)
    preds = np.asarray(net.forward(X), dtype=np.float64)
    if preds.ndim == 2:
        preds = preds[None]
    outputs = {}
    for j, idx in enumerate(indices):
        target = ds.images[idx].astype(np.float64)
        comp = out / f"reconstruction_{idx:05d}.{args.format_ext}"
        export_composite(target[::-1], preds[j][::-1], comp, args.format)
        outputs[f"reconstruction_{idx}"] = comp
    print(f"wrote {len(indices)} composite reconstruction(s) to {out}")
    _write_manifest(out, "reconstruct", args, {},
                    {"checkpoint": args.checkpoint, "dataset": args.dataset},
                    outputs, {"indices": ",".join(str(i) for i in indices)})
    return 0


def cmd_bench(args) -> int:
    net, pca_model, rank, _, _, _ = load_checkpoint(args.checkpoint)
    rng = make_rng(derive_seed(args.seed, "bench"))
    scale = np.sqrt(np.clip(pca_model.eigenvalues[:rank], 0.0, None))
    thread_counts = ([args.threads] if not args.scaling
                     else list(range(1, args.threads + 1)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "bench.txt"
    lines = []
    for n_threads in thread_counts:
        _set_threads(n_threads)
        x = (rng.standard_normal((args.batch, rank)) * scale).astype(np.float32)
        net.forward(x)  # warmup / jit compile
        latencies = []
        t_end = time.perf_counter() + args.duration
        n_done = 0
        while time.perf_counter() < t_end:
            t0 = time.perf_counter()
            net.forward(x)
            latencies.append(time.perf_counter() - t0)
            n_done += args.batch
        lat = np.sort(np.asarray(latencies))
        p50 = float(np.percentile(lat, 50))
        p99 = float(np.percentile(lat, 99))
        throughput = n_done / float(lat.sum())
        lines.append(f"threads={n_threads} batch={args.batch} "
                     f"throughput={throughput:.2f}/s p50={p50 * 1e3:.3f}ms "
                     f"p99={p99 * 1e3:.3f}ms ratio_vs_5kHz={throughput / 5000.0:.6f}")
        print(lines[-1])
    with open(report_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    _write_manifest(out, "bench", args, {}, {"checkpoint": args.checkpoint},
                    {"report": report_path},
                    {"batch": args.batch, "duration": args.duration})
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="key-value config file")
    p.add_argument("--override", action="append", default=[], metavar="K=V",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--scale", choices=("quarter", "half", "full"), default="full")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bolotomo",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geometry", help="build and export the projection operator")
    _add_common(p)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("gen", help="generate a phantom dataset")
    _add_common(p)
    p.add_argument("--n", type=int, required=True, help="number of examples")
    p.add_argument("--mode", choices=("analytic", "discrete"), default="analytic")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the reconstruction network")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--timing", action="store_true",
                   help="record wall time in history.csv (breaks bit-identical reruns)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", type=int, default=4,
                   help="number of sample composites to export")
    p.add_argument("--self-test", action="store_true",
                   help="debug: compare targets against themselves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="reconstruct chosen dataset examples")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--indices", default="",
                   help="comma-separated example indices (default 0)")
    p.add_argument("--format", choices=("png", "pgm16"), default="png")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("bench", help="forward-pass throughput benchmark")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--duration", type=float, default=2.0, metavar="SECONDS")
    p.add_argument("--scaling", action="store_true",
                   help="measure thread counts 1..--threads")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw_argv = argv
    fmt = getattr(args, "format", "png")
    args.format_ext = {"png": "png", "pgm16": "pgm"}[fmt]
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (ConfigError, GeometryError, DatastoreError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, FloatingPointError, ArithmeticError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
