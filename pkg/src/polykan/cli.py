"""Command-line surface: LUT building, verification, benchmarks, training,
and a file-based apply mode used by external bindings.

Exit codes: 0 success, 2 usage error, 3 verification failure, 4 I/O error.
``POLYKAN_WORKERS`` provides the default for --workers.
"""
from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from pathlib import Path

import numpy as np

from .basis import BasisKind, parse_kind
from .kernels import BasisPath, KernelMode, TileSchedule, backward_fused, fused_forward
from .lut import DEFAULT_LUT_SIZE, lut_build, lut_max_error_bound, save_lut
from .model import (
    AdamHParams,
    DatasetError,
    LayerSpec,
    Loss,
    NetworkSpec,
    TrainingDiverged,
    load_csv,
    make_synthetic,
    network_train,
    save_checkpoint,
)
from .perf import (
    KERNEL_VERSIONS,
    load_configs_json,
    paper_configs,
    run_bench,
    write_bench_csv,
    write_roofline_json,
)
from .tensor import Layout, load_coeff, reorder_to_doj, save_coeff
from .verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VERIFY = 3
EXIT_IO = 4

MATRIX_MAGIC = b"PKMX"
MATRIX_VERSION = 1


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("POLYKAN_WORKERS", "1")))
    except ValueError:
        return 1


def save_matrix(arr: np.ndarray, path: str | Path) -> None:
    """Little-endian float32 matrix interchange file (magic ``PKMX``)."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"matrix files hold 2-D data, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<III", MATRIX_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MATRIX_MAGIC:
        raise ValueError(f"{path}: not a PKMX matrix file")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != MATRIX_VERSION:
        raise ValueError(f"{path}: unsupported PKMX version {version}")
    if len(raw) != 16 + 4 * rows * cols:
        raise ValueError(f"{path}: expected {16 + 4 * rows * cols} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=16)
    return data.reshape(rows, cols).astype(np.float64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polykan",
        description="Data-parallel polynomial KAN operators: LUT tables, fused "
        "tiled kernels, benchmarks, and a small trainer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_lut = sub.add_parser("lut-build", help="build a basis lookup table file")
    p_lut.add_argument("--basis", default="chebyshev",
                       help="basis family: chebyshev, legendre, hermite, fourier")
    p_lut.add_argument("--degree", type=int, required=True, help="maximum basis order")
    p_lut.add_argument("--size", type=int, default=DEFAULT_LUT_SIZE,
                       help="number of grid samples (>= 2)")
    p_lut.add_argument("--out", required=True, help="output .pklt path")

    p_verify = sub.add_parser("verify", help="run the oracle and invariant suites")
    p_verify.add_argument("--config", choices=["small", "full"], default="small",
                          help="suite size")

    p_bench = sub.add_parser("bench", help="micro-benchmark kernel versions")
    p_bench.add_argument("--configs", default="paper",
                         help="'paper' for the three shipped shapes, or a JSON file")
    p_bench.add_argument("--versions", default="all",
                         help="comma list of kernel versions, or 'all'")
    p_bench.add_argument("--reps", type=int, default=20, help="timed repetitions")
    p_bench.add_argument("--warmups", type=int, default=5, help="untimed warm-up calls")
    p_bench.add_argument("--csv", required=True, help="output CSV path")
    p_bench.add_argument("--roofline-json", default=None,
                         help="also write per-config roofline reports to this path")
    p_bench.add_argument("--seed", type=int, default=0, help="input generation seed")
    p_bench.add_argument("--workers", type=int, default=None,
                         help="worker count for tiled kernels (default: POLYKAN_WORKERS or 1)")

    p_train = sub.add_parser("train", help="train a small network")
    p_train.add_argument("--data", required=True,
                         help="CSV path or synthetic:NAME (cheb2, sincos)")
    p_train.add_argument("--arch", required=True,
                         help="comma-separated layer widths, e.g. '40,256,256,12'")
    p_train.add_argument("--degree", type=int, default=8, help="basis order per layer")
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--lr", type=float, default=1e-2,
                         help="Adam learning rate (cosine-decayed over the run)")
    p_train.add_argument("--mode", choices=["lut", "exact"], default="lut",
                         help="kernel basis path")
    p_train.add_argument("--loss", choices=[l.value for l in Loss], default="mse")
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True,
                         help="output directory for checkpoint and loss CSV")
    p_train.add_argument("--workers", type=int, default=None,
                         help="worker count for tiled kernels (default: POLYKAN_WORKERS or 1)")

    p_apply = sub.add_parser(
        "apply", help="run one layer forward/backward on matrix files (binding surface)"
    )
    p_apply.add_argument("--coeff", required=True, help="PKCK coefficient file")
    p_apply.add_argument("--input", required=True, help="PKMX input matrix (B x d_in)")
    p_apply.add_argument("--output", required=True, help="PKMX output path for y")
    p_apply.add_argument("--bias-json", default=None,
                         help="optional JSON list of d_out bias values")
    p_apply.add_argument("--mode", choices=["lut", "exact"], default="lut")
    p_apply.add_argument("--basis", default="chebyshev")
    p_apply.add_argument("--lut-size", type=int, default=DEFAULT_LUT_SIZE)
    p_apply.add_argument("--dy", default=None,
                         help="PKMX upstream gradient; triggers the backward pass")
    p_apply.add_argument("--coeff-grad", default=None,
                         help="PKCK output path for the coefficient gradient (DOJ)")
    p_apply.add_argument("--x-grad", default=None, help="PKMX output path for dL/dx")
    p_apply.add_argument("--no-tanh-jacobian", action="store_true",
                         help="reproduce the pseudocode-literal input gradient")
    return parser


def cmd_lut_build(args: argparse.Namespace) -> int:
    try:
        kind = parse_kind(args.basis)
        table = lut_build(kind, args.degree, args.size)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        save_lut(table, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    bounds = lut_max_error_bound(table)
    print(f"wrote {args.out}: basis={kind.value} degree={args.degree} size={args.size}")
    print("per-feature interpolation error bounds:")
    for k, b in enumerate(bounds):
        print(f"  feature {k:3d}: {b:.3e}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_suite(args.config)
    for r in results:
        print(r.row())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: "
              + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    workers = args.workers if args.workers is not None else _default_workers()
    if args.configs == "paper":
        configs = paper_configs()
    else:
        try:
            configs = load_configs_json(args.configs)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read configs {args.configs}: {exc}", file=sys.stderr)
            return EXIT_IO
        except (KeyError, ValueError) as exc:
            print(f"error: bad config file {args.configs}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if args.versions == "all":
        versions = list(KERNEL_VERSIONS)
    else:
        versions = [v.strip() for v in args.versions.split(",") if v.strip()]
    try:
        results = run_bench(configs, versions, reps=args.reps, warmups=args.warmups,
                            seed=args.seed, workers=workers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        write_bench_csv(results, args.csv)
        if args.roofline_json:
            write_roofline_json(configs, args.roofline_json)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    for r in results:
        c = r.config
        print(f"({c.batch},{c.d_in},{c.d_out},{c.degree}) {r.version:<22} "
              f"fwd {r.fwd_ms:9.3f} ms  bwd {r.bwd_ms:9.3f} ms  "
              f"{r.samples_per_s:10.1f} samples/s")
    by_key = {(r.config, r.version): r for r in results}
    for config in configs:
        lut_r = by_key.get((config, "fused-lut+reorder"))
        exact_r = by_key.get((config, "fused-exact"))
        if lut_r and exact_r and lut_r.samples_per_s < exact_r.samples_per_s:
            print(
                f"flag: fused-lut+reorder ({lut_r.samples_per_s:.0f}/s) is below "
                f"fused-exact ({exact_r.samples_per_s:.0f}/s) on "
                f"(B={config.batch}, D_in={config.d_in}, D_out={config.d_out}, "
                f"d={config.degree}); the table gather does not beat the "
                "vectorized recurrence on this host"
            )
    print(f"wrote {args.csv} ({len(results)} rows)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    workers = args.workers if args.workers is not None else _default_workers()
    try:
        if args.data.startswith("synthetic:"):
            dataset = make_synthetic(args.data.split(":", 1)[1])
        else:
            dataset = load_csv(args.data, classification=args.loss == "cross_entropy")
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: cannot read {args.data}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        dims = [int(w) for w in args.arch.split(",")]
    except ValueError:
        print(f"error: --arch must be comma-separated integers, got {args.arch!r}",
              file=sys.stderr)
        return EXIT_USAGE
    if len(dims) < 2:
        print("error: --arch needs at least two widths", file=sys.stderr)
        return EXIT_USAGE

    mode = KernelMode(BasisPath.LUT_INTERP if args.mode == "lut" else BasisPath.EXACT_RECURRENCE)
    layers = tuple(
        LayerSpec(d_in, d_out, args.degree, mode=mode)
        for d_in, d_out in zip(dims[:-1], dims[1:])
    )
    netspec = NetworkSpec(layers, Loss(args.loss))
    try:
        result = network_train(
            netspec, dataset, args.epochs, AdamHParams(lr=args.lr),
            seed=args.seed, batch_size=args.batch_size, workers=workers,
        )
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.network, out_dir)
        with open(out_dir / "loss.csv", "w") as fh:
            fh.write("epoch,loss\n")
            for i, loss in enumerate(result.trace.epoch_losses):
                fh.write(f"{i},{loss!r}\n")
    except OSError as exc:
        print(f"error: cannot write {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    fwd = sum(result.trace.fwd_seconds)
    bwd = sum(result.trace.bwd_seconds)
    print(f"trained {args.epochs} epochs on {dataset.name}: "
          f"final loss {result.final_loss:.6e} (fwd {fwd:.2f}s, bwd {bwd:.2f}s)")
    print(f"checkpoint and loss.csv written to {out_dir}")
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    try:
        coeff = load_coeff(args.coeff)
        x = load_matrix(args.input)
        dy = load_matrix(args.dy) if args.dy else None
        bias = None
        if args.bias_json:
            bias = np.asarray(json.loads(Path(args.bias_json).read_text()), dtype=np.float64)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    kind = parse_kind(args.basis)
    if coeff.layout is Layout.JOD:
        coeff = reorder_to_doj(coeff)
    mode = KernelMode(
        BasisPath.LUT_INTERP if args.mode == "lut" else BasisPath.EXACT_RECURRENCE,
        include_tanh_jacobian=not args.no_tanh_jacobian,
    )
    lut = lut_build(kind, _basis_degree(kind, coeff.n_feat), args.lut_size) \
        if mode.basis_path is BasisPath.LUT_INTERP else None
    sched = TileSchedule.for_dims(coeff.d_in, coeff.d_out)
    try:
        y = fused_forward(x, coeff, lut, sched, mode, bias, kind=kind)
        save_matrix(y, args.output)
        if dy is not None:
            if not (args.coeff_grad and args.x_grad):
                print("error: --dy requires --coeff-grad and --x-grad", file=sys.stderr)
                return EXIT_USAGE
            cg, xg = backward_fused(x, coeff, dy, lut, sched, mode, kind=kind)
            save_coeff(cg, args.coeff_grad)
            save_matrix(xg, args.x_grad)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _basis_degree(kind: BasisKind, n_feat: int) -> int:
    if kind is BasisKind.FOURIER:
        return (n_feat - 1) // 2
    return n_feat - 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "lut-build": cmd_lut_build,
        "verify": cmd_verify,
        "bench": cmd_bench,
        "train": cmd_train,
        "apply": cmd_apply,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
