"""Roofline work/traffic model, the two-stage cost crossover, and benchmarks.

The roofline counts a fused multiply-add conservatively as 2 FLOPs:

    T = 2 B D_in (d + (d+1) D_out)
    S = lambda [B D_in + B D_out + 2 B D_in (d+1) + D_in D_out (d+1)]
    I = T / S

and classifies a configuration against a machine ridge intensity I_max.
The S expression charges traffic for a materialized basis tensor; fused
execution would shrink it, but the formula is implemented as stated.

Benchmarks time kernel versions with a monotonic clock, median of N reps
after a few warm-ups; inputs are generated deterministically from a seed.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from statistics import median

import numpy as np

from .basis import BasisKind
from .kernels import (
    EXACT_MODE,
    LUT_MODE,
    PartialBuffer,
    TileSchedule,
    backward_fused,
    combine,
    forward_partial,
    forward_partial_jod_view,
    reference_backward,
    reference_forward,
)
from .lut import DEFAULT_LUT_SIZE, lut_build
from .tensor import CoeffTensor, Layout, reorder_to_doj

DEFAULT_RIDGE_INTENSITY = 10.0  # machine parameter; supplied, never measured


class Regime(Enum):
    MEMORY_BOUND = "memory-bound"
    COMPUTE_BOUND = "compute-bound"


@dataclass(frozen=True)
class LayerConfig:
    batch: int
    d_in: int
    d_out: int
    degree: int
    elem_bytes: int = 4  # lambda

    def __post_init__(self) -> None:
        if min(self.batch, self.d_in, self.d_out) < 1 or self.degree < 0:
            raise ValueError("batch, d_in, d_out must be >= 1 and degree >= 0")
        if self.elem_bytes not in (4, 8):
            raise ValueError("elem_bytes (lambda) must be 4 or 8")


@dataclass(frozen=True)
class RooflineReport:
    config: LayerConfig
    flops: int  # T
    bytes: int  # S
    intensity: float  # I = T / S
    ridge_intensity: float
    regime: Regime


def roofline(config: LayerConfig, ridge_intensity: float = DEFAULT_RIDGE_INTENSITY) -> RooflineReport:
    """Evaluate T, S, and I for one layer configuration."""
    b, din, dout, d, lam = (
        config.batch,
        config.d_in,
        config.d_out,
        config.degree,
        config.elem_bytes,
    )
    flops = 2 * b * din * (d + (d + 1) * dout)
    traffic = lam * (b * din + b * dout + 2 * b * din * (d + 1) + din * dout * (d + 1))
    intensity = flops / traffic
    regime = Regime.MEMORY_BOUND if intensity < ridge_intensity else Regime.COMPUTE_BOUND
    return RooflineReport(config, flops, traffic, intensity, ridge_intensity, regime)


@dataclass(frozen=True)
class CostModel:
    """Per-operation costs: atomic update, streaming read, streaming write."""

    c_a: float
    c_r: float
    c_w: float

    def __post_init__(self) -> None:
        if min(self.c_a, self.c_r, self.c_w) <= 0:
            raise ValueError("costs must be positive")


@dataclass(frozen=True)
class TwoStageReport:
    beneficial: bool
    margin: float
    partial_bytes: int  # streaming intermediate S_partial


def two_stage_benefit(config: LayerConfig, sched: TileSchedule, costs: CostModel) -> TwoStageReport:
    """Evaluate g_x c_a >= g_x (c_r + c_w) + c_w and report the margin.

    Also reports the Partial-stage streaming footprint
    S_partial = lambda * B * D_out * g_x.
    """
    gx = sched.g_x
    margin = gx * costs.c_a - (gx * (costs.c_r + costs.c_w) + costs.c_w)
    partial_bytes = config.elem_bytes * config.batch * config.d_out * gx
    return TwoStageReport(beneficial=margin > 0, margin=margin, partial_bytes=partial_bytes)


# ---------------------------------------------------------------------------
# Benchmark harness

KERNEL_VERSIONS = (
    "reference-trig",
    "reference-recurrence",
    "fused-exact",
    "fused-lut",
    "fused-lut+reorder",
)


def paper_configs() -> list[LayerConfig]:
    """The three shipped layer shapes used throughout the evaluation."""
    return [
        LayerConfig(128, 40, 256, 8),
        LayerConfig(64, 256, 512, 15),
        LayerConfig(32, 512, 1024, 24),
    ]


@dataclass(frozen=True)
class BenchResult:
    config: LayerConfig
    version: str
    fwd_ms: float  # median over reps
    bwd_ms: float
    samples_per_s: float
    reps: int
    workers: int


def _bench_inputs(config: LayerConfig, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.5, 1.5, size=(config.batch, config.d_in))
    s = 1.0 / np.sqrt(config.d_in * (config.degree + 1))
    coeff_jod = CoeffTensor(
        config.d_in,
        config.d_out,
        config.degree,
        Layout.JOD,
        rng.uniform(-s, s, size=config.d_in * config.d_out * (config.degree + 1)),
    )
    dy = rng.standard_normal((config.batch, config.d_out))
    return x, coeff_jod, dy


def _make_version_runner(version, config, x, coeff_jod, dy, sched, lut, workers):
    """Returns (fwd_callable, bwd_callable) with all setup done ahead of time."""
    if version == "reference-trig":
        return (
            lambda: reference_forward(x, coeff_jod, config.degree, trig=True),
            lambda: reference_backward(x, coeff_jod, dy, trig=True),
        )
    if version == "reference-recurrence":
        return (
            lambda: reference_forward(x, coeff_jod, config.degree),
            lambda: reference_backward(x, coeff_jod, dy),
        )
    if version == "fused-exact":
        coeff_doj = reorder_to_doj(coeff_jod)

        def fwd():
            buf = PartialBuffer.allocate(sched, config.batch)
            forward_partial(x, coeff_doj, None, sched, EXACT_MODE, buf,
                            workers=workers, kind=BasisKind.CHEBYSHEV)
            return combine(buf, sched)

        return fwd, lambda: backward_fused(
            x, coeff_doj, dy, None, sched, EXACT_MODE,
            workers=workers, kind=BasisKind.CHEBYSHEV,
        )
    if version == "fused-lut":
        # Tiled + LUT + two-stage, but the coefficients stay in the original
        # JOD layout: the kernel pays the strided-access penalty per call.
        def fwd():
            buf = PartialBuffer.allocate(sched, config.batch)
            forward_partial_jod_view(x, coeff_jod, lut, sched, LUT_MODE, buf,
                                     workers=workers)
            return combine(buf, sched)

        def bwd():
            coeff_doj = reorder_to_doj(coeff_jod)  # reorder inside the timed region
            return backward_fused(x, coeff_doj, dy, lut, sched, LUT_MODE, workers=workers)

        return fwd, bwd
    if version == "fused-lut+reorder":
        coeff_doj = reorder_to_doj(coeff_jod)  # reordered once, ahead of launch

        def fwd():
            buf = PartialBuffer.allocate(sched, config.batch)
            forward_partial(x, coeff_doj, lut, sched, LUT_MODE, buf, workers=workers)
            return combine(buf, sched)

        return fwd, lambda: backward_fused(
            x, coeff_doj, dy, lut, sched, LUT_MODE, workers=workers
        )
    raise ValueError(f"unknown kernel version {version!r}; known: {', '.join(KERNEL_VERSIONS)}")


def run_bench(
    configs: list[LayerConfig],
    versions: list[str],
    sched_params: dict | None = None,
    reps: int = 20,
    warmups: int = 5,
    seed: int = 0,
    workers: int = 1,
    lut_size: int = DEFAULT_LUT_SIZE,
) -> list[BenchResult]:
    """Time each (config, version) pair; deterministic inputs per seed."""
    for v in versions:
        if v not in KERNEL_VERSIONS:
            raise ValueError(f"unknown kernel version {v!r}; known: {', '.join(KERNEL_VERSIONS)}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    results: list[BenchResult] = []
    sched_params = sched_params or {}
    for config in configs:
        x, coeff_jod, dy = _bench_inputs(config, seed)
        sched = TileSchedule.for_dims(config.d_in, config.d_out, **sched_params)
        lut = lut_build(BasisKind.CHEBYSHEV, config.degree, lut_size)
        for version in versions:
            fwd, bwd = _make_version_runner(version, config, x, coeff_jod, dy, sched, lut, workers)
            for _ in range(warmups):
                fwd()
                bwd()
            fwd_times: list[float] = []
            bwd_times: list[float] = []
            total = 0.0
            for _ in range(reps):
                t0 = time.perf_counter()
                fwd()
                t1 = time.perf_counter()
                bwd()
                t2 = time.perf_counter()
                fwd_times.append(t1 - t0)
                bwd_times.append(t2 - t1)
                total += t2 - t0
            results.append(
                BenchResult(
                    config=config,
                    version=version,
                    fwd_ms=median(fwd_times) * 1e3,
                    bwd_ms=median(bwd_times) * 1e3,
                    samples_per_s=config.batch * reps / total,
                    reps=reps,
                    workers=workers,
                )
            )
    return results


CSV_COLUMNS = [
    "batch",
    "d_in",
    "d_out",
    "degree",
    "elem_bytes",
    "version",
    "fwd_ms",
    "bwd_ms",
    "samples_per_s",
]


def write_bench_csv(results: list[BenchResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in results:
            writer.writerow(
                [
                    r.config.batch,
                    r.config.d_in,
                    r.config.d_out,
                    r.config.degree,
                    r.config.elem_bytes,
                    r.version,
                    f"{r.fwd_ms:.6f}",
                    f"{r.bwd_ms:.6f}",
                    f"{r.samples_per_s:.3f}",
                ]
            )


def write_roofline_json(
    configs: list[LayerConfig],
    path: str | Path,
    ridge_intensity: float = DEFAULT_RIDGE_INTENSITY,
) -> None:
    payload = []
    for config in configs:
        report = roofline(config, ridge_intensity)
        payload.append(
            {
                "batch": config.batch,
                "d_in": config.d_in,
                "d_out": config.d_out,
                "degree": config.degree,
                "elem_bytes": config.elem_bytes,
                "flops": report.flops,
                "bytes": report.bytes,
                "intensity": report.intensity,
                "ridge_intensity": report.ridge_intensity,
                "regime": report.regime.value,
            }
        )
    Path(path).write_text(json.dumps(payload, indent=2))


def load_configs_json(path: str | Path) -> list[LayerConfig]:
    """Custom benchmark configurations: a JSON list of objects with keys
    batch, d_in, d_out, degree, and optional elem_bytes."""
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ValueError(f"{path}: expected a JSON list of configurations")
    return [
        LayerConfig(
            batch=e["batch"],
            d_in=e["d_in"],
            d_out=e["d_out"],
            degree=e["degree"],
            elem_bytes=e.get("elem_bytes", 4),
        )
        for e in entries
    ]
