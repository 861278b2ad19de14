"""Self-contained verification suites behind the ``verify`` CLI subcommand.

Each check pits an implementation path against an independent oracle
(trig form vs recurrence, finite differences vs analytic/backward, closed
form bounds vs dense sampling) and reports the worst observed error next to
its bound.  Exit status is decided by the caller from the returned results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisKind, basis_rows, derivative_rows, trig_rows
from .kernels import (
    EXACT_MODE,
    KernelCounters,
    PartialBuffer,
    TileSchedule,
    backward_fused,
    combine,
    count_atomics,
    forward_partial,
    fused_forward,
    reference_forward,
)
from .lut import LutTable, interp_rows, interp_rows_with_slope, lut_build, lut_max_error_bound
from .perf import LayerConfig, roofline
from .tensor import CoeffTensor, Layout, reorder_to_doj, reorder_to_jod


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    bound: float
    detail: str = ""

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} observed {self.observed:+.3e}  bound {self.bound:.3e}  {self.detail}"


def max_rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-9) -> float:
    """Worst elementwise relative error with a magnitude-aware floor.

    Elements of ``want`` near zero are compared against a floor scaled to
    the overall magnitude, so cancellation noise is not misread as error.
    """
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    if got.size == 0:
        return 0.0
    big = float(np.abs(want).max(initial=0.0))
    scale = np.maximum(np.abs(want), max(floor, 1e-7 * big))
    return float(np.max(np.abs(got - want) / scale))


_rel_err = max_rel_err


def check_strategy_equivalence(max_degree: int = 32, n_points: int = 1000) -> CheckResult:
    rng = np.random.default_rng(11)
    x = rng.uniform(-1.0, 1.0, n_points)
    rec = basis_rows(BasisKind.CHEBYSHEV, max_degree, x)
    trig = trig_rows(max_degree, x)
    err = float(np.abs(rec - trig).max())
    return CheckResult("basis-strategy-equivalence", err <= 1e-10, err, 1e-10)


def check_chebyshev_bound(max_degree: int = 32, n_points: int = 1000) -> CheckResult:
    x = np.linspace(-1.0, 1.0, n_points)
    vals = basis_rows(BasisKind.CHEBYSHEV, max_degree, x)
    worst = float(np.abs(vals).max())
    return CheckResult("chebyshev-magnitude-bound", worst <= 1.0 + 1e-12, worst, 1.0 + 1e-12)


def check_derivative_consistency(kind: BasisKind, degree: int = 16) -> CheckResult:
    rng = np.random.default_rng(12)
    x = rng.uniform(-0.99, 0.99, 400)
    h = 1e-6
    fd = (basis_rows(kind, degree, x + h) - basis_rows(kind, degree, x - h)) / (2 * h)
    exact = derivative_rows(kind, degree, x)
    scale = np.maximum(np.abs(exact), 1.0)
    err = float((np.abs(fd - exact) / scale).max())
    return CheckResult(f"derivative-consistency-{kind.value}", err <= 1e-5, err, 1e-5)


def check_lut_grid_exactness(table: LutTable) -> CheckResult:
    grid = table.grid()
    vals = interp_rows(table, grid)  # (lut_size, n_features)
    exact = np.array_equal(vals, table._values_by_pos)
    err = float(np.abs(vals - table._values_by_pos).max())
    return CheckResult("lut-grid-exactness", exact, err, 0.0, "bitwise")


def check_lut_error_bound(table: LutTable, n_points: int = 100_000) -> CheckResult:
    x = np.linspace(-1.0, 1.0, n_points)
    approx = interp_rows(table, x)  # (n, n_features)
    exact = basis_rows(table.kind, table.degree, x)  # (n_features, n)
    measured = np.abs(approx.T - exact).max(axis=1)
    bound = lut_max_error_bound(table)
    # Linear features reconstruct exactly only in exact arithmetic; allow
    # 1e-12 of float noise on top of the closed-form bound.
    allowed = bound * (1.0 + 1e-6) + 1e-12
    margin = float((measured - allowed).max())
    return CheckResult(
        "lut-error-bound",
        bool((measured <= allowed).all()),
        float(measured.max()),
        float(allowed.max()),
        f"worst margin {margin:+.2e}",
    )


def check_lut_slope_consistency(table: LutTable, max_cells: int = 4096) -> CheckResult:
    n_cells = table.lut_size - 1
    cells = np.arange(n_cells) if n_cells <= max_cells else np.linspace(0, n_cells - 1, max_cells).astype(np.int64)
    mid = -1.0 + (cells + 0.5) * table.step
    h = table.step / 8.0
    secant = (interp_rows(table, mid + h) - interp_rows(table, mid - h)) / (2 * h)
    _, slopes = interp_rows_with_slope(table, mid)
    scale = np.maximum(np.abs(slopes), 1e-9)
    err = float((np.abs(secant - slopes) / scale).max())
    return CheckResult("lut-slope-consistency", err <= 1e-6, err, 1e-6)


def _random_instance(rng: np.random.Generator, max_dim: int = 64, max_degree: int = 24):
    batch = int(rng.integers(1, 17))
    d_in = int(rng.integers(1, max_dim + 1))
    d_out = int(rng.integers(1, max_dim + 1))
    degree = int(rng.integers(0, max_degree + 1))
    x = rng.uniform(-2.0, 2.0, size=(batch, d_in))
    s = 1.0 / np.sqrt(d_in * (degree + 1))
    coeff = CoeffTensor(
        d_in, d_out, degree, Layout.JOD,
        rng.uniform(-s, s, size=d_in * d_out * (degree + 1)),
    )
    dy = rng.standard_normal((batch, d_out))
    return x, coeff, dy


def check_oracle_equivalence(n_instances: int = 20, seed: int = 5) -> CheckResult:
    """Fused exact-recurrence forward vs the unfused reference."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        x, coeff, _ = _random_instance(rng)
        want = reference_forward(x, coeff, coeff.degree)
        sched = TileSchedule.for_dims(coeff.d_in, coeff.d_out)
        got = fused_forward(x, reorder_to_doj(coeff), None, sched, EXACT_MODE,
                            kind=BasisKind.CHEBYSHEV)
        worst = max(worst, _rel_err(got, want))
    return CheckResult("oracle-equivalence-forward", worst <= 1e-5, worst, 1e-5)


def check_gradient_fd(n_instances: int = 6, seed: int = 6) -> CheckResult:
    """Backward coefficient/input gradients vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        batch = int(rng.integers(1, 5))
        d_in = int(rng.integers(1, 7))
        d_out = int(rng.integers(1, 6))
        degree = int(rng.integers(1, 7))
        x = rng.uniform(-1.5, 1.5, size=(batch, d_in))
        coeff = CoeffTensor(
            d_in, d_out, degree, Layout.JOD,
            rng.uniform(-0.7, 0.7, size=d_in * d_out * (degree + 1)),
        )
        dy = rng.standard_normal((batch, d_out))
        sched = TileSchedule.for_dims(d_in, d_out)
        doj = reorder_to_doj(coeff)
        cg, xg = backward_fused(x, doj, dy, None, sched, EXACT_MODE, kind=BasisKind.CHEBYSHEV)

        def loss_for(c: CoeffTensor, xs: np.ndarray) -> float:
            return float((reference_forward(xs, c, degree) * dy).sum())

        # Spot-check a handful of coefficients (loss is linear in them).
        flat = coeff.data
        cg_jod = reorder_to_jod(cg).data
        for _ in range(6):
            i = int(rng.integers(0, flat.size))
            h = 0.25
            cp, cm = flat.copy(), flat.copy()
            cp[i] += h
            cm[i] -= h
            fd = (
                loss_for(CoeffTensor(d_in, d_out, degree, Layout.JOD, cp), x)
                - loss_for(CoeffTensor(d_in, d_out, degree, Layout.JOD, cm), x)
            ) / (2 * h)
            denom = max(abs(fd), 1e-6)
            worst = max(worst, abs(cg_jod[i] - fd) / denom)
        # And a handful of inputs.
        for _ in range(4):
            b = int(rng.integers(0, batch))
            j = int(rng.integers(0, d_in))
            h = 1e-5
            xp, xm = x.copy(), x.copy()
            xp[b, j] += h
            xm[b, j] -= h
            fd = (loss_for(coeff, xp) - loss_for(coeff, xm)) / (2 * h)
            denom = max(abs(fd), 1e-6)
            worst = max(worst, abs(xg[b, j] - fd) / denom)
    return CheckResult("gradient-finite-difference", worst <= 1e-3, worst, 1e-3)


def check_two_stage(seed: int = 7, n_draws: int = 8) -> CheckResult:
    """Merge counters match the closed forms; results are bit-stable."""
    rng = np.random.default_rng(seed)
    ok = True
    detail = ""
    for _ in range(n_draws):
        x, coeff, dy = _random_instance(rng, max_dim=48, max_degree=10)
        tile_in = int(rng.choice([8, 16, 64]))
        tile_out = int(rng.choice([8, 32]))
        sched = TileSchedule.for_dims(coeff.d_in, coeff.d_out, tile_in, tile_out)
        doj = reorder_to_doj(coeff)
        counters = KernelCounters()
        buf = PartialBuffer.allocate(sched, x.shape[0], instrument=True)
        forward_partial(x, doj, None, sched, EXACT_MODE, buf,
                        counters=counters, kind=BasisKind.CHEBYSHEV)
        y1 = combine(buf, sched, counters=counters)
        _, xg1 = backward_fused(x, doj, dy, None, sched, EXACT_MODE,
                                counters=counters, kind=BasisKind.CHEBYSHEV)
        expect = count_atomics(x.shape[0], coeff.d_in, coeff.d_out, sched)
        if counters.forward_atomics != expect.fwd_ours:
            ok, detail = False, "forward atomics nonzero"
        if counters.x_grad_merges != expect.bwd_x_ours:
            ok, detail = False, (
                f"x-grad merges {counters.x_grad_merges} != {expect.bwd_x_ours}"
            )
        valid = buf.write_counts[buf.write_counts > 0]
        n_valid = x.shape[0] * coeff.d_out * sched.g_x
        if not (valid.size == n_valid and (valid == 1).all()):
            ok, detail = False, "partial buffer writer not unique"
        y2 = fused_forward(x, doj, None, sched, EXACT_MODE, workers=4,
                           kind=BasisKind.CHEBYSHEV)
        _, xg2 = backward_fused(x, doj, dy, None, sched, EXACT_MODE, workers=4,
                                kind=BasisKind.CHEBYSHEV)
        if not (np.array_equal(y1, y2) and np.array_equal(xg1, xg2)):
            ok, detail = False, "worker-count bit determinism violated"
        ref = reference_forward(x, coeff, coeff.degree)
        if _rel_err(y1, ref) > 1e-5:
            ok, detail = False, "partial+combine differs from single-pass reference"
    return CheckResult("two-stage-reduction", ok, 0.0, 0.0, detail or "counters exact, bit-stable")


def check_layout_roundtrip(seed: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(10):
        d_in = int(rng.integers(1, 9))
        d_out = int(rng.integers(1, 9))
        degree = int(rng.integers(0, 9))
        c = CoeffTensor(
            d_in, d_out, degree, Layout.JOD,
            rng.standard_normal(d_in * d_out * (degree + 1)),
        )
        back = reorder_to_jod(reorder_to_doj(c))
        ok = ok and np.array_equal(back.data, c.data)
    return CheckResult("layout-roundtrip", ok, 0.0, 0.0, "bit-exact")


def check_roofline() -> CheckResult:
    report = roofline(LayerConfig(128, 40, 256, 8, 4))
    ok = report.flops == 23_674_880 and report.bytes == 888_832
    ok = ok and abs(report.intensity - 23_674_880 / 888_832) < 1e-9
    return CheckResult(
        "roofline-config1",
        ok,
        report.intensity,
        23_674_880 / 888_832,
        f"T={report.flops} S={report.bytes}",
    )


def run_suite(config: str = "small") -> list[CheckResult]:
    """The ``verify`` subcommand's check list; ``full`` adds degree-24 LUTs."""
    if config not in ("small", "full"):
        raise ValueError("verify config must be 'small' or 'full'")
    results = [
        check_strategy_equivalence(),
        check_chebyshev_bound(),
        check_derivative_consistency(BasisKind.CHEBYSHEV),
        check_derivative_consistency(BasisKind.LEGENDRE),
        check_derivative_consistency(BasisKind.FOURIER, degree=8),
    ]
    small_table = lut_build(BasisKind.CHEBYSHEV, 8, 4096)
    results += [
        check_lut_grid_exactness(small_table),
        check_lut_error_bound(small_table, n_points=20_000),
        check_lut_slope_consistency(small_table),
        check_oracle_equivalence(n_instances=10 if config == "small" else 100),
        check_gradient_fd(n_instances=4 if config == "small" else 10),
        check_two_stage(n_draws=4 if config == "small" else 20),
        check_layout_roundtrip(),
        check_roofline(),
    ]
    if config == "full":
        big = lut_build(BasisKind.CHEBYSHEV, 24, 32768)
        results += [
            check_lut_grid_exactness(big),
            check_lut_error_bound(big),
            check_lut_slope_consistency(big),
        ]
    return results
