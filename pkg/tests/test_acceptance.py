"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
The relative-performance criterion is soft: a miss prints a prominent
warning and fails only this performance check, never the correctness suite;
its hard gate applies on machines with at least 4 cores.
"""
import os
import time

import numpy as np
import pytest

from polykan.basis import BasisKind, basis_rows, chebyshev_second_derivative_max
from polykan.kernels import (
    EXACT_MODE,
    LUT_MODE,
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
from polykan.lut import interp_rows, lut_build
from polykan.model import (
    AdamHParams,
    LayerSpec,
    Loss,
    NetworkSpec,
    make_synthetic,
    network_train,
)
from polykan.kernels import BasisPath, KernelMode
from polykan.perf import LayerConfig, paper_configs, roofline, run_bench
from polykan.tensor import CoeffTensor, Layout, doj_index, reorder_to_doj, reorder_to_jod
from polykan.verify import max_rel_err

CHEB = BasisKind.CHEBYSHEV


def report(name: str, passed: bool, detail: str = "") -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))


def random_instance(rng, max_dim=64, max_degree=24, coeff_scale=None):
    batch = int(rng.integers(1, 17))
    d_in = int(rng.integers(1, max_dim + 1))
    d_out = int(rng.integers(1, max_dim + 1))
    degree = int(rng.integers(0, max_degree + 1))
    x = rng.uniform(-2.0, 2.0, size=(batch, d_in))
    s = coeff_scale if coeff_scale is not None else 1.0 / np.sqrt(d_in * (degree + 1))
    coeff = CoeffTensor(
        d_in, d_out, degree, Layout.JOD,
        rng.uniform(-s, s, size=d_in * d_out * (degree + 1)),
    )
    dy = rng.standard_normal((batch, d_out))
    return x, coeff, dy


def weighted_sum(x, coeff, dy) -> float:
    return float((reference_forward(x, coeff, coeff.degree) * dy).sum())


def test_oracle_equivalence():
    """Fused exact kernels vs the unfused reference and FD gradients."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    worst_fwd = 0.0
    worst_grad = 0.0
    for _ in range(100):
        x, coeff, dy = random_instance(rng)
        sched = TileSchedule.for_dims(coeff.d_in, coeff.d_out)
        doj = reorder_to_doj(coeff)
        got = fused_forward(x, doj, None, sched, EXACT_MODE, kind=CHEB)
        want = reference_forward(x, coeff, coeff.degree)
        worst_fwd = max(worst_fwd, max_rel_err(got, want))

        cg, xg = backward_fused(x, doj, dy, None, sched, EXACT_MODE, kind=CHEB)
        cg_jod = reorder_to_jod(cg).data
        # five coefficient probes (loss linear in coeff -> wide h is exact)
        for _ in range(5):
            i = int(rng.integers(0, coeff.data.size))
            h = 0.25
            cp, cm = coeff.data.copy(), coeff.data.copy()
            cp[i] += h
            cm[i] -= h
            fd = (
                weighted_sum(x, CoeffTensor(coeff.d_in, coeff.d_out, coeff.degree, Layout.JOD, cp), dy)
                - weighted_sum(x, CoeffTensor(coeff.d_in, coeff.d_out, coeff.degree, Layout.JOD, cm), dy)
            ) / (2 * h)
            worst_grad = max(worst_grad, abs(cg_jod[i] - fd) / max(abs(fd), 1e-6))
        # three input probes
        for _ in range(3):
            b = int(rng.integers(0, x.shape[0]))
            j = int(rng.integers(0, x.shape[1]))
            h = 1e-5
            xp, xm = x.copy(), x.copy()
            xp[b, j] += h
            xm[b, j] -= h
            fd = (weighted_sum(xp, coeff, dy) - weighted_sum(xm, coeff, dy)) / (2 * h)
            worst_grad = max(worst_grad, abs(xg[b, j] - fd) / max(abs(fd), 1e-6))
    elapsed = time.perf_counter() - t0
    ok = worst_fwd <= 1e-5 and worst_grad <= 1e-3 and elapsed < 120
    report(
        "oracle equivalence (100 instances)",
        ok,
        f"fwd rel err {worst_fwd:.2e} <= 1e-5, grad rel err {worst_grad:.2e} <= 1e-3, "
        f"{elapsed:.1f}s < 120s",
    )
    assert worst_fwd <= 1e-5
    assert worst_grad <= 1e-3
    assert elapsed < 120


def test_lut_fidelity():
    """Interpolation error vs the closed-form bound; fused LUT forward budget."""
    table = lut_build(CHEB, 24, 32768)
    xs = np.linspace(-1.0, 1.0, 100_000)
    approx = interp_rows(table, xs).T
    exact = basis_rows(CHEB, 24, xs)
    measured = np.abs(approx - exact).max()
    closed_form = (table.step**2 / 8.0) * chebyshev_second_derivative_max(24)
    bound_ok = measured <= closed_form and measured <= 1e-4

    rng = np.random.default_rng(1002)
    fwd_ok = True
    worst = 0.0
    for _ in range(10):
        x, coeff, _ = random_instance(rng, coeff_scale=1.0)  # unit coefficients
        lut = lut_build(CHEB, coeff.degree, 32768)
        sched = TileSchedule.for_dims(coeff.d_in, coeff.d_out)
        doj = reorder_to_doj(coeff)
        y_lut = fused_forward(x, doj, lut, sched, LUT_MODE)
        y_exact = fused_forward(x, doj, None, sched, EXACT_MODE, kind=CHEB)
        gap = np.abs(y_lut - y_exact).max()
        budget = 1e-4 * coeff.d_in
        worst = max(worst, gap / budget)
        fwd_ok = fwd_ok and gap <= budget
    report(
        "LUT fidelity (degree 24, 32768 samples)",
        bound_ok and fwd_ok,
        f"interp err {measured:.3e} <= bound {closed_form:.3e} and 1e-4; "
        f"fused gap at {worst:.3f} of the 1e-4*D_in budget",
    )
    assert bound_ok
    assert fwd_ok


def test_gradient_semantics():
    """LUT-mode gradients: coefficient linearity and the cell-slope contract."""
    rng = np.random.default_rng(1003)
    worst_coeff = 0.0
    for _ in range(5):
        batch = int(rng.integers(1, 6))
        d_in = int(rng.integers(1, 7))
        d_out = int(rng.integers(1, 6))
        degree = int(rng.integers(1, 9))
        x = rng.uniform(-2.0, 2.0, (batch, d_in))
        coeff = CoeffTensor(d_in, d_out, degree, Layout.JOD,
                            rng.uniform(-0.6, 0.6, d_in * d_out * (degree + 1)))
        dy = rng.standard_normal((batch, d_out))
        lut = lut_build(CHEB, degree, 32768)
        sched = TileSchedule.for_dims(d_in, d_out)
        doj = reorder_to_doj(coeff)
        cg, _ = backward_fused(x, doj, dy, lut, sched, LUT_MODE)
        cg_jod = reorder_to_jod(cg).data

        def lut_loss(flat):
            c = reorder_to_doj(CoeffTensor(d_in, d_out, degree, Layout.JOD, flat))
            return float((fused_forward(x, c, lut, sched, LUT_MODE) * dy).sum())

        for i in range(coeff.data.size):
            h = 0.25
            cp, cm = coeff.data.copy(), coeff.data.copy()
            cp[i] += h
            cm[i] -= h
            fd = (lut_loss(cp) - lut_loss(cm)) / (2 * h)
            worst_coeff = max(worst_coeff, abs(cg_jod[i] - fd) / max(abs(fd), 1e-6))

    # Cell-slope contract at midpoints, checked through arctanh-mapped FD.
    worst_x = 0.0
    d_in, d_out, degree = 4, 5, 10
    lut = lut_build(CHEB, degree, 4096)
    coeff = CoeffTensor(d_in, d_out, degree, Layout.JOD,
                        rng.uniform(-0.6, 0.6, d_in * d_out * (degree + 1)))
    doj = reorder_to_doj(coeff)
    sched = TileSchedule.for_dims(d_in, d_out)
    cells = rng.integers(lut.lut_size // 4, 3 * lut.lut_size // 4, size=(3, d_in))
    x_norm = -1.0 + (cells + 0.5) * lut.step
    x = np.arctanh(x_norm)
    dy = rng.standard_normal((3, d_out))
    _, xg = backward_fused(x, doj, dy, lut, sched, LUT_MODE)
    h = lut.step / 8.0
    for b in range(3):
        for j in range(d_in):
            xp, xm = x.copy(), x.copy()
            xp[b, j] = np.arctanh(x_norm[b, j] + h)
            xm[b, j] = np.arctanh(x_norm[b, j] - h)
            f = lambda xs: float((fused_forward(xs, doj, lut, sched, LUT_MODE) * dy).sum())
            fd_norm = (f(xp) - f(xm)) / (2 * h)
            want = fd_norm * (1.0 - x_norm[b, j] ** 2)
            worst_x = max(worst_x, abs(xg[b, j] - want) / max(abs(want), 1e-6))

    ok = worst_coeff <= 1e-4 and worst_x <= 1e-3
    report(
        "gradient semantics (LUT mode)",
        ok,
        f"coeff rel err {worst_coeff:.2e} <= 1e-4, cell-slope rel err {worst_x:.2e} <= 1e-3",
    )
    assert worst_coeff <= 1e-4
    assert worst_x <= 1e-3


def test_two_stage_reduction():
    """Merge counters match closed forms; results bit-stable across workers."""
    rng = np.random.default_rng(1004)
    ok = True
    for _ in range(20):
        x, coeff, dy = random_instance(rng, max_dim=48, max_degree=12)
        tile_in = int(rng.choice([4, 16, 64]))
        tile_out = int(rng.choice([8, 32]))
        sched = TileSchedule.for_dims(coeff.d_in, coeff.d_out, tile_in, tile_out)
        doj = reorder_to_doj(coeff)
        expect = count_atomics(x.shape[0], coeff.d_in, coeff.d_out, sched)

        counters = KernelCounters()
        buf = PartialBuffer.allocate(sched, x.shape[0], instrument=True)
        forward_partial(x, doj, None, sched, EXACT_MODE, buf, counters=counters, kind=CHEB)
        y1 = combine(buf, sched, counters=counters)
        _, xg1 = backward_fused(x, doj, dy, None, sched, EXACT_MODE,
                                counters=counters, kind=CHEB)
        ok = ok and counters.forward_atomics == expect.fwd_ours == 0
        ok = ok and counters.x_grad_merges == expect.bwd_x_ours
        written = buf.write_counts[buf.write_counts > 0]
        ok = ok and written.size == x.shape[0] * coeff.d_out * sched.g_x
        ok = ok and bool((written == 1).all())

        ok = ok and max_rel_err(y1, reference_forward(x, coeff, coeff.degree)) <= 1e-5

        y1b = fused_forward(x, doj, None, sched, EXACT_MODE, kind=CHEB)
        y4 = fused_forward(x, doj, None, sched, EXACT_MODE, workers=4, kind=CHEB)
        _, xg4 = backward_fused(x, doj, dy, None, sched, EXACT_MODE, workers=4, kind=CHEB)
        ok = ok and np.array_equal(y1, y1b) and np.array_equal(y1, y4)
        ok = ok and np.array_equal(xg1, xg4)
    report("two-stage reduction (20 draws)", ok,
           "forward merges = 0, backward-x merges = B*D_in*g_y, bit-identical at workers {1,4}")
    assert ok


def test_layout_reordering():
    rng = np.random.default_rng(1005)
    ok = True
    for _ in range(25):
        d_in = int(rng.integers(1, 12))
        d_out = int(rng.integers(1, 12))
        degree = int(rng.integers(0, 9))
        c = CoeffTensor(d_in, d_out, degree, Layout.JOD,
                        rng.standard_normal(d_in * d_out * (degree + 1)))
        ok = ok and np.array_equal(reorder_to_jod(reorder_to_doj(c)).data, c.data)
    for d_in in range(1, 9):
        for d_out in range(1, 9):
            for degree in range(0, 8):
                for k in range(degree + 1):
                    for o in range(d_out):
                        for j in range(d_in - 1):
                            ok = ok and (
                                doj_index(d_in, d_out, k, o, j + 1)
                                - doj_index(d_in, d_out, k, o, j)
                                == 1
                            )
    report("layout reordering", ok, "roundtrip bit-exact; unit stride exhaustive dims <= 8")
    assert ok


def test_roofline_exactness():
    report1 = roofline(LayerConfig(128, 40, 256, 8, 4))
    ok = report1.flops == 23_674_880 and report1.bytes == 888_832
    ok = ok and abs(report1.intensity - 23_674_880 / 888_832) < 1e-9

    rng = np.random.default_rng(1006)
    for _ in range(1000):
        b = int(rng.integers(1, 512))
        din = int(rng.integers(1, 2048))
        dout = int(rng.integers(1, 2048))
        d = int(rng.integers(0, 33))
        lam = int(rng.choice([4, 8]))
        rep = roofline(LayerConfig(b, din, dout, d, lam))
        t = 2 * b * din * (d + (d + 1) * dout)
        s = lam * (b * din + b * dout + 2 * b * din * (d + 1) + din * dout * (d + 1))
        ok = ok and rep.flops == t and rep.bytes == s and rep.intensity == t / s
    report("roofline formulas", ok,
           f"config 1: T={report1.flops} S={report1.bytes} I={report1.intensity:.9f}")
    assert ok


def test_convergence():
    t0 = time.perf_counter()
    ds = make_synthetic("cheb2")
    finals = {}
    for label, path in (("lut", BasisPath.LUT_INTERP), ("exact", BasisPath.EXACT_RECURRENCE)):
        spec = NetworkSpec((LayerSpec(1, 1, 2, mode=KernelMode(path)),), Loss.MSE)
        result = network_train(spec, ds, epochs=200, adam_hparams=AdamHParams(lr=1e-2),
                               seed=0, lut_size=32768)
        finals[label] = result.final_loss
    elapsed = time.perf_counter() - t0
    fit_ok = finals["lut"] < 1e-6 and finals["exact"] < 1e-6
    # Paired losses within 10%, with an absolute floor: both runs drive the
    # loss to float noise, where a pure ratio is meaningless.
    a, b = finals["lut"], finals["exact"]
    paired_ok = abs(a - b) <= 0.10 * max(a, b, 1e-8)
    ok = fit_ok and paired_ok and elapsed < 60
    report(
        "convergence on synthetic:cheb2",
        ok,
        f"lut {a:.2e}, exact {b:.2e}, both < 1e-6, paired within 10%, {elapsed:.1f}s < 60s",
    )
    assert fit_ok
    assert paired_ok
    assert elapsed < 60


def test_relative_performance():
    """Soft criterion: fused-lut+reorder vs the unfused recurrence reference."""
    t0 = time.perf_counter()
    config3 = paper_configs()[2]
    results = run_bench([config3], ["reference-recurrence", "fused-lut+reorder"],
                        reps=5, warmups=2, seed=0, workers=1)
    elapsed = time.perf_counter() - t0
    by_version = {r.version: r for r in results}
    ratio = (
        by_version["fused-lut+reorder"].samples_per_s
        / by_version["reference-recurrence"].samples_per_s
    )
    cores = os.cpu_count() or 1
    ok = ratio >= 1.5
    detail = (
        f"throughput ratio {ratio:.2f}x (>= 1.5x), {cores} cores, bench {elapsed:.0f}s < 300s"
    )
    report("relative performance (config 3)", ok and elapsed < 300, detail)
    if not ok:
        print(
            "\n" + "!" * 72 + "\n"
            "!! PERFORMANCE WARNING: fused-lut+reorder did not reach 1.5x the\n"
            "!! unfused recurrence reference on this machine. Correctness is\n"
            "!! unaffected; only this performance check fails.\n" + "!" * 72
        )
    assert elapsed < 300
    if cores >= 4:
        assert ok, f"throughput ratio {ratio:.2f} < 1.5"
    elif not ok:
        pytest.skip(
            f"ratio {ratio:.2f} < 1.5 but the >=4-core machine condition is unmet "
            f"({cores} cores); reported as a warning only"
        )
