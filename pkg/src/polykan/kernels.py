"""Fused tiled forward/backward passes and the unfused reference kernels.

GPU concepts are mapped portably: a thread block becomes a tile task over
the (input x output) plane, warp lanes become vectorizable inner loops,
shared-memory reductions become tile-local reductions in a fixed order, and
atomicAdd becomes a deterministic ordered merge.  Every merge order is
fixed, so results are bit-identical across runs and worker counts.

The forward pass runs in two stages.  The Partial stage writes one slot per
(tile pair, batch row, local output lane) into a workspace with a unique
writer per slot; the Combine stage folds the per-input-tile slots in
ascending tile order and adds the bias.  The backward pass writes
coefficient gradients into disjoint tile regions and merges the per-output-
tile input-gradient contributions in ascending tile order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .basis import BasisKind, basis_rows, derivative_rows, feature_count, trig_rows
from .lut import LutTable, interp_rows, interp_rows_with_slope
from .tensor import CoeffTensor, Layout


class BasisPath(Enum):
    LUT_INTERP = "lut"
    EXACT_RECURRENCE = "exact"


@dataclass(frozen=True)
class KernelMode:
    """Which basis evaluation the kernels use, and the tanh chain-rule choice.

    ``include_tanh_jacobian=False`` reproduces the pseudocode-literal input
    gradient that omits the (1 - tanh^2) factor; the default applies it.
    """

    basis_path: BasisPath = BasisPath.LUT_INTERP
    include_tanh_jacobian: bool = True


LUT_MODE = KernelMode(BasisPath.LUT_INTERP)
EXACT_MODE = KernelMode(BasisPath.EXACT_RECURRENCE)


@dataclass(frozen=True)
class TileSchedule:
    """Tiling of the (D_in x D_out) work plane plus the lane-group shape."""

    tile_in: int
    tile_out: int
    lane_x: int
    lane_y: int
    g_x: int
    g_y: int
    d_in: int
    d_out: int

    def __post_init__(self) -> None:
        if min(self.tile_in, self.tile_out, self.lane_x, self.lane_y) < 1:
            raise ValueError("tile and lane sizes must be >= 1")
        if self.tile_out != self.lane_y:
            raise ValueError("output-aligned schedule requires tile_out == lane_y")
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError("d_in and d_out must be >= 1")
        if self.g_x != math.ceil(self.d_in / self.tile_in):
            raise ValueError("g_x does not match ceil(d_in / tile_in)")
        if self.g_y != math.ceil(self.d_out / self.tile_out):
            raise ValueError("g_y does not match ceil(d_out / tile_out)")

    @classmethod
    def for_dims(
        cls,
        d_in: int,
        d_out: int,
        tile_in: int = 64,
        tile_out: int = 32,
        lane_x: int = 8,
        lane_y: int | None = None,
    ) -> "TileSchedule":
        if d_in < 1 or d_out < 1:
            raise ValueError("d_in and d_out must be >= 1")
        if lane_y is None:
            lane_y = tile_out
        return cls(
            tile_in=tile_in,
            tile_out=tile_out,
            lane_x=lane_x,
            lane_y=lane_y,
            g_x=math.ceil(d_in / tile_in),
            g_y=math.ceil(d_out / tile_out),
            d_in=d_in,
            d_out=d_out,
        )

    def in_slice(self, tile_i: int) -> slice:
        return slice(tile_i * self.tile_in, min((tile_i + 1) * self.tile_in, self.d_in))

    def out_slice(self, tile_o: int) -> slice:
        return slice(tile_o * self.tile_out, min((tile_o + 1) * self.tile_out, self.d_out))


@dataclass
class PartialBuffer:
    """Partial-stage workspace; flat order matches
    gIdx = (tileO * g_x + tileI) * B * tile_out + b * tile_out + t_y.

    Slots belonging to padding lanes of a ragged last output tile are never
    written and stay zero; ``write_counts`` (instrumented buffers only)
    tracks producer counts per slot.
    """

    g_x: int
    g_y: int
    batch: int
    tile_out: int
    data: np.ndarray
    write_counts: np.ndarray | None = None

    @classmethod
    def allocate(cls, sched: TileSchedule, batch: int, instrument: bool = False) -> "PartialBuffer":
        if batch < 1:
            raise ValueError("batch must be >= 1")
        shape = (sched.g_y, sched.g_x, batch, sched.tile_out)
        return cls(
            g_x=sched.g_x,
            g_y=sched.g_y,
            batch=batch,
            tile_out=sched.tile_out,
            data=np.zeros(shape, dtype=np.float64),
            write_counts=np.zeros(shape, dtype=np.int64) if instrument else None,
        )


@dataclass
class KernelCounters:
    """Instrumented merge/store counts checked against the closed forms."""

    forward_atomics: int = 0
    partial_writes: int = 0
    combine_stores: int = 0
    x_grad_merges: int = 0


@dataclass(frozen=True)
class AtomicCounts:
    fwd_baseline: int
    fwd_ours: int
    bwd_x_naive: int
    bwd_x_ours: int


def count_atomics(batch: int, d_in: int, d_out: int, sched: TileSchedule) -> AtomicCounts:
    """Closed-form atomic/merge counts for the reduction strategies."""
    if min(batch, d_in, d_out) < 1:
        raise ValueError("batch, d_in, d_out must be >= 1")
    return AtomicCounts(
        fwd_baseline=batch * d_out * sched.g_x,
        fwd_ours=0,
        bwd_x_naive=batch * d_in * d_out,
        bwd_x_ours=batch * d_in * sched.g_y,
    )


class NonFiniteInputError(ValueError):
    """Raised under input validation; pinpoints the offending element."""

    def __init__(self, b: int, j: int):
        self.b = b
        self.j = j
        super().__init__(f"non-finite input at (b={b}, j={j})")


def _check_finite(x: np.ndarray) -> None:
    finite = np.isfinite(x)
    if not finite.all():
        b, j = np.argwhere(~finite)[0]
        raise NonFiniteInputError(int(b), int(j))


def _resolve_kind(lut: LutTable | None, kind: BasisKind | None) -> BasisKind:
    if lut is not None:
        return lut.kind
    if kind is not None:
        return kind
    raise ValueError("exact mode without a LUT requires an explicit basis kind")


def _basis_planes(
    x_norm: np.ndarray,
    n_feat: int,
    mode: KernelMode,
    lut: LutTable | None,
    kind: BasisKind | None,
    with_slopes: bool,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Basis values (and derivative/slope planes) as (n_feat, B, D_in)."""
    if mode.basis_path is BasisPath.LUT_INTERP:
        if lut is None:
            raise ValueError("LUT mode requires a LutTable")
        if lut.n_features != n_feat:
            raise ValueError(
                f"LUT has {lut.n_features} features, coefficients expect {n_feat}"
            )
        if with_slopes:
            vals, slopes = interp_rows_with_slope(lut, x_norm)
            return (
                np.ascontiguousarray(vals.transpose(2, 0, 1)),
                np.ascontiguousarray(slopes.transpose(2, 0, 1)),
            )
        vals = interp_rows(lut, x_norm)
        return np.ascontiguousarray(vals.transpose(2, 0, 1)), None

    bkind = _resolve_kind(lut, kind)
    degree = _degree_for(bkind, n_feat)
    planes = basis_rows(bkind, degree, x_norm)
    if with_slopes:
        return planes, derivative_rows(bkind, degree, x_norm)
    return planes, None


def _degree_for(kind: BasisKind, n_feat: int) -> int:
    """Invert feature_count: the basis order that yields n_feat features."""
    if kind is BasisKind.FOURIER:
        if n_feat % 2 == 0:
            raise ValueError("Fourier feature count must be odd (2 * degree + 1)")
        return (n_feat - 1) // 2
    return n_feat - 1


def _run_tasks(tasks, fn, workers: int) -> None:
    if workers <= 1:
        for t in tasks:
            fn(t)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(fn, tasks))


def _validate_forward_args(
    x: np.ndarray, coeff: CoeffTensor, sched: TileSchedule, out: PartialBuffer
) -> None:
    if x.ndim != 2:
        raise ValueError(f"input must be 2-D (batch, d_in), got shape {x.shape}")
    if x.shape[1] != coeff.d_in:
        raise ValueError(f"input width {x.shape[1]} != coefficient d_in {coeff.d_in}")
    if sched.d_in != coeff.d_in or sched.d_out != coeff.d_out:
        raise ValueError("schedule dimensions do not match the coefficient tensor")
    if (out.g_x, out.g_y, out.batch, out.tile_out) != (
        sched.g_x,
        sched.g_y,
        x.shape[0],
        sched.tile_out,
    ):
        raise ValueError("partial buffer does not match the schedule and batch")


def forward_partial(
    x: np.ndarray,
    coeff: CoeffTensor,
    lut: LutTable | None,
    sched: TileSchedule,
    mode: KernelMode,
    out: PartialBuffer,
    *,
    workers: int = 1,
    counters: KernelCounters | None = None,
    validate: bool = False,
    kind: BasisKind | None = None,
) -> None:
    """Partial stage: each tile task owns its workspace slots exclusively.

    Slot (tileO, tileI, b, t_y) receives
    sum_{j in tile} sum_k coeff[k, out, j] * B_k(tanh(x[b, j])).
    """
    if coeff.layout is not Layout.DOJ:
        raise ValueError("forward_partial requires DOJ coefficient layout")
    x = np.asarray(x, dtype=np.float64)
    _validate_forward_args(x, coeff, sched, out)
    if validate:
        _check_finite(x)

    x_norm = np.tanh(x)
    planes, _ = _basis_planes(x_norm, coeff.n_feat, mode, lut, kind, with_slopes=False)
    _tiled_partial(planes, coeff.as3d(), sched, out, workers, counters)


def _tiled_partial(
    planes: np.ndarray,
    coeff3d: np.ndarray,
    sched: TileSchedule,
    out: PartialBuffer,
    workers: int,
    counters: KernelCounters | None,
) -> None:
    """Shared tiled Partial stage; coeff3d is any (k, o, j)-indexed view."""
    tasks = [(ti, to) for ti in range(sched.g_x) for to in range(sched.g_y)]

    def task(pair: tuple[int, int]) -> None:
        ti, to = pair
        js = sched.in_slice(ti)
        os_ = sched.out_slice(to)
        n_out = os_.stop - os_.start
        # Batched over the order axis: (K,B,nj) @ (K,nj,n_out), then the
        # order axis is reduced; lanes are the vectorized inner loops.
        prod = np.matmul(planes[:, :, js], coeff3d[:, os_, js].swapaxes(1, 2))
        out.data[to, ti, :, :n_out] = prod.sum(axis=0)
        if out.write_counts is not None:
            out.write_counts[to, ti, :, :n_out] += 1

    _run_tasks(tasks, task, workers)
    if counters is not None:
        counters.partial_writes += out.batch * sched.d_out * sched.g_x


def combine(
    partial: PartialBuffer,
    sched: TileSchedule,
    bias: np.ndarray | None = None,
    *,
    counters: KernelCounters | None = None,
) -> np.ndarray:
    """Combine stage: fold input tiles in ascending tileI order, add bias.

    Each (b, out) element has exactly one owner, so the forward pass issues
    zero cross-task merges.
    """
    y = np.zeros((partial.batch, sched.d_out), dtype=np.float64)
    for to in range(sched.g_y):
        os_ = sched.out_slice(to)
        n_out = os_.stop - os_.start
        acc = partial.data[to, 0, :, :n_out].copy()
        for ti in range(1, sched.g_x):
            acc += partial.data[to, ti, :, :n_out]
        y[:, os_] = acc
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (sched.d_out,):
            raise ValueError(f"bias must have shape ({sched.d_out},), got {bias.shape}")
        y += bias
    if counters is not None:
        counters.combine_stores += partial.batch * sched.d_out
    return y


def fused_forward(
    x: np.ndarray,
    coeff: CoeffTensor,
    lut: LutTable | None,
    sched: TileSchedule,
    mode: KernelMode,
    bias: np.ndarray | None = None,
    *,
    workers: int = 1,
    counters: KernelCounters | None = None,
    validate: bool = False,
    kind: BasisKind | None = None,
) -> np.ndarray:
    """Partial + Combine in one call; returns (B, d_out)."""
    x = np.asarray(x, dtype=np.float64)
    buf = PartialBuffer.allocate(sched, x.shape[0])
    forward_partial(
        x, coeff, lut, sched, mode, buf,
        workers=workers, counters=counters, validate=validate, kind=kind,
    )
    return combine(buf, sched, bias, counters=counters)


def backward_fused(
    x: np.ndarray,
    coeff: CoeffTensor,
    dy: np.ndarray,
    lut: LutTable | None,
    sched: TileSchedule,
    mode: KernelMode,
    *,
    workers: int = 1,
    counters: KernelCounters | None = None,
    validate: bool = False,
    kind: BasisKind | None = None,
) -> tuple[CoeffTensor, np.ndarray]:
    """Fused backward pass with the same output-aligned tiling.

    coeff_grad[k, o, j] = sum_b dy[b, o] * B_k(tanh(x[b, j])); every tile
    pair owns a disjoint (o, j) region, so no cross-task merges occur.
    x_grad[b, j] sums dy[b, o] * coeff[k, o, j] * slope_k over k >= 1 and
    the tile's outputs, then merges across output tiles in ascending tileO
    order (B * d_in * g_y ordered merges), then applies the tanh Jacobian.
    """
    if coeff.layout is not Layout.DOJ:
        raise ValueError("backward_fused requires DOJ coefficient layout")
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    if x.ndim != 2 or dy.ndim != 2:
        raise ValueError("x and dy must be 2-D")
    if x.shape[1] != coeff.d_in:
        raise ValueError(f"input width {x.shape[1]} != coefficient d_in {coeff.d_in}")
    if dy.shape != (x.shape[0], coeff.d_out):
        raise ValueError(
            f"dy must have shape ({x.shape[0]}, {coeff.d_out}), got {dy.shape}"
        )
    if sched.d_in != coeff.d_in or sched.d_out != coeff.d_out:
        raise ValueError("schedule dimensions do not match the coefficient tensor")
    if validate:
        _check_finite(x)
        _check_finite(dy)

    batch = x.shape[0]
    x_norm = np.tanh(x)
    planes, slopes = _basis_planes(x_norm, coeff.n_feat, mode, lut, kind, with_slopes=True)
    coeff3d = coeff.as3d()

    grad = np.zeros_like(coeff3d)
    stage = np.zeros((sched.g_y, batch, sched.d_in), dtype=np.float64)
    tasks = [(ti, to) for ti in range(sched.g_x) for to in range(sched.g_y)]

    def task(pair: tuple[int, int]) -> None:
        ti, to = pair
        js = sched.in_slice(ti)
        os_ = sched.out_slice(to)
        dy_t = dy[:, os_]
        # Coefficient gradient: batched (1,n_out,B) @ (K,B,nj) -> (K,n_out,nj),
        # written straight into this tile's disjoint DOJ region.
        grad[:, os_, js] = np.matmul(dy_t.T[None, :, :], planes[:, :, js])
        if coeff.n_feat > 1:
            # Input-gradient contribution, reduced over this tile's outputs;
            # each (to, js) staging region has this task as its only writer.
            gk = np.matmul(dy_t[None, :, :], coeff3d[1:, os_, js])  # (K-1,B,nj)
            stage[to, :, js] = (gk * slopes[1:, :, js]).sum(axis=0)

    _run_tasks(tasks, task, workers)

    x_grad = np.zeros((batch, sched.d_in), dtype=np.float64)
    for to in range(sched.g_y):  # ordered merge across output tiles
        x_grad += stage[to]
        if counters is not None:
            counters.x_grad_merges += batch * sched.d_in
    if mode.include_tanh_jacobian:
        x_grad *= 1.0 - x_norm * x_norm

    grad_tensor = CoeffTensor(coeff.d_in, coeff.d_out, coeff.degree, Layout.DOJ, grad.reshape(-1))
    return grad_tensor, x_grad


def reference_forward(
    x: np.ndarray,
    coeff: CoeffTensor,
    degree: int,
    *,
    trig: bool = False,
    kind: BasisKind | None = None,
) -> np.ndarray:
    """Unfused exact evaluation: materialize the basis tensor, then contract.

    The correctness oracle and the benchmark baseline.  ``trig=True``
    selects the cos(n arccos x) formulation (Chebyshev only).
    """
    if coeff.layout is not Layout.JOD:
        raise ValueError("reference_forward expects JOD coefficient layout")
    if degree != coeff.degree:
        raise ValueError(f"degree {degree} does not match coefficients ({coeff.degree})")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != coeff.d_in:
        raise ValueError(f"input must be (batch, {coeff.d_in}), got {x.shape}")
    x_norm = np.tanh(x)
    bkind = kind if kind is not None else BasisKind.CHEBYSHEV
    if trig:
        if bkind is not BasisKind.CHEBYSHEV:
            raise ValueError("the trig path applies to the Chebyshev basis only")
        planes = trig_rows(coeff.degree, x_norm)
    else:
        planes = basis_rows(bkind, _degree_for(bkind, coeff.n_feat), x_norm)
    return np.einsum("kbj,jok->bo", planes, coeff.as3d())


def reference_backward(
    x: np.ndarray,
    coeff: CoeffTensor,
    dy: np.ndarray,
    *,
    trig: bool = False,
    kind: BasisKind | None = None,
    include_tanh_jacobian: bool = True,
) -> tuple[CoeffTensor, np.ndarray]:
    """Unfused backward: materialize basis and derivative tensors, contract.

    Benchmark baseline counterpart of reference_forward; gradients use the
    analytic basis derivative.
    """
    if coeff.layout is not Layout.JOD:
        raise ValueError("reference_backward expects JOD coefficient layout")
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    bkind = kind if kind is not None else BasisKind.CHEBYSHEV
    degree = _degree_for(bkind, coeff.n_feat)
    x_norm = np.tanh(x)
    planes = trig_rows(degree, x_norm) if trig else basis_rows(bkind, degree, x_norm)
    deriv = derivative_rows(bkind, degree, x_norm)
    grad_jod = np.einsum("bo,kbj->jok", dy, planes)
    inter = np.einsum("bo,jok->bjk", dy, coeff.as3d())  # materialized, unfused
    x_grad = np.einsum("bjk,kbj->bj", inter, deriv)
    if include_tanh_jacobian:
        x_grad = x_grad * (1.0 - x_norm * x_norm)
    grad = CoeffTensor(coeff.d_in, coeff.d_out, coeff.degree, Layout.JOD, grad_jod.reshape(-1))
    return grad, x_grad


def forward_partial_jod_view(
    x: np.ndarray,
    coeff: CoeffTensor,
    lut: LutTable | None,
    sched: TileSchedule,
    mode: KernelMode,
    out: PartialBuffer,
    *,
    workers: int = 1,
    kind: BasisKind | None = None,
) -> None:
    """Benchmark-only variant: the tiled kernel fed the original JOD layout.

    The coefficient tensor is addressed through a strided transpose view, so
    every tile pays the non-unit-stride access cost the reordering removes.
    """
    if coeff.layout is not Layout.JOD:
        raise ValueError("forward_partial_jod_view expects JOD coefficient layout")
    x = np.asarray(x, dtype=np.float64)
    x_norm = np.tanh(x)
    planes, _ = _basis_planes(x_norm, coeff.n_feat, mode, lut, kind, with_slopes=False)
    doj_view = coeff.as3d().transpose(2, 1, 0)  # strided, not copied
    _tiled_partial(planes, doj_view, sched, out, workers, None)
