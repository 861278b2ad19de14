"""KAN layers, network composition, losses, Adam, and desk-scale training.

A layer maps (B, d_in) -> (B, d_out) through y = W . h + b where h is the
per-input basis expansion of tanh(x).  Coefficients live in the DOJ kernel
layout for the whole lifetime of the model; checkpoint export converts back
to JOD.  Training is deterministic given a seed: fixed initialization,
seeded shuffles, and kernels with fixed merge orders.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .basis import BasisKind, feature_count
from .kernels import (
    KernelMode,
    BasisPath,
    TileSchedule,
    backward_fused,
    fused_forward,
)
from .lut import DEFAULT_LUT_SIZE, LutTable, lut_build
from .tensor import CoeffTensor, Layout, load_coeff, reorder_to_doj, reorder_to_jod, save_coeff


class Loss(Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"
    RMSLE = "rmsle"


@dataclass(frozen=True)
class LayerSpec:
    d_in: int
    d_out: int
    degree: int
    kind: BasisKind = BasisKind.CHEBYSHEV
    mode: KernelMode = KernelMode()
    has_bias: bool = True

    def __post_init__(self) -> None:
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")

    @property
    def n_feat(self) -> int:
        return feature_count(self.kind, self.degree)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    loss: Loss = Loss.MSE

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.d_out != b.d_in:
                raise ValueError(
                    f"layer dims do not chain: {a.d_out} -> {b.d_in}"
                )


def init_params(spec: LayerSpec, seed: int) -> tuple[CoeffTensor, np.ndarray | None]:
    """Seeded uniform(-s, s) with s = 1 / sqrt(d_in * n_features); zero bias.

    Keeps pre-tanh activations O(1) through depth; reproducible bit-for-bit
    for a given seed.
    """
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(spec.d_in * spec.n_feat)
    data = rng.uniform(-s, s, size=spec.d_in * spec.d_out * spec.n_feat)
    coeff = CoeffTensor(spec.d_in, spec.d_out, spec.n_feat - 1, Layout.JOD, data)
    bias = np.zeros(spec.d_out, dtype=np.float64) if spec.has_bias else None
    return coeff, bias


class Layer:
    """Runtime layer state: DOJ coefficients, optional bias, shared LUT."""

    def __init__(
        self,
        spec: LayerSpec,
        coeff: CoeffTensor,
        bias: np.ndarray | None,
        lut: LutTable | None,
        sched: TileSchedule | None = None,
    ):
        if coeff.layout is Layout.JOD:
            coeff = reorder_to_doj(coeff)
        self.spec = spec
        self.coeff = coeff
        self.bias = bias
        self.lut = lut
        self.sched = sched or TileSchedule.for_dims(spec.d_in, spec.d_out)
        self._cached_x: np.ndarray | None = None

    @classmethod
    def create(
        cls,
        spec: LayerSpec,
        seed: int,
        lut_size: int = DEFAULT_LUT_SIZE,
        lut_cache: dict | None = None,
    ) -> "Layer":
        coeff, bias = init_params(spec, seed)
        lut = None
        if spec.mode.basis_path is BasisPath.LUT_INTERP:
            key = (spec.kind, spec.degree, lut_size)
            if lut_cache is not None and key in lut_cache:
                lut = lut_cache[key]
            else:
                lut = lut_build(spec.kind, spec.degree, lut_size)
                if lut_cache is not None:
                    lut_cache[key] = lut
        return cls(spec, coeff, bias, lut)

    def forward(self, x: np.ndarray, workers: int = 1, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.d_in:
            raise ValueError(f"expected input shape (batch, {self.spec.d_in}), got {x.shape}")
        if cache:
            self._cached_x = x
        return fused_forward(
            x, self.coeff, self.lut, self.sched, self.spec.mode, self.bias,
            workers=workers, kind=self.spec.kind,
        )

    def backward(
        self, dy: np.ndarray, workers: int = 1
    ) -> tuple[CoeffTensor, np.ndarray | None, np.ndarray]:
        """Gradients for the most recent cached forward input."""
        if self._cached_x is None:
            raise RuntimeError("backward called before forward")
        coeff_grad, x_grad = backward_fused(
            self._cached_x, self.coeff, dy, self.lut, self.sched, self.spec.mode,
            workers=workers, kind=self.spec.kind,
        )
        bias_grad = dy.sum(axis=0) if self.bias is not None else None
        return coeff_grad, bias_grad, x_grad


def layer_forward(layer: Layer, x: np.ndarray, workers: int = 1) -> np.ndarray:
    """Functional spelling of Layer.forward (caches x for backward)."""
    return layer.forward(x, workers=workers)


class Network:
    def __init__(self, spec: NetworkSpec, seed: int, lut_size: int = DEFAULT_LUT_SIZE):
        self.spec = spec
        lut_cache: dict = {}
        self.layers = [
            Layer.create(ls, seed + i, lut_size=lut_size, lut_cache=lut_cache)
            for i, ls in enumerate(spec.layers)
        ]

    def forward(self, x: np.ndarray, workers: int = 1, cache: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, workers=workers, cache=cache)
        return x

    def backward(self, dy: np.ndarray, workers: int = 1) -> list[tuple[CoeffTensor, np.ndarray | None]]:
        """Backpropagate through all layers; returns per-layer parameter grads."""
        grads: list[tuple[CoeffTensor, np.ndarray | None]] = []
        for layer in reversed(self.layers):
            coeff_grad, bias_grad, dy = layer.backward(dy, workers=workers)
            grads.append((coeff_grad, bias_grad))
        grads.reverse()
        return grads


# ---------------------------------------------------------------------------
# Losses: each returns (reported value, gradient wrt predictions)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    target = target.reshape(pred.shape)
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    labels = labels.astype(np.int64).reshape(-1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def rmsle_loss(pred: np.ndarray, target_log1p: np.ndarray) -> tuple[float, np.ndarray]:
    """Targets are pre-transformed with log1p; reported value is the RMSLE.

    The descent direction is the MSE gradient on the transformed targets
    (same minimizer; avoids the 1/sqrt blowup at zero loss).
    """
    mse, grad = mse_loss(pred, target_log1p)
    return float(np.sqrt(mse)), grad


def loss_fn(kind: Loss):
    return {
        Loss.MSE: mse_loss,
        Loss.CROSS_ENTROPY: cross_entropy_loss,
        Loss.RMSLE: rmsle_loss,
    }[kind]


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamHParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    hp: AdamHParams,
    lr_scale: float = 1.0,
) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    lr = hp.lr * lr_scale
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * (g * g)
        m_hat = m / (1.0 - hp.beta1 ** t)
        v_hat = v / (1.0 - hp.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + hp.eps)


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Dataset:
    x: np.ndarray  # (n, n_features)
    y: np.ndarray  # (n,) regression targets or integer labels
    name: str = "dataset"


class DatasetError(ValueError):
    pass


def load_csv(path: str | Path, classification: bool = False) -> Dataset:
    """All-numeric CSV with a header; the last column is the target.

    Rows with non-numeric fields are rejected with their line numbers.
    """
    path = Path(path)
    rows: list[list[float]] = []
    bad_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DatasetError(f"{path}: empty file")
        width = len(header.rstrip("\n").split(","))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != width:
                bad_lines.append(lineno)
                continue
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                bad_lines.append(lineno)
    if bad_lines:
        shown = ", ".join(str(n) for n in bad_lines[:20])
        raise DatasetError(f"{path}: non-numeric or malformed rows at lines: {shown}")
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    if arr.shape[1] < 2:
        raise DatasetError(f"{path}: need at least one feature column plus a target")
    x, y = arr[:, :-1], arr[:, -1]
    if classification:
        labels = y.astype(np.int64)
        if not np.all(labels == y):
            raise DatasetError(f"{path}: classification targets must be integer labels")
        return Dataset(x, labels, name=path.stem)
    return Dataset(x, y, name=path.stem)


def _make_cheb2() -> Dataset:
    rng = np.random.default_rng(202406)
    x = rng.uniform(-2.0, 2.0, size=(256, 1))
    t = np.tanh(x[:, 0])
    y = 2.0 * t * t - 1.0  # T_2 of the normalized input, noise-free
    return Dataset(x, y, name="cheb2")


def _make_sincos() -> Dataset:
    rng = np.random.default_rng(202407)
    x = rng.uniform(-1.0, 1.0, size=(256, 2))
    y = np.sin(np.pi * x[:, 0]) + x[:, 1] ** 2
    return Dataset(x, y, name="sincos")


SYNTHETIC_DATASETS = {"cheb2": _make_cheb2, "sincos": _make_sincos}


def make_synthetic(name: str) -> Dataset:
    try:
        return SYNTHETIC_DATASETS[name]()
    except KeyError:
        known = ", ".join(sorted(SYNTHETIC_DATASETS))
        raise DatasetError(f"unknown synthetic dataset {name!r}; known: {known}") from None


# ---------------------------------------------------------------------------
# Training


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"non-finite loss ({value}) at epoch {epoch}, batch {batch}; aborting"
        )


@dataclass
class TrainTrace:
    epoch_losses: list[float] = field(default_factory=list)
    fwd_seconds: list[float] = field(default_factory=list)
    bwd_seconds: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    network: Network
    trace: TrainTrace

    @property
    def final_loss(self) -> float:
        return self.trace.epoch_losses[-1]


def network_train(
    netspec: NetworkSpec,
    dataset: Dataset,
    epochs: int,
    adam_hparams: AdamHParams | None = None,
    seed: int = 0,
    *,
    batch_size: int = 32,
    workers: int = 1,
    lut_size: int = DEFAULT_LUT_SIZE,
    cosine_decay: bool = True,
) -> TrainResult:
    """Deterministic mini-batch training; returns the trained network and a
    per-epoch trace of losses and forward/backward wall time."""
    if dataset.x.shape[1] != netspec.layers[0].d_in:
        raise ValueError(
            f"dataset has {dataset.x.shape[1]} features, first layer expects "
            f"{netspec.layers[0].d_in}"
        )
    hp = adam_hparams or AdamHParams()
    net = Network(netspec, seed=seed, lut_size=lut_size)
    params: list[np.ndarray] = []
    for layer in net.layers:
        params.append(layer.coeff.data)
        if layer.bias is not None:
            params.append(layer.bias)
    state = AdamState.for_params(params)
    fn = loss_fn(netspec.loss)
    target = dataset.y
    if netspec.loss is Loss.RMSLE:
        target = np.log1p(target)

    rng = np.random.default_rng(seed)
    n = dataset.x.shape[0]
    trace = TrainTrace()
    total_steps = max(1, epochs * ((n + batch_size - 1) // batch_size))
    step_no = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        fwd_t = 0.0
        bwd_t = 0.0
        epoch_loss = 0.0
        seen = 0
        for bi, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            xb = dataset.x[idx]
            tb = target[idx]

            t0 = time.perf_counter()
            pred = net.forward(xb, workers=workers)
            fwd_t += time.perf_counter() - t0

            value, dy = fn(pred, tb)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, bi, value)
            epoch_loss += value * len(idx)
            seen += len(idx)

            t0 = time.perf_counter()
            grads_per_layer = net.backward(dy, workers=workers)
            bwd_t += time.perf_counter() - t0

            flat_grads: list[np.ndarray] = []
            for layer, (cg, bg) in zip(net.layers, grads_per_layer):
                flat_grads.append(cg.data)
                if layer.bias is not None:
                    flat_grads.append(bg)
            if cosine_decay:
                lr_scale = 0.5 * (1.0 + np.cos(np.pi * step_no / total_steps))
            else:
                lr_scale = 1.0
            adam_step(params, flat_grads, state, hp, lr_scale=lr_scale)
            step_no += 1
        trace.epoch_losses.append(epoch_loss / seen)
        trace.fwd_seconds.append(fwd_t)
        trace.bwd_seconds.append(bwd_t)
    return TrainResult(net, trace)


# ---------------------------------------------------------------------------
# Checkpoints: one PKCK file per layer plus a JSON manifest


def save_checkpoint(net: Network, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"format": "polykan-checkpoint", "version": 1, "layers": []}
    for i, layer in enumerate(net.layers):
        fname = f"layer_{i}.pkck"
        save_coeff(reorder_to_jod(layer.coeff), out_dir / fname)
        entry = {
            "file": fname,
            "d_in": layer.spec.d_in,
            "d_out": layer.spec.d_out,
            "degree": layer.spec.degree,
            "kind": layer.spec.kind.value,
            "basis_path": layer.spec.mode.basis_path.value,
            "include_tanh_jacobian": layer.spec.mode.include_tanh_jacobian,
            "has_bias": layer.spec.has_bias,
            "bias": None if layer.bias is None else [float(v) for v in layer.bias],
        }
        manifest["layers"].append(entry)
    manifest["loss"] = net.spec.loss.value
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out_dir / "manifest.json"


def load_checkpoint(ckpt_dir: str | Path, lut_size: int = DEFAULT_LUT_SIZE) -> Network:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    specs = []
    for entry in manifest["layers"]:
        specs.append(
            LayerSpec(
                d_in=entry["d_in"],
                d_out=entry["d_out"],
                degree=entry["degree"],
                kind=BasisKind(entry["kind"]),
                mode=KernelMode(
                    BasisPath(entry["basis_path"]),
                    entry["include_tanh_jacobian"],
                ),
                has_bias=entry["has_bias"],
            )
        )
    netspec = NetworkSpec(tuple(specs), Loss(manifest["loss"]))
    net = Network(netspec, seed=0, lut_size=lut_size)
    for layer, entry in zip(net.layers, manifest["layers"]):
        coeff = load_coeff(ckpt_dir / entry["file"])
        if coeff.layout is Layout.JOD:
            coeff = reorder_to_doj(coeff)
        layer.coeff = coeff
        layer.bias = (
            np.asarray(entry["bias"], dtype=np.float64) if entry["bias"] is not None else None
        )
    return net
