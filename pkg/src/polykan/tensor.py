"""Coefficient storage with explicit layout tags and the JOD <-> DOJ reorder.

The reorder is a physical copy, not a strided view: keeping the layouts
materialized is what makes the kernels' unit-stride access claims measurable
on any host.  JOD is the conventional orientation [input, output, order];
DOJ is the kernel orientation [order, output, input] with the input index
innermost (unit stride).

Checkpoint format (magic ``PKCK``): version, layout tag, d_in, d_out,
degree as little-endian u32, then the payload as float32 in the tagged
layout.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

FORMAT_MAGIC = b"PKCK"
FORMAT_VERSION = 1


class Layout(Enum):
    JOD = "jod"  # [j, o, k] = [input, output, order]
    DOJ = "doj"  # [k, o, j] = [order, output, input]


@dataclass
class CoeffTensor:
    """Dense learnable coefficients; data is row-major in the tagged layout.

    The third tensor axis has degree+1 slots.  Basis families with a
    different feature count (Fourier: 2 d + 1) store feature_count - 1 here
    so the index formulas below hold verbatim.
    """

    d_in: int
    d_out: int
    degree: int
    layout: Layout
    data: np.ndarray  # flat float64, length d_in * d_out * (degree + 1)

    def __post_init__(self) -> None:
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError("d_in and d_out must be >= 1")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        expected = self.d_in * self.d_out * (self.degree + 1)
        if self.data.size != expected:
            raise ValueError(f"data has {self.data.size} entries, expected {expected}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)

    @property
    def n_feat(self) -> int:
        return self.degree + 1

    def as3d(self) -> np.ndarray:
        """The flat payload viewed with its layout's natural axis order."""
        if self.layout is Layout.JOD:
            return self.data.reshape(self.d_in, self.d_out, self.n_feat)
        return self.data.reshape(self.n_feat, self.d_out, self.d_in)


def jod_index(d_out: int, degree: int, j: int, o: int, k: int) -> int:
    """Flat offset of (j, o, k) in the JOD layout."""
    return (j * d_out + o) * (degree + 1) + k


def doj_index(d_in: int, d_out: int, k: int, o: int, j: int) -> int:
    """Flat offset of (k, o, j) in the DOJ layout; unit stride along j."""
    return (k * d_out + o) * d_in + j


def reorder_to_doj(c: CoeffTensor) -> CoeffTensor:
    """Copy a JOD tensor into DOJ order; value (k,o,j) = input value (j,o,k)."""
    if c.layout is not Layout.JOD:
        raise ValueError(f"reorder_to_doj expects JOD input, got {c.layout.value}")
    rearranged = np.ascontiguousarray(c.as3d().transpose(2, 1, 0))
    return CoeffTensor(c.d_in, c.d_out, c.degree, Layout.DOJ, rearranged.reshape(-1))


def reorder_to_jod(c: CoeffTensor) -> CoeffTensor:
    """Inverse of reorder_to_doj; used for checkpoint export."""
    if c.layout is not Layout.DOJ:
        raise ValueError(f"reorder_to_jod expects DOJ input, got {c.layout.value}")
    rearranged = np.ascontiguousarray(c.as3d().transpose(2, 1, 0))
    return CoeffTensor(c.d_in, c.d_out, c.degree, Layout.JOD, rearranged.reshape(-1))


_LAYOUT_TAGS = {Layout.JOD: 0, Layout.DOJ: 1}
_TAG_TO_LAYOUT = {v: k for k, v in _LAYOUT_TAGS.items()}


def save_coeff(c: CoeffTensor, path: str | Path) -> None:
    """Write the ``PKCK`` binary with a float32 payload in the tagged layout."""
    header = FORMAT_MAGIC + struct.pack(
        "<IIIII",
        FORMAT_VERSION,
        _LAYOUT_TAGS[c.layout],
        c.d_in,
        c.d_out,
        c.degree,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(c.data.astype("<f4").tobytes())


def load_coeff(path: str | Path) -> CoeffTensor:
    """Read a ``PKCK`` file; payload is lifted to the float64 working type."""
    raw = Path(path).read_bytes()
    if raw[:4] != FORMAT_MAGIC:
        raise ValueError(f"{path}: not a PKCK file")
    version, tag, d_in, d_out, degree = struct.unpack("<IIIII", raw[4:24])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported PKCK version {version}")
    if tag not in _TAG_TO_LAYOUT:
        raise ValueError(f"{path}: unknown layout tag {tag}")
    count = d_in * d_out * (degree + 1)
    if len(raw) != 24 + 4 * count:
        raise ValueError(f"{path}: expected {24 + 4 * count} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=24)
    return CoeffTensor(d_in, d_out, degree, _TAG_TO_LAYOUT[tag], data.astype(np.float64))
