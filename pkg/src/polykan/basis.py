"""Exact evaluation of polynomial basis families via three-term recurrences.

Ground truth for lookup-table construction and for the reference kernels.
All evaluation runs in float64 regardless of the library's storage type:
tables are built offline and anchor the precision of everything downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np


class BasisKind(Enum):
    CHEBYSHEV = "chebyshev"
    LEGENDRE = "legendre"
    HERMITE = "hermite"
    FOURIER = "fourier"


def feature_count(kind: BasisKind, degree: int) -> int:
    """Number of basis features for a given maximum order.

    The three polynomial families expose degree+1 features; the Fourier
    basis interleaves cosine and sine terms for 2*degree+1.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if kind is BasisKind.FOURIER:
        return 2 * degree + 1
    return degree + 1


@dataclass(frozen=True)
class RecurrenceCoeffs:
    """Abstract three-term recurrence alpha_k B_{k+1} = beta_k(x) B_k - gamma_k B_{k-1}.

    ``beta_k`` receives the evaluation points as an array so one sweep fills
    an entire grid row.
    """

    alpha_k: Callable[[int], float]
    beta_k: Callable[[int, np.ndarray], np.ndarray]
    gamma_k: Callable[[int], float]
    seed0: Callable[[np.ndarray], np.ndarray]
    seed1: Callable[[np.ndarray], np.ndarray]


RECURRENCES: dict[BasisKind, RecurrenceCoeffs] = {
    # T_{k+1} = 2x T_k - T_{k-1}, seeds (1, x)
    BasisKind.CHEBYSHEV: RecurrenceCoeffs(
        alpha_k=lambda k: 1.0,
        beta_k=lambda k, x: 2.0 * x,
        gamma_k=lambda k: 1.0,
        seed0=lambda x: np.ones_like(x),
        seed1=lambda x: x.copy(),
    ),
    # (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}, seeds (1, x)
    BasisKind.LEGENDRE: RecurrenceCoeffs(
        alpha_k=lambda k: float(k + 1),
        beta_k=lambda k, x: (2.0 * k + 1.0) * x,
        gamma_k=lambda k: float(k),
        seed0=lambda x: np.ones_like(x),
        seed1=lambda x: x.copy(),
    ),
    # Physicists' convention: H_{k+1} = 2x H_k - 2k H_{k-1}, seeds (1, 2x)
    BasisKind.HERMITE: RecurrenceCoeffs(
        alpha_k=lambda k: 1.0,
        beta_k=lambda k, x: 2.0 * x,
        gamma_k=lambda k: 2.0 * k,
        seed0=lambda x: np.ones_like(x),
        seed1=lambda x: 2.0 * x,
    ),
}


def _validate(degree: int, x: np.ndarray) -> None:
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if not np.all(np.isfinite(x)):
        raise ValueError("basis evaluation requires finite inputs")


def basis_rows(kind: BasisKind, degree: int, x: np.ndarray) -> np.ndarray:
    """Evaluate all features at each point; returns shape (n_features,) + x.shape.

    Polynomial families run the three-term recurrence once per order.  The
    Fourier features [1, cos(pi x), sin(pi x), ..., cos(d pi x), sin(d pi x)]
    are propagated by the angle-addition identities so only the first-order
    cos/sin are ever computed by the math library.
    """
    x = np.asarray(x, dtype=np.float64)
    _validate(degree, x)
    nfeat = feature_count(kind, degree)
    out = np.empty((nfeat,) + x.shape, dtype=np.float64)

    if kind is BasisKind.FOURIER:
        out[0] = 1.0
        if degree >= 1:
            theta = np.pi * x
            c1, s1 = np.cos(theta), np.sin(theta)
            out[1], out[2] = c1, s1
            for k in range(1, degree):
                # cos((k+1)t) = cos t cos kt - sin t sin kt; analogous for sin
                out[2 * k + 1] = c1 * out[2 * k - 1] - s1 * out[2 * k]
                out[2 * k + 2] = s1 * out[2 * k - 1] + c1 * out[2 * k]
        return out

    rec = RECURRENCES[kind]
    out[0] = rec.seed0(x)
    if degree >= 1:
        out[1] = rec.seed1(x)
    for k in range(1, degree):
        alpha = rec.alpha_k(k)
        out[k + 1] = (rec.beta_k(k, x) * out[k] - rec.gamma_k(k) * out[k - 1]) / alpha
    return out


def eval_basis(kind: BasisKind, degree: int, x: float) -> np.ndarray:
    """Feature vector [B_0(x), ..., B_d(x)] at a single normalized point."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 0:
        raise ValueError("eval_basis takes a scalar; use basis_rows for arrays")
    return basis_rows(kind, degree, xv.reshape(1))[:, 0]


def eval_basis_trig(degree: int, x: float) -> np.ndarray:
    """Chebyshev values via cos(n arccos x); the first computation strategy.

    Kept as an independent test oracle and as the slow baseline kernel path.
    """
    xv = np.asarray(x, dtype=np.float64)
    _validate(degree, xv)
    if np.any(np.abs(xv) > 1.0):
        raise ValueError("trig evaluation requires |x| <= 1")
    theta = np.arccos(xv)
    n = np.arange(degree + 1, dtype=np.float64)
    return np.cos(n * theta)


def trig_rows(degree: int, x: np.ndarray) -> np.ndarray:
    """Vectorized eval_basis_trig; returns (degree+1,) + x.shape."""
    x = np.asarray(x, dtype=np.float64)
    _validate(degree, x)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("trig evaluation requires |x| <= 1")
    theta = np.arccos(x)
    n = np.arange(degree + 1, dtype=np.float64).reshape((degree + 1,) + (1,) * x.ndim)
    return np.cos(n * theta)


def derivative_rows(kind: BasisKind, degree: int, x: np.ndarray) -> np.ndarray:
    """Analytic derivatives dB_k/dx; returns (n_features,) + x.shape.

    Chebyshev uses T_n' = n U_{n-1} with a second recurrence for U; Legendre
    uses P'_{k+1} = P'_{k-1} + (2k+1) P_k; Hermite uses H_n' = 2n H_{n-1};
    Fourier differentiates each cos/sin term.
    """
    x = np.asarray(x, dtype=np.float64)
    _validate(degree, x)
    nfeat = feature_count(kind, degree)
    out = np.zeros((nfeat,) + x.shape, dtype=np.float64)

    if kind is BasisKind.CHEBYSHEV:
        if degree >= 1:
            # U_0 = 1, U_1 = 2x, U_{k+1} = 2x U_k - U_{k-1}
            u_prev = np.ones_like(x)
            out[1] = u_prev
            if degree >= 2:
                u_cur = 2.0 * x
                out[2] = 2.0 * u_cur
                for n in range(3, degree + 1):
                    u_prev, u_cur = u_cur, 2.0 * x * u_cur - u_prev
                    out[n] = n * u_cur
        return out

    if kind is BasisKind.LEGENDRE:
        if degree >= 1:
            p = basis_rows(kind, degree, x)
            out[1] = 1.0
            for k in range(1, degree):
                out[k + 1] = out[k - 1] + (2.0 * k + 1.0) * p[k]
        return out

    if kind is BasisKind.HERMITE:
        if degree >= 1:
            h = basis_rows(kind, degree, x)
            for n in range(1, degree + 1):
                out[n] = 2.0 * n * h[n - 1]
        return out

    if kind is BasisKind.FOURIER:
        if degree >= 1:
            b = basis_rows(kind, degree, x)
            for k in range(1, degree + 1):
                kpi = k * np.pi
                out[2 * k - 1] = -kpi * b[2 * k]  # d/dx cos(k pi x)
                out[2 * k] = kpi * b[2 * k - 1]   # d/dx sin(k pi x)
        return out

    raise ValueError(f"unsupported basis kind: {kind}")


def eval_basis_derivative(kind: BasisKind, degree: int, x: float) -> np.ndarray:
    """Analytic derivative vector at a single point."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 0:
        raise ValueError("eval_basis_derivative takes a scalar")
    return derivative_rows(kind, degree, xv.reshape(1))[:, 0]


def chebyshev_second_derivative_max(k: int) -> float:
    """max over [-1,1] of |T_k''|, attained at the endpoints: k^2 (k^2 - 1) / 3."""
    return k * k * (k * k - 1) / 3.0


def parse_kind(name: str) -> BasisKind:
    try:
        return BasisKind(name.lower())
    except ValueError:
        valid = ", ".join(k.value for k in BasisKind)
        raise ValueError(f"unknown basis {name!r}; expected one of: {valid}") from None
