"""Quantization schemes, learnable (alpha, beta) ranges and STE quantizers.

Codes live in [0, qmax] with qmax = 2**bits - 1. A range is stored as a
scale ``alpha`` and an offset ``beta`` (in code units) so that

    codes = clamp(round(x / alpha) - beta, 0, qmax)
    x_hat = (codes + beta) * alpha

and the represented interval is [alpha * beta, alpha * (qmax + beta)].
The zero-point of the usual affine convention is ``-beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import numeric as nm
from .numeric import Tensor

ALPHA_FLOOR = 1e-8
SUPPORTED_BITS = (4, 8, 16)


def qmax(bits: int) -> int:
    if bits < 2:
        raise ValueError(f"bitwidth must be >= 2, got {bits}")
    return 2 ** bits - 1


@dataclass(frozen=True)
class QuantScheme:
    """Bitwidth, granularity and symmetry of one quantized tensor.

    ``axis`` is None for per-tensor quantization, otherwise the channel axis.
    """

    bits: int
    axis: int | None = None
    symmetric: bool = False

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValueError(f"unsupported bitwidth {self.bits}")

    @property
    def per_channel(self) -> bool:
        return self.axis is not None

    @property
    def qmax(self) -> int:
        return qmax(self.bits)

    def to_dict(self) -> dict:
        return {"bits": self.bits, "axis": self.axis, "symmetric": self.symmetric}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantScheme":
        return cls(int(d["bits"]), d.get("axis"), bool(d.get("symmetric", False)))


@dataclass
class RangeParams:
    """Scale and offset per quantization group (scalars for per-tensor)."""

    alpha: np.ndarray
    beta: np.ndarray
    bits: int = 8

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if np.any(~(self.alpha > 0)):
            raise ValueError("alpha must be positive for every group")

    @property
    def f_min(self) -> np.ndarray:
        return self.alpha * self.beta

    @property
    def f_max(self) -> np.ndarray:
        return self.alpha * qmax(self.bits) + self.alpha * self.beta

    @property
    def zero_point(self) -> np.ndarray:
        return -self.beta

    def rounded(self) -> "RangeParams":
        """Export form: integral offset, same scale."""
        return RangeParams(self.alpha.copy(), np.round(self.beta), self.bits)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist(), "bits": self.bits}

    @classmethod
    def from_dict(cls, d: dict) -> "RangeParams":
        return cls(np.asarray(d["alpha"]), np.asarray(d["beta"]), int(d["bits"]))


def range_from_minmax(f_min, f_max, bits: int) -> RangeParams:
    """alpha = (f_max - f_min) / qmax, beta = f_min / alpha.

    Degenerate ranges floor alpha at ``ALPHA_FLOOR``.
    """
    f_min = np.asarray(f_min, dtype=np.float64)
    f_max = np.asarray(f_max, dtype=np.float64)
    if np.any(f_min > f_max):
        raise ValueError("f_min must not exceed f_max")
    alpha = np.maximum((f_max - f_min) / qmax(bits), ALPHA_FLOOR)
    return RangeParams(alpha, f_min / alpha, bits)


def reconstruct(rp: RangeParams) -> tuple[np.ndarray, np.ndarray]:
    return rp.f_min, rp.f_max


def symmetric_range(w: np.ndarray, bits: int, axis: int | None) -> RangeParams:
    """Symmetric range: alpha = 2 max|w| / qmax, zero pinned to code (qmax + 1) / 2."""
    w = np.asarray(w, dtype=np.float64)
    reduce = None if axis is None else tuple(i for i in range(w.ndim) if i != axis)
    amax = np.max(np.abs(w), axis=reduce, keepdims=axis is not None)
    q = qmax(bits)
    alpha = np.maximum(2.0 * amax / q, ALPHA_FLOOR)
    beta = np.full_like(alpha, -(q + 1) / 2)
    return RangeParams(alpha, beta, bits)


# -- differentiable quantizers ----------------------------------------------------

def quantize(x, alpha, beta, bits: int) -> Tensor:
    """Codes clamp(ste(x / alpha) - beta, 0, qmax), real-valued and differentiable."""
    u = nm.div(x, alpha)
    return nm.clamp(nm.sub(nm.ste_round(u), beta), 0.0, float(qmax(bits)))


def dequantize(codes, alpha, beta) -> Tensor:
    return nm.mul(nm.add(codes, beta), alpha)


def fake_quant_composed(x, alpha, beta, bits: int) -> Tensor:
    """Quantize-dequantize built from primitive tape ops (reference path)."""
    return dequantize(quantize(x, alpha, beta, bits), alpha, beta)


def fake_quant(x, alpha, beta, bits: int) -> Tensor:
    """Fused quantize-dequantize node.

    Gradients follow the STE/clamp contracts of the composed graph:
    d/dx = inside, d/dalpha = codes + beta - inside * x / alpha,
    d/dbeta = alpha * (1 - inside).
    """
    x, alpha, beta = nm.as_tensor(x), nm.as_tensor(alpha), nm.as_tensor(beta)
    if alpha.ndim == 0 and beta.ndim == 0 and x.data.dtype == np.float64 and x.data.flags.c_contiguous:
        return _fake_quant_scalar(x, alpha, beta, bits)
    q = float(qmax(bits))
    u = x.data / alpha.data
    shifted = np.round(u) - beta.data
    inside = shifted >= 0.0
    inside &= shifted <= q
    np.maximum(shifted, 0.0, out=shifted)
    np.minimum(shifted, q, out=shifted)
    shifted += beta.data
    out = shifted * alpha.data

    def grad_fn(g):
        gx = g * inside
        ga = gb = None
        if alpha.requires_grad:
            ga = nm.unbroadcast(g * shifted - gx * u, alpha.shape)
        if beta.requires_grad:
            gb = nm.unbroadcast(g - gx, beta.shape) * alpha.data
        return (nm.unbroadcast(gx, x.shape) if x.requires_grad else None), ga, gb

    return nm.make_node(out, (x, alpha, beta), grad_fn, "fake_quant")


def _fake_quant_scalar(x: Tensor, alpha: Tensor, beta: Tensor, bits: int) -> Tensor:
    """Per-tensor range: one compiled pass forward, one pass plus two dots backward."""
    a, b = float(alpha.data), float(beta.data)
    out = np.empty_like(x.data)
    inside = np.empty(x.shape, dtype=np.bool_)
    _kernels.fake_quant_scalar(x.data, a, b, float(qmax(bits)), out, inside)

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        gx = np.empty_like(g)
        _kernels.masked_copy(g, inside, gx)
        ga = gb = None
        if alpha.requires_grad or beta.requires_grad:
            gr, gxr = g.reshape(-1), gx.reshape(-1)
            if alpha.requires_grad:
                # sum g * (codes + beta) - sum gx * x / alpha, with codes + beta = out / alpha
                ga = np.asarray((np.dot(gr, out.reshape(-1)) - np.dot(gxr, x.data.reshape(-1))) / a)
            if beta.requires_grad:
                gb = np.asarray((gr.sum() - gxr.sum()) * a)
        return (gx if x.requires_grad else None), ga, gb

    return nm.make_node(out, (x, alpha, beta), grad_fn, "fake_quant")


def quantize_codes(x: np.ndarray, rp: RangeParams) -> np.ndarray:
    """Integer codes (int64) for export; ``rp.beta`` should already be integral."""
    q = qmax(rp.bits)
    return np.clip(np.round(np.asarray(x) / rp.alpha) - rp.beta, 0, q).astype(np.int64)


# -- learnable weight clipping ---------------------------------------------------------

# sigmoid(CLIP_INIT) = 0.999, i.e. effectively unclipped but still trainable
CLIP_INIT = float(np.log(999.0))


@dataclass
class ClipParams:
    """Logits of the clipping factors; gamma = sigmoid(theta) lies in (0, 1)."""

    theta_min: np.ndarray
    theta_max: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta_min = np.asarray(self.theta_min, dtype=np.float64)
        if self.theta_max is None:
            self.theta_max = self.theta_min.copy()
        self.theta_max = np.asarray(self.theta_max, dtype=np.float64)

    @classmethod
    def init(cls, shape) -> "ClipParams":
        return cls(np.full(shape, CLIP_INIT), np.full(shape, CLIP_INIT))

    @classmethod
    def from_gamma(cls, gamma_min, gamma_max) -> "ClipParams":
        """Gamma of exactly 1 maps to theta = +inf (no clipping)."""
        with np.errstate(divide="ignore"):
            g0, g1 = np.asarray(gamma_min, float), np.asarray(gamma_max, float)
            return cls(np.log(g0) - np.log1p(-g0), np.log(g1) - np.log1p(-g1))

    @property
    def gamma_min(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.theta_min))

    @property
    def gamma_max(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.theta_max))


def group_shape(shape: tuple[int, ...], axis: int | None) -> tuple[int, ...]:
    if axis is None:
        return ()
    if not -len(shape) <= axis < len(shape):
        raise ValueError(f"per-channel axis {axis} invalid for shape {shape}")
    axis %= len(shape)
    return tuple(n if i == axis else 1 for i, n in enumerate(shape))


def _group_reduce(fn, w: Tensor, axis: int | None) -> Tensor:
    if axis is None:
        return fn(w)
    if w.ndim != 2:
        raise ValueError("per-channel clipping expects a 2-d weight")
    return fn(w, axis=1 - (axis % 2), keepdims=True)


def clip_weights(w, theta_min, theta_max, scheme: QuantScheme) -> tuple[Tensor, Tensor, Tensor]:
    """Clip ``w`` to its learned per-group range and derive (alpha, beta).

    ``theta_min``/``theta_max`` are logits (arrays or trainable tensors);
    gamma = sigmoid(theta) shrinks the group min/max. Returns the clamped
    weight and the range tensors, all differentiable.
    """
    w = nm.as_tensor(w)
    q = float(scheme.qmax)
    if scheme.symmetric:
        amax = nm.mul(nm.sigmoid(theta_max), _group_reduce(nm.reduce_max, nm.abs_(w), scheme.axis))
        alpha = nm.clamp(nm.mul(amax, 2.0 / q), ALPHA_FLOOR, np.inf)
        beta = nm.as_tensor(np.full(alpha.shape, -(q + 1) / 2))
        return nm.clamp(w, nm.neg(amax), amax), alpha, beta
    f_min = nm.mul(nm.sigmoid(theta_min), _group_reduce(nm.reduce_min, w, scheme.axis))
    f_max = nm.mul(nm.sigmoid(theta_max), _group_reduce(nm.reduce_max, w, scheme.axis))
    if np.any(f_max.data < f_min.data):
        raise ValueError("clipping produced an empty weight range")
    alpha = nm.clamp(nm.mul(nm.sub(f_max, f_min), 1.0 / q), ALPHA_FLOOR, np.inf)
    beta = nm.div(f_min, alpha)
    return nm.clamp(w, f_min, f_max), alpha, beta


def clip_params_for(w_shape: tuple[int, ...], scheme: QuantScheme) -> ClipParams:
    return ClipParams.init(group_shape(w_shape, scheme.axis))


def weight_range(w: np.ndarray, cp: ClipParams, scheme: QuantScheme) -> RangeParams:
    """Non-differentiable weight range under clip params (used at export)."""
    _, alpha, beta = clip_weights(w, cp.theta_min, cp.theta_max, scheme)
    return RangeParams(alpha.data, beta.data, scheme.bits)
