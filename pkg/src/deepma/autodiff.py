"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the DeepMA networks need are provided. Every op builds a
:class:`Tensor` node that remembers its parents and a closure mapping the
output gradient to per-parent gradients; :func:`backward` walks the graph in
reverse topological order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "InvalidShapeError",
    "parameter",
    "constant",
    "add",
    "mul",
    "scale",
    "reshape",
    "cast",
    "concat",
    "conv2d",
    "transposed_conv2d",
    "gdn",
    "igdn",
    "dense",
    "relu",
    "prelu",
    "sigmoid",
    "pointwise",
    "channel_mean",
    "scale_channels",
    "complex_scale",
    "mse",
    "backward",
    "grad",
    "AdamState",
    "adam_step",
    "numeric_grad",
    "gradcheck",
]

_node_ids = itertools.count()


class InvalidShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class Tensor:
    """Dense real array with an optional gradient record."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _backward=fn if needs else None, op=op)


def _check_rank(t: Tensor, rank: int, what: str) -> None:
    if t.data.ndim != rank:
        raise InvalidShapeError(f"{what}: expected rank {rank}, got shape {t.shape}")


# ----------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.data * k, (a,), lambda g: (g * k,), "scale")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise InvalidShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def cast(a: Tensor, dtype) -> Tensor:
    src = a.dtype
    return _node(a.data.astype(dtype), (a,), lambda g: (g.astype(src),), "cast")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


# ----------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[B,C,H,W] -> columns [B, C*kh*kw, Ho*Wo]."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`."""
    b, c, h, w = x_shape
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    cout, _, kh, kw = w.shape
    b, _, h, wd = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, padding)
    out = np.matmul(w.reshape(cout, -1), cols)  # B, Cout, Ho*Wo
    return out.reshape(b, cout, ho, wo), cols


def _conv_dx(g: np.ndarray, w: np.ndarray, x_shape, stride: int, padding: int) -> np.ndarray:
    cout, _, kh, kw = w.shape
    b, _, ho, wo = g.shape
    dcols = np.matmul(w.reshape(cout, -1).T, g.reshape(b, cout, ho * wo))
    return _col2im(dcols, x_shape, kh, kw, stride, padding, ho, wo)


def _conv_dw(cols: np.ndarray, g: np.ndarray, w_shape) -> np.ndarray:
    b, cout = g.shape[:2]
    return np.tensordot(g.reshape(b, cout, -1), cols, axes=([0, 2], [0, 2])).reshape(w_shape)


def _check_conv(x: Tensor, kernel: Tensor, bias: Tensor, cin_axis: int, cout_axis: int, stride: int, name: str):
    _check_rank(x, 4, f"{name} input")
    _check_rank(kernel, 4, f"{name} kernel")
    if stride not in (1, 2):
        raise InvalidShapeError(f"{name}: stride must be 1 or 2, got {stride}")
    if kernel.shape[cin_axis] != x.shape[1]:
        raise InvalidShapeError(
            f"{name}: input channels {x.shape[1]} do not match kernel in-channels {kernel.shape[cin_axis]}"
        )
    if bias.shape != (kernel.shape[cout_axis],):
        raise InvalidShapeError(f"{name}: bias shape {bias.shape} != ({kernel.shape[cout_axis]},)")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation; kernel layout ``[Cout, Cin, kh, kw]``."""
    _check_conv(x, kernel, bias, 1, 0, stride, "conv2d")
    kh, kw = kernel.shape[2:]
    h, w = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if kh > h or kw > w:
        raise InvalidShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {h}x{w}")
    out, cols = _conv_fwd(x.data, kernel.data, stride, padding)
    out += bias.data[None, :, None, None]
    x_shape = x.shape

    def back(g):
        return (
            _conv_dx(g, kernel.data, x_shape, stride, padding) if x.requires_grad else None,
            _conv_dw(cols, g, kernel.shape),
            g.sum(axis=(0, 2, 3)),
        )

    return _node(out, (x, kernel, bias), back, "conv2d")


def transposed_conv2d(
    x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0, output_padding: int = 0
) -> Tensor:
    """Adjoint of :func:`conv2d`; kernel layout ``[Cin, Cout, kh, kw]``.

    Output extent is ``(H - 1) * stride - 2 * padding + kh + output_padding``.
    """
    _check_conv(x, kernel, bias, 0, 1, stride, "transposed_conv2d")
    if not 0 <= output_padding < stride:
        raise InvalidShapeError(f"transposed_conv2d: output_padding {output_padding} must be < stride {stride}")
    b, _, h, w = x.shape
    _, cout, kh, kw = kernel.shape
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    if ho <= 0 or wo <= 0:
        raise InvalidShapeError(f"transposed_conv2d: non-positive output extent {ho}x{wo}")
    out_shape = (b, cout, ho, wo)
    out = _conv_dx(x.data, kernel.data, out_shape, stride, padding)
    out += bias.data[None, :, None, None]

    def back(g):
        dx, cols = _conv_fwd(g, kernel.data, stride, padding)
        dw = np.tensordot(x.data.reshape(b, x.shape[1], -1), cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _node(out, (x, kernel, bias), back, "transposed_conv2d")


# ----------------------------------------------------------------------------
# normalisation layers


def _check_gdn(x: Tensor, beta: Tensor, gamma: Tensor, name: str) -> None:
    _check_rank(x, 4, f"{name} input")
    c = x.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise InvalidShapeError(f"{name}: beta {beta.shape} / gamma {gamma.shape} incompatible with {c} channels")


def _gdn_norm(x: np.ndarray, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return beta[None, :, None, None] + np.einsum("ij,bjhw->bihw", gamma, x * x, optimize=True)


def gdn(x: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    """``x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``. Positivity of beta/gamma is the caller's job."""
    _check_gdn(x, beta, gamma, "gdn")
    n = _gdn_norm(x.data, beta.data, gamma.data)
    r = 1.0 / np.sqrt(n)
    out = x.data * r

    def back(g):
        # d out_i / d n_i = -x_i / 2 n_i^{3/2}
        gn = -0.5 * g * out * r * r
        dx = g * r + 2.0 * x.data * np.einsum("ij,bihw->bjhw", gamma.data, gn, optimize=True)
        dgamma = np.einsum("bihw,bjhw->ij", gn, x.data * x.data, optimize=True)
        return dx, gn.sum(axis=(0, 2, 3)), dgamma

    return _node(out, (x, beta, gamma), back, "gdn")


def igdn(x: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    """``x_i * sqrt(beta_i + sum_j gamma_ij x_j^2)``."""
    _check_gdn(x, beta, gamma, "igdn")
    n = _gdn_norm(x.data, beta.data, gamma.data)
    s = np.sqrt(n)
    out = x.data * s

    def back(g):
        gn = 0.5 * g * x.data / s
        dx = g * s + 2.0 * x.data * np.einsum("ij,bihw->bjhw", gamma.data, gn, optimize=True)
        dgamma = np.einsum("bihw,bjhw->ij", gn, x.data * x.data, optimize=True)
        return dx, gn.sum(axis=(0, 2, 3)), dgamma

    return _node(out, (x, beta, gamma), back, "igdn")


# ----------------------------------------------------------------------------
# dense and activations


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    _check_rank(x, 2, "dense input")
    if weight.data.ndim != 2 or weight.shape[0] != x.shape[1] or bias.shape != (weight.shape[1],):
        raise InvalidShapeError(f"dense: input {x.shape}, weight {weight.shape}, bias {bias.shape} incompatible")
    out = x.data @ weight.data + bias.data

    def back(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(out, (x, weight, bias), back, "dense")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Per-channel leaky slope; ``alpha`` has one entry per axis-1 channel."""
    if alpha.shape != (x.shape[1],):
        raise InvalidShapeError(f"prelu: alpha {alpha.shape} vs {x.shape[1]} channels")
    bshape = (1, -1) + (1,) * (x.data.ndim - 2)
    a = alpha.data.reshape(bshape)
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)
    axes = tuple(i for i in range(x.data.ndim) if i != 1)

    def back(g):
        return np.where(pos, g, a * g), np.where(pos, 0.0, g * x.data).sum(axis=axes)

    return _node(out, (x, alpha), back, "prelu")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def pointwise(x: Tensor, kind: str, alpha: Tensor | None = None) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "prelu":
        if alpha is None:
            raise ValueError("prelu needs alpha")
        return prelu(x, alpha)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------------------
# reductions and losses


def channel_mean(x: Tensor) -> Tensor:
    _check_rank(x, 4, "channel_mean input")
    b, c, h, w = x.shape
    inv = 1.0 / (h * w)
    return _node(
        x.data.mean(axis=(2, 3)),
        (x,),
        lambda g: (np.broadcast_to((g * inv)[:, :, None, None], (b, c, h, w)).copy(),),
        "channel_mean",
    )


def scale_channels(x: Tensor, w: Tensor) -> Tensor:
    """Multiply each ``[b, c]`` feature plane of ``x`` by ``w[b, c]``."""
    _check_rank(x, 4, "scale_channels input")
    if w.shape != x.shape[:2]:
        raise InvalidShapeError(f"scale_channels: weights {w.shape} vs features {x.shape}")
    wb = w.data[:, :, None, None]

    def back(g):
        return g * wb, (g * x.data).sum(axis=(2, 3))

    return _node(x.data * wb, (x, w), back, "scale_channels")


def complex_scale(x: Tensor, c) -> Tensor:
    """Multiply interleaved ``(re, im)`` pairs of ``x[B, 2K]`` by complex ``c`` (scalar or per row).

    ``c`` is a constant; only ``x`` receives a gradient.
    """
    _check_rank(x, 2, "complex_scale input")
    if x.shape[1] % 2:
        raise InvalidShapeError(f"complex_scale: odd feature length {x.shape[1]}")
    c = np.asarray(c, dtype=np.complex128)
    c = np.broadcast_to(c.reshape(-1, 1) if c.ndim else c, (x.shape[0], 1))
    a = c.real.astype(x.dtype)
    b = c.imag.astype(x.dtype)
    re, im = x.data[:, 0::2], x.data[:, 1::2]
    out = np.empty_like(x.data)
    out[:, 0::2] = a * re - b * im
    out[:, 1::2] = b * re + a * im

    def back(g):
        gr, gi = g[:, 0::2], g[:, 1::2]
        dx = np.empty_like(g)
        dx[:, 0::2] = a * gr + b * gi
        dx[:, 1::2] = a * gi - b * gr
        return (dx,)

    return _node(out, (x,), back, "complex_scale")


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=a.dtype)

    def back(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _node(out, (a, b), back, "mse")


# ----------------------------------------------------------------------------
# reverse pass


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.dtype, copy=False) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``params``; zeros for parameters off the path."""
    for p in params:
        p.grad = None
    backward(loss)
    out = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    for p in params:
        p.grad = None
    return out


# ----------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place Adam update with bias correction. ``lr == 0`` leaves params bit-identical."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr == 0.0:
            continue
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.dtype, copy=False)
    return state


# ----------------------------------------------------------------------------
# finite differences


def numeric_grad(fn: Callable[[], Tensor], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. array ``x`` (perturbed in place)."""
    if not x.flags.c_contiguous:
        raise ValueError("numeric_grad perturbs x in place and needs a C-contiguous array")
    out = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    res = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn().data)
        flat[i] = orig - eps
        fm = float(fn().data)
        flat[i] = orig
        res[i] = (fp - fm) / (2.0 * eps)
    return out


@dataclass
class GradcheckResult:
    max_rel_err: float
    per_input: list[float] = field(default_factory=list)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def gradcheck(fn: Callable[..., Tensor], inputs: Iterable[np.ndarray], eps: float = 1e-3, seed: int = 0) -> GradcheckResult:
    """Compare reverse-mode gradients of ``sum(R * fn(*inputs))`` with central differences.

    ``R`` is a fixed random projection so that every output element is probed.
    Relative error per input is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    Inputs must be float64.
    """
    arrays = [np.array(a, dtype=np.float64, order="C") for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    proj = Tensor(np.random.default_rng(seed).standard_normal(fn(*leaves).shape))

    def scalar():
        return Tensor((fn(*leaves).data * proj.data).sum())

    analytic = grad(_project(fn(*leaves), proj), leaves)
    errs = []
    for leaf, a in zip(leaves, analytic):
        num = numeric_grad(scalar, leaf.data, eps)
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-300)
        errs.append(float(np.linalg.norm(a - num) / denom))
    return GradcheckResult(max(errs), errs)


def _project(y: Tensor, proj: Tensor) -> Tensor:
    prod = mul(y, proj)
    flat = reshape(prod, (1, -1))
    ones = Tensor(np.ones((flat.shape[1], 1)))
    return reshape(dense(flat, ones, Tensor(np.zeros(1))), ())
