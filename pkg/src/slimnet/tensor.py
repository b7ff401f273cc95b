"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is built from backward closures: each op records its parent
tensors plus a function mapping the upstream gradient to per-parent
gradients. Graphs are freed after ``backward`` unless ``retain_graph``
is passed, and gradients always accumulate (``+=``) into ``.grad``.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import GraphError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    """A dense n-dimensional float32 array, optionally tracked by autodiff.

    Attributes:
        data: flat-compatible ndarray (row-major, float32).
        grad: accumulated gradient ndarray of the same shape, or None.
        requires_grad: whether backward should produce a gradient here.
        name: optional label used in parameter-related error messages.
    """

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._ctx = None  # (parents, backward_fn, op_name) while graph alive
        self._freed = False

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_error(self)

    def detach(self):
        """Copy of the values with no graph reference and no grad tracking."""
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def backward(self, retain_graph=False):
        if self.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        if self._ctx is None:
            if self._freed:
                raise GraphError(
                    "backward over a freed graph; pass retain_graph=True to the "
                    "first backward if you need a second pass"
                )
            if self.requires_grad:
                self._accumulate(np.ones_like(self.data))
            return

        order = []
        visited = set()

        def topo(node):
            visited.add(id(node))
            if node._ctx is not None:
                for p in node._ctx[0]:
                    if id(p) not in visited:
                        topo(p)
            order.append(node)

        topo(self)

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._ctx is None:
                continue
            parents, backward_fn, _ = node._ctx
            for parent, pg in zip(parents, backward_fn(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if not retain_graph:
            for node in order:
                if node._ctx is not None:
                    node._ctx = None
                    node._freed = True

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _scalar_error(t):
    raise GraphError(f"item() requires a single-element tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward_fn, name):
    """Create a graph node from already-computed output data.

    Extension hook for fused operations (e.g. batch normalization) that
    are not part of the primitive op set. ``backward_fn(gout)`` must
    return one gradient array (or None) per parent, in order.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._ctx = (tuple(parents), backward_fn, name)
    return out


def _f64(x):
    return np.asarray(x, dtype=np.float64)


# --- primitive ops ---------------------------------------------------------

def matmul(a, b, transpose_b=False):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if a.shape[1] != inner_b:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} vs {b.shape}"
            f"{' (transposed)' if transpose_b else ''}"
        )
    out = K.matmul(a.data, b.data, transpose_b)

    def backward(g):
        ga, gb = K.matmul_backward(a.data, b.data, transpose_b, g)
        return ga, gb

    return make_op(out, (a, b), backward, "matmul")


def conv2d(x, w, stride=1, padding="same"):
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has {x.shape[1]} channels, "
            f"weight {w.shape} expects {w.shape[1]}"
        )
    stride, pad = _conv_attrs(w.shape[2:], stride, padding)
    K.conv_output_size(x.shape[2], w.shape[2], stride, pad)
    K.conv_output_size(x.shape[3], w.shape[3], stride, pad)
    out = K.conv2d(x.data, w.data, stride, pad)

    def backward(g):
        return K.conv2d_backward(x.data, w.data, stride, pad, g)

    return make_op(out, (x, w), backward, "conv2d")


def depthwise_conv2d(x, w, stride=1, padding="same"):
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != 1:
        raise ShapeError(
            f"depthwise_conv2d expects input [B,C,H,W] and weight [C,1,kh,kw], "
            f"got {x.shape} and {w.shape}"
        )
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"depthwise_conv2d channel mismatch: input {x.shape} vs weight {w.shape}"
        )
    stride, pad = _conv_attrs(w.shape[2:], stride, padding)
    K.conv_output_size(x.shape[2], w.shape[2], stride, pad)
    K.conv_output_size(x.shape[3], w.shape[3], stride, pad)
    out = K.depthwise_conv2d(x.data, w.data, stride, pad)

    def backward(g):
        return K.depthwise_conv2d_backward(x.data, w.data, stride, pad, g)

    return make_op(out, (x, w), backward, "depthwise_conv2d")


def _conv_attrs(kernel, stride, padding):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    pad = K.same_padding(kernel) if padding == "same" else int(padding)
    if pad < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    return int(stride), pad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add operands do not broadcast: {a.shape} vs {b.shape}") from None

    def backward(g):
        return K.unbroadcast(g, a.shape), K.unbroadcast(g, b.shape)

    return make_op(out, (a, b), backward, "add")


def mul_scalar(x, c):
    x = as_tensor(x)
    c = float(c)

    def backward(g):
        return (g * c,)

    return make_op(x.data * np.float32(c), (x,), backward, "mul_scalar")


def relu(x):
    x = as_tensor(x)
    out = K.relu(x.data)

    def backward(g):
        return (g * (x.data > 0),)

    return make_op(out, (x,), backward, "relu")


def avgpool(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avgpool expects a 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    out = K.avgpool(x.data)

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), (B, C, H, W)).astype(g.dtype),)

    return make_op(out, (x,), backward, "avgpool")


def softmax(x, axis=-1):
    x = as_tensor(x)
    out = K.softmax(x.data, axis)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return make_op(out, (x,), backward, "softmax")


def cross_entropy(logits, target):
    """Mean cross entropy from raw logits.

    ``target`` is either an integer label vector or a probability matrix
    matching the logits shape. Targets are constants: no gradient flows
    into them.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch, classes] logits, got {logits.shape}")
    probs = _target_probs(logits, target)
    out = np.asarray(K.cross_entropy(logits.data, probs), dtype=np.float32)

    def backward(g):
        return (K.cross_entropy_backward(logits.data, probs, g),)

    return make_op(out, (logits,), backward, "cross_entropy")


def _target_probs(logits, target):
    if isinstance(target, Tensor):
        target = target.data
    target = np.asarray(target)
    if target.ndim == 1:
        if target.shape[0] != logits.shape[0]:
            raise ShapeError(
                f"cross_entropy labels {target.shape} do not match logits {logits.shape}"
            )
        labels = target.astype(np.int64)
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ShapeError(
                f"cross_entropy labels out of range [0, {logits.shape[1]}): "
                f"{labels.min()}..{labels.max()}"
            )
        return K.one_hot(labels, logits.shape[1], logits.data.dtype)
    if target.shape != logits.shape:
        raise ShapeError(
            f"cross_entropy target {target.shape} does not match logits {logits.shape}"
        )
    return target.astype(logits.data.dtype)


def l1_loss(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("l1_loss", a, b)
    out = np.asarray(K.l1(a.data, b.data), dtype=np.float32)

    def backward(g):
        s = g * np.sign(a.data - b.data) / a.size
        return s, -s

    return make_op(out, (a, b), backward, "l1_loss")


def l2_loss(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("l2_loss", a, b)
    out = np.asarray(K.l2(a.data, b.data), dtype=np.float32)

    def backward(g):
        s = g * 2.0 * (a.data - b.data) / a.size
        return s, -s

    return make_op(out, (a, b), backward, "l2_loss")


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op} operands must match, got {a.shape} vs {b.shape}")


def slice_channels(x, count, axis=1):
    x = as_tensor(x)
    if not 0 <= axis < x.ndim:
        raise ShapeError(f"slice_channels axis {axis} out of range for shape {x.shape}")
    if not 1 <= count <= x.shape[axis]:
        raise ShapeError(
            f"slice_channels count {count} invalid for axis {axis} of shape {x.shape}"
        )
    index = (slice(None),) * axis + (slice(0, count),)
    out = x.data[index].copy()

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    return make_op(out, (x,), backward, "slice_channels")


_OPS = {
    "matmul": matmul,
    "conv2d": conv2d,
    "depthwise_conv2d": depthwise_conv2d,
    "add": add,
    "mul_scalar": mul_scalar,
    "relu": relu,
    "avgpool": avgpool,
    "softmax": softmax,
    "cross_entropy": cross_entropy,
    "l1_loss": l1_loss,
    "l2_loss": l2_loss,
    "slice_channels": slice_channels,
}

OP_KINDS = tuple(_OPS)


def forward_op(kind, inputs, attrs=None):
    """Dispatch one primitive operation by kind name."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ShapeError(f"unknown op kind {kind!r}; known kinds: {', '.join(_OPS)}") from None
    return fn(*inputs, **(attrs or {}))
