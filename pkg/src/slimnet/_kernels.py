"""Dtype-generic numpy kernels behind the autodiff ops.

Every function here works on plain ndarrays and preserves the input dtype,
so the finite-difference test oracle can evaluate the same forward math in
float64 while the tensor layer runs float32.
"""

import numpy as np

from .errors import ShapeError


def same_padding(kernel):
    """Padding that preserves spatial size at stride 1 (odd kernels only)."""
    kh, kw = kernel
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(
            f"'same' padding requires odd kernel sizes, got {kernel}; "
            "pass an explicit integer padding instead"
        )
    return kh // 2


def conv_output_size(size, kernel, stride, padding):
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"kernel {kernel} with stride {stride}, padding {padding} does not fit "
            f"spatial extent {size}"
        )
    return out


def _windows(x, kh, kw, stride, padding):
    """Sliding conv windows of x as a [B, C, OH, OW, kh, kw] view."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def matmul(a, b, transpose_b=False):
    return a @ (b.T if transpose_b else b)


def matmul_backward(a, b, transpose_b, gout):
    if transpose_b:
        return gout @ b, gout.T @ a
    return gout @ b.T, a.T @ gout


def conv2d(x, w, stride, padding):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, padding)
    return np.einsum("bcxykl,ockl->boxy", win, w)


def conv2d_backward(x, w, stride, padding, gout):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, padding)
    gw = np.einsum("bcxykl,boxy->ockl", win, gout)
    gx = _conv_input_grad(x.shape, w, stride, padding, gout, depthwise=False)
    return gx, gw


def depthwise_conv2d(x, w, stride, padding):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, padding)
    return np.einsum("bcxykl,ckl->bcxy", win, w[:, 0])


def depthwise_conv2d_backward(x, w, stride, padding, gout):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, padding)
    gw = np.einsum("bcxykl,bcxy->ckl", win, gout)[:, None]
    gx = _conv_input_grad(x.shape, w, stride, padding, gout, depthwise=True)
    return gx, gw


def _conv_input_grad(xshape, w, stride, padding, gout, depthwise):
    B, C, H, W = xshape
    kh, kw = w.shape[2], w.shape[3]
    OH, OW = gout.shape[2], gout.shape[3]
    gxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            if depthwise:
                contrib = gout * w[:, 0, i, j][None, :, None, None]
            else:
                contrib = np.einsum("boxy,oc->bcxy", gout, w[:, :, i, j])
            gxp[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += contrib
    if padding:
        return gxp[:, :, padding : padding + H, padding : padding + W]
    return gxp


def relu(x):
    return np.maximum(x, np.zeros((), dtype=x.dtype))


def avgpool(x):
    return x.mean(axis=(2, 3))


def softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, target_probs):
    ls = log_softmax(logits, axis=-1)
    return -(target_probs * ls).sum(axis=-1).mean()


def cross_entropy_backward(logits, target_probs, gout):
    p = softmax(logits, axis=-1)
    return gout * (p - target_probs) / logits.shape[0]


def one_hot(labels, num_classes, dtype):
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def l1(a, b):
    return np.abs(a - b).mean()


def l2(a, b):
    return np.square(a - b).mean()


def unbroadcast(grad, shape):
    """Reduce grad back to the given (broadcast-source) shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def batchnorm_train(x, scale, bias, eps):
    """Normalize by batch statistics; returns (out, batch_mean, batch_var, xhat)."""
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    shape = _channel_shape(x.ndim)
    xhat = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps)
    return scale.reshape(shape) * xhat + bias.reshape(shape), mean, var, xhat


def batchnorm_train_backward(xhat, var, scale, eps, gout):
    axes = (0,) if gout.ndim == 2 else (0, 2, 3)
    shape = _channel_shape(gout.ndim)
    gscale = (gout * xhat).sum(axis=axes)
    gbias = gout.sum(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    gxhat = gout * scale.reshape(shape)
    gx = (
        gxhat
        - gxhat.mean(axis=axes).reshape(shape)
        - xhat * (gxhat * xhat).mean(axis=axes).reshape(shape)
    ) * inv_std.reshape(shape)
    return gx, gscale, gbias


def batchnorm_eval(x, scale, bias, mean, var, eps):
    shape = _channel_shape(x.ndim)
    xhat = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps)
    return scale.reshape(shape) * xhat + bias.reshape(shape), xhat


def batchnorm_eval_backward(xhat, var, scale, eps, gout):
    axes = (0,) if gout.ndim == 2 else (0, 2, 3)
    shape = _channel_shape(gout.ndim)
    gscale = (gout * xhat).sum(axis=axes)
    gbias = gout.sum(axis=axes)
    gx = gout * (scale / np.sqrt(var + eps)).reshape(shape)
    return gx, gscale, gbias


def _channel_shape(ndim):
    return (1, -1) if ndim == 2 else (1, -1, 1, 1)
