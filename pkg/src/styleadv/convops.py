"""GEMM-backed 3x3 convolution, relu, and 2x2 average pooling with backward passes.

All ops take channels-last batches (N, H, W, C) and preserve the input dtype.
Convolution is stride 1 with zero padding 1, so spatial size is preserved;
pooling floor-halves H and W (an odd trailing row/column is dropped and
receives zero gradient). im2col buffers are chunked over the batch axis to
bound peak memory.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_CHUNK_BYTES = 64 * 1024 * 1024


def _frames_per_chunk(h, w, cin, itemsize):
    per_frame = max(1, h * w * cin * 9 * itemsize)
    return max(1, _CHUNK_BYTES // per_frame)


def _im2col(x):
    # (N, H, W, C) -> (N*H*W, C*9) with column order (c, ky, kx)
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return win.reshape(n * h * w, c * 9)


def conv3x3_forward(x, w, b):
    """x (N,H,W,Cin), w (Cout,Cin,3,3), b (Cout,) -> (N,H,W,Cout)."""
    n, h, w_, cin = x.shape
    cout = w.shape[0]
    if w.shape != (cout, cin, 3, 3):
        raise ValueError(f"kernel shape {w.shape} does not fit input channels {cin}")
    out = np.empty((n, h, w_, cout), dtype=x.dtype)
    if h == 0 or w_ == 0:
        return out
    w2 = w.reshape(cout, cin * 9).T.astype(x.dtype, copy=False)
    bb = b.astype(x.dtype, copy=False)
    step = _frames_per_chunk(h, w_, cin, x.dtype.itemsize)
    for s in range(0, n, step):
        e = min(n, s + step)
        cols = _im2col(x[s:e])
        out[s:e] = (cols @ w2 + bb).reshape(e - s, h, w_, cout)
    return out


def conv3x3_backward_data(grad_out, w):
    """Gradient wrt the conv input: a 3x3 conv with flipped, transposed kernels."""
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (Cin, Cout, 3, 3)
    zeros = np.zeros(w_flip.shape[0], dtype=grad_out.dtype)
    return conv3x3_forward(grad_out, np.ascontiguousarray(w_flip), zeros)


def conv3x3_backward_weights(x, grad_out):
    """Gradients wrt kernel and bias given the layer input and output gradient."""
    n, h, w_, cin = x.shape
    cout = grad_out.shape[3]
    gw = np.zeros((cout, cin * 9), dtype=x.dtype)
    gb = grad_out.sum(axis=(0, 1, 2))
    if h and w_:
        step = _frames_per_chunk(h, w_, cin, x.dtype.itemsize)
        for s in range(0, n, step):
            e = min(n, s + step)
            cols = _im2col(x[s:e])
            go = grad_out[s:e].reshape(-1, cout)
            gw += go.T @ cols
    return gw.reshape(cout, cin, 3, 3), gb


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def avgpool2_forward(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        return np.zeros((n, h2, w2, c), dtype=x.dtype)
    v = x[:, :h2 * 2, :w2 * 2].reshape(n, h2, 2, w2, 2, c)
    return v.mean(axis=(2, 4))


def avgpool2_backward(grad_out, in_shape):
    n, h, w, c = in_shape
    h2, w2 = h // 2, w // 2
    grad_in = np.zeros(in_shape, dtype=grad_out.dtype)
    if h2 and w2:
        quarter = grad_out * grad_out.dtype.type(0.25)
        spread = np.repeat(np.repeat(quarter, 2, axis=1), 2, axis=2)
        grad_in[:, :h2 * 2, :w2 * 2] = spread
    return grad_in
