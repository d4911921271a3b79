"""Temporally consistent video style transfer.

The whole video is optimized jointly over

    sum_i ( alpha * content_i + beta * style_i + gamma * tv_i )
        + lambda * sum_i temporal(i, i+1)

starting from the clean video itself. Content compares deep features against
the clean frame, style matches Gram statistics of the style image at every
style tap, tv smooths each frame, and the temporal term penalizes deviation
from the previous stylized frame warped along the *clean* video's optical
flow, gated by its occlusion mask. Pixels are clamped to [0, 1] after every
update step, so the result is always a valid video.

Each loss helper returns both the value and the gradient with respect to its
immediate input, so the optimizer below assembles the full pixel gradient
from one cached forward pass per iteration; the trace rows it emits carry the
weighted term values (their sum is the total that is being minimized).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import VideoTensor
from .errors import DivergenceError, PreconditionError
from .features import backward_from_cache, forward, forward_all, gram
from .flow import estimate_flow, warp, warp_transpose


@dataclass
class TransferConfig:
    alpha: float = 10.0     # content weight
    beta: float = 50.0      # style weight (75 for targeted runs)
    gamma: float = 1e-3     # tv weight
    lam: float = 1e3        # temporal weight
    iterations: int = 300
    step: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class TraceRow:
    iteration: int
    content: float
    style: float
    tv: float
    temporal: float
    total: float


@dataclass
class TransferResult:
    stylized: VideoTensor
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# losses (value + gradient wrt immediate input)
# ---------------------------------------------------------------------------

def content_loss(taps, ref_taps, tap_names):
    """Mean-squared feature distance, averaged per scalar within each tap."""
    value = 0.0
    grads = {}
    for name in tap_names:
        f, r = taps[name], ref_taps[name]
        norm = f.dtype.type(1.0 / f[0].size) if f.ndim == 4 else f.dtype.type(1.0 / f.size)
        d = f - r
        value += float(norm * (d * d).sum())
        grads[name] = 2 * norm * d
    return value, grads


def style_loss(taps, target_grams):
    """Frobenius distance between Gram matrices, 1/C^2 per tap.

    Batched taps (T, H, W, C) score every frame against the same target and
    sum over frames.
    """
    value = 0.0
    grads = {}
    for name, g_target in target_grams.items():
        f = taps[name]
        frames = f if f.ndim == 4 else f[None]
        gmaps = np.zeros_like(frames)
        c = frames.shape[3]
        m = frames.shape[1] * frames.shape[2]
        if m == 0:
            grads[name] = gmaps if f.ndim == 4 else gmaps[0]
            continue
        inv_c2 = 1.0 / (c * c)
        for t in range(frames.shape[0]):
            g = gram(frames[t])
            d = g - g_target
            value += float(inv_c2 * (d * d).sum())
            flat = frames[t].reshape(m, c)
            gmaps[t] = (4.0 * inv_c2 / m * (flat @ d)).reshape(frames[t].shape)
        grads[name] = gmaps if f.ndim == 4 else gmaps[0]
    return value, grads


def tv_loss(frames):
    """Anisotropic total variation; boundary differences are simply omitted."""
    x = frames if frames.ndim == 4 else frames[None]
    dv = x[:, 1:, :, :] - x[:, :-1, :, :]
    dh = x[:, :, 1:, :] - x[:, :, :-1, :]
    value = float((dv * dv).sum() + (dh * dh).sum())
    grad = np.zeros_like(x)
    grad[:, 1:] += 2 * dv
    grad[:, :-1] -= 2 * dv
    grad[:, :, 1:] += 2 * dh
    grad[:, :, :-1] -= 2 * dh
    return value, (grad if frames.ndim == 4 else grad[0])


def temporal_loss(prev, nxt, flow):
    """Masked distance between the next frame and the warped previous frame."""
    warped = warp(prev, flow)
    norm = 1.0 / prev.size
    o = flow.mask[..., None]
    d = o * (nxt - warped)
    value = float(norm * (d * (nxt - warped)).sum())
    g_next = (2 * norm) * d
    g_prev = -warp_transpose((2 * norm) * d, flow, prev.shape).astype(prev.dtype, copy=False)
    return value, g_prev.astype(prev.dtype, copy=False), g_next.astype(nxt.dtype, copy=False)


# ---------------------------------------------------------------------------
# joint optimization
# ---------------------------------------------------------------------------

def clean_video_flows(video_data):
    """Flow from each frame to its predecessor, computed once on clean frames."""
    return [
        estimate_flow(video_data[i + 1], video_data[i])
        for i in range(video_data.shape[0] - 1)
    ]


def transfer(video, style_image, net, cfg=None, flows=None):
    """Stylize a video against one style image; returns result + loss trace."""
    cfg = cfg or TransferConfig()
    if net.content_tap is None or not net.style_taps:
        raise PreconditionError("feature net lacks content/style taps")

    x0 = video.data.astype(np.float32)
    t = x0.shape[0]
    if flows is None:
        flows = clean_video_flows(x0)
    if len(flows) != t - 1:
        raise PreconditionError(f"expected {t - 1} flow fields, got {len(flows)}")

    content_names = [net.content_tap]
    ref_taps = {k: v for k, v in forward(net, x0).items() if k in content_names}
    style_taps_img = forward(net, style_image)
    target_grams = {
        name: gram(style_taps_img[name])
        for name in net.style_taps
        if style_taps_img[name].size
    }

    xs = x0.copy()
    mom = np.zeros_like(xs)
    vel = np.zeros_like(xs)
    trace = []
    for it in range(cfg.iterations):
        acts = forward_all(net, xs)
        by_name = {l.name: acts[i + 1] for i, l in enumerate(net.layers)}

        c_val, c_grads = content_loss(by_name, ref_taps, content_names)
        s_val, s_grads = style_loss(by_name, target_grams)
        t_val, t_grad = tv_loss(xs)

        tap_grads = {}
        for name, g in c_grads.items():
            tap_grads[name] = cfg.alpha * g
        for name, g in s_grads.items():
            tap_grads[name] = tap_grads.get(name, 0) + cfg.beta * g
        grad = backward_from_cache(net, acts, tap_grads)
        grad += cfg.gamma * t_grad

        w_val = 0.0
        for i, fl in enumerate(flows):
            v, g_prev, g_next = temporal_loss(xs[i], xs[i + 1], fl)
            w_val += v
            grad[i] += cfg.lam * g_prev
            grad[i + 1] += cfg.lam * g_next

        row = TraceRow(
            iteration=it,
            content=cfg.alpha * c_val,
            style=cfg.beta * s_val,
            tv=cfg.gamma * t_val,
            temporal=cfg.lam * w_val,
            total=cfg.alpha * c_val + cfg.beta * s_val + cfg.gamma * t_val + cfg.lam * w_val,
        )
        if not np.isfinite(row.total):
            raise DivergenceError(f"non-finite loss at iteration {it}", iteration=it)
        trace.append(row)

        mom = cfg.beta1 * mom + (1 - cfg.beta1) * grad
        vel = cfg.beta2 * vel + (1 - cfg.beta2) * grad * grad
        mhat = mom / (1 - cfg.beta1 ** (it + 1))
        vhat = vel / (1 - cfg.beta2 ** (it + 1))
        xs = xs - cfg.step * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        xs = np.clip(xs, 0.0, 1.0).astype(np.float32)

    return TransferResult(stylized=VideoTensor(xs), trace=trace)


# ---------------------------------------------------------------------------
# trace CSV
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("iteration", "content", "style", "tv", "temporal", "total")


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([r.iteration, r.content, r.style, r.tv, r.temporal, r.total])


def read_loss_trace(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(TraceRow(
                iteration=int(rec["iteration"]),
                content=float(rec["content"]),
                style=float(rec["style"]),
                tv=float(rec["tv"]),
                temporal=float(rec["temporal"]),
                total=float(rec["total"]),
            ))
    return rows
