"""Style-transfer losses (value + analytic gradient) and the joint optimizer."""

import numpy as np
import pytest

from styleadv.core import ImageTensor, SeededRng, VideoTensor
from styleadv.errors import DivergenceError
from styleadv.features import backward_to_input, forward, gram, seeded_default_net
from styleadv.flow import FlowField, estimate_flow
from styleadv.transfer import (
    TransferConfig,
    TraceRow,
    clean_video_flows,
    content_loss,
    read_loss_trace,
    style_loss,
    temporal_loss,
    transfer,
    tv_loss,
    write_loss_trace,
)


def _finite_diff(objective, x, idx, h=1e-6):
    xp, xm = x.copy(), x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (objective(xp) - objective(xm)) / (2 * h)


def _spot_check(objective, grad, x, rng, spots=12, tol=1e-3):
    for _ in range(spots):
        idx = tuple(int(rng.integers(0, s)) for s in x.shape)
        fd = _finite_diff(objective, x, idx)
        denom = max(abs(fd), 1e-7)
        assert abs(grad[idx] - fd) / denom < tol, (idx, grad[idx], fd)


def test_content_loss_gradient():
    net = seeded_default_net()
    rng = SeededRng(21, 0)
    x = rng.uniform(shape=(8, 8, 3))
    ref = {net.content_tap: forward(net, rng.uniform(shape=(8, 8, 3)))[net.content_tap]}

    def objective(img):
        return content_loss(forward(net, img), ref, [net.content_tap])[0]

    _, tap_grads = content_loss(forward(net, x), ref, [net.content_tap])
    grad = backward_to_input(net, x, tap_grads)
    _spot_check(objective, grad, x, rng)


def test_style_loss_gradient():
    net = seeded_default_net()
    rng = SeededRng(22, 0)
    x = rng.uniform(shape=(8, 8, 3))
    style_feats = forward(net, rng.uniform(shape=(16, 16, 3)))
    targets = {k: gram(style_feats[k]) for k in net.style_taps}

    def objective(img):
        return style_loss(forward(net, img), targets)[0]

    _, tap_grads = style_loss(forward(net, x), targets)
    grad = backward_to_input(net, x, tap_grads)
    _spot_check(objective, grad, x, rng)


def test_empty_tap_contributes_nothing():
    # at 8x8 the deepest tap is empty; its style term must be zero with zero grad
    net = seeded_default_net()
    rng = SeededRng(23, 0)
    x = rng.uniform(shape=(8, 8, 3))
    style_feats = forward(net, rng.uniform(shape=(32, 32, 3)))
    targets = {"relu5_1": gram(style_feats["relu5_1"])}
    val, grads = style_loss(forward(net, x), targets)
    assert val == 0.0
    assert grads["relu5_1"].shape == (0, 0, 128)


def test_tv_loss_value_and_gradient():
    x = np.array([[[0.0], [1.0]], [[3.0], [3.0]]])  # 2x2x1
    val, grad = tv_loss(x)
    # vertical diffs: (0-3)^2 + (1-3)^2 ; horizontal: (0-1)^2 + (3-3)^2
    assert val == pytest.approx(9 + 4 + 1)
    rng = SeededRng(24, 0)
    y = rng.uniform(shape=(5, 6, 3))
    v, g = tv_loss(y)
    _spot_check(lambda z: tv_loss(z)[0], g, y, rng)


def test_temporal_loss_zero_on_static_scene():
    frame = SeededRng(25, 0).uniform(shape=(8, 8, 3))
    flow = FlowField(np.zeros((8, 8), np.float32), np.zeros((8, 8), np.float32),
                     np.ones((8, 8), np.float32))
    val, g_prev, g_next = temporal_loss(frame, frame, flow)
    assert val == 0.0
    assert np.all(g_prev == 0) and np.all(g_next == 0)


def test_temporal_loss_fully_occluded_is_free():
    rng = SeededRng(26, 0)
    a, b = rng.uniform(shape=(8, 8, 3)), rng.uniform(shape=(8, 8, 3))
    flow = FlowField(np.zeros((8, 8), np.float32), np.zeros((8, 8), np.float32),
                     np.zeros((8, 8), np.float32))
    val, g_prev, g_next = temporal_loss(a, b, flow)
    assert val == 0.0 and np.all(g_prev == 0) and np.all(g_next == 0)


def test_temporal_loss_gradients():
    rng = SeededRng(27, 0)
    a = rng.uniform(shape=(10, 10, 3))
    b = np.clip(a + 0.1 * rng.normal((10, 10, 3)), 0, 1)
    flow = estimate_flow(b, a)
    val, g_prev, g_next = temporal_loss(a, b, flow)
    assert val > 0
    _spot_check(lambda z: temporal_loss(z, b, flow)[0], g_prev, a, rng)
    _spot_check(lambda z: temporal_loss(a, z, flow)[0], g_next, b, rng)


def _toy_video(seed, t=4, size=16):
    rng = SeededRng(seed, 0)
    coarse = rng.uniform(shape=(size // 4, size // 4, 3))
    base = np.repeat(np.repeat(coarse, 4, axis=0), 4, axis=1)
    frames = [np.roll(base, i, axis=1) for i in range(t)]
    return VideoTensor(np.stack(frames).astype(np.float32))


def _style_image(seed, size=16):
    rng = SeededRng(seed, 1)
    return ImageTensor(rng.uniform(shape=(size, size, 3)).astype(np.float32))


def test_transfer_descends_and_stays_valid():
    net = seeded_default_net()
    video = _toy_video(30)
    cfg = TransferConfig(iterations=60)
    res = transfer(video, _style_image(30), net, cfg)
    assert len(res.trace) == 60
    assert res.trace[-1].total < res.trace[0].total
    assert res.stylized.data.min() >= 0 and res.stylized.data.max() <= 1
    assert res.stylized.data.shape == video.data.shape


def test_transfer_zero_iterations_returns_input():
    net = seeded_default_net()
    video = _toy_video(31)
    res = transfer(video, _style_image(31), net, TransferConfig(iterations=0))
    np.testing.assert_array_equal(res.stylized.data, video.data)


def test_lambda_zero_decomposes_per_frame():
    net = seeded_default_net()
    video = _toy_video(32, t=2)
    cfg = TransferConfig(iterations=25, lam=0.0)
    joint = transfer(video, _style_image(32), net, cfg)
    finals = []
    for i in range(2):
        single = VideoTensor(video.data[i:i + 1])
        res = transfer(single, _style_image(32), net, cfg)
        finals.append(res.trace[-1])
    joint_last = joint.trace[-1]
    split_total = finals[0].total + finals[1].total
    assert abs(joint_last.total - split_total) < 1e-4
    np.testing.assert_allclose(
        joint.stylized.data[0],
        transfer(VideoTensor(video.data[0:1]), _style_image(32), net, cfg).stylized.data[0],
        atol=1e-6,
    )


def test_temporal_term_shrinks_with_penalty():
    net = seeded_default_net()
    video = _toy_video(33)
    flows = clean_video_flows(video.data)
    with_t = transfer(video, _style_image(33), net, TransferConfig(iterations=40), flows=flows)
    without = transfer(video, _style_image(33), net,
                       TransferConfig(iterations=40, lam=0.0), flows=flows)

    def temporal_sum(stylized):
        return sum(
            temporal_loss(stylized.data[i], stylized.data[i + 1], flows[i])[0]
            for i in range(len(flows))
        )

    assert temporal_sum(with_t.stylized) <= temporal_sum(without.stylized)


def test_divergence_raises():
    net = seeded_default_net(gain=1e30)
    video = _toy_video(34, t=2)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergenceError):
        transfer(video, _style_image(34), net, TransferConfig(iterations=3))


def test_trace_csv_roundtrip(tmp_path):
    rows = [TraceRow(0, 1.5, 2.25, 0.125, 0.0625, 3.9375),
            TraceRow(1, 1.0, 2.0, 0.1, 0.05, 3.15)]
    p = tmp_path / "trace.csv"
    write_loss_trace(p, rows)
    back = read_loss_trace(p)
    assert back == rows
