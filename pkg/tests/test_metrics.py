"""PSNR, SSIM, attack statistics, and the report CSV."""

import os
import tempfile

import numpy as np
import pytest

from styleadv.core import SeededRng, VideoTensor
from styleadv.errors import CorruptFileError, PreconditionError, TensorValidationError
from styleadv.metrics import (
    REPORT_COLUMNS, attack_stats, psnr, read_report, ssim, write_report,
)

# direct evaluation of 10 log10(255^2 / (0 + 1e-5)); the floor keeps
# identical videos finite instead of infinite
PSNR_IDENTICAL = 98.13080360867912


def solid(value, shape=(3, 8, 8, 3)):
    return VideoTensor(np.full(shape, value, dtype=np.float32))


def random_video(seed, shape=(2, 12, 10, 3)):
    return VideoTensor(SeededRng(seed, 0).uniform(shape=shape).astype(np.float32))


def test_psnr_identical_hits_the_floor_value():
    v = random_video(1)
    assert psnr(v, v) == pytest.approx(PSNR_IDENTICAL, abs=1e-9)


def test_psnr_constant_offset_hand_value():
    # 0.5 and 0.625 are exact in float32, so the per-frame MSE is exactly
    # (0.125 * 255)^2 = 1016.015625
    assert psnr(solid(0.5), solid(0.625)) == pytest.approx(18.06179969709401, abs=1e-9)


def test_psnr_strictly_decreasing_in_mse():
    base = solid(0.5)
    values = [psnr(base, solid(0.5 + d)) for d in (0.05, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(TensorValidationError, match="shapes differ"):
        psnr(solid(0.5), solid(0.5, shape=(3, 8, 8, 1)))


def test_ssim_identical_is_exactly_one():
    v = random_video(2)
    assert ssim(v, v) == 1.0


def test_ssim_constant_pair_hand_value():
    # flat windows: cov and variances vanish, leaving
    # (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1) with mu = 127.5, 159.375
    assert ssim(solid(0.5), solid(0.625)) == pytest.approx(0.9756135627609349, abs=1e-12)


def test_ssim_matches_naive_window_loop():
    a = random_video(3)
    b = random_video(4)
    x = a.data.astype(np.float64) * 255.0
    y = b.data.astype(np.float64) * 255.0
    C1, C2 = (0.01 * 255.0) ** 2, (0.03 * 255.0) ** 2
    frames = []
    for t in range(x.shape[0]):
        chans = []
        for c in range(x.shape[3]):
            vals = []
            for i in range(x.shape[1] - 7):
                for j in range(x.shape[2] - 7):
                    wa = x[t, i:i + 8, j:j + 8, c]
                    wb = y[t, i:i + 8, j:j + 8, c]
                    ma, mb = wa.mean(), wb.mean()
                    va, vb = wa.var(), wb.var()
                    cov = (wa * wb).mean() - ma * mb
                    vals.append(((2 * ma * mb + C1) * (2 * cov + C2))
                                / ((ma * ma + mb * mb + C1) * (va + vb + C2)))
            chans.append(np.mean(vals))
        frames.append(np.mean(chans))
    assert ssim(a, b) == pytest.approx(float(np.mean(frames)), abs=1e-12)


def test_ssim_symmetric_and_below_one_for_different_inputs():
    a, b = random_video(5), random_video(6)
    assert ssim(a, b) == ssim(b, a)
    assert ssim(a, b) < 1.0


def test_ssim_inverted_high_contrast_below_half():
    # checkerboard against its negative
    grid = np.indices((8, 8)).sum(axis=0) % 2
    frame = np.repeat(grid[:, :, None], 3, axis=2).astype(np.float32)
    video = VideoTensor(frame[None])
    inverted = VideoTensor(1.0 - frame[None])
    assert ssim(video, inverted) < 0.5


def test_ssim_window_too_small():
    v = solid(0.5, shape=(2, 4, 4, 3))
    with pytest.raises(PreconditionError, match="window"):
        ssim(v, v)


def test_attack_stats_hand_fixture():
    records = [
        {"success": True, "queries": 100},
        {"success": False, "queries": 500},
        {"success": True, "queries": 50},
    ]
    stats = attack_stats(records)
    assert stats == {"count": 3, "successes": 2, "asr": 2 / 3,
                     "min_queries": 50, "max_queries": 100, "avg_queries": 75.0}
    # invariant to record order
    assert attack_stats(records[::-1]) == stats


def test_attack_stats_none_markers():
    none_succ = attack_stats([{"success": False, "queries": 9}])
    assert none_succ["asr"] == 0.0
    assert none_succ["min_queries"] is None
    assert none_succ["max_queries"] is None
    assert none_succ["avg_queries"] is None
    empty = attack_stats([])
    assert empty["count"] == 0 and empty["asr"] is None


def test_report_roundtrip_and_errors():
    rows = [
        {"video_id": "v0", "mode": "untargeted", "outcome": "success", "queries": 66,
         "ssim_ori_adv": 0.93, "ssim_sty_adv": 0.99, "psnr_ori_adv": 21.5,
         "psnr_sty_adv": 33.25},
        {"video_id": "v1", "mode": "targeted", "outcome": "error", "queries": None,
         "ssim_ori_adv": None, "ssim_sty_adv": None, "psnr_ori_adv": None,
         "psnr_sty_adv": None},
    ]
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "report.csv")
        write_report(path, rows)
        back = read_report(path)
        assert back == rows
        with open(path, "rb") as fh:
            first = fh.read()
        write_report(path, back)
        with open(path, "rb") as fh:
            assert fh.read() == first  # byte-stable rewrite

        bad = os.path.join(tmp, "bad.csv")
        with open(bad, "w", encoding="utf-8") as fh:
            fh.write("nope,nope\n")
        with pytest.raises(CorruptFileError, match="header"):
            read_report(bad)
        with open(bad, "w", encoding="utf-8") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            fh.write("v0,untargeted,success,abc,,,,\n")
        with pytest.raises(CorruptFileError, match="bad cell"):
            read_report(bad)
