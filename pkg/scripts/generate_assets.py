"""Regenerate the packaged binary assets.

Everything here is deterministic, so re-running produces byte-identical
files; the test suite and the acceptance criteria lean on these exact
bytes. Run from the repository root:

    python3 scripts/generate_assets.py
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from styleadv.attack import UntargetedConfig, untargeted_attack, write_transcript
from styleadv.classifiers import Prediction, QueryBudget
from styleadv.core import SeededRng, VideoTensor, write_vtf
from styleadv.features import save_weights, seeded_default_net
from styleadv.metrics import psnr, ssim, write_report

ASSETS = os.path.join(os.path.dirname(__file__), "..", "src", "styleadv", "assets")


def write_default_weights():
    net = seeded_default_net()
    save_weights(net, os.path.join(ASSETS, "default_weights.fwf"))
    print("default_weights.fwf")


def write_toy_pair():
    """A small content video and a style source with a very different palette.

    The content drifts a dark square to the right over a cool background;
    the style source is warm with hard diagonal stripes, so the transfer
    has real work to do on both color and texture.
    """
    rng = SeededRng(314, 0)
    t, size = 8, 16
    base = rng.uniform(0.55, 0.75, shape=(size, size, 3)).astype(np.float32)
    base[:, :, 0] *= 0.4  # suppress red: cool cast
    frames = []
    for i in range(t):
        frame = base.copy()
        x0 = 2 + i
        frame[5:11, x0:x0 + 4] = np.array([0.12, 0.10, 0.18], dtype=np.float32)
        frames.append(frame)
    video = VideoTensor(np.clip(np.stack(frames), 0.0, 1.0).astype(np.float32))
    write_vtf(video, os.path.join(ASSETS, "toy_video.vtf"))

    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    stripes = ((ii + jj) // 3 % 2).astype(np.float32)
    style = np.stack([0.85 + 0.1 * stripes,
                      0.35 + 0.25 * stripes,
                      0.10 + 0.08 * stripes], axis=2)
    style_video = VideoTensor(np.clip(np.repeat(style[None], 2, axis=0), 0.0, 1.0)
                              .astype(np.float32))
    write_vtf(style_video, os.path.join(ASSETS, "toy_style.vtf"))
    print("toy_video.vtf, toy_style.vtf")


class _SampleClassifier:
    """Deterministic stand-in used only to record the sample run."""

    def __init__(self, base):
        self.base = np.asarray(base, dtype=np.float64)

    def predict_many(self, videos):
        out = []
        for v in np.asarray(videos, dtype=np.float64):
            d = v - self.base
            if np.abs(d).max() >= 0.015:
                out.append(Prediction(label=1, confidence=0.9))
            else:
                out.append(Prediction(label=0,
                                      confidence=float(np.clip(0.5 + d.mean(), 0.01, 0.99))))
        return out


def write_sample_run():
    """A miniature finished run directory: one attacked video plus the
    report the `eval` subcommand must reproduce from it."""
    import json

    root = os.path.join(ASSETS, "sample_run")
    videodir = os.path.join(root, "videos", "sample_000")
    os.makedirs(videodir, exist_ok=True)

    rng = SeededRng(99, 0)
    original = VideoTensor(rng.uniform(0.2, 0.8, shape=(2, 8, 8, 3)).astype(np.float32))
    stylized = VideoTensor(np.clip(original.data * 0.9 + 0.05, 0.0, 1.0).astype(np.float32))

    handle = _SampleClassifier(stylized.data)
    budget = QueryBudget(limit=1000)
    cfg = UntargetedConfig(n=8, sigma=1e-3, eta=0.02, seed=17)
    outcome = untargeted_attack(handle, stylized, y0=0, budget=budget, cfg=cfg)
    assert outcome.state.success

    write_vtf(original, os.path.join(videodir, "original.vtf"))
    write_vtf(stylized, os.path.join(videodir, "stylized.vtf"))
    write_vtf(outcome.adversarial, os.path.join(videodir, "adversarial.vtf"))
    write_transcript(os.path.join(videodir, "transcript.jsonl"), outcome.transcript)
    record = {
        "video_id": "sample_000", "mode": "untargeted", "label": 0, "target": None,
        "style": "sample_style", "n": cfg.n,
        "success": True, "queries": outcome.state.queries,
        "queries_charged": outcome.state.queries_charged,
        "selection_queries": 0, "budget_used": budget.used,
        "rounds": outcome.state.rounds, "epsilon": outcome.state.epsilon,
        "final_label": outcome.state.label,
        "final_confidence": outcome.state.confidence,
        "outcome": "success",
    }
    with open(os.path.join(videodir, "record.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")

    rows = [{
        "video_id": "sample_000", "mode": "untargeted", "outcome": "success",
        "queries": outcome.state.queries,
        "ssim_ori_adv": ssim(original, outcome.adversarial),
        "ssim_sty_adv": ssim(stylized, outcome.adversarial),
        "psnr_ori_adv": psnr(original, outcome.adversarial),
        "psnr_sty_adv": psnr(stylized, outcome.adversarial),
    }]
    write_report(os.path.join(root, "report.csv"), rows)
    print(f"sample_run ({outcome.state.queries} queries)")


def main():
    os.makedirs(ASSETS, exist_ok=True)
    write_default_weights()
    write_toy_pair()
    write_sample_run()


if __name__ == "__main__":
    main()
