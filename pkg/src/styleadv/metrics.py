"""Perceptual metrics on the 8-bit scale plus attack summary statistics.

Videos are compared frame by frame after mapping [0, 1] floats onto the
0..255 range; PSNR and SSIM are each computed per frame and averaged over
the video. SSIM uses a plain 8x8 uniform window over valid positions (no
padding, no Gaussian), per channel, with the usual stabilizers
C1 = (0.01 * 255)^2 and C2 = (0.03 * 255)^2.
"""

import csv

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptFileError, PreconditionError, TensorValidationError

PSNR_FLOOR = 1e-5  # keeps identical frames finite
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def _paired_frames(a, b):
    if a.data.shape != b.data.shape:
        raise TensorValidationError(f"video shapes differ: {a.data.shape} vs {b.data.shape}")
    return (np.asarray(a.data, dtype=np.float64) * 255.0,
            np.asarray(b.data, dtype=np.float64) * 255.0)


def psnr(a, b):
    """Mean over frames of 10 log10(255^2 / (MSE + 1e-5))."""
    x, y = _paired_frames(a, b)
    mse = ((x - y) ** 2).mean(axis=(1, 2, 3))
    return float(np.mean(10.0 * np.log10(255.0 ** 2 / (mse + PSNR_FLOOR))))


def _ssim_frame(x, y):
    # x, y: (H, W, C) on the 255 scale; windows slide over H and W only
    vals = []
    for c in range(x.shape[2]):
        a = sliding_window_view(x[:, :, c], (SSIM_WINDOW, SSIM_WINDOW))
        b = sliding_window_view(y[:, :, c], (SSIM_WINDOW, SSIM_WINDOW))
        mu_a = a.mean(axis=(-2, -1))
        mu_b = b.mean(axis=(-2, -1))
        aa = (a * a).mean(axis=(-2, -1)) - mu_a * mu_a
        bb = (b * b).mean(axis=(-2, -1)) - mu_b * mu_b
        ab = (a * b).mean(axis=(-2, -1)) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * ab + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (aa + bb + SSIM_C2)
        vals.append((num / den).mean())
    return float(np.mean(vals))


def ssim(a, b):
    """Mean over frames of the channel-averaged valid-window SSIM."""
    x, y = _paired_frames(a, b)
    if x.shape[1] < SSIM_WINDOW or x.shape[2] < SSIM_WINDOW:
        raise PreconditionError(
            f"frames {x.shape[1]}x{x.shape[2]} are smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(np.mean([_ssim_frame(x[t], y[t]) for t in range(x.shape[0])]))


def attack_stats(records):
    """Success rate over all records; query statistics over successes only.

    Each record needs boolean `success` and integer `queries` entries.
    With no records the rate is None; with no successes the query fields
    are None markers rather than zeros.
    """
    total = len(records)
    succ = [r["queries"] for r in records if r["success"]]
    return {
        "count": total,
        "successes": len(succ),
        "asr": (len(succ) / total) if total else None,
        "min_queries": min(succ) if succ else None,
        "max_queries": max(succ) if succ else None,
        "avg_queries": (sum(succ) / len(succ)) if succ else None,
    }


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("video_id", "mode", "outcome", "queries",
                  "ssim_ori_adv", "ssim_sty_adv", "psnr_ori_adv", "psnr_sty_adv")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(path, rows):
    """One CSV row per attacked video, in the given order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in REPORT_COLUMNS])


def read_report(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(REPORT_COLUMNS):
            raise CorruptFileError(f"{path}: unexpected report header {header}")
        rows = []
        for record in reader:
            if len(record) != len(REPORT_COLUMNS):
                raise CorruptFileError(f"{path}: row has {len(record)} cells")
            row = dict(zip(REPORT_COLUMNS, record))
            try:
                row["queries"] = int(row["queries"]) if row["queries"] else None
                for key in REPORT_COLUMNS[4:]:
                    row[key] = float(row[key]) if row[key] else None
            except ValueError as exc:
                raise CorruptFileError(f"{path}: bad cell in row {row['video_id']}: {exc}") from exc
            rows.append(row)
    return rows
