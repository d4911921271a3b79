"""Color themes: median-cut palette extraction and the HSV cone embedding.

A video or image is summarized by a small palette (default 3 colors). Palettes
are compared after embedding each color into a cone-shaped HSV solid where
Euclidean distance tracks perceived difference: hue is the angle, saturation
scaled by value is the radius, and value is the height,

    X = r * V * S * cos(H)
    Y = r * V * S * sin(H)
    Z = h * (1 - V)

with cone radius r = 50 and height h = 50 * sqrt(3). All fully saturated
bright colors sit on the rim, black sits at the apex (0, 0, h).
"""

import colorsys
import json
import math

import numpy as np

from .errors import CorruptFileError

CONE_RADIUS = 50.0
CONE_HEIGHT = 50.0 * math.sqrt(3.0)
THEME_COUNT = 3


# ---------------------------------------------------------------------------
# median cut
# ---------------------------------------------------------------------------

def _channel_median(vals):
    s = np.sort(vals)
    n = len(s)
    if n % 2 == 1:
        return float(s[n // 2])
    return float(0.5 * (s[n // 2 - 1] + s[n // 2]))


def _split_bucket(pixels):
    """Split one bucket at the median of its widest channel.

    Pixels land in (<= median, > median) halves; if every pixel falls on one
    side (all values at or below the median) we fall back to an equal
    positional split of the channel-sorted order, which keeps both halves
    nonempty whenever the bucket has at least two pixels.
    """
    spans = pixels.max(axis=0) - pixels.min(axis=0)
    ch = int(np.argmax(spans))  # ties resolve in R,G,B order
    med = _channel_median(pixels[:, ch])
    low = pixels[:, ch] <= med
    if low.all() or not low.any():
        order = np.argsort(pixels[:, ch], kind="stable")
        half = len(order) // 2
        return pixels[order[:half]], pixels[order[half:]]
    return pixels[low], pixels[~low]


def median_cut(pixels, m):
    """Reduce an (N, 3) pixel cloud to m palette colors.

    Starting with one bucket holding every pixel, repeatedly split the bucket
    whose widest channel span is largest (ties: the oldest bucket) until m
    buckets exist, then return the per-channel median of each bucket, in
    bucket order. Splitting replaces a bucket with its two halves in place.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != 3:
        raise ValueError(f"expected (N, 3) pixels, got {pixels.shape}")
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    if m > len(pixels):
        raise ValueError(f"cannot cut {len(pixels)} pixels into {m} buckets")

    buckets = [pixels]
    while len(buckets) < m:
        best, best_span = -1, -1.0
        for k, b in enumerate(buckets):
            if len(b) < 2:
                continue
            span = float((b.max(axis=0) - b.min(axis=0)).max())
            if span > best_span:
                best, best_span = k, span
        lo, hi = _split_bucket(buckets[best])
        buckets[best:best + 1] = [lo, hi]

    return np.array([[_channel_median(b[:, c]) for c in range(3)] for b in buckets])


def extract_themes(image, m=THEME_COUNT):
    """Palette of an ImageTensor via median cut over all its pixels."""
    return median_cut(image.data.reshape(-1, 3), m)


# ---------------------------------------------------------------------------
# HSV cone embedding
# ---------------------------------------------------------------------------

def rgb_to_hsv(rgb):
    """RGB in [0,1] -> (H degrees in [0,360), S, V) by the standard hexcone."""
    r, g, b = (float(v) for v in rgb)
    h, s, v = colorsys.rgb_to_hsv(r, g, b)
    return np.array([h * 360.0, s, v])


def hsv_to_rgb(hsv):
    h, s, v = (float(x) for x in hsv)
    return np.array(colorsys.hsv_to_rgb(h / 360.0, s, v))


def hsv_to_xyz(hsv, r=CONE_RADIUS, h=CONE_HEIGHT):
    """Embed one HSV color into the distance cone."""
    hue, sat, val = (float(x) for x in hsv)
    ang = math.radians(hue)
    return np.array([
        r * val * sat * math.cos(ang),
        r * val * sat * math.sin(ang),
        h * (1.0 - val),
    ])


def theme_embedding(image, m=THEME_COUNT):
    """(HSV themes, cone coordinates) for an image, ready for the cache."""
    themes_rgb = extract_themes(image, m)
    hsv = np.array([rgb_to_hsv(t) for t in themes_rgb])
    xyz = np.array([hsv_to_xyz(t) for t in hsv])
    return hsv, xyz


def color_proximity(xyz_a, xyz_b):
    """Sum of Euclidean distances over every (theme_a, theme_b) pair.

    Lower means the palettes are closer; comparing a palette against itself
    still counts the off-diagonal pairs, so only a palette of identical
    colors reaches zero.
    """
    a = np.asarray(xyz_a, dtype=np.float64)
    b = np.asarray(xyz_b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=2)).sum())


# ---------------------------------------------------------------------------
# theme cache
# ---------------------------------------------------------------------------

def write_theme_cache(path, entries):
    """Write {source: (hsv_themes, xyz)} as one JSON object per line, sorted by source."""
    with open(path, "w", encoding="utf-8") as fh:
        for source in sorted(entries):
            hsv, xyz = entries[source]
            fh.write(json.dumps({
                "source": source,
                "themes": [[float(v) for v in row] for row in np.asarray(hsv)],
                "xyz": [[float(v) for v in row] for row in np.asarray(xyz)],
            }) + "\n")


def read_theme_cache(path):
    """Load a theme cache; a missing file is an empty cache."""
    entries = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        return entries
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries[obj["source"]] = (
                    np.array(obj["themes"], dtype=np.float64),
                    np.array(obj["xyz"], dtype=np.float64),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptFileError(f"{path}: corrupt cache line {lineno}: {exc}") from exc
    return entries
