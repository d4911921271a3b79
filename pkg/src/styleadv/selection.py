"""Style-image selection by palette proximity and target-class confidence.

The style pool is a deterministic split of the video corpus; each candidate
is the first frame of its source video, summarized by its median-cut palette
embedded in the HSV cone. Untargeted runs pick the candidate whose palette
sits closest to the input video's. Targeted runs additionally want styles
the classifier already reads as the target class, so each candidate is
scored once (tiled to a static video, one query, cached) and the criterion
becomes

    proximity + mu * (1 - score)

with mu large enough that confidence dominates and proximity breaks ties.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .colors import (CONE_HEIGHT, CONE_RADIUS, THEME_COUNT, color_proximity,
                     median_cut, rgb_to_hsv, hsv_to_xyz)
from .core import ImageTensor, VideoTensor
from .errors import CorruptFileError, PreconditionError

SPLIT_FRACTION = 0.7
MU = 1e4


@dataclass
class StyleCandidate:
    image: ImageTensor
    source_id: str
    label: int = None
    themes_hsv: np.ndarray = None
    themes_xyz: np.ndarray = None
    cached_score: dict = field(default_factory=dict)  # target label -> score
    video: VideoTensor = None  # source video, used by to_video


def video_palette_xyz(video, m=THEME_COUNT, r=CONE_RADIUS, h=CONE_HEIGHT):
    """Median-cut palette of every pixel of every frame, in cone coordinates."""
    pixels = video.data.reshape(-1, 3)
    themes = median_cut(pixels, m)
    hsv = np.array([rgb_to_hsv(t) for t in themes])
    return hsv, np.array([hsv_to_xyz(t, r, h) for t in hsv])


def split_corpus(corpus, split_fraction, rng):
    """Deterministic stratified split into (style part, attack part).

    Per class, a seeded shuffle takes round(fraction * n) videos for the
    style pool so no class can end up without style candidates.
    """
    if not 0 < split_fraction < 1:
        raise ValueError(f"split fraction must be in (0, 1), got {split_fraction}")
    by_class = {}
    for i, lv in enumerate(corpus):
        by_class.setdefault(lv.label, []).append(i)
    style_idx = []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        order = rng.integers(0, 2 ** 31, shape=len(idx)).argsort()
        take = int(round(len(idx) * split_fraction))
        style_idx.extend(idx[order[:take]])
    chosen = set(style_idx)
    style = [corpus[i] for i in sorted(chosen)]
    attack = [corpus[i] for i in range(len(corpus)) if i not in chosen]
    return style, attack


def build_style_set(corpus, split_fraction=SPLIT_FRACTION, rng=None, theme_cache=None,
                    m=THEME_COUNT, r=CONE_RADIUS, h=CONE_HEIGHT):
    """(style candidates, attack videos) from a labeled corpus.

    theme_cache maps source id -> (hsv, xyz); hits skip palette extraction
    and misses are filled in place so the caller can persist them.
    """
    style_part, attack_part = split_corpus(corpus, split_fraction, rng)
    candidates = []
    for lv in style_part:
        image = lv.video.frame(0)
        cached = theme_cache.get(lv.id) if theme_cache is not None else None
        if cached is not None:
            hsv, xyz = cached
        else:
            themes = median_cut(image.data.reshape(-1, 3), m)
            hsv = np.array([rgb_to_hsv(t) for t in themes])
            xyz = np.array([hsv_to_xyz(t, r, h) for t in hsv])
            if theme_cache is not None:
                theme_cache[lv.id] = (hsv, xyz)
        candidates.append(StyleCandidate(
            image=image, source_id=lv.id, label=lv.label,
            themes_hsv=hsv, themes_xyz=xyz, video=lv.video,
        ))
    return candidates, attack_part


def tile_to_video(image, frames_t=16):
    """A static video: the style image repeated frames_t times."""
    return VideoTensor(np.repeat(image.data[None], frames_t, axis=0))


def target_confidence_score(candidate, y_t, handle, budget, frames_t=16):
    """Confidence the classifier gives y_t on the tiled style, zero otherwise.

    Cold candidates cost exactly one query; the score is cached on the
    candidate so warm selection is free.
    """
    if y_t in candidate.cached_score:
        return candidate.cached_score[y_t]
    from .classifiers import query  # local import to avoid a cycle

    pred = query(handle, tile_to_video(candidate.image, frames_t), budget)
    score = pred.confidence if pred.label == y_t else 0.0
    candidate.cached_score[y_t] = score
    return score


def select_style(video, styles, y_t=None, mu=MU, handle=None, budget=None,
                 restrict_to_target=True, frames_t=16,
                 m=THEME_COUNT, r=CONE_RADIUS, h=CONE_HEIGHT, with_breakdown=False):
    """Pick the best style candidate for one input video.

    Untargeted (y_t None): smallest palette proximity. Targeted: smallest
    proximity + mu * (1 - target confidence), over candidates whose source
    carries label y_t (set restrict_to_target=False to widen the pool when
    labels are missing or the class has no candidates). Exact ties keep the
    earliest candidate in list order.
    """
    if not styles:
        raise PreconditionError("style set is empty")
    _, video_xyz = video_palette_xyz(video, m, r, h)

    if y_t is None:
        pool = styles
    else:
        if restrict_to_target:
            pool = [c for c in styles if c.label == y_t]
            if not pool:
                raise PreconditionError(f"no style candidate carries target label {y_t}")
        else:
            pool = styles
        if handle is None or budget is None:
            raise PreconditionError("targeted selection needs a classifier handle and budget")

    best, best_value = None, np.inf
    breakdown = []
    for cand in pool:
        proximity = color_proximity(video_xyz, cand.themes_xyz)
        value = proximity
        row = {"source": cand.source_id, "proximity": proximity,
               "score": None, "mu_term": None}
        if y_t is not None:
            score = target_confidence_score(cand, y_t, handle, budget, frames_t)
            row["score"] = score
            row["mu_term"] = mu * (1.0 - score)
            value += row["mu_term"]
        row["criterion"] = value
        breakdown.append(row)
        if value < best_value:
            best, best_value = cand, value
    if with_breakdown:
        return best, breakdown
    return best


# ---------------------------------------------------------------------------
# score cache
# ---------------------------------------------------------------------------

def write_score_cache(path, styles):
    """Persist every cached (source, target label, score) triple, sorted."""
    rows = []
    for cand in styles:
        for label, score in cand.cached_score.items():
            rows.append((cand.source_id, int(label), float(score)))
    rows.sort()
    with open(path, "w", encoding="utf-8") as fh:
        for source, label, score in rows:
            fh.write(json.dumps({"source": source, "label": label, "score": score}) + "\n")


def read_score_cache(path, styles=None):
    """Load score rows; when `styles` is given, warm their caches in place."""
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
                entries[(obj["source"], int(obj["label"]))] = float(obj["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptFileError(f"{path}: corrupt cache line {lineno}: {exc}") from exc
    if styles is not None:
        for cand in styles:
            for (source, label), score in entries.items():
                if source == cand.source_id:
                    cand.cached_score[label] = score
    return entries


def to_video(candidate, frames_t=16, allow_tile=True):
    """Turn a style candidate back into a video: its source's first frames.

    Falls back to tiling the style image when no source video is attached
    (refused when allow_tile is False).
    """
    if candidate.video is not None:
        data = candidate.video.data
        if data.shape[0] < frames_t:
            raise PreconditionError(
                f"source video of {candidate.source_id} has {data.shape[0]} frames, "
                f"need {frames_t}")
        return VideoTensor(data[:frames_t].copy())
    if not allow_tile:
        raise PreconditionError(f"style {candidate.source_id} has no source video")
    return tile_to_video(candidate.image, frames_t)
