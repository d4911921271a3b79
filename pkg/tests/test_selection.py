"""Style selection: splits, scoring, the selection criterion, caches."""

import numpy as np
import pytest

from styleadv.classifiers import LabeledVideo, Prediction, QueryBudget
from styleadv.colors import color_proximity
from styleadv.core import ImageTensor, SeededRng, VideoTensor
from styleadv.errors import CorruptFileError, PreconditionError
from styleadv.selection import (
    StyleCandidate, build_style_set, read_score_cache, select_style,
    split_corpus, target_confidence_score, tile_to_video, to_video,
    video_palette_xyz, write_score_cache,
)


class StubHandle:
    """Scripted classifier: maps a video's mean value to a fixed prediction."""

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def predict_many(self, videos):
        self.calls += len(videos)
        out = []
        for v in videos:
            key = round(float(np.asarray(v.data if hasattr(v, "data") else v).mean()), 6)
            out.append(self.table[key])
        return out


def solid_video(value, t=4, size=8):
    return VideoTensor(np.full((t, size, size, 3), value, dtype=np.float32))


def make_corpus(rng, n_per_class=4, classes=3):
    corpus = []
    for label in range(classes):
        for j in range(n_per_class):
            data = rng.uniform(shape=(4, 8, 8, 3)).astype(np.float32)
            corpus.append(LabeledVideo(id=f"c{label}v{j}", video=VideoTensor(data), label=label))
    return corpus


def test_split_is_deterministic_and_stratified():
    rng = SeededRng(5, 0)
    corpus = make_corpus(SeededRng(1, 0))
    style_a, attack_a = split_corpus(corpus, 0.7, SeededRng(5, 0))
    style_b, attack_b = split_corpus(corpus, 0.7, SeededRng(5, 0))
    assert [lv.id for lv in style_a] == [lv.id for lv in style_b]
    assert [lv.id for lv in attack_a] == [lv.id for lv in attack_b]
    # round(4 * 0.7) = 3 from each of the 3 classes
    assert len(style_a) == 9 and len(attack_a) == 3
    for label in range(3):
        assert sum(1 for lv in style_a if lv.label == label) == 3
    # disjoint and exhaustive
    ids = {lv.id for lv in style_a} | {lv.id for lv in attack_a}
    assert len(ids) == len(corpus)


def test_build_style_set_uses_first_frame_and_fills_theme_cache():
    corpus = make_corpus(SeededRng(2, 0))
    cache = {}
    styles, attack = build_style_set(corpus, 0.7, SeededRng(3, 0), theme_cache=cache)
    assert len(styles) == 9 and len(attack) == 3
    by_id = {lv.id: lv for lv in corpus}
    for cand in styles:
        np.testing.assert_array_equal(cand.image.data, by_id[cand.source_id].video.frame(0).data)
        assert cand.themes_xyz.shape == (3, 3)
        assert cand.source_id in cache
    # a second build with the warm cache reproduces the same embeddings
    styles2, _ = build_style_set(corpus, 0.7, SeededRng(3, 0), theme_cache=cache)
    for a, b in zip(styles, styles2):
        np.testing.assert_array_equal(a.themes_xyz, b.themes_xyz)


def test_tile_to_video_repeats_frame():
    img = ImageTensor(np.linspace(0, 1, 8 * 8 * 3, dtype=np.float32).reshape(8, 8, 3))
    vid = tile_to_video(img, 5)
    assert vid.data.shape == (5, 8, 8, 3)
    for t in range(5):
        np.testing.assert_array_equal(vid.data[t], img.data)


def test_target_confidence_score_queries_once_and_caches():
    img = ImageTensor(np.full((8, 8, 3), 0.25, dtype=np.float32))
    cand = StyleCandidate(image=img, source_id="s0", label=1)
    handle = StubHandle({0.25: Prediction(label=1, confidence=0.8)})
    budget = QueryBudget(limit=10)
    s1 = target_confidence_score(cand, 1, handle, budget)
    assert s1 == 0.8 and budget.used == 1 and handle.calls == 1
    s2 = target_confidence_score(cand, 1, handle, budget)
    assert s2 == 0.8 and budget.used == 1 and handle.calls == 1  # warm: free


def test_target_confidence_score_zero_when_label_differs():
    img = ImageTensor(np.full((8, 8, 3), 0.5, dtype=np.float32))
    cand = StyleCandidate(image=img, source_id="s0", label=2)
    handle = StubHandle({0.5: Prediction(label=0, confidence=0.9)})
    score = target_confidence_score(cand, 2, handle, QueryBudget(limit=10))
    assert score == 0.0


def candidates_from_solids(values, label=0):
    cands = []
    for i, v in enumerate(values):
        img = ImageTensor(np.full((8, 8, 3), v, dtype=np.float32))
        c = StyleCandidate(image=img, source_id=f"s{i}", label=label)
        c.themes_hsv, c.themes_xyz = video_palette_xyz(tile_to_video(img, 2))
        cands.append(c)
    return cands


def test_untargeted_selection_minimizes_proximity():
    video = solid_video(0.4)
    cands = candidates_from_solids([0.05, 0.45, 0.95])
    picked = select_style(video, cands)
    assert picked.source_id == "s1"
    # cross-check against a brute-force argmin
    _, vx = video_palette_xyz(video)
    values = [color_proximity(vx, c.themes_xyz) for c in cands]
    assert picked is cands[int(np.argmin(values))]


def test_untargeted_tie_keeps_first_in_list_order():
    video = solid_video(0.5)
    a, b = candidates_from_solids([0.3, 0.3])
    b.source_id = "later"
    picked = select_style(video, [a, b])
    assert picked is a


def test_targeted_selection_prefers_confident_candidate():
    video = solid_video(0.4)
    cands = candidates_from_solids([0.41, 0.9], label=2)
    # the palette-closer candidate scores low, the distant one high; with
    # mu = 1e4 the confidence term dominates any proximity difference
    handle = StubHandle({
        0.41: Prediction(label=2, confidence=0.1),
        0.9: Prediction(label=2, confidence=0.95),
    })
    budget = QueryBudget(limit=10)
    picked = select_style(video, cands, y_t=2, handle=handle, budget=budget)
    assert picked.source_id == "s1"
    assert budget.used == 2  # one cold query per pool candidate
    # warm pass: no new queries, same answer
    again = select_style(video, cands, y_t=2, handle=handle, budget=budget)
    assert again is picked and budget.used == 2


def test_targeted_selection_restricts_pool_to_target_label():
    video = solid_video(0.4)
    cands = candidates_from_solids([0.41, 0.9])
    cands[0].label = 1
    cands[1].label = 2
    handle = StubHandle({0.9: Prediction(label=2, confidence=0.5)})
    budget = QueryBudget(limit=10)
    picked = select_style(video, cands, y_t=2, handle=handle, budget=budget)
    assert picked.source_id == "s1" and budget.used == 1
    with pytest.raises(PreconditionError, match="target label 4"):
        select_style(video, cands, y_t=4, handle=handle, budget=budget)
    # widening the pool lifts the restriction
    wide = StubHandle({
        0.41: Prediction(label=4, confidence=0.9),
        0.9: Prediction(label=1, confidence=0.9),
    })
    for c in cands:
        c.cached_score.clear()
    picked = select_style(video, cands, y_t=4, handle=wide,
                          budget=QueryBudget(limit=10), restrict_to_target=False)
    assert picked.source_id == "s0"


def test_selection_invariant_under_pool_permutation():
    rng = SeededRng(11, 0)
    video = VideoTensor(rng.uniform(shape=(4, 8, 8, 3)).astype(np.float32))
    values = [0.1, 0.33, 0.52, 0.7, 0.88]
    cands = candidates_from_solids(values)
    picked = select_style(video, cands)
    shuffled = [cands[i] for i in (3, 0, 4, 1, 2)]
    assert select_style(video, shuffled) is picked


def test_score_cache_roundtrip_and_corrupt_line():
    cands = candidates_from_solids([0.2, 0.8])
    cands[0].cached_score = {1: 0.75, 2: 0.0}
    cands[1].cached_score = {1: 0.5}
    import tempfile, os
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "scores.jsonl")
        write_score_cache(path, cands)
        entries = read_score_cache(path)
        assert entries == {("s0", 1): 0.75, ("s0", 2): 0.0, ("s1", 1): 0.5}
        # warm fresh candidates from the file
        fresh = candidates_from_solids([0.2, 0.8])
        read_score_cache(path, fresh)
        assert fresh[0].cached_score == {1: 0.75, 2: 0.0}
        assert fresh[1].cached_score == {1: 0.5}
        # byte-stable rewrite
        with open(path, "rb") as fh:
            first = fh.read()
        write_score_cache(path, fresh)
        with open(path, "rb") as fh:
            assert fh.read() == first
        # missing file is an empty cache, corrupt line names its number
        assert read_score_cache(os.path.join(tmp, "absent.jsonl")) == {}
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("{bad\n")
        with pytest.raises(CorruptFileError, match="line 4"):
            read_score_cache(path)


def test_to_video_prefers_source_video_then_tiles():
    rng = SeededRng(7, 0)
    data = rng.uniform(shape=(6, 8, 8, 3)).astype(np.float32)
    cand = StyleCandidate(image=ImageTensor(data[0]), source_id="s", video=VideoTensor(data))
    vid = to_video(cand, frames_t=4)
    np.testing.assert_array_equal(vid.data, data[:4])
    with pytest.raises(PreconditionError, match="frames"):
        to_video(cand, frames_t=10)
    bare = StyleCandidate(image=ImageTensor(data[0]), source_id="s")
    tiled = to_video(bare, frames_t=3)
    np.testing.assert_array_equal(tiled.data[2], data[0])
    with pytest.raises(PreconditionError, match="no source video"):
        to_video(bare, frames_t=3, allow_tile=False)


def test_empty_style_set_refused():
    with pytest.raises(PreconditionError, match="empty"):
        select_style(solid_video(0.5), [])
