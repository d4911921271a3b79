"""End-to-end CLI coverage at miniature scale.

A module-scoped fixture synthesizes a tiny corpus, trains a quick (and
deliberately low-bar) classifier, and builds the style split; the
subcommand tests then drive everything through cli.main exactly as a
shell user would.
"""

import json
import os

import numpy as np
import pytest

from styleadv.attack import read_transcript, replay_transcript
from styleadv.cli import main
from styleadv.core import read_vtf
from styleadv.metrics import read_report

ASSETS = os.path.join(os.path.dirname(__file__), "..", "src", "styleadv", "assets")

FAST = ["--set", "iterations=5", "--set", "n=8", "--set", "query_limit=400"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    clf = str(root / "clf.tcf")
    styles = str(root / "styles")
    assert main(["make-dataset", "--out", data, "--per-class", "10",
                 "--frames", "8", "--size", "32", "--seed", "3"]) == 0
    assert main(["train-toy", "--dataset", data, "--out", clf, "--epochs", "10",
                 "--accuracy-bar", "0.5", "--attempts", "2", "--seed", "3"]) == 0
    assert main(["build-styles", "--dataset", data, "--out", styles,
                 "--seed", "3"]) == 0
    return {"root": root, "data": data, "clf": clf, "styles": styles}


def test_make_dataset_layout(workspace):
    data = workspace["data"]
    with open(os.path.join(data, "labels.json"), "r", encoding="utf-8") as fh:
        labels = json.load(fh)
    assert len(labels) == 50
    assert sorted(set(labels.values())) == [0, 1, 2, 3, 4]
    some_id = sorted(labels)[0]
    video = read_vtf(os.path.join(data, "videos", f"{some_id}.vtf"))
    assert video.data.shape == (8, 32, 32, 3)


def test_build_styles_layout(workspace):
    styles = workspace["styles"]
    with open(os.path.join(styles, "style_ids.json"), "r", encoding="utf-8") as fh:
        style_ids = json.load(fh)
    with open(os.path.join(styles, "attack_ids.json"), "r", encoding="utf-8") as fh:
        attack_ids = json.load(fh)
    # round(10 * 0.7) = 7 styles per class
    assert len(style_ids) == 35 and len(attack_ids) == 15
    assert not set(style_ids) & set(attack_ids)
    assert os.path.exists(os.path.join(styles, "themes.jsonl"))


def test_select_prints_choice_and_breakdown(workspace, capsys):
    with open(os.path.join(workspace["styles"], "attack_ids.json"), encoding="utf-8") as fh:
        vid = json.load(fh)[0]
    rc = main(["select", "--dataset", workspace["data"], "--styles",
               workspace["styles"], "--video", vid])
    out = capsys.readouterr().out
    assert rc == 0
    assert "chosen: " in out and "proximity=" in out


def test_select_targeted_breakdown_exposes_terms(workspace, capsys):
    with open(os.path.join(workspace["styles"], "attack_ids.json"), encoding="utf-8") as fh:
        vid = json.load(fh)[0]
    rc = main(["select", "--dataset", workspace["data"], "--styles",
               workspace["styles"], "--video", vid, "--mode", "targeted",
               "--target", "2", "--set", f"classifier=toy:{workspace['clf']}"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "score=" in out and "mu_term=" in out and "criterion=" in out
    assert "selection queries: " in out
    # scores were cached for later runs
    assert os.path.exists(os.path.join(workspace["styles"], "scores.jsonl"))


def test_transfer_subcommand_on_shipped_pair(workspace, tmp_path):
    out = str(tmp_path / "stylized.vtf")
    trace = str(tmp_path / "trace.csv")
    rc = main(["transfer", "--video", os.path.join(ASSETS, "toy_video.vtf"),
               "--style", os.path.join(ASSETS, "toy_style.vtf"),
               "--out", out, "--trace", trace, "--set", "iterations=5"])
    assert rc == 0
    stylized = read_vtf(out)
    assert stylized.data.shape == read_vtf(os.path.join(ASSETS, "toy_video.vtf")).data.shape
    with open(trace, encoding="utf-8") as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0].startswith("iteration,") and len(lines) == 6  # header + 0..4


def test_attack_subcommand_writes_artifacts(workspace, tmp_path):
    data = workspace["data"]
    with open(os.path.join(workspace["styles"], "attack_ids.json"), encoding="utf-8") as fh:
        vid = json.load(fh)[0]
    with open(os.path.join(data, "labels.json"), encoding="utf-8") as fh:
        label = json.load(fh)[vid]
    adv = str(tmp_path / "adv.vtf")
    transcript = str(tmp_path / "t.jsonl")
    rc = main(["attack", "--video", os.path.join(data, "videos", f"{vid}.vtf"),
               "--label", str(label), "--out", adv, "--transcript", transcript,
               "--set", f"classifier=toy:{workspace['clf']}"] + FAST)
    assert rc in (0, 1)  # success depends on the weak classifier, files do not
    rows = read_transcript(transcript)
    assert rows[0]["kind"] == "probe"
    assert os.path.exists(adv)
    if rc == 0:
        assert replay_transcript(rows, n=8).total_queries == rows[-1]["q"]


def test_attack_resume_refused(workspace, tmp_path, capsys):
    rc = main(["attack", "--video", "x.vtf", "--label", "0",
               "--out", str(tmp_path / "a.vtf"), "--resume", "old.jsonl"])
    assert rc == 2
    assert "resume is not supported" in capsys.readouterr().err


def test_unknown_override_is_a_config_error(workspace, capsys):
    rc = main(["make-dataset", "--out", "/tmp/x", "--set", "warp_speed=9"])
    assert rc == 2
    assert "unknown config key" in capsys.readouterr().err


def _pipeline_video_ids(styles_dir):
    with open(os.path.join(styles_dir, "attack_ids.json"), encoding="utf-8") as fh:
        attack_ids = json.load(fh)
    return attack_ids[::3]  # five videos spread across classes


@pytest.fixture(scope="module")
def pipeline_run(workspace, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run") / "out")
    ids = _pipeline_video_ids(workspace["styles"])
    rc = main(["run", "--dataset", workspace["data"], "--styles",
               workspace["styles"], "--out", out, "--videos", ",".join(ids),
               "--set", f"classifier=toy:{workspace['clf']}", "--seed", "3"] + FAST)
    return out, rc


def test_run_pipeline_processes_every_video(workspace, pipeline_run):
    out, rc = pipeline_run
    assert rc == 0
    rows = read_report(os.path.join(out, "report.csv"))
    assert [r["video_id"] for r in rows] == _pipeline_video_ids(workspace["styles"])
    assert all(r["outcome"] in ("success", "failure", "error") for r in rows)
    for row in rows:
        videodir = os.path.join(out, "videos", row["video_id"])
        assert os.path.exists(os.path.join(videodir, "record.json"))
        if row["outcome"] != "error":
            for name in ("original.vtf", "stylized.vtf", "adversarial.vtf",
                         "transcript.jsonl", "loss_trace.csv"):
                assert os.path.exists(os.path.join(videodir, name)), name
            # the adversarial video sits inside the eps ball of the stylized
            sty = read_vtf(os.path.join(videodir, "stylized.vtf"))
            adv = read_vtf(os.path.join(videodir, "adversarial.vtf"))
            gap = np.abs(adv.data.astype(np.float64) - sty.data.astype(np.float64)).max()
            assert gap <= 0.05 + 1e-6


def test_run_pipeline_is_deterministic(workspace, pipeline_run, tmp_path):
    out1, _ = pipeline_run
    out2 = str(tmp_path / "out2")
    ids = _pipeline_video_ids(workspace["styles"])
    rc = main(["run", "--dataset", workspace["data"], "--styles",
               workspace["styles"], "--out", out2, "--videos", ",".join(ids),
               "--set", f"classifier=toy:{workspace['clf']}", "--seed", "3"] + FAST)
    assert rc == 0
    for rel in ["report.csv", "config.txt"]:
        with open(os.path.join(out1, rel), "rb") as fh:
            a = fh.read()
        with open(os.path.join(out2, rel), "rb") as fh:
            b = fh.read()
        assert a == b, rel
    rows = read_report(os.path.join(out1, "report.csv"))
    for row in rows:
        if row["outcome"] == "error":
            continue
        rel = os.path.join("videos", row["video_id"], "transcript.jsonl")
        with open(os.path.join(out1, rel), "rb") as fh:
            a = fh.read()
        with open(os.path.join(out2, rel), "rb") as fh:
            b = fh.read()
        assert a == b, rel


def test_eval_reproduces_run_report(pipeline_run, tmp_path):
    out, _ = pipeline_run
    report2 = str(tmp_path / "report2.csv")
    assert main(["eval", "--outdir", out, "--out", report2]) == 0
    with open(os.path.join(out, "report.csv"), "rb") as fh:
        original = fh.read()
    with open(report2, "rb") as fh:
        rebuilt = fh.read()
    assert rebuilt == original


def test_eval_reproduces_shipped_sample_report(tmp_path):
    sample = os.path.join(ASSETS, "sample_run")
    out = str(tmp_path / "sample_report.csv")
    assert main(["eval", "--outdir", sample, "--out", out]) == 0
    with open(os.path.join(sample, "report.csv"), "rb") as fh:
        golden = fh.read()
    with open(out, "rb") as fh:
        assert fh.read() == golden


def test_unreachable_remote_aborts_before_any_output(workspace, tmp_path, capsys):
    out = str(tmp_path / "never")
    rc = main(["run", "--dataset", workspace["data"], "--styles",
               workspace["styles"], "--out", out,
               "--set", "classifier=remote:127.0.0.1:1"] + FAST)
    assert rc == 2
    assert not os.path.exists(out)  # config-stage abort leaves nothing behind
    capsys.readouterr()


def test_serve_and_remote_attack_roundtrip(workspace, tmp_path):
    import threading

    from styleadv.classifiers import load_classifier, serve_classifier

    clf = load_classifier(workspace["clf"])
    ports = []
    ready = threading.Event()

    def run_server():
        def on_ready(port):
            ports.append(port)
            ready.set()
        # one connection handles the whole attack; cap requests high enough
        serve_classifier(clf, port=0, ready=on_ready, max_requests=500)

    thread = threading.Thread(target=run_server, daemon=True)
    thread.start()
    assert ready.wait(5.0)

    data = workspace["data"]
    with open(os.path.join(workspace["styles"], "attack_ids.json"), encoding="utf-8") as fh:
        vid = json.load(fh)[0]
    with open(os.path.join(data, "labels.json"), encoding="utf-8") as fh:
        label = json.load(fh)[vid]
    adv = str(tmp_path / "adv.vtf")
    rc = main(["attack", "--video", os.path.join(data, "videos", f"{vid}.vtf"),
               "--label", str(label), "--out", adv,
               "--set", f"classifier=remote:127.0.0.1:{ports[0]}",
               "--set", "query_limit=200", "--set", "n=8"])
    assert rc in (0, 1)
    assert os.path.exists(adv)


def test_forward_dumps_activations(tmp_path):
    out = str(tmp_path / "acts.json")
    rc = main(["forward", "--input", os.path.join(ASSETS, "toy_video.vtf"),
               "--out", out])
    assert rc == 0
    with open(out, encoding="utf-8") as fh:
        payload = json.load(fh)
    assert payload["input_shape"] == [8, 16, 16, 3]
    assert len(payload["frames"]) == 8
    taps = payload["frames"][0]
    assert "relu1_1" in taps and "relu4_2" in taps
    assert taps["relu1_1"]["shape"] == [16, 16, 16]
    assert len(taps["relu1_1"]["data"]) == 16 * 16 * 16
