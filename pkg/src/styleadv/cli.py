"""Command line entry point: dataset synthesis, training, style building,
and the select -> transfer -> attack -> evaluate pipeline.

Stages are composable through files: `make-dataset` writes a directory of
VTF videos plus labels.json, `build-styles` records the style/attack
split with palette and confidence caches, `run` consumes both and leaves
one directory per attacked video (original / stylized / adversarial VTFs,
a query transcript, a transfer loss trace, record.json) plus report.csv.
`eval` rebuilds the report from those artifacts alone, recounting queries
from the transcripts.

Seed discipline: the master seed feeds fixed RNG streams (dataset 0,
training 1, split 2) and each attacked video gets its own block of NES
streams, so re-running any stage with the same seed reproduces its
outputs byte for byte.
"""

import argparse
import json
import os
import sys

import numpy as np

from .attack import (TargetedConfig, UntargetedConfig, replay_transcript,
                     read_transcript, targeted_attack, untargeted_attack,
                     write_transcript)
from .classifiers import (LabeledVideo, QueryBudget, load_classifier, query,
                          remote_classifier, save_classifier, serve_classifier,
                          synth_dataset, train_toy)
from .colors import read_theme_cache, write_theme_cache
from .config import RunConfig, load_config, serialize_config
from .core import SeededRng, VideoTensor, read_vtf, write_vtf
from .errors import ConfigError, StyleAdvError
from .features import default_net, forward, load_weights
from .metrics import psnr, ssim, write_report
from .selection import (StyleCandidate, build_style_set, read_score_cache,
                        select_style, to_video, video_palette_xyz,
                        write_score_cache)
from .transfer import TransferConfig, transfer, write_loss_trace

STREAM_DATASET = 0
STREAM_TRAINING = 1
STREAM_SPLIT = 2
# each attacked video draws NES streams from its own block; the query limit
# caps rounds at 3e5 / (n + 1), far below this span
ATTACK_STREAM_BLOCK = 100_000


# ---------------------------------------------------------------------------
# dataset and style-set directories
# ---------------------------------------------------------------------------

def save_dataset(dataset, outdir):
    videos_dir = os.path.join(outdir, "videos")
    os.makedirs(videos_dir, exist_ok=True)
    labels = {}
    for lv in dataset:
        write_vtf(lv.video, os.path.join(videos_dir, f"{lv.id}.vtf"))
        labels[lv.id] = lv.label
    with open(os.path.join(outdir, "labels.json"), "w", encoding="utf-8") as fh:
        json.dump(labels, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    labels_path = os.path.join(path, "labels.json")
    try:
        with open(labels_path, "r", encoding="utf-8") as fh:
            labels = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"not a dataset directory (no labels.json): {path}") from exc
    dataset = []
    for vid in sorted(labels):
        video = read_vtf(os.path.join(path, "videos", f"{vid}.vtf"))
        dataset.append(LabeledVideo(vid, video, int(labels[vid])))
    return dataset


def save_style_set(styles, attack_part, outdir):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "style_ids.json"), "w", encoding="utf-8") as fh:
        json.dump([c.source_id for c in styles], fh, indent=2)
        fh.write("\n")
    with open(os.path.join(outdir, "attack_ids.json"), "w", encoding="utf-8") as fh:
        json.dump([lv.id for lv in attack_part], fh, indent=2)
        fh.write("\n")
    write_theme_cache(os.path.join(outdir, "themes.jsonl"),
                      {c.source_id: (c.themes_hsv, c.themes_xyz) for c in styles})


def load_style_set(styles_dir, dataset):
    """Rebuild candidates in their saved order from a build-styles directory."""
    try:
        with open(os.path.join(styles_dir, "style_ids.json"), "r", encoding="utf-8") as fh:
            style_ids = json.load(fh)
        with open(os.path.join(styles_dir, "attack_ids.json"), "r", encoding="utf-8") as fh:
            attack_ids = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"not a style-set directory: {styles_dir}") from exc
    themes = read_theme_cache(os.path.join(styles_dir, "themes.jsonl"))
    by_id = {lv.id: lv for lv in dataset}
    styles = []
    for sid in style_ids:
        if sid not in by_id:
            raise ConfigError(f"style source {sid} is not in the dataset")
        if sid not in themes:
            raise ConfigError(f"style source {sid} has no cached palette")
        lv = by_id[sid]
        hsv, xyz = themes[sid]
        styles.append(StyleCandidate(
            image=lv.video.frame(0), source_id=sid, label=lv.label,
            themes_hsv=hsv, themes_xyz=xyz, video=lv.video,
        ))
    score_path = os.path.join(styles_dir, "scores.jsonl")
    read_score_cache(score_path, styles)
    attack_part = []
    for vid in attack_ids:
        if vid not in by_id:
            raise ConfigError(f"attack video {vid} is not in the dataset")
        attack_part.append(by_id[vid])
    return styles, attack_part, score_path


# ---------------------------------------------------------------------------
# shared wiring
# ---------------------------------------------------------------------------

def classifier_handle(cfg):
    spec = cfg.classifier
    if not spec:
        raise ConfigError("classifier is not set (toy:<path> or remote:<host>:<port>)")
    kind, _, rest = spec.partition(":")
    if kind == "toy" and rest:
        return load_classifier(rest)
    if kind == "remote" and rest:
        # reachability is a config-stage precondition: fail before any output
        return remote_classifier(rest, check=True)
    raise ConfigError(f"bad classifier spec {spec!r}")


def feature_net(cfg):
    return load_weights(cfg.weights) if cfg.weights else default_net()


def transfer_config(cfg):
    return TransferConfig(alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma,
                          lam=cfg.lam, iterations=cfg.iterations, step=cfg.step)


# ---------------------------------------------------------------------------
# the per-video pipeline
# ---------------------------------------------------------------------------

def process_video(cfg, handle, net, styles, lv, index, videodir):
    """Select, transfer, attack, measure one video. Returns (row, record)."""
    os.makedirs(videodir, exist_ok=True)
    budget = QueryBudget(limit=cfg.query_limit)
    write_vtf(lv.video, os.path.join(videodir, "original.vtf"))
    targeted = cfg.mode == "targeted"
    y_t = cfg.target if targeted else None

    style = select_style(lv.video, styles, y_t=y_t, mu=cfg.mu, handle=handle,
                         budget=budget, m=cfg.themes, r=cfg.cone_radius,
                         h=cfg.cone_height)
    selection_queries = budget.used

    result = transfer(lv.video, style.image, net, transfer_config(cfg))
    stylized = result.stylized
    write_vtf(stylized, os.path.join(videodir, "stylized.vtf"))
    write_loss_trace(os.path.join(videodir, "loss_trace.csv"), result.trace)

    if targeted:
        x_init = to_video(style, frames_t=lv.video.frames_t)
        acfg = TargetedConfig(eps_adv=cfg.eps_adv, eta=cfg.eta, n=cfg.n,
                              sigma=cfg.sigma, tile_frames=bool(cfg.tile_frames),
                              seed=cfg.seed,
                              stream_base=index * ATTACK_STREAM_BLOCK)
        outcome = targeted_attack(handle, stylized, x_init, y_t, budget, acfg)
    else:
        acfg = UntargetedConfig(eps_adv=cfg.eps_adv, eta=cfg.eta, n=cfg.n,
                                sigma=cfg.sigma, tile_frames=bool(cfg.tile_frames),
                                seed=cfg.seed,
                                stream_base=index * ATTACK_STREAM_BLOCK)
        outcome = untargeted_attack(handle, stylized, lv.label, budget, acfg)

    adversarial = outcome.adversarial
    write_vtf(adversarial, os.path.join(videodir, "adversarial.vtf"))
    write_transcript(os.path.join(videodir, "transcript.jsonl"), outcome.transcript)

    row = {
        "video_id": lv.id,
        "mode": cfg.mode,
        "outcome": "success" if outcome.state.success else "failure",
        "queries": outcome.state.queries,
        "ssim_ori_adv": ssim(lv.video, adversarial),
        "ssim_sty_adv": ssim(stylized, adversarial),
        "psnr_ori_adv": psnr(lv.video, adversarial),
        "psnr_sty_adv": psnr(stylized, adversarial),
    }
    record = {
        "video_id": lv.id,
        "mode": cfg.mode,
        "label": lv.label,
        "target": y_t,
        "style": style.source_id,
        "n": cfg.n,
        "success": outcome.state.success,
        "queries": outcome.state.queries,
        "queries_charged": outcome.state.queries_charged,
        "selection_queries": selection_queries,
        "budget_used": budget.used,
        "rounds": outcome.state.rounds,
        "epsilon": outcome.state.epsilon,
        "final_label": outcome.state.label,
        "final_confidence": outcome.state.confidence,
        "outcome": row["outcome"],
    }
    return row, record


def run_pipeline(cfg, dataset_dir, styles_dir, outdir, video_ids=None):
    """Attack a batch of videos; per-video failures become error rows and
    never abort the batch. Returns 0 when every requested video produced
    a report row."""
    handle = classifier_handle(cfg)
    net = feature_net(cfg)
    dataset = load_dataset(dataset_dir)
    styles, attack_part, score_path = load_style_set(styles_dir, dataset)

    if video_ids:
        by_id = {lv.id: lv for lv in attack_part}
        missing = [v for v in video_ids if v not in by_id]
        if missing:
            raise ConfigError(f"not in the attack split: {', '.join(missing)}")
        todo = [by_id[v] for v in video_ids]
    else:
        todo = attack_part

    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))

    rows = []
    for index, lv in enumerate(todo):
        videodir = os.path.join(outdir, "videos", lv.id)
        try:
            row, record = process_video(cfg, handle, net, styles, lv, index, videodir)
        except StyleAdvError as exc:
            row = {"video_id": lv.id, "mode": cfg.mode, "outcome": "error",
                   "queries": None, "ssim_ori_adv": None, "ssim_sty_adv": None,
                   "psnr_ori_adv": None, "psnr_sty_adv": None}
            record = {"video_id": lv.id, "mode": cfg.mode, "outcome": "error",
                      "error": f"{type(exc).__name__}: {exc}"}
            print(f"{lv.id}: {type(exc).__name__}: {exc}", file=sys.stderr)
        os.makedirs(videodir, exist_ok=True)
        with open(os.path.join(videodir, "record.json"), "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        rows.append(row)

    write_report(os.path.join(outdir, "report.csv"), rows)
    if cfg.mode == "targeted":
        write_score_cache(score_path, styles)
    return 0 if len(rows) == len(todo) else 1


def evaluate_outdir(outdir, out_path):
    """Rebuild the report from per-video artifacts, recounting queries by
    replaying each transcript."""
    videos_root = os.path.join(outdir, "videos")
    try:
        video_ids = sorted(os.listdir(videos_root))
    except OSError as exc:
        raise ConfigError(f"not a run directory: {outdir}") from exc
    rows = []
    for vid in video_ids:
        videodir = os.path.join(videos_root, vid)
        with open(os.path.join(videodir, "record.json"), "r", encoding="utf-8") as fh:
            record = json.load(fh)
        row = {"video_id": vid, "mode": record["mode"], "outcome": record["outcome"],
               "queries": None, "ssim_ori_adv": None, "ssim_sty_adv": None,
               "psnr_ori_adv": None, "psnr_sty_adv": None}
        if record["outcome"] != "error":
            original = read_vtf(os.path.join(videodir, "original.vtf"))
            stylized = read_vtf(os.path.join(videodir, "stylized.vtf"))
            adversarial = read_vtf(os.path.join(videodir, "adversarial.vtf"))
            transcript = read_transcript(os.path.join(videodir, "transcript.jsonl"))
            if record.get("queries_charged", 0) == record.get("queries"):
                row["queries"] = replay_transcript(transcript, n=record["n"]).total_queries
            else:
                # budget died mid-batch: the transcript is legitimately
                # truncated, trust the recorded count
                row["queries"] = record["queries"]
            row["ssim_ori_adv"] = ssim(original, adversarial)
            row["ssim_sty_adv"] = ssim(stylized, adversarial)
            row["psnr_ori_adv"] = psnr(original, adversarial)
            row["psnr_sty_adv"] = psnr(stylized, adversarial)
        rows.append(row)
    write_report(out_path, rows)
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                   help="override one config key; repeatable, wins over the file")
    p.add_argument("--mode", choices=["untargeted", "targeted"])
    p.add_argument("--target", type=int, help="target class for targeted mode")
    p.add_argument("--seed", type=int)


def _config_from_args(args):
    overrides = list(args.overrides or [])
    if getattr(args, "mode", None):
        overrides.append(f"mode={args.mode}")
    if getattr(args, "target", None) is not None:
        overrides.append(f"target={args.target}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_make_dataset(args):
    cfg = _config_from_args(args)
    rng = SeededRng(cfg.seed, STREAM_DATASET)
    dataset = synth_dataset(rng, per_class=args.per_class,
                            frames_t=args.frames, size=args.size,
                            texture_by_class=args.texture_by_class)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} videos to {args.out}")
    return 0


def cmd_train_toy(args):
    cfg = _config_from_args(args)
    dataset = load_dataset(args.dataset)
    rng = SeededRng(cfg.seed, STREAM_TRAINING)
    clf = train_toy(dataset, epochs=args.epochs, rng=rng,
                    accuracy_bar=args.accuracy_bar, attempts=args.attempts)
    save_classifier(clf, args.out)
    print(f"held-out accuracy {clf.held_out_accuracy:.4f}, saved to {args.out}")
    return 0


def cmd_build_styles(args):
    cfg = _config_from_args(args)
    dataset = load_dataset(args.dataset)
    rng = SeededRng(cfg.seed, STREAM_SPLIT)
    cache = {}
    styles, attack_part = build_style_set(dataset, cfg.split_fraction, rng,
                                          theme_cache=cache, m=cfg.themes,
                                          r=cfg.cone_radius, h=cfg.cone_height)
    save_style_set(styles, attack_part, args.out)
    print(f"{len(styles)} style candidates, {len(attack_part)} attack videos -> {args.out}")
    return 0


def cmd_select(args):
    cfg = _config_from_args(args)
    dataset = load_dataset(args.dataset)
    styles, attack_part, score_path = load_style_set(args.styles, dataset)
    by_id = {lv.id: lv for lv in dataset}
    if args.video not in by_id:
        raise ConfigError(f"unknown video id {args.video}")
    video = by_id[args.video].video
    targeted = cfg.mode == "targeted"
    handle = classifier_handle(cfg) if targeted else None
    budget = QueryBudget(limit=cfg.query_limit)
    chosen, breakdown = select_style(
        video, styles, y_t=cfg.target if targeted else None, mu=cfg.mu,
        handle=handle, budget=budget, m=cfg.themes, r=cfg.cone_radius,
        h=cfg.cone_height, with_breakdown=True)
    for row in breakdown:
        line = f"style {row['source']}: proximity={row['proximity']:.6f}"
        if targeted:
            line += (f" score={row['score']:.6f} mu_term={row['mu_term']:.6f}"
                     f" criterion={row['criterion']:.6f}")
        print(line)
    if targeted:
        write_score_cache(score_path, styles)
        print(f"selection queries: {budget.used}")
    print(f"chosen: {chosen.source_id}")
    return 0


def cmd_transfer(args):
    cfg = _config_from_args(args)
    video = read_vtf(args.video)
    style_video = read_vtf(args.style)
    net = feature_net(cfg)
    result = transfer(video, style_video.frame(0), net, transfer_config(cfg))
    write_vtf(result.stylized, args.out)
    if args.trace:
        write_loss_trace(args.trace, result.trace)
    first, last = result.trace[0], result.trace[-1]
    print(f"total loss {first.total:.6f} -> {last.total:.6f} "
          f"over {len(result.trace)} iterations")
    return 0


def cmd_attack(args):
    if args.resume:
        raise ConfigError("resume is not supported: transcripts record history "
                          "but attack state cannot be reconstructed from them")
    cfg = _config_from_args(args)
    handle = classifier_handle(cfg)
    stylized = read_vtf(args.video)
    budget = QueryBudget(limit=cfg.query_limit)
    if cfg.mode == "targeted":
        if not args.init:
            raise ConfigError("targeted attack needs --init (a video of the target class)")
        x_init = read_vtf(args.init)
        acfg = TargetedConfig(eps_adv=cfg.eps_adv, eta=cfg.eta, n=cfg.n,
                              sigma=cfg.sigma, tile_frames=bool(cfg.tile_frames),
                              seed=cfg.seed)
        outcome = targeted_attack(handle, stylized, x_init, cfg.target, budget, acfg)
    else:
        if args.label is None:
            raise ConfigError("untargeted attack needs --label (the original class)")
        acfg = UntargetedConfig(eps_adv=cfg.eps_adv, eta=cfg.eta, n=cfg.n,
                                sigma=cfg.sigma, tile_frames=bool(cfg.tile_frames),
                                seed=cfg.seed)
        outcome = untargeted_attack(handle, stylized, args.label, budget, acfg)
    write_vtf(outcome.adversarial, args.out)
    if args.transcript:
        write_transcript(args.transcript, outcome.transcript)
    state = outcome.state
    print(f"{'success' if state.success else 'failure'} after {state.queries} queries "
          f"({state.rounds} rounds, final label {state.label})")
    return 0 if state.success else 1


def cmd_eval(args):
    rows = evaluate_outdir(args.outdir, args.out)
    succ = [r for r in rows if r["outcome"] == "success"]
    print(f"{len(rows)} videos, {len(succ)} successes -> {args.out}")
    return 0


def cmd_run(args):
    cfg = _config_from_args(args)
    video_ids = args.videos.split(",") if args.videos else None
    return run_pipeline(cfg, args.dataset, args.styles, args.out, video_ids)


def cmd_serve(args):
    clf = load_classifier(args.classifier)

    def ready(port):
        print(f"listening on {args.host}:{port}", flush=True)

    serve_classifier(clf, host=args.host, port=args.port, ready=ready,
                     max_requests=args.max_requests)
    return 0


def cmd_forward(args):
    """Dump feature-net activations for every frame of a VTF, as JSON.

    A diagnostic for cross-checking alternative implementations of the
    feature net against this one.
    """
    cfg = _config_from_args(args)
    net = feature_net(cfg)
    video = read_vtf(args.input)
    frames = []
    for t in range(video.frames_t):
        taps = forward(net, video.frame(t).data)
        frames.append({
            name: {"shape": list(act.shape),
                   "data": [float(v) for v in np.asarray(act, dtype=np.float64).ravel()]}
            for name, act in taps.items()
        })
    payload = {"input_shape": list(video.data.shape), "frames": frames}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    print(f"wrote activations for {video.frames_t} frames to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="styleadv",
        description="Black-box video attack via style transfer: data synthesis, "
                    "style selection, temporally consistent transfer, and a "
                    "query-limited label-flip attack.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="synthesize a labeled toy video corpus")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--texture-by-class", action="store_true",
                   help="give each class a distinct fine disc texture so "
                        "appearance carries label evidence")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train-toy", help="train the toy video classifier")
    _add_config_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--accuracy-bar", type=float, default=0.95)
    p.add_argument("--attempts", type=int, default=3)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("build-styles", help="split the corpus and cache style palettes")
    _add_config_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_styles)

    p = sub.add_parser("select", help="print the style choice for one video")
    _add_config_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--styles", required=True)
    p.add_argument("--video", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("transfer", help="stylize one video")
    _add_config_args(p)
    p.add_argument("--video", required=True, help="content video VTF")
    p.add_argument("--style", required=True, help="style source VTF (first frame used)")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the per-iteration loss CSV here")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("attack", help="run the black-box attack on a stylized video")
    _add_config_args(p)
    p.add_argument("--video", required=True, help="stylized video VTF")
    p.add_argument("--label", type=int, help="original label (untargeted)")
    p.add_argument("--init", help="initialization video VTF (targeted)")
    p.add_argument("--out", required=True)
    p.add_argument("--transcript")
    p.add_argument("--resume", help="not supported; refused explicitly")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="rebuild the report CSV from run artifacts")
    p.add_argument("--outdir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full pipeline over the attack split")
    _add_config_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--styles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--videos", help="comma-separated video ids (default: whole split)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="serve a toy classifier over the wire protocol")
    p.add_argument("--classifier", required=True, help="TCF weights path")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--max-requests", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("forward", help="dump feature-net activations for a VTF")
    _add_config_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forward)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StyleAdvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
