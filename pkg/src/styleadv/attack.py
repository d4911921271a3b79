"""Query-limited black-box attack on a video classifier.

The classifier exposes only its top-1 label and confidence, so gradients
are estimated with antithetic natural evolution strategies: n/2 Gaussian
directions, each probed in both signs, combined as

    g ~ (1 / (n * sigma)) * sum_i delta_i * (L(x + sigma delta_i) - L(x - sigma delta_i))

The paired-difference form makes the estimate exactly zero on a constant
oracle and unbiased for the smoothed gradient otherwise. By default the
probe directions are tiled: one frame-shaped draw per sample, repeated
over the frame axis (tile_frames). n samples spread over the full video
tensor leave per-coordinate sign accuracy near chance, and moves that
need many small coordinated components never materialize; tiling
divides the estimated dimensions by the frame count at no query cost,
and a video classifier that pools features over time responds to a
frame-shared perturbation just as strongly.

Untargeted runs start from the stylized video and take projected signed
steps inside an eps_adv ball around it until the label flips. The
untargeted step is small relative to the ball: each round re-estimates
the gradient, so per coordinate the iterate is a bounded random walk
whose stationary tilt toward the true descent direction scales
inversely with the step size; steps near the ball radius reset the walk
every round and stall. Targeted runs
start from a video of the target class and walk the perturbation bound
down from 1.0 to eps_adv, only accepting steps that keep the target
label; rejected steps halve the step size, then the bound decrement.

Every classifier call is one query and one transcript line, so a run can
be audited after the fact by replaying the transcript.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .classifiers import QueryBudget  # noqa: F401  (re-exported for callers)
from .core import SeededRng, VideoTensor
from .errors import BudgetExhaustedError, CorruptFileError, PreconditionError

EPS_ADV = 0.05
NES_SAMPLES = 64
SIGMA_UNTARGETED = 1e-3
SIGMA_TARGETED = 1e-6
ETA = 0.02
# untargeted default: must sit well below eps_adv so the signed walk can
# accumulate the weak per-round gradient signal instead of bouncing
# between ball faces (see module docstring)
ETA_UNTARGETED = 0.002
ETA_CAP = 0.05
DELTA_EPS = 0.01
DELTA_EPS_FLOOR = 1e-4
ETA_RETRIES = 5
RECOVER_AFTER = 3
RECOVER_FACTOR = 1.5
# snap tolerance for the shrinking bound: absorbs float drift from repeated
# delta_eps subtraction, far below the delta_eps floor so it never misfires
EPS_SNAP = 1e-9


@dataclass
class NesConfig:
    """Antithetic NES estimator settings. n must be even; each estimate
    costs exactly n oracle calls. With tile_frames the probe directions
    are drawn once per frame shape and repeated over the frame axis."""
    n: int = NES_SAMPLES
    sigma: float = SIGMA_UNTARGETED
    seed: int = 0
    stream: int = 0
    tile_frames: bool = False


@dataclass
class UntargetedConfig:
    eps_adv: float = EPS_ADV
    eta: float = ETA_UNTARGETED
    n: int = NES_SAMPLES
    sigma: float = SIGMA_UNTARGETED
    tile_frames: bool = True  # estimate one shared per-frame perturbation
    seed: int = 0
    stream_base: int = 0  # offset for per-round RNG streams, one block per video


@dataclass
class TargetedConfig:
    eps_adv: float = EPS_ADV
    eps_init: float = 1.0
    eta: float = ETA
    eta_cap: float = ETA_CAP
    eta_retries: int = ETA_RETRIES
    delta_eps: float = DELTA_EPS
    delta_eps_floor: float = DELTA_EPS_FLOOR
    recover_after: int = RECOVER_AFTER
    recover_factor: float = RECOVER_FACTOR
    n: int = NES_SAMPLES
    sigma: float = SIGMA_TARGETED
    tile_frames: bool = True  # estimate one shared per-frame perturbation
    seed: int = 0
    stream_base: int = 0


@dataclass
class AttackState:
    success: bool = False
    queries: int = 0          # transcript lines written by this attack
    queries_charged: int = 0  # budget consumed, >= queries if a batch was refused
    rounds: int = 0
    epsilon: float = 0.0
    label: int = None
    confidence: float = None
    budget_exhausted: bool = False


@dataclass
class AttackResult:
    adversarial: VideoTensor
    state: AttackState
    transcript: list = field(default_factory=list)


def adversarial_loss(pred, y0=None, y_t=None):
    """Scalar loss from a top-1 prediction.

    Untargeted (y0 set): the confidence still assigned to the original
    label, zero once the label has left the top spot. Targeted (y_t set):
    1 - confidence while the target holds top-1, else the ceiling 2 so any
    probe that reaches the target class beats every probe that does not.
    """
    if (y0 is None) == (y_t is None):
        raise ValueError("exactly one of y0, y_t must be set")
    if y0 is not None:
        return pred.confidence if pred.label == y0 else 0.0
    return 1.0 - pred.confidence if pred.label == y_t else 2.0


def nes_gradient(query_loss, x, cfg):
    """Estimate the loss gradient at x from 2 * (n/2) paired probes.

    query_loss maps a stacked array of probe points, shape (n, *x.shape),
    to a float array of n losses; the probes are sent in one batch, first
    the +sigma side in draw order, then the -sigma side in reversed order.
    With cfg.tile_frames each probe direction is one frame-shaped draw
    repeated over the leading frame axis, and the returned gradient holds
    that shared estimate in every frame slot.
    """
    if cfg.n < 2 or cfg.n % 2:
        raise ValueError(f"sample count must be even and >= 2, got {cfg.n}")
    if cfg.sigma <= 0:
        raise ValueError(f"sigma must be positive, got {cfg.sigma}")
    x = np.asarray(x, dtype=np.float64)
    half = cfg.n // 2
    rng = SeededRng(cfg.seed, cfg.stream)
    if cfg.tile_frames:
        delta = rng.normal(shape=(half,) + x.shape[1:])[:, None]
    else:
        delta = rng.normal(shape=(half,) + x.shape)
    probes = np.concatenate([x[None] + cfg.sigma * delta,
                             x[None] - cfg.sigma * delta[::-1]], axis=0)
    losses = np.asarray(query_loss(probes), dtype=np.float64)
    if losses.shape != (cfg.n,):
        raise ValueError(f"oracle returned {losses.shape}, expected ({cfg.n},)")
    # pair i with its antithetic partner at n - 1 - i
    diff = losses[:half] - losses[cfg.n - 1:half - 1:-1]
    grad = np.tensordot(diff, delta, axes=(0, 0)) / (cfg.n * cfg.sigma)
    return np.broadcast_to(grad, x.shape) if cfg.tile_frames else grad


def project(x, center, eps):
    """Clip x into the L-inf ball of radius eps around center, then [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    return np.clip(np.clip(x, center - eps, center + eps), 0.0, 1.0)


class _Transcript:
    """Accumulates one line per classifier call, with a running query index."""

    def __init__(self):
        self.rows = []

    def log(self, kind, pred, eps):
        self.rows.append({
            "q": len(self.rows) + 1,
            "kind": kind,
            "label": int(pred.label),
            "conf": float(pred.confidence),
            "eps": float(eps),
        })


class _Oracle:
    """Budget-charging, transcript-logging view of the classifier.

    Probes arrive as raw float arrays, are clipped to [0, 1], and every
    prediction is logged. The budget is charged before the batch is sent;
    a refusal or partial charge surfaces as BudgetExhaustedError with
    nothing logged for the aborted batch.
    """

    def __init__(self, handle, budget, transcript):
        self.handle = handle
        self.budget = budget
        self.transcript = transcript
        self.charged = 0

    def predict_batch(self, batch, kind, eps):
        k = len(batch)
        try:
            self.budget.spend(k)
        except BudgetExhaustedError as exc:
            self.charged += exc.spent
            raise
        self.charged += k
        videos = np.clip(np.asarray(batch, dtype=np.float64), 0.0, 1.0).astype(np.float32)
        preds = self.handle.predict_many(videos)
        for p in preds:
            self.transcript.log(kind, p, eps)
        return preds

    def predict_one(self, x, kind, eps):
        return self.predict_batch(np.asarray(x, dtype=np.float64)[None], kind, eps)[0]


def untargeted_attack(handle, stylized, y0, budget, cfg=None):
    """Drive the classifier off label y0 inside an eps_adv ball around the
    stylized video.

    One probe on the stylized video itself (free success when the style
    transfer already flipped the label), then rounds of one NES estimate
    (n queries) plus one verification, so a one-round success costs
    1 + n + 1 queries.
    """
    cfg = cfg or UntargetedConfig()
    transcript = _Transcript()
    oracle = _Oracle(handle, budget, transcript)
    state = AttackState(epsilon=cfg.eps_adv)
    xs = stylized.data.astype(np.float64)
    x_adv = xs.copy()

    def finish(pred):
        state.queries = len(transcript.rows)
        state.queries_charged = oracle.charged
        if pred is not None:
            state.label, state.confidence = pred.label, pred.confidence
        return AttackResult(VideoTensor(x_adv.astype(np.float32)), state, transcript.rows)

    try:
        pred = oracle.predict_one(xs, "probe", cfg.eps_adv)
    except BudgetExhaustedError:
        state.budget_exhausted = True
        return finish(None)
    if pred.label != y0:
        state.success = True
        return finish(pred)

    def loss_batch(probes):
        preds = oracle.predict_batch(probes, "nes", cfg.eps_adv)
        return [adversarial_loss(p, y0=y0) for p in preds]

    while True:
        nes = NesConfig(n=cfg.n, sigma=cfg.sigma, seed=cfg.seed,
                        stream=cfg.stream_base + state.rounds,
                        tile_frames=cfg.tile_frames)
        try:
            grad = nes_gradient(loss_batch, x_adv, nes)
            x_adv = project(x_adv - cfg.eta * np.sign(grad), xs, cfg.eps_adv)
            pred = oracle.predict_one(x_adv, "verify", cfg.eps_adv)
        except BudgetExhaustedError:
            state.budget_exhausted = True
            return finish(None)
        state.rounds += 1
        if pred.label != y0:
            state.success = True
            return finish(pred)


def targeted_attack(handle, stylized, x_init, y_t, budget, cfg=None):
    """Walk x_init (classified y_t) toward the stylized video until the
    perturbation bound reaches eps_adv while keeping the target label.

    Each round: one NES estimate of the targeted loss at the current
    point, then a proposed step projected into the shrunk ball, verified
    with one query. Rejections halve the step size up to eta_retries
    times on the same gradient; if all retries fail the bound decrement
    is halved (floored at delta_eps_floor) and the round ends without
    moving. recover_after consecutive accepted rounds scale the step
    back up by recover_factor, capped at eta_cap.
    """
    cfg = cfg or TargetedConfig()
    transcript = _Transcript()
    oracle = _Oracle(handle, budget, transcript)
    xs = stylized.data.astype(np.float64)
    eps = cfg.eps_init
    state = AttackState(epsilon=eps)

    def finish(pred):
        state.queries = len(transcript.rows)
        state.queries_charged = oracle.charged
        state.epsilon = eps
        if pred is not None:
            state.label, state.confidence = pred.label, pred.confidence
        return AttackResult(VideoTensor(x_adv.astype(np.float32)), state, transcript.rows)

    x_adv = project(x_init.data, xs, eps)
    try:
        pred = oracle.predict_one(x_adv, "probe", eps)
    except BudgetExhaustedError:
        state.budget_exhausted = True
        return finish(None)
    if pred.label != y_t:
        state.queries = len(transcript.rows)
        state.queries_charged = oracle.charged
        raise PreconditionError(
            f"initialization video classifies as {pred.label}, not target {y_t}")
    if eps <= cfg.eps_adv:
        state.success = True
        return finish(pred)

    eta = cfg.eta
    delta_eps = cfg.delta_eps
    consecutive = 0

    def loss_batch(probes):
        preds = oracle.predict_batch(probes, "nes", eps)
        return [adversarial_loss(p, y_t=y_t) for p in preds]

    while True:
        nes = NesConfig(n=cfg.n, sigma=cfg.sigma, seed=cfg.seed,
                        stream=cfg.stream_base + state.rounds,
                        tile_frames=cfg.tile_frames)
        try:
            grad = nes_gradient(loss_batch, x_adv, nes)
        except BudgetExhaustedError:
            state.budget_exhausted = True
            return finish(None)
        step = np.sign(grad)
        target_eps = eps - delta_eps
        if target_eps <= cfg.eps_adv + EPS_SNAP:
            target_eps = cfg.eps_adv
        accepted = False
        for _ in range(1 + cfg.eta_retries):
            proposal = project(x_adv - eta * step, xs, target_eps)
            try:
                pred = oracle.predict_one(proposal, "verify", target_eps)
            except BudgetExhaustedError:
                state.budget_exhausted = True
                return finish(None)
            if pred.label == y_t:
                accepted = True
                break
            eta = eta / 2.0
            consecutive = 0
        state.rounds += 1
        if accepted:
            x_adv = proposal
            eps = target_eps
            consecutive += 1
            if consecutive % cfg.recover_after == 0:
                eta = min(eta * cfg.recover_factor, cfg.eta_cap)
            if eps <= cfg.eps_adv:
                state.success = True
                return finish(pred)
        else:
            delta_eps = max(delta_eps / 2.0, cfg.delta_eps_floor)


# ---------------------------------------------------------------------------
# transcripts
# ---------------------------------------------------------------------------

TRANSCRIPT_KINDS = ("probe", "nes", "verify")


def write_transcript(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({
                "q": row["q"], "kind": row["kind"], "label": row["label"],
                "conf": row["conf"], "eps": row["eps"],
            }) + "\n")


def read_transcript(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append({
                    "q": int(obj["q"]), "kind": str(obj["kind"]),
                    "label": int(obj["label"]), "conf": float(obj["conf"]),
                    "eps": float(obj["eps"]),
                })
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptFileError(f"{path}: corrupt transcript line {lineno}: {exc}") from exc
    return rows


@dataclass
class ReplaySummary:
    total_queries: int
    rounds: int
    probe_queries: int
    nes_queries: int
    verify_queries: int


def replay_transcript(rows, n=NES_SAMPLES):
    """Recount a transcript independently of the attack loop.

    Checks that query indices increment from 1, that the run opens with a
    probe, that every NES block holds exactly n lines followed by at least
    one verification, and returns the recomputed totals.
    """
    if not rows:
        raise CorruptFileError("empty transcript")
    counts = {k: 0 for k in TRANSCRIPT_KINDS}
    for i, row in enumerate(rows):
        if row["q"] != i + 1:
            raise CorruptFileError(f"query index {row['q']} at position {i + 1}")
        if row["kind"] not in counts:
            raise CorruptFileError(f"unknown query kind {row['kind']!r}")
        counts[row["kind"]] += 1
    if rows[0]["kind"] != "probe":
        raise CorruptFileError("transcript does not open with a probe")
    rounds = 0
    i = 1
    while i < len(rows):
        block = rows[i:i + n]
        if len(block) < n or any(r["kind"] != "nes" for r in block):
            raise CorruptFileError(f"incomplete NES block at query {i + 1}")
        i += n
        if i >= len(rows) or rows[i]["kind"] != "verify":
            raise CorruptFileError(f"NES block at query {i - n + 1} has no verification")
        while i < len(rows) and rows[i]["kind"] == "verify":
            i += 1
        rounds += 1
    total = counts["probe"] + counts["nes"] + counts["verify"]
    if total != len(rows) or counts["nes"] != rounds * n:
        raise CorruptFileError("query counts do not reconcile")
    return ReplaySummary(
        total_queries=total, rounds=rounds, probe_queries=counts["probe"],
        nes_queries=counts["nes"], verify_queries=counts["verify"],
    )
