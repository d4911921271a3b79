"""Target classifiers: the local toy model, query accounting, and the wire protocol.

The attack only ever sees `query(handle, video, budget) -> Prediction`, i.e.
top-1 label plus its confidence, with every call charged against a budget.
Handles expose `predict_many` over a stacked batch of videos so the n noise
probes of one gradient estimate can be evaluated together. Inference is
deterministic for a given batch shape; batched and serialized evaluation
agree up to BLAS reduction order (logits within ~1e-6), so the two are
observationally interchangeable away from exact decision-boundary ties.

The toy model is a per-frame conv net (three conv-relu-pool blocks) whose
frame features are averaged over time before a dense head; it is trained on
a synthetic "moving shape" dataset where the class is the motion pattern.
Remote classifiers speak newline-delimited JSON over TCP; see `serve` for
the reference server.
"""

import base64
import json
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .colors import hsv_to_rgb
from .convops import (
    avgpool2_backward,
    avgpool2_forward,
    conv3x3_backward_data,
    conv3x3_backward_weights,
    conv3x3_forward,
    relu_backward,
    relu_forward,
)
from .core import SeededRng, VideoTensor
from .errors import (
    BudgetExhaustedError,
    CorruptFileError,
    FormatError,
    ProtocolError,
    QueryTransportError,
    TrainingError,
)

NUM_CLASSES = 5
CLASS_NAMES = ("left", "right", "up", "down", "rotate")
QUERY_LIMIT = 300_000
TCF_MAGIC = b"TCF1"


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float


@dataclass
class QueryBudget:
    limit: int = QUERY_LIMIT
    used: int = 0

    @property
    def remaining(self):
        return self.limit - self.used

    def spend(self, k=1):
        """Charge k queries; raising once the limit is crossed.

        A refused call spends nothing; a batch that would cross the limit
        spends what room is left (matching the serialized semantics where
        queries succeed until the budget runs dry) and then raises.
        """
        if k <= 0:
            raise ValueError(f"query spend must be positive, got {k}")
        if self.used >= self.limit:
            raise BudgetExhaustedError(
                f"query budget exhausted ({self.limit})", spent=0, requested=k)
        if self.used + k > self.limit:
            room = self.limit - self.used
            self.used = self.limit
            raise BudgetExhaustedError(
                f"query budget exhausted mid-batch ({self.limit})",
                spent=room, requested=k)
        self.used += k


def query(handle, video, budget):
    """One budgeted classification of a VideoTensor."""
    budget.spend(1)
    return handle.predict_many(video.data[None])[0]


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledVideo:
    id: str
    video: VideoTensor
    label: int


def _draw_disc(frame, cy, cx, radius, color, stripes=None):
    h, w, _ = frame.shape
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
    alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    fill = np.broadcast_to(np.asarray(color, dtype=float), frame.shape)
    if stripes is not None:
        # fine bands perpendicular to theta, fixed in frame coordinates
        theta, contrast, phase, period = stripes
        proj = xs * np.cos(theta) + ys * np.sin(theta) + phase
        band = np.where(np.mod(proj, period) < period / 2.0,
                        1.0 + contrast, 1.0 - contrast)
        fill = np.clip(fill * band[..., None], 0.0, 1.0)
    frame *= 1.0 - alpha
    frame += alpha * fill


def synth_dataset(rng, per_class, frames_t=16, size=32, texture_by_class=False):
    """Balanced list of LabeledVideos: a bright disc moving by class pattern.

    Classes: 0 drifts left, 1 right, 2 up, 3 down, 4 orbits the center. The
    disc starts near the middle over a static blocky noise background, so
    after temporal averaging each class leaves a distinct occupancy footprint.

    With texture_by_class the background becomes saturated color noise, the
    disc carries a fine stripe pattern whose orientation encodes the label
    (36 degree steps) while its hue stays class agnostic, and the
    motion pattern is drawn at random rather than by label. The label then
    lives only in appearance, the way scene texture carries class evidence
    for real video classifiers, the dominant palette mass stays label blind
    for style selection, and restyling rewrites exactly the fine texture the
    classifier leans on.
    """
    videos = []
    travel = size * 0.38
    for label in range(NUM_CLASSES):
        for idx in range(per_class):
            s4 = size // 4
            if texture_by_class:
                cells = np.stack([
                    rng.uniform(0.0, 360.0, shape=(s4, s4)),
                    rng.uniform(0.4, 0.8, shape=(s4, s4)),
                    rng.uniform(0.25, 0.75, shape=(s4, s4)),
                ], axis=2)
                bg_coarse = np.stack([
                    hsv_to_rgb(cells[i, j])
                    for i in range(s4) for j in range(s4)
                ]).reshape(s4, s4, 3)
                hue = float(rng.uniform(0.0, 360.0))
                stripes = (label * np.pi / 5.0, 0.6,
                           float(rng.uniform(0.0, 3.0)), 3.0)
                pattern = int(rng.integers(0, NUM_CLASSES))
                radius = 5.5
            else:
                bg_coarse = rng.uniform(0.0, 0.4, shape=(s4, s4, 3))
                hue = float(rng.uniform(0.0, 360.0))
                stripes = None
                pattern = label
                radius = 4.5
            bg = np.repeat(np.repeat(bg_coarse, 4, axis=0), 4, axis=1)
            color = hsv_to_rgb([
                hue,
                float(rng.uniform(0.7, 1.0)),
                float(rng.uniform(0.8, 1.0)),
            ])
            cy0 = size / 2 + float(rng.uniform(-2, 2))
            cx0 = size / 2 + float(rng.uniform(-2, 2))
            theta0 = float(rng.uniform(0.0, 2 * np.pi))
            frames = []
            for t in range(frames_t):
                u = t / (frames_t - 1)
                if pattern == 0:
                    cy, cx = cy0, cx0 - travel * u
                elif pattern == 1:
                    cy, cx = cy0, cx0 + travel * u
                elif pattern == 2:
                    cy, cx = cy0 - travel * u, cx0
                elif pattern == 3:
                    cy, cx = cy0 + travel * u, cx0
                else:
                    ang = theta0 + 5.2 * u
                    cy = cy0 + 0.65 * travel * np.sin(ang)
                    cx = cx0 + 0.65 * travel * np.cos(ang)
                frame = bg.copy()
                _draw_disc(frame, cy, cx, radius, color, stripes)
                frames.append(frame)
            data = np.clip(np.stack(frames), 0.0, 1.0).astype(np.float32)
            videos.append(LabeledVideo(f"synth_{label}_{idx:03d}", VideoTensor(data), label))
    return videos


# ---------------------------------------------------------------------------
# toy classifier
# ---------------------------------------------------------------------------

TOY_CHANNELS = (8, 16, 32)


@dataclass
class ToyClassifier:
    """Per-frame conv features, temporal average, dense head, softmax at T=1."""

    conv_w: list   # three (out, in, 3, 3) kernels
    conv_b: list
    fc_w: np.ndarray  # (feat, NUM_CLASSES)
    fc_b: np.ndarray
    held_out_accuracy: float = None
    infer_dtype: type = np.float32

    def _frame_features(self, frames):
        x = frames
        for w, b in zip(self.conv_w, self.conv_b):
            x = avgpool2_forward(relu_forward(conv3x3_forward(
                x, w.astype(x.dtype), b.astype(x.dtype))))
        return x.reshape(x.shape[0], -1)

    def logits_many(self, batch):
        """(N, T, H, W, C) -> (N, K) logits."""
        arr = np.asarray(batch, dtype=self.infer_dtype)
        n, t = arr.shape[:2]
        feats = self._frame_features(arr.reshape((n * t,) + arr.shape[2:]))
        pooled = feats.reshape(n, t, -1).mean(axis=1)
        return pooled @ self.fc_w.astype(pooled.dtype) + self.fc_b.astype(pooled.dtype)

    def probs_many(self, batch):
        logits = self.logits_many(batch).astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict_many(self, batch):
        probs = self.probs_many(batch)
        labels = probs.argmax(axis=1)
        return [Prediction(int(l), float(p[l])) for l, p in zip(labels, probs)]


def save_classifier(clf, path):
    arrays = list(clf.conv_w) + list(clf.conv_b) + [clf.fc_w, clf.fc_b]
    with open(path, "wb") as fh:
        fh.write(TCF_MAGIC + struct.pack("<I", len(arrays)))
        for a in arrays:
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_classifier(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TCF_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape))
            a = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
            off += 4 * n
            arrays.append(a.copy())
    except (struct.error, ValueError) as exc:
        raise CorruptFileError(f"{path}: truncated ({exc})") from exc
    if off != len(blob):
        raise CorruptFileError(f"{path}: {len(blob) - off} trailing bytes")
    if len(arrays) != 8:
        raise CorruptFileError(f"{path}: expected 8 arrays, found {len(arrays)}")
    return ToyClassifier(arrays[0:3], arrays[3:6], arrays[6], arrays[7])


def _init_toy(rng, size=32):
    conv_w, conv_b = [], []
    cin = 3
    for cout in TOY_CHANNELS:
        fan_in = cin * 9
        conv_w.append((rng.normal((cout, cin, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(np.float32))
        conv_b.append(np.zeros(cout, dtype=np.float32))
        cin = cout
    feat = (size // 8) ** 2 * TOY_CHANNELS[-1]
    fc_w = (rng.normal((feat, NUM_CLASSES)) * np.sqrt(1.0 / feat)).astype(np.float32)
    fc_b = np.zeros(NUM_CLASSES, dtype=np.float32)
    return ToyClassifier(conv_w, conv_b, fc_w, fc_b)


def _train_once(dataset, epochs, rng, lr, batch_size, label_smoothing):
    order = np.arange(len(dataset))
    # stratified 80/20 split, deterministic under rng
    by_class = {}
    for i, lv in enumerate(dataset):
        by_class.setdefault(lv.label, []).append(i)
    train_idx, test_idx = [], []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        idx = idx[rng.integers(0, 2 ** 31, shape=len(idx)).argsort()]
        cut = max(1, int(round(len(idx) * 0.2)))
        test_idx.extend(idx[:cut])
        train_idx.extend(idx[cut:])
    train_idx, test_idx = np.array(train_idx), np.array(test_idx)

    clf = _init_toy(rng, size=dataset[0].video.height)
    x_all = np.stack([lv.video.data for lv in dataset])
    y_all = np.array([lv.label for lv in dataset])
    k = NUM_CLASSES
    targets = np.full((len(dataset), k), label_smoothing / k, dtype=np.float64)
    targets[np.arange(len(dataset)), y_all] += 1.0 - label_smoothing

    params = clf.conv_w + clf.conv_b + [clf.fc_w, clf.fc_b]
    mom = [np.zeros_like(p, dtype=np.float64) for p in params]
    vel = [np.zeros_like(p, dtype=np.float64) for p in params]
    step_count = 0

    for _ in range(epochs):
        perm = train_idx[rng.integers(0, 2 ** 31, shape=len(train_idx)).argsort()]
        for s in range(0, len(perm), batch_size):
            sel = perm[s:s + batch_size]
            xb = x_all[sel].astype(np.float32)
            n, t = xb.shape[:2]
            frames = xb.reshape((n * t,) + xb.shape[2:])

            # forward with cache
            cache = []
            x = frames
            for w, b in zip(clf.conv_w, clf.conv_b):
                pre = conv3x3_forward(x, w, b)
                act = relu_forward(pre)
                pooled = avgpool2_forward(act)
                cache.append((x, pre, act))
                x = pooled
            feat = x.reshape(n, t, -1).mean(axis=1)
            logits = feat @ clf.fc_w + clf.fc_b
            z = (logits - logits.max(axis=1, keepdims=True)).astype(np.float64)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)

            dlogits = ((p - targets[sel]) / n).astype(np.float32)
            g_fc_w = feat.T @ dlogits
            g_fc_b = dlogits.sum(axis=0)
            dfeat = dlogits @ clf.fc_w.T
            dframe = np.repeat(dfeat[:, None, :] / t, t, axis=1).reshape(n * t, -1)
            g = dframe.reshape(x.shape)

            grads_w, grads_b = [], []
            for (xin, pre, act), w in zip(reversed(cache), reversed(clf.conv_w)):
                g = avgpool2_backward(g, act.shape)
                g = relu_backward(g, pre)
                gw, gb = conv3x3_backward_weights(xin, g)
                grads_w.append(gw)
                grads_b.append(gb)
                g = conv3x3_backward_data(g, w)
            grads = list(reversed(grads_w)) + list(reversed(grads_b)) + [g_fc_w, g_fc_b]

            step_count += 1
            for pi, (param, grad) in enumerate(zip(params, grads)):
                mom[pi] = 0.9 * mom[pi] + 0.1 * grad
                vel[pi] = 0.999 * vel[pi] + 0.001 * grad.astype(np.float64) ** 2
                mhat = mom[pi] / (1 - 0.9 ** step_count)
                vhat = vel[pi] / (1 - 0.999 ** step_count)
                param -= (lr * mhat / (np.sqrt(vhat) + 1e-8)).astype(np.float32)

    preds = clf.predict_many(x_all[test_idx])
    acc = float(np.mean([pr.label == y_all[i] for pr, i in zip(preds, test_idx)]))
    clf.held_out_accuracy = acc
    return clf, acc


def train_toy(dataset, epochs=20, rng=None, accuracy_bar=0.95, attempts=3,
              lr=2e-3, batch_size=16, label_smoothing=0.1):
    """Train the toy model; retries with derived seeds until the bar is met."""
    rng = rng or SeededRng(0, 0)
    history = []
    for attempt in range(attempts):
        sub = rng.spawn(1000 + attempt) if attempt else rng
        clf, acc = _train_once(dataset, epochs, sub, lr, batch_size, label_smoothing)
        history.append(acc)
        if acc >= accuracy_bar:
            return clf
    raise TrainingError(
        f"held-out accuracy {history} never reached {accuracy_bar} in {attempts} attempts")


# ---------------------------------------------------------------------------
# remote classifiers (newline-delimited JSON over TCP)
# ---------------------------------------------------------------------------

def _encode_request(req_id, video_array):
    arr = np.ascontiguousarray(video_array, dtype="<f4")
    return json.dumps({
        "id": int(req_id),
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }) + "\n"


def _decode_request(line):
    try:
        obj = json.loads(line)
        req_id = int(obj["id"])
        shape = tuple(int(v) for v in obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed request: {exc}") from exc
    if len(shape) != 4:
        raise ProtocolError(f"request shape must have 4 dims, got {shape}")
    expect = int(np.prod(shape)) * 4
    if len(raw) != expect:
        raise ProtocolError(f"payload holds {len(raw)} bytes, shape needs {expect}")
    return req_id, np.frombuffer(raw, dtype="<f4").reshape(shape)


class RemoteClassifier:
    """Client handle for a classifier served over host:port."""

    def __init__(self, endpoint, timeout=30.0):
        host, sep, port = endpoint.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
        self.host, self.port = host, int(port)
        self.timeout = timeout
        self._sock = None
        self._reader = None
        self._next_id = 0

    def connect(self):
        if self._sock is not None:
            return
        try:
            self._sock = socket.create_connection((self.host, self.port), self.timeout)
        except OSError as exc:
            raise QueryTransportError(
                f"cannot reach classifier at {self.host}:{self.port}: {exc}") from exc
        self._sock.settimeout(self.timeout)
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._reader = None

    def predict_many(self, batch):
        self.connect()
        batch = np.asarray(batch)
        ids = list(range(self._next_id, self._next_id + batch.shape[0]))
        self._next_id += batch.shape[0]
        try:
            payload = "".join(_encode_request(i, v) for i, v in zip(ids, batch))
            self._sock.sendall(payload.encode("utf-8"))
            preds = []
            for expect_id in ids:
                line = self._reader.readline()
                if not line:
                    raise QueryTransportError("connection closed mid-response")
                try:
                    obj = json.loads(line)
                    got_id, label, conf = int(obj["id"]), obj["label"], obj["confidence"]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ProtocolError(f"malformed response: {exc}") from exc
                if got_id != expect_id:
                    raise ProtocolError(f"response id {got_id} does not echo request {expect_id}")
                if not isinstance(label, int) or isinstance(label, bool):
                    raise ProtocolError(f"label must be an integer, got {label!r}")
                conf = float(conf)
                if not np.isfinite(conf):
                    raise ProtocolError(f"confidence must be finite, got {conf!r}")
                preds.append(Prediction(label, conf))
            return preds
        except socket.timeout as exc:
            raise QueryTransportError(f"classifier timed out after {self.timeout}s") from exc


def remote_classifier(endpoint, timeout=30.0, check=False):
    handle = RemoteClassifier(endpoint, timeout)
    if check:
        handle.connect()
    return handle


def serve_classifier(clf, host="127.0.0.1", port=0, ready=None, max_requests=None):
    """Serve a toy classifier; blocks. `ready` (if given) receives the port."""
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    if ready is not None:
        ready(srv.getsockname()[1])
    served = 0
    try:
        while max_requests is None or served < max_requests:
            conn, _ = srv.accept()
            with conn, conn.makefile("r", encoding="utf-8", newline="\n") as reader:
                for line in reader:
                    if not line.strip():
                        continue
                    try:
                        req_id, video = _decode_request(line)
                        pred = clf.predict_many(video[None])[0]
                        reply = {"id": req_id, "label": pred.label,
                                 "confidence": pred.confidence}
                    except ProtocolError as exc:
                        reply = {"error": str(exc)}
                    conn.sendall((json.dumps(reply) + "\n").encode("utf-8"))
                    served += 1
                    if max_requests is not None and served >= max_requests:
                        break
    finally:
        srv.close()
