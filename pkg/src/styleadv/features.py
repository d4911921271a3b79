"""Fixed-weight convolutional feature extractor and its FWF weight container.

The default net is a small VGG-flavored stack of 3x3 convs, relus, and 2x2
average pools. Style statistics are read at the first relu of each depth
block (relu1_1 ... relu5_1) and content features at relu4_2; any net whose
layer names follow that convention picks up the same taps when loaded.

Weights are fixed at load time; the only gradient this module produces is
with respect to the *input image*, which is what the style-transfer
optimizer needs. The backward pass is hand-derived per op: transposed
convolution for conv layers, mask multiplication for relu, and uniform
spreading for average pooling.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convops import (
    avgpool2_backward,
    avgpool2_forward,
    conv3x3_backward_data,
    conv3x3_forward,
    relu_backward,
    relu_forward,
)
from .core import ImageTensor, SeededRng
from .errors import CorruptFileError, FormatError

FWF_MAGIC = b"FWF1"
KIND_CONV = 0
KIND_RELU = 1
KIND_POOL = 2

STYLE_TAP_SUFFIXES = ("1_1", "2_1", "3_1", "4_1", "5_1")
CONTENT_TAP = "relu4_2"

_ASSET_DIR = Path(__file__).parent / "assets"
DEFAULT_WEIGHTS = _ASSET_DIR / "default_weights.fwf"


@dataclass
class Layer:
    name: str
    kind: int
    weights: np.ndarray = None  # (out, in, 3, 3) for conv layers
    bias: np.ndarray = None     # (out,)

    def __post_init__(self):
        # canonical C layout: BLAS accumulation order depends on strides, so a
        # net must forward bit-identically to its save/load round-trip
        if self.weights is not None:
            self.weights = np.ascontiguousarray(self.weights)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias)


@dataclass
class FeatureNet:
    layers: list
    style_taps: list = field(default_factory=list)
    content_tap: str = None

    def __post_init__(self):
        if not self.style_taps and self.content_tap is None:
            names = {l.name for l in self.layers}
            self.style_taps = [
                f"relu{s}" for s in STYLE_TAP_SUFFIXES if f"relu{s}" in names
            ]
            if CONTENT_TAP in names:
                self.content_tap = CONTENT_TAP

    @property
    def tap_names(self):
        taps = list(self.style_taps)
        if self.content_tap and self.content_tap not in taps:
            taps.append(self.content_tap)
        return taps

    def input_channels(self):
        for l in self.layers:
            if l.kind == KIND_CONV:
                return l.weights.shape[1]
        return None


# ---------------------------------------------------------------------------
# FWF container
# ---------------------------------------------------------------------------

def save_weights(net, path):
    with open(path, "wb") as fh:
        fh.write(FWF_MAGIC)
        fh.write(struct.pack("<I", len(net.layers)))
        for l in net.layers:
            name = l.name.encode("utf-8")
            fh.write(struct.pack("<B", len(name)) + name + struct.pack("<B", l.kind))
            if l.kind == KIND_CONV:
                cout, cin = l.weights.shape[:2]
                fh.write(struct.pack("<II", cin, cout))
                fh.write(np.ascontiguousarray(l.weights, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(l.bias, dtype="<f4").tobytes())


def load_weights(path):
    """Parse an FWF file into a FeatureNet, validating the channel chain."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FWF_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    off = 4

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CorruptFileError(f"{path}: truncated while reading {what}")
        piece = blob[off:off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4, "layer count"))
    layers = []
    chain = None  # channel count flowing between layers
    for i in range(count):
        (nlen,) = struct.unpack("<B", take(1, f"layer {i} name length"))
        name = take(nlen, f"layer {i} name").decode("utf-8")
        (kind,) = struct.unpack("<B", take(1, f"{name} kind"))
        if kind == KIND_CONV:
            cin, cout = struct.unpack("<II", take(8, f"{name} channels"))
            if chain is not None and cin != chain:
                raise CorruptFileError(
                    f"{path}: layer {name} expects {cin} input channels, "
                    f"previous layer produces {chain}"
                )
            w = np.frombuffer(take(cout * cin * 36, f"{name} weights"), dtype="<f4")
            b = np.frombuffer(take(cout * 4, f"{name} bias"), dtype="<f4")
            layers.append(Layer(name, kind,
                                w.reshape(cout, cin, 3, 3).copy(), b.copy()))
            chain = cout
        elif kind in (KIND_RELU, KIND_POOL):
            layers.append(Layer(name, kind))
        else:
            raise CorruptFileError(f"{path}: layer {name} has unknown kind {kind}")
    if off != len(blob):
        raise CorruptFileError(f"{path}: {len(blob) - off} trailing bytes after last layer")
    return FeatureNet(layers)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _as_batch(image):
    if isinstance(image, ImageTensor):
        return image.data[None], True
    arr = np.asarray(image)
    if arr.ndim == 3:
        return arr[None], True
    return arr, False


def _layer_weights(layer, dtype):
    # cache per-dtype copies so float64 gradient checks and the float32 hot
    # path both avoid per-call casts
    cache = getattr(layer, "_wcache", None)
    if cache is None:
        cache = {}
        layer._wcache = cache
    key = np.dtype(dtype).str
    if key not in cache:
        cache[key] = (layer.weights.astype(dtype), layer.bias.astype(dtype))
    return cache[key]


def forward_all(net, batch):
    """Activations after every layer; index 0 is the input batch itself."""
    acts = [batch]
    x = batch
    for l in net.layers:
        if l.kind == KIND_CONV:
            w, b = _layer_weights(l, x.dtype)
            x = conv3x3_forward(x, w, b)
        elif l.kind == KIND_RELU:
            x = relu_forward(x)
        else:
            x = avgpool2_forward(x)
        acts.append(x)
    return acts

def forward(net, image):
    """Tap activations for one image (or a batch): {tap_name: features}."""
    batch, single = _as_batch(image)
    want = set(net.tap_names)
    out = {}
    x = batch
    for l in net.layers:
        if l.kind == KIND_CONV:
            w, b = _layer_weights(l, x.dtype)
            x = conv3x3_forward(x, w, b)
        elif l.kind == KIND_RELU:
            x = relu_forward(x)
        else:
            x = avgpool2_forward(x)
        if l.name in want:
            out[l.name] = x[0] if single else x
    return out


def backward_from_cache(net, acts, tap_grads):
    """Input gradient given cached activations and per-tap output gradients.

    tap_grads maps layer name -> gradient wrt that layer's output (same shape
    as the activation). Gradients are injected while walking the layers in
    reverse and pushed through each op down to the input batch.
    """
    g = np.zeros_like(acts[-1])
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        if l.name in tap_grads:
            g = g + tap_grads[l.name]
        if l.kind == KIND_CONV:
            w, _ = _layer_weights(l, g.dtype)
            g = conv3x3_backward_data(g, w)
        elif l.kind == KIND_RELU:
            g = relu_backward(g, acts[i])
        else:
            g = avgpool2_backward(g, acts[i].shape)
    return g


def backward_to_input(net, image, tap_grads):
    """Gradient of sum(tap * tap_grad) wrt the input image pixels."""
    batch, single = _as_batch(image)
    grads = {
        k: (v[None] if single and np.asarray(v).ndim == 3 else np.asarray(v))
        for k, v in tap_grads.items()
    }
    g = backward_from_cache(net, forward_all(net, batch), grads)
    return g[0] if single else g


def gram(features):
    """Channel correlation matrix G = F^T F / (H*W) for one (H, W, C) map."""
    f = np.asarray(features)
    h, w, c = f.shape
    if h == 0 or w == 0:
        raise ValueError("gram of an empty feature map")
    flat = f.reshape(h * w, c)
    return flat.T @ flat / f.dtype.type(h * w)


# ---------------------------------------------------------------------------
# default weights
# ---------------------------------------------------------------------------

DEFAULT_ARCH = [
    ("conv1_1", 3, 16), ("relu1_1",), ("conv1_2", 16, 16), ("relu1_2",), ("pool1",),
    ("conv2_1", 16, 32), ("relu2_1",), ("pool2",),
    ("conv3_1", 32, 64), ("relu3_1",), ("pool3",),
    ("conv4_1", 64, 128), ("relu4_1",), ("conv4_2", 128, 128), ("relu4_2",), ("pool4",),
    ("conv5_1", 128, 128), ("relu5_1",),
]


def seeded_default_net(seed=2024, gain=1.35):
    """Build the default architecture with seeded orthogonal kernels.

    Each kernel is the first rows of an orthonormal basis of the flattened
    (in*9)-dim patch space, sign-fixed against the QR diagonal so the draw is
    reproducible, then scaled to keep activation magnitudes roughly stable
    through relu and pooling.
    """
    layers = []
    conv_index = 0
    for entry in DEFAULT_ARCH:
        name = entry[0]
        if name.startswith("conv"):
            cin, cout = entry[1], entry[2]
            rng = SeededRng(seed, conv_index)
            conv_index += 1
            dim = cin * 9
            a = rng.normal((dim, dim))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            w = (q[:, :cout].T * gain).reshape(cout, cin, 3, 3).astype(np.float32)
            layers.append(Layer(name, KIND_CONV, w, np.zeros(cout, dtype=np.float32)))
        elif name.startswith("relu"):
            layers.append(Layer(name, KIND_RELU))
        else:
            layers.append(Layer(name, KIND_POOL))
    return FeatureNet(layers)


def default_net():
    """The net shipped with the package (assets/default_weights.fwf)."""
    return load_weights(DEFAULT_WEIGHTS)
