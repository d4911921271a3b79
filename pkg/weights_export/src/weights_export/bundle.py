"""Source-side layers-model bundle: model.json plus binary weight shards.

The bundle layout follows the browser-ecosystem convention: a model.json
holding the layer topology and a weights manifest (name, shape, dtype per
tensor; tensor payloads concatenated into group shard files), with conv
kernels stored channels-last as (3, 3, cin, cout). This module reads and
writes bundles, builds the shipped tiny reference net from a seed, and
runs its own channels-last forward pass so exports can be cross-checked
against the FWF consumer without sharing any code with it.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BundleError

MODEL_JSON = "model.json"
SHARD_NAME = "group1-shard1of1.bin"


@dataclass
class Bundle:
    """Layer topology plus the named weight tensors."""
    layers: list                      # [{"name", "type", ...}] in forward order
    tensors: dict = field(default_factory=dict)  # tensor name -> float32 array


def write_bundle(bundle, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    payload = b""
    for layer in bundle.layers:
        if layer["type"] != "conv2d":
            continue
        for part in ("kernel", "bias"):
            name = f"{layer['name']}/{part}"
            if name not in bundle.tensors:
                raise BundleError(f"bundle is missing tensor {name}")
            arr = np.ascontiguousarray(bundle.tensors[name], dtype="<f4")
            manifest.append({"name": name, "shape": list(arr.shape),
                             "dtype": "float32"})
            payload += arr.tobytes()
    model = {
        "format": "layers-model",
        "modelTopology": {"layers": bundle.layers},
        "weightsManifest": [{"paths": [SHARD_NAME], "weights": manifest}],
    }
    with open(os.path.join(out_dir, MODEL_JSON), "w", encoding="utf-8") as fh:
        json.dump(model, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, SHARD_NAME), "wb") as fh:
        fh.write(payload)


def read_bundle(bundle_dir):
    path = os.path.join(bundle_dir, MODEL_JSON)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            model = json.load(fh)
    except OSError as exc:
        raise BundleError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path} is not valid JSON: {exc}") from exc
    try:
        layers = model["modelTopology"]["layers"]
        groups = model["weightsManifest"]
    except (KeyError, TypeError) as exc:
        raise BundleError(f"{path} lacks modelTopology/weightsManifest") from exc

    tensors = {}
    for group in groups:
        blob = b""
        for shard in group["paths"]:
            try:
                with open(os.path.join(bundle_dir, shard), "rb") as fh:
                    blob += fh.read()
            except OSError as exc:
                raise BundleError(f"cannot read shard {shard}: {exc}") from exc
        off = 0
        for spec in group["weights"]:
            if spec.get("dtype", "float32") != "float32":
                raise BundleError(
                    f"tensor {spec['name']}: only float32 is supported, "
                    f"got {spec['dtype']}")
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) * 4
            if off + n > len(blob):
                raise BundleError(
                    f"shard group truncated while reading {spec['name']}")
            tensors[spec["name"]] = np.frombuffer(
                blob[off:off + n], dtype="<f4").reshape(shape).copy()
            off += n
        if off != len(blob):
            raise BundleError(
                f"shard group has {len(blob) - off} trailing bytes")
    return Bundle(layers=layers, tensors=tensors)


# ---------------------------------------------------------------------------
# shipped tiny reference net
# ---------------------------------------------------------------------------

def reference_bundle(seed=7):
    """Two conv blocks, enough to exercise every exportable layer type."""
    layers = [
        {"name": "conv2d", "type": "conv2d", "kernelSize": 3, "filters": 4,
         "padding": "same", "dataFormat": "channelsLast"},
        {"name": "activation", "type": "relu"},
        {"name": "pool", "type": "avgPool2d", "poolSize": 2},
        {"name": "conv2d_1", "type": "conv2d", "kernelSize": 3, "filters": 8,
         "padding": "same", "dataFormat": "channelsLast"},
        {"name": "activation_1", "type": "relu"},
    ]
    rng = np.random.default_rng(seed)
    tensors = {}
    cin = 3
    for layer in layers:
        if layer["type"] != "conv2d":
            continue
        cout = layer["filters"]
        scale = 1.2 / np.sqrt(9 * cin)
        tensors[f"{layer['name']}/kernel"] = (
            rng.standard_normal((3, 3, cin, cout)) * scale).astype(np.float32)
        tensors[f"{layer['name']}/bias"] = (
            rng.standard_normal(cout) * 0.01).astype(np.float32)
        cin = cout
    return Bundle(layers=layers, tensors=tensors)


# ---------------------------------------------------------------------------
# channels-last forward (independent of the FWF consumer)
# ---------------------------------------------------------------------------

def _conv_same(x, kernel, bias):
    h, w, cin = x.shape
    padded = np.zeros((h + 2, w + 2, cin), dtype=x.dtype)
    padded[1:-1, 1:-1] = x
    out = np.broadcast_to(bias, (h, w, bias.shape[0])).astype(x.dtype).copy()
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + h, dx:dx + w] @ kernel[dy, dx]
    return out


def forward(bundle, image):
    """Activation after every layer for one (H, W, 3) float32 image."""
    x = np.asarray(image, dtype=np.float32)
    acts = {}
    for layer in bundle.layers:
        kind = layer["type"]
        if kind == "conv2d":
            x = _conv_same(x, bundle.tensors[f"{layer['name']}/kernel"],
                           bundle.tensors[f"{layer['name']}/bias"])
        elif kind == "relu":
            x = np.maximum(x, 0)
        elif kind == "avgPool2d":
            h2, w2 = x.shape[0] // 2, x.shape[1] // 2
            x = x[:h2 * 2, :w2 * 2].reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))
        else:
            raise BundleError(f"layer {layer['name']}: cannot run {kind}")
        acts[layer["name"]] = x
    return acts
