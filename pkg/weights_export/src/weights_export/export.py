"""Convert a source bundle into FWF under an export manifest.

Only the FWF vocabulary is exportable: 3x3 same-padded convolutions,
relu, and 2x2 average pooling. Anything else in the source topology is
rejected loudly rather than silently adapted, and every validation error
names the layer it happened on.
"""

import os

import numpy as np

from .errors import ExportError
from .fwf import KIND_CONV, KIND_POOL, KIND_RELU, write_fwf
from .manifest import write_manifest

_KINDS = {"conv2d": KIND_CONV, "relu": KIND_RELU, "avgPool2d": KIND_POOL}


def manifest_path_for(out_path):
    return os.path.splitext(out_path)[0] + ".manifest.json"


def export(manifest, bundle, out_path):
    """Write the FWF file and the manifest JSON that describes it."""
    targets = list(manifest.mapping.values())
    for target in targets:
        if targets.count(target) > 1:
            raise ExportError(f"manifest maps two source layers to {target!r}")

    fwf_layers = []
    chain = None
    for layer in bundle.layers:
        source = layer["name"]
        if source not in manifest.mapping:
            raise ExportError(f"manifest does not map source layer {source!r}")
        fwf_name = manifest.mapping[source]
        kind = layer["type"]
        if kind not in _KINDS:
            adaptable = " (only average pooling is exportable)" \
                if "ool" in kind else ""
            raise ExportError(
                f"layer {fwf_name}: source type {kind!r} is outside the "
                f"FWF vocabulary{adaptable}")
        if kind == "avgPool2d" and layer.get("poolSize") != 2:
            raise ExportError(
                f"layer {fwf_name}: only 2x2 pooling is exportable, "
                f"got poolSize {layer.get('poolSize')}")
        if kind != "conv2d":
            fwf_layers.append((fwf_name, _KINDS[kind], None, None))
            continue

        if layer.get("kernelSize") != 3:
            raise ExportError(
                f"layer {fwf_name}: only 3x3 kernels are exportable, "
                f"got kernelSize {layer.get('kernelSize')}")
        kernel = bundle.tensors.get(f"{source}/kernel")
        bias = bundle.tensors.get(f"{source}/bias")
        if kernel is None or bias is None:
            raise ExportError(f"layer {fwf_name}: bundle has no weights "
                              f"for source layer {source!r}")
        cout = layer["filters"]
        cin = chain if chain is not None else kernel.shape[2]
        if kernel.shape != (3, 3, cin, cout):
            raise ExportError(
                f"layer {fwf_name}: kernel shape {tuple(kernel.shape)} does "
                f"not match the declared (3, 3, {cin}, {cout})")
        if bias.shape != (cout,):
            raise ExportError(
                f"layer {fwf_name}: bias shape {tuple(bias.shape)} does not "
                f"match the declared ({cout},)")
        # channels-last (3, 3, cin, cout) -> FWF (cout, cin, 3, 3)
        fwf_layers.append((fwf_name, KIND_CONV,
                           np.transpose(kernel, (3, 2, 0, 1)), bias))
        chain = cout

    write_fwf(fwf_layers, out_path)
    write_manifest(manifest, manifest_path_for(out_path))
    return len(fwf_layers)
