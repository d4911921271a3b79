"""FWF container emitter.

The format, implemented here from its container layout so the exporter
stays independent of any consumer: 4-byte magic "FWF1", u32 layer count,
then per layer a u8 name length, the utf-8 name, and a u8 kind (0 conv,
1 relu, 2 pool). Conv layers append u32 cin, u32 cout, the (cout, cin,
3, 3) float32 kernel, and the (cout,) float32 bias, all little-endian.
"""

import struct

import numpy as np

FWF_MAGIC = b"FWF1"
KIND_CONV = 0
KIND_RELU = 1
KIND_POOL = 2


def write_fwf(layers, path):
    """layers: (name, kind, weights, bias) tuples; weights (cout, cin, 3, 3)."""
    blob = FWF_MAGIC + struct.pack("<I", len(layers))
    for name, kind, weights, bias in layers:
        encoded = name.encode("utf-8")
        blob += struct.pack("<B", len(encoded)) + encoded + struct.pack("<B", kind)
        if kind == KIND_CONV:
            cout, cin = weights.shape[:2]
            blob += struct.pack("<II", cin, cout)
            blob += np.ascontiguousarray(weights, dtype="<f4").tobytes()
            blob += np.ascontiguousarray(bias, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def read_fwf(path):
    """Parse back into (name, kind, weights, bias) tuples, for verification."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FWF_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    layers = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<B", blob, off)
        off += 1
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (kind,) = struct.unpack_from("<B", blob, off)
        off += 1
        weights = bias = None
        if kind == KIND_CONV:
            cin, cout = struct.unpack_from("<II", blob, off)
            off += 8
            weights = np.frombuffer(blob, dtype="<f4", count=cout * cin * 9,
                                    offset=off).reshape(cout, cin, 3, 3).copy()
            off += cout * cin * 36
            bias = np.frombuffer(blob, dtype="<f4", count=cout,
                                 offset=off).copy()
            off += cout * 4
        layers.append((name, kind, weights, bias))
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return layers
