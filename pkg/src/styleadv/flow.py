"""Block-matching optical flow, bilinear warping, and the FLO1 container.

Flow semantics: `estimate_flow(a, b)` returns per-pixel displacements (dx, dy)
such that a(r, c) corresponds to b(r + dy, c + dx). Matching is exhaustive
SSD over square blocks; every pixel of a block shares its displacement. The
occlusion mask is forward-backward consistency: a pixel is trusted (mask 1)
when the backward flow sampled at its forward destination cancels the forward
flow to within one pixel.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, FormatError, TensorValidationError

FLO_MAGIC = b"FLO1"
PATCH = 8
RADIUS = 4


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacements and a {0,1} trust mask, all (H, W) float32."""

    dx: np.ndarray
    dy: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not (self.dx.shape == self.dy.shape == self.mask.shape) or self.dx.ndim != 2:
            raise TensorValidationError(
                f"flow components must share one (H, W) shape, got "
                f"{self.dx.shape}/{self.dy.shape}/{self.mask.shape}"
            )

    @property
    def shape(self):
        return self.dx.shape


def _block_match(a, b, patch, radius):
    """Row-major scan over candidate displacements; (0, 0) is evaluated first
    and only a strictly better SSD replaces the incumbent, so exact ties keep
    the smaller earlier displacement."""
    h, w = a.shape[:2]
    dx = np.zeros((h, w), dtype=np.float32)
    dy = np.zeros((h, w), dtype=np.float32)
    candidates = [(0, 0)] + [
        (cy, cx)
        for cy in range(-radius, radius + 1)
        for cx in range(-radius, radius + 1)
        if (cy, cx) != (0, 0)
    ]
    for y0 in range(0, h, patch):
        for x0 in range(0, w, patch):
            y1, x1 = min(y0 + patch, h), min(x0 + patch, w)
            block = a[y0:y1, x0:x1]
            best, best_cost = (0, 0), np.inf
            for cy, cx in candidates:
                by0, bx0 = y0 + cy, x0 + cx
                by1, bx1 = y1 + cy, x1 + cx
                if by0 < 0 or bx0 < 0 or by1 > h or bx1 > w:
                    continue
                d = block - b[by0:by1, bx0:bx1]
                cost = float((d * d).sum())
                if cost < best_cost:
                    best, best_cost = (cy, cx), cost
            dy[y0:y1, x0:x1] = best[0]
            dx[y0:y1, x0:x1] = best[1]
    return dx, dy


def _sample_bilinear(field, rows, cols):
    """Sample a (H, W, ...) field at real-valued positions with edge clamp."""
    h, w = field.shape[:2]
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0).reshape(r.shape + (1,) * (field.ndim - 2))
    fc = (c - c0).reshape(c.shape + (1,) * (field.ndim - 2))
    return (
        field[r0, c0] * (1 - fr) * (1 - fc)
        + field[r0, c1] * (1 - fr) * fc
        + field[r1, c0] * fr * (1 - fc)
        + field[r1, c1] * fr * fc
    )


def estimate_flow(frame_a, frame_b, patch=PATCH, radius=RADIUS):
    """Block-matching flow from frame_a to frame_b plus its consistency mask."""
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise TensorValidationError(f"frames must share one (H,W,C) shape, got {a.shape}/{b.shape}")
    h, w = a.shape[:2]
    fdx, fdy = _block_match(a, b, patch, radius)
    bdx, bdy = _block_match(b, a, patch, radius)

    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    back = np.stack([bdx, bdy], axis=-1)
    back_at = _sample_bilinear(back, rows + fdy, cols + fdx)
    resid = np.sqrt((fdx + back_at[..., 0]) ** 2 + (fdy + back_at[..., 1]) ** 2)
    mask = (resid <= 1.0).astype(np.float32)
    return FlowField(fdx, fdy, mask)


def warp(frame, flow):
    """Pull-back a frame along a flow: out(r,c) = frame(r + dy, c + dx)."""
    f = np.asarray(frame)
    h, w = flow.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = _sample_bilinear(f.astype(np.float64, copy=False), rows + flow.dy, cols + flow.dx)
    return out.astype(f.dtype, copy=False)


def warp_transpose(grad, flow, shape):
    """Adjoint of `warp`: scatter-add the gradient through the bilinear taps."""
    g = np.asarray(grad, dtype=np.float64)
    h, w = shape[:2]
    rows, cols = np.meshgrid(np.arange(flow.shape[0]), np.arange(flow.shape[1]), indexing="ij")
    r = np.clip(rows + flow.dy, 0, h - 1)
    c = np.clip(cols + flow.dx, 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0).reshape(r.shape + (1,) * (g.ndim - 2))
    fc = (c - c0).reshape(c.shape + (1,) * (g.ndim - 2))
    out = np.zeros(shape, dtype=np.float64)
    np.add.at(out, (r0, c0), g * (1 - fr) * (1 - fc))
    np.add.at(out, (r0, c1), g * (1 - fr) * fc)
    np.add.at(out, (r1, c0), g * fr * (1 - fc))
    np.add.at(out, (r1, c1), g * fr * fc)
    return out


# ---------------------------------------------------------------------------
# FLO1 container
# ---------------------------------------------------------------------------

def write_flow(flow, path):
    """magic, u32 H, u32 W, then H*W interleaved (dx, dy) f32 pairs, then the mask."""
    h, w = flow.shape
    pairs = np.empty((h, w, 2), dtype="<f4")
    pairs[..., 0] = flow.dx
    pairs[..., 1] = flow.dy
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC + struct.pack("<II", h, w))
        fh.write(pairs.tobytes())
        fh.write(np.ascontiguousarray(flow.mask, dtype="<f4").tobytes())


def read_flow(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CorruptFileError(f"{path}: truncated header")
    h, w = struct.unpack("<II", blob[4:12])
    expect = 12 + h * w * 12
    if len(blob) != expect:
        raise CorruptFileError(
            f"{path}: payload length {len(blob) - 12} does not match dims ({h},{w})"
        )
    pairs = np.frombuffer(blob, dtype="<f4", offset=12, count=h * w * 2).reshape(h, w, 2)
    mask = np.frombuffer(blob, dtype="<f4", offset=12 + h * w * 8).reshape(h, w)
    if not np.isin(mask, (0.0, 1.0)).all():
        raise TensorValidationError(f"{path}: occlusion mask holds values other than 0/1")
    return FlowField(pairs[..., 0].copy(), pairs[..., 1].copy(), mask.copy())
