"""Core carriers: video/image tensors, deterministic RNG, and the VTF container.

Videos live in [0, 1] as float32 arrays shaped (T, H, W, C); the 255 scale
exists only inside metric formulas. The VTF file container is little-endian
regardless of host byte order so files travel between machines.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import CorruptFileError, FormatError, TensorValidationError

VTF_MAGIC = b"VTF1"


# ---------------------------------------------------------------------------
# deterministic RNG
# ---------------------------------------------------------------------------

@dataclass
class SeededRng:
    """Counter-based deterministic random stream.

    Backed by the Philox4x64-10 bit generator keyed with (seed, stream_id),
    so identical (seed, stream_id) pairs replay identical scalar sequences on
    any platform. docs/determinism.md states the algorithm and test vectors.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2 ** 64):
            raise TensorValidationError(f"seed out of range: {self.seed}")
        if not (0 <= self.stream_id < 2 ** 64):
            raise TensorValidationError(f"stream_id out of range: {self.stream_id}")
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        )

    def spawn(self, stream_id):
        """Independent stream under the same seed."""
        return SeededRng(self.seed, stream_id)

    def normal(self, shape=None, dtype=np.float64):
        return self._gen.standard_normal(size=shape, dtype=dtype)

    def uniform(self, low=0.0, high=1.0, shape=None):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def raw(self, n):
        """First n raw 64-bit words of the stream (test-vector hook)."""
        return self._gen.bit_generator.random_raw(n)


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------

def _check_unit_range(data, where):
    bad = ~((data >= 0.0) & (data <= 1.0))  # catches NaN as well
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise TensorValidationError(
            f"{where}: scalar outside [0, 1] at flat index {idx} "
            f"(value {data.reshape(-1)[idx]!r})"
        )


@dataclass(frozen=True, eq=False)
class VideoTensor:
    """A video as float32 (T, H, W, C) with every scalar in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 4:
            raise TensorValidationError(f"video must be 4-d (T,H,W,C), got shape {d.shape}")
        if min(d.shape) <= 0:
            raise TensorValidationError(f"video dims must be positive, got {d.shape}")
        if d.dtype != np.float32:
            object.__setattr__(self, "data", d.astype(np.float32))
        _check_unit_range(self.data, "video")

    @property
    def frames_t(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def channels(self):
        return self.data.shape[3]

    def frame(self, i):
        return ImageTensor(self.data[i])


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """A single frame as float32 (H, W, C) in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3:
            raise TensorValidationError(f"image must be 3-d (H,W,C), got shape {d.shape}")
        if min(d.shape) <= 0:
            raise TensorValidationError(f"image dims must be positive, got {d.shape}")
        if d.dtype != np.float32:
            object.__setattr__(self, "data", d.astype(np.float32))
        _check_unit_range(self.data, "image")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# VTF container
# ---------------------------------------------------------------------------

def write_vtf(video, path):
    """Serialize a VideoTensor: magic, four u32 dims, then f32 payload (all LE)."""
    d = video.data
    header = VTF_MAGIC + struct.pack("<IIII", *d.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_vtf(path):
    """Load a VTF file back into a validated VideoTensor."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != VTF_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 20:
        raise CorruptFileError(f"{path}: truncated header ({len(blob)} bytes)")
    t, h, w, c = struct.unpack("<IIII", blob[4:20])
    if min(t, h, w, c) == 0:
        raise CorruptFileError(f"{path}: zero dimension in header ({t},{h},{w},{c})")
    expect = 20 + t * h * w * c * 4
    if len(blob) != expect:
        raise CorruptFileError(
            f"{path}: payload length {len(blob) - 20} does not match dims "
            f"({t},{h},{w},{c}) -> {expect - 20}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(t, h, w, c)
    return VideoTensor(np.ascontiguousarray(data))


# ---------------------------------------------------------------------------
# PNG ingestion
# ---------------------------------------------------------------------------

def frames_from_pngs(directory):
    """Read every *.png under `directory` (lexicographic order) as one video.

    Pixel byte v maps to v/255; non-RGB images are converted to RGB first.
    """
    from pathlib import Path

    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise TensorValidationError(f"{directory}: no .png frames found")
    frames = []
    for p in paths:
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / np.float32(255.0)
        if frames and arr.shape != frames[0].shape:
            raise TensorValidationError(
                f"{p.name}: frame size {arr.shape} differs from first frame {frames[0].shape}"
            )
        frames.append(arr)
    return VideoTensor(np.stack(frames))


def frames_to_pngs(video, directory, prefix="frame"):
    """Write frames as 8-bit PNGs; inverse of frames_from_pngs up to quantization."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(video.frames_t):
        b = np.round(video.data[i] * 255.0).astype(np.uint8)
        Image.fromarray(b).save(out / f"{prefix}_{i:04d}.png")
