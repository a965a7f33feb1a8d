"""Frame input pipeline: P5 netpbm parsing, manifest loading, temporal and
spatial downsampling, and grouping frames into labeled volumes.

Frames travel as raw uint8 grayscale; a sequence keeps the original frame
index of every retained frame (``source_indices``) so events and timestamps
survive decimation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .categories import Category
from .tensor import Tensor

EVENT_KINDS = ("transition", "switch")

VOLUME_MAGIC = b"SVOL1\n"


class PgmFormatError(ValueError):
    """Bytes are not a parsable binary P5 image."""


class ManifestError(ValueError):
    """The frame manifest is inconsistent or incomplete."""


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # uint8, [height, width]

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2 or p.dtype != np.uint8:
            raise ValueError(f"pixels must be 2-D uint8, got {p.shape} {p.dtype}")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def parse_pgm(data: bytes) -> Frame:
    """Decode binary netpbm P5 with maxval <= 255; '#' comments allowed."""
    if data[:2] == b"P2":
        raise PgmFormatError("ASCII P2 is not supported, need binary P5")
    if data[:2] != b"P5":
        raise PgmFormatError(f"bad magic {data[:2]!r}, need P5")

    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise PgmFormatError("truncated header")
        c = data[pos:pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            end = pos
            while end < len(data) and data[end:end + 1].isdigit():
                end += 1
            tokens.append(int(data[pos:end]))
            pos = end
        else:
            raise PgmFormatError(f"unexpected header byte {c!r}")
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise PgmFormatError(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise PgmFormatError(f"maxval {maxval} exceeds 255")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) < width * height:
        raise PgmFormatError(
            f"truncated payload: need {width * height} bytes, have {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Frame(pixels.copy())


def serialize_pgm(frame: Frame) -> bytes:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.pixels.tobytes()


def read_pgm(path) -> Frame:
    return parse_pgm(Path(path).read_bytes())


def write_pgm(path, frame: Frame) -> None:
    Path(path).write_bytes(serialize_pgm(frame))


@dataclass
class FrameSequence:
    """Ordered same-size grayscale frames with provenance and timing."""

    frames: np.ndarray          # uint8, [T, H, W]
    fps: float
    source_indices: np.ndarray  # original frame index per retained frame

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be [T,H,W], got {self.frames.shape}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        self.source_indices = np.asarray(self.source_indices, dtype=np.int64)
        if self.source_indices.shape != (self.frames.shape[0],):
            raise ValueError("need one source index per frame")
        if self.frames.shape[0] > 1 and np.any(np.diff(self.source_indices) <= 0):
            raise ValueError("source_indices must be strictly increasing")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def frame(self, i: int) -> Frame:
        return Frame(self.frames[i])

    def time_of(self, retained_index: int) -> float:
        """Seconds of the retained frame in the original video clock."""
        return float(self.source_indices[retained_index]) / self.fps

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], fps: float) -> "FrameSequence":
        if not frames:
            raise ValueError("empty frame list")
        dims = {(f.height, f.width) for f in frames}
        if len(dims) > 1:
            raise ValueError(f"mixed frame dimensions: {sorted(dims)}")
        stack = np.stack([f.pixels for f in frames])
        return cls(stack, fps, np.arange(len(frames), dtype=np.int64))


@dataclass(frozen=True)
class EventLabel:
    frame_index: int
    kind: str

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"kind must be one of {EVENT_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class VolumeConfig:
    """How raw sequences become model-ready volumes.

    ``frames_per_volume`` is the per-volume frame count N; ``temporal_rate``
    keeps every k-th frame; ``target_dims`` is (height, width) after area
    averaging.
    """

    frames_per_volume: int = 16
    stride: int = 8
    temporal_rate: int = 5
    target_dims: tuple[int, int] = (112, 112)

    def __post_init__(self):
        if self.frames_per_volume < 2:
            raise ValueError("frames_per_volume must be >= 2")
        if self.stride < 1 or self.temporal_rate < 1:
            raise ValueError("stride and temporal_rate must be positive")
        if min(self.target_dims) < 1:
            raise ValueError("target_dims must be positive")

    @classmethod
    def tiny(cls) -> "VolumeConfig":
        return cls(frames_per_volume=8, stride=4, temporal_rate=5, target_dims=(32, 32))

    def to_dict(self) -> dict:
        return {
            "frames_per_volume": self.frames_per_volume,
            "stride": self.stride,
            "temporal_rate": self.temporal_rate,
            "target_dims": list(self.target_dims),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VolumeConfig":
        return cls(
            frames_per_volume=int(doc["frames_per_volume"]),
            stride=int(doc["stride"]),
            temporal_rate=int(doc["temporal_rate"]),
            target_dims=tuple(doc["target_dims"]),
        )


@dataclass(frozen=True)
class FrameVolume:
    data: Tensor  # [1, N, H, W], values scaled to [0,1]
    start: int    # first retained-frame index covered
    end: int      # last retained-frame index covered (inclusive)
    category: Category | None = None

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[0] != 1:
            raise ValueError(f"volume data must be [1,N,H,W], got {self.data.shape}")
        if self.end - self.start + 1 != self.data.shape[1]:
            raise ValueError("start/end range must span exactly N frames")

    @property
    def frame_range(self) -> tuple[int, int]:
        return (self.start, self.end)


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for key in ("fps", "width", "height", "frames"):
        if key not in doc:
            raise ManifestError(f"manifest missing field {key!r}")
    return doc


def load_sequence(manifest_path) -> FrameSequence:
    """Read the manifest and every listed P5 frame, in order."""
    manifest_path = Path(manifest_path)
    doc = load_manifest(manifest_path)
    if float(doc["fps"]) <= 0:
        raise ManifestError("fps must be positive")
    names = doc["frames"]
    if not names:
        raise ManifestError("manifest lists no frames")
    base = manifest_path.parent
    frames = []
    for name in names:
        fpath = base / name
        if not fpath.exists():
            raise ManifestError(f"missing frame file {fpath}")
        frame = parse_pgm(fpath.read_bytes())
        if (frame.width, frame.height) != (int(doc["width"]), int(doc["height"])):
            raise ManifestError(
                f"{name} is {frame.width}x{frame.height}, manifest declares "
                f"{doc['width']}x{doc['height']}"
            )
        frames.append(frame)
    return FrameSequence.from_frames(frames, float(doc["fps"]))


def load_events(path) -> list[EventLabel]:
    doc = json.loads(Path(path).read_text("utf-8"))
    return [EventLabel(int(e["frame_index"]), str(e["kind"])) for e in doc]


def save_events(path, events: Sequence[EventLabel]) -> None:
    doc = [{"frame_index": e.frame_index, "kind": e.kind} for e in events]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", "utf-8")


def _axis_weights(src: int, dst: int) -> np.ndarray:
    """Row-stochastic area-overlap weights mapping src cells onto dst cells."""
    scale = src / dst
    weights = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), src)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap / scale
    return weights


def area_downsample(frames: np.ndarray, target_dims: tuple[int, int]) -> np.ndarray:
    """Exact box-filter reduction of [T,H,W] uint8 frames onto (h,w)."""
    t, h, w = frames.shape
    th, tw = target_dims
    if th > h or tw > w:
        raise ValueError(f"cannot upscale {h}x{w} to {th}x{tw}")
    rh = _axis_weights(h, th)
    rw = _axis_weights(w, tw)
    out = np.matmul(np.matmul(rh[None], frames.astype(np.float64)), rw.T)
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def downsample(seq: FrameSequence, cfg: VolumeConfig) -> FrameSequence:
    """Keep every k-th frame, then area-average spatially onto target_dims."""
    k = cfg.temporal_rate
    retained = seq.frames[::k]
    indices = seq.source_indices[::k]
    reduced = area_downsample(retained, cfg.target_dims)
    return FrameSequence(reduced, seq.fps, indices.copy())


def remap_events(
    events: Sequence[EventLabel],
    temporal_rate: int,
    num_retained: int | None = None,
) -> list[EventLabel]:
    """Source-frame event coordinates to retained-frame coordinates.

    An event frame marks the first frame of new content, so it maps to the
    first RETAINED frame at or after it: ceil(f/k).  (Plain floor would point
    at the retained frame before the change for every f not divisible by k,
    mislabeling the boundary.)  Events landing beyond the last retained frame
    are dropped when num_retained is given.
    """
    k = temporal_rate
    remapped = [replace(e, frame_index=-(-e.frame_index // k)) for e in events]
    if num_retained is not None:
        remapped = [e for e in remapped if e.frame_index < num_retained]
    return remapped


def build_volumes(seq: FrameSequence, cfg: VolumeConfig) -> list[FrameVolume]:
    """Sliding N-frame windows at the configured stride, scaled to [0,1]."""
    n = cfg.frames_per_volume
    t = len(seq)
    if t < n:
        raise ValueError(f"sequence has {t} frames, volumes need at least {n}")
    count = (t - n) // cfg.stride + 1
    volumes = []
    for i in range(count):
        start = i * cfg.stride
        block = seq.frames[start:start + n].astype(np.float32) / 255.0
        volumes.append(
            FrameVolume(data=Tensor(block[None]), start=start, end=start + n - 1)
        )
    return volumes


def label_volumes(
    volumes: Sequence[FrameVolume],
    events: Sequence[EventLabel],
    num_frames: int,
) -> list[FrameVolume]:
    """Containment labeling: transition beats switch beats unchanged.

    An event at frame f marks the first frame of the new content, so the
    visible change is the (f-1, f) boundary; a volume contains the event
    only when both boundary frames lie inside it.  A volume starting
    exactly at f shows no change and stays unlabeled by that event.
    """
    for e in events:
        if e.frame_index >= num_frames:
            raise ValueError(
                f"event at frame {e.frame_index} outside sequence of {num_frames}"
            )
    transition_frames = np.zeros(num_frames, dtype=bool)
    switch_frames = np.zeros(num_frames, dtype=bool)
    for e in events:
        if e.kind == "transition":
            transition_frames[e.frame_index] = True
        else:
            switch_frames[e.frame_index] = True
    labeled = []
    for v in volumes:
        window = slice(v.start + 1, v.end + 1)  # events whose boundary is inside
        if transition_frames[window].any():
            category = Category.TRANSITION
        elif switch_frames[window].any():
            category = Category.SWITCH
        else:
            category = Category.UNCHANGED
        labeled.append(replace(v, category=category))
    return labeled


def save_volumes(volumes: Sequence[FrameVolume], path, extra: dict | None = None) -> None:
    """Archive: magic, u32le header length, JSON header, raw f32le buffers."""
    if not volumes:
        raise ValueError("nothing to save")
    shape = volumes[0].data.shape
    header = {
        "shape": list(shape),
        "dtype": "f32le",
        "volumes": [
            {
                "start": v.start,
                "end": v.end,
                "category": None if v.category is None else int(v.category),
            }
            for v in volumes
        ],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in volumes:
            if v.data.shape != shape:
                raise ValueError("volumes must share one shape")
            fh.write(np.ascontiguousarray(v.data.data, dtype="<f4").tobytes())


def load_volumes(path) -> tuple[list[FrameVolume], dict]:
    blob = Path(path).read_bytes()
    if blob[: len(VOLUME_MAGIC)] != VOLUME_MAGIC:
        raise ValueError(f"not a volume archive: {blob[:6]!r}")
    offset = len(VOLUME_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    shape = tuple(int(s) for s in header["shape"])
    per_volume = int(np.prod(shape))
    entries = header["volumes"]
    expected = per_volume * 4 * len(entries)
    if len(blob) - offset != expected:
        raise ValueError(f"payload is {len(blob) - offset} bytes, header needs {expected}")
    volumes = []
    for entry in entries:
        arr = np.frombuffer(blob, dtype="<f4", count=per_volume, offset=offset).reshape(shape)
        offset += per_volume * 4
        category = entry.get("category")
        volumes.append(
            FrameVolume(
                data=Tensor(np.ascontiguousarray(arr, dtype=np.float32)),
                start=int(entry["start"]),
                end=int(entry["end"]),
                category=None if category is None else Category(category),
            )
        )
    return volumes, header.get("extra", {})
