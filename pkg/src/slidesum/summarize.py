"""Turn per-volume category probabilities into transition events, keyframes,
and an outline.

The decode step smooths per-volume argmax categories; merge fuses runs of
transition volumes into single events; extraction picks the first stable
frame after each event as the keyframe (the settled new slide, not the
mid-transition frame) plus an opening keyframe, and slices the timeline into
segments at the event frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .categories import Category
from .ingest import Frame, FrameSequence, write_pgm

KEYFRAME_NAME = "key_{:04d}.pgm"


@dataclass(frozen=True)
class TransitionEvent:
    frame_index: int
    confidence: float = 1.0

    def __post_init__(self):
        if not 0 < self.confidence <= 1:
            raise ValueError(f"confidence must lie in (0,1], got {self.confidence}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


@dataclass
class PredictionTrack:
    """Ordered per-volume probability triples plus each volume's frame range."""

    probs: np.ndarray                 # [V, 3]
    ranges: list[tuple[int, int]]     # retained-frame (start, end) per volume
    video_id: str = ""

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[1] != 3:
            raise ValueError(f"probs must be [V,3], got {self.probs.shape}")
        if len(self.ranges) != self.probs.shape[0]:
            raise ValueError("need one range per probability row")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1) > 1e-4):
            raise ValueError("rows must be probability distributions")
        starts = [r[0] for r in self.ranges]
        if starts != sorted(starts):
            raise ValueError("volume ranges must be ordered by start frame")

    def __len__(self) -> int:
        return self.probs.shape[0]

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "volumes": [
                {"start": int(s), "end": int(e), "probs": [float(p) for p in row]}
                for (s, e), row in zip(self.ranges, self.probs)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PredictionTrack":
        volumes = doc["volumes"]
        return cls(
            probs=np.array([v["probs"] for v in volumes], dtype=np.float64),
            ranges=[(int(v["start"]), int(v["end"])) for v in volumes],
            video_id=str(doc.get("video_id", "")),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", "utf-8")

    @classmethod
    def load(cls, path) -> "PredictionTrack":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def decode_categories(
    track: PredictionTrack,
    min_confidence: float = 0.5,
    median_window: int = 3,
) -> list[int]:
    """Per-volume argmax with a confidence floor, then a categorical median
    filter (window majority; ties and low confidence fall back to unchanged)."""
    if median_window < 1 or median_window % 2 == 0:
        raise ValueError("median_window must be odd and >= 1")
    raw = []
    for row in track.probs:
        winner = int(np.argmax(row))
        if row[winner] < min_confidence:
            winner = int(Category.UNCHANGED)
        raw.append(winner)
    if median_window == 1:
        return raw
    half = median_window // 2
    smoothed = []
    for i in range(len(raw)):
        window = raw[max(0, i - half):i + half + 1]
        counts = np.bincount(window, minlength=3)
        best = counts.max()
        winners = np.flatnonzero(counts == best)
        smoothed.append(int(winners[0]) if winners.size == 1 else int(Category.UNCHANGED))
    return smoothed


def transition_runs(categories: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal runs of transition-labeled volumes as (first, last) indices."""
    runs = []
    start = None
    for i, c in enumerate(categories):
        if c == Category.TRANSITION and start is None:
            start = i
        elif c != Category.TRANSITION and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(categories) - 1))
    return runs


def merge_transitions(
    categories: Sequence[int],
    ranges: Sequence[tuple[int, int]],
    probs: np.ndarray | None = None,
) -> list[TransitionEvent]:
    """One event per maximal transition run, at the center frame of the run's
    union range; confidence is the peak transition probability over the run
    (1.0 when no probabilities are supplied).  Switch runs produce nothing."""
    if len(categories) != len(ranges):
        raise ValueError("categories and ranges must align")
    events = []
    for first, last in transition_runs(categories):
        lo = ranges[first][0]
        hi = ranges[last][1]
        if probs is not None:
            confidence = float(np.max(probs[first:last + 1, int(Category.TRANSITION)]))
            confidence = min(max(confidence, 1e-9), 1.0)
        else:
            confidence = 1.0
        events.append(TransitionEvent(frame_index=(lo + hi) // 2, confidence=confidence))
    return events


@dataclass(frozen=True)
class Keyframe:
    frame_index: int            # retained-frame coordinates
    time_s: float
    confidence: float
    segment: tuple[int, int]    # [start, end) retained frames

    def to_dict(self) -> dict:
        return {
            "frame": self.frame_index,
            "time_s": self.time_s,
            "confidence": self.confidence,
            "segment": [self.segment[0], self.segment[1]],
        }


@dataclass
class SummaryManifest:
    video_id: str
    fps: float                  # effective rate of the retained sequence
    keyframes: list[Keyframe]

    def __post_init__(self):
        frames = [k.frame_index for k in self.keyframes]
        if frames != sorted(set(frames)):
            raise ValueError("keyframes must be strictly increasing by frame")
        for prev, cur in zip(self.keyframes, self.keyframes[1:]):
            if prev.segment[1] != cur.segment[0]:
                raise ValueError("segments must tile the timeline")

    @property
    def total_frames(self) -> int:
        return self.keyframes[-1].segment[1] if self.keyframes else 0

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "fps": self.fps,
            "keyframes": [k.to_dict() for k in self.keyframes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SummaryManifest":
        return cls(
            video_id=str(doc["video_id"]),
            fps=float(doc["fps"]),
            keyframes=[
                Keyframe(
                    frame_index=int(k["frame"]),
                    time_s=float(k["time_s"]),
                    confidence=float(k["confidence"]),
                    segment=(int(k["segment"][0]), int(k["segment"][1])),
                )
                for k in doc["keyframes"]
            ],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", "utf-8")

    @classmethod
    def load(cls, path) -> "SummaryManifest":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def _effective_fps(seq: FrameSequence) -> float:
    """Rate of the retained sequence in its own frame coordinates."""
    if len(seq) > 1:
        step = float(seq.source_indices[1] - seq.source_indices[0])
    else:
        step = 1.0
    return seq.fps / step


def extract_keyframes(
    events: Sequence[TransitionEvent],
    seq: FrameSequence,
    categories: Sequence[int],
    ranges: Sequence[tuple[int, int]],
    video_id: str = "",
) -> SummaryManifest:
    """Keyframes: the opening stable frame plus, per event, the first frame of
    the first unchanged volume after it (falling back to the end of the
    event's transition run).  Segments split the timeline at event frames."""
    total = len(seq)
    if total == 0:
        raise ValueError("empty sequence")
    frames = sorted(e.frame_index for e in events)
    if len(frames) != len(set(frames)):
        raise ValueError("events must be unique and sorted")

    # segment boundaries; degenerate (0, duplicate, >=T) boundaries are dropped
    boundaries = [0]
    for f in frames:
        if 0 < f < total and f != boundaries[-1]:
            boundaries.append(f)
    boundaries.append(total)
    confidences = {e.frame_index: e.confidence for e in events}
    runs = transition_runs(categories)
    run_spans = [(ranges[first][0], ranges[last][1]) for first, last in runs]

    def inside_run(frame: int) -> bool:
        return any(lo <= frame <= hi for lo, hi in run_spans)

    def first_unchanged_start(after: int, before: int) -> int | None:
        # overlapping volumes can start inside a run's union; prefer starts
        # that are genuinely past every transition run
        fallback = None
        for cat, (start, _end) in zip(categories, ranges):
            if cat == Category.UNCHANGED and after < start < before:
                if not inside_run(start):
                    return start
                if fallback is None:
                    fallback = start
        return fallback

    def run_end_for(frame: int) -> int | None:
        for lo, hi in run_spans:
            if lo <= frame <= hi:
                return hi
        return None

    eff_fps = _effective_fps(seq)
    keyframes: list[Keyframe] = []
    for i in range(len(boundaries) - 1):
        seg = (boundaries[i], boundaries[i + 1])
        if i == 0:
            pick = first_unchanged_start(-1, seg[1])
            if pick is None:
                pick = 0
            confidence = 1.0
        else:
            event_frame = boundaries[i]
            pick = first_unchanged_start(event_frame, seg[1])
            if pick is None:
                run_end = run_end_for(event_frame)
                pick = run_end if run_end is not None else event_frame
            pick = min(max(pick, seg[0]), seg[1] - 1)
            confidence = confidences.get(event_frame, 1.0)
        keyframes.append(
            Keyframe(
                frame_index=pick,
                time_s=pick / eff_fps,
                confidence=confidence,
                segment=seg,
            )
        )
    return SummaryManifest(video_id=video_id, fps=eff_fps, keyframes=keyframes)


@dataclass(frozen=True)
class OutlineSegment:
    keyframe_index: int   # position in the manifest keyframe list
    title: str
    start_s: float
    end_s: float
    start_frame: int
    end_frame: int        # exclusive

    def to_dict(self) -> dict:
        return {
            "keyframe": self.keyframe_index,
            "title": self.title,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
        }


@dataclass
class Outline:
    segments: list[OutlineSegment] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Outline":
        return cls(
            segments=[
                OutlineSegment(
                    keyframe_index=int(s["keyframe"]),
                    title=str(s["title"]),
                    start_s=float(s["start_s"]),
                    end_s=float(s["end_s"]),
                    start_frame=int(s["start_frame"]),
                    end_frame=int(s["end_frame"]),
                )
                for s in doc["segments"]
            ]
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", "utf-8")

    @classmethod
    def load(cls, path) -> "Outline":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def _mmss(seconds: float) -> str:
    total = int(seconds)
    return f"{total // 60:02d}:{total % 60:02d}"


def build_outline(manifest: SummaryManifest) -> Outline:
    """One titled segment per keyframe, timestamped from the manifest rate."""
    if not manifest.keyframes:
        raise ValueError("empty manifest")
    segments = []
    for i, kf in enumerate(manifest.keyframes):
        start_s = kf.segment[0] / manifest.fps
        end_s = kf.segment[1] / manifest.fps
        title = f"Slide {i + 1}, {_mmss(start_s)}–{_mmss(end_s)}"
        segments.append(
            OutlineSegment(
                keyframe_index=i,
                title=title,
                start_s=start_s,
                end_s=end_s,
                start_frame=kf.segment[0],
                end_frame=kf.segment[1],
            )
        )
    return Outline(segments=segments)


def export_keyframes(manifest: SummaryManifest, seq: FrameSequence, out_dir) -> list[Path]:
    """Write each keyframe as a P5 file named key_%04d.pgm."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, kf in enumerate(manifest.keyframes):
        path = out_dir / KEYFRAME_NAME.format(i)
        write_pgm(path, Frame(seq.frames[kf.frame_index]))
        paths.append(path)
    return paths


def summarize_track(
    track: PredictionTrack,
    seq: FrameSequence,
    min_confidence: float = 0.5,
    median_window: int = 3,
) -> tuple[SummaryManifest, Outline, list[TransitionEvent]]:
    """decode -> merge -> extract -> outline, as one deterministic pipeline."""
    categories = decode_categories(track, min_confidence, median_window)
    events = merge_transitions(categories, track.ranges, track.probs)
    manifest = extract_keyframes(events, seq, categories, track.ranges, track.video_id)
    outline = build_outline(manifest)
    return manifest, outline, events
