"""Synthetic lecture-video generator with exact ground truth.

Produces procedural slide frames disturbed by the things that fool naive
detectors: camera pan/zoom, cut-aways to a speaker view, dissolve
transitions, and sensor noise.  Every event (slide transition, switch
boundary) is emitted with its exact frame, so generated corpora double as
labeled training and evaluation data.  Output flows through the regular
ingest formats (manifest + P5 frames + events file) unmodified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import EventLabel, Frame, FrameSequence, save_events, serialize_pgm

MAX_DISSOLVE = 3


class SynthSpecError(ValueError):
    """The synthesis spec is internally inconsistent."""


@dataclass(frozen=True)
class SlideChange:
    slide_id: int
    start_frame: int
    style: str = "cut"            # "cut" or "dissolve"
    dissolve_length: int = 1      # blended frames, 1..3, dissolve only
    reveal: int | None = None     # text lines shown; None = all (incremental decks)

    def __post_init__(self):
        if self.style not in ("cut", "dissolve"):
            raise SynthSpecError(f"unknown transition style {self.style!r}")
        if self.style == "dissolve" and not 1 <= self.dissolve_length <= MAX_DISSOLVE:
            raise SynthSpecError(
                f"dissolve length must lie in [1,{MAX_DISSOLVE}], got {self.dissolve_length}"
            )
        if self.reveal is not None and self.reveal < 1:
            raise SynthSpecError("reveal must be >= 1 when given")

    def blend_frames(self) -> range:
        if self.style != "dissolve":
            return range(0)
        return range(self.start_frame, self.start_frame + self.dissolve_length)

    def event_frame(self) -> int:
        if self.style == "dissolve":
            return self.start_frame + (self.dissolve_length - 1) // 2
        return self.start_frame


@dataclass(frozen=True)
class SwitchSegment:
    start: int
    end: int  # inclusive; frames [start, end] show the speaker


@dataclass(frozen=True)
class MotionSegment:
    start: int
    end: int                      # inclusive
    pan: tuple[float, float] = (0.0, 0.0)  # content shift (dx, dy) px/frame
    zoom_rate: float = 0.0        # scale multiplier is (1 + rate) per frame


@dataclass(frozen=True)
class SynthSpec:
    total_frames: int
    fps: float
    width: int
    height: int
    slide_schedule: tuple[SlideChange, ...]
    switch_segments: tuple[SwitchSegment, ...] = ()
    motion_segments: tuple[MotionSegment, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.total_frames < 1 or self.width < 1 or self.height < 1 or self.fps <= 0:
            raise SynthSpecError("dimensions, frame count, and fps must be positive")
        if self.noise_sigma < 0:
            raise SynthSpecError("noise_sigma must be non-negative")
        schedule = tuple(self.slide_schedule)
        if not schedule:
            raise SynthSpecError("slide schedule must not be empty")
        if schedule[0].start_frame != 0:
            raise SynthSpecError("schedule must start at frame 0")
        starts = [e.start_frame for e in schedule]
        if starts != sorted(set(starts)):
            raise SynthSpecError("schedule start frames must be strictly increasing")
        for entry in schedule:
            last_blend = entry.start_frame + (
                entry.dissolve_length if entry.style == "dissolve" else 0
            )
            if last_blend >= self.total_frames or entry.start_frame >= self.total_frames:
                raise SynthSpecError(f"schedule entry at {entry.start_frame} exceeds video")
        switches = sorted(self.switch_segments, key=lambda s: s.start)
        prev_end = -1
        for seg in switches:
            if not 0 <= seg.start <= seg.end:
                raise SynthSpecError(f"bad switch segment {seg}")
            if seg.end + 1 >= self.total_frames:
                raise SynthSpecError("switch segment must end before the last frame")
            if seg.start <= prev_end:
                raise SynthSpecError("switch segments must not overlap")
            prev_end = seg.end
        for entry in schedule:
            for f in entry.blend_frames():
                for seg in switches:
                    if seg.start <= f <= seg.end:
                        raise SynthSpecError(
                            f"dissolve frame {f} overlaps switch segment "
                            f"[{seg.start},{seg.end}]"
                        )
        motions = sorted(self.motion_segments, key=lambda m: m.start)
        prev_end = -1
        for seg in motions:
            if not 0 <= seg.start <= seg.end < self.total_frames:
                raise SynthSpecError(f"bad motion segment {seg}")
            if seg.start <= prev_end:
                raise SynthSpecError("motion segments must not overlap")
            prev_end = seg.end

    def expected_events(self) -> int:
        return (len(self.slide_schedule) - 1) + 2 * len(self.switch_segments)

    def to_dict(self) -> dict:
        return {
            "total_frames": self.total_frames,
            "fps": self.fps,
            "width": self.width,
            "height": self.height,
            "slide_schedule": [
                {
                    "slide_id": e.slide_id,
                    "start_frame": e.start_frame,
                    "style": e.style,
                    "dissolve_length": e.dissolve_length,
                    "reveal": e.reveal,
                }
                for e in self.slide_schedule
            ],
            "switch_segments": [[s.start, s.end] for s in self.switch_segments],
            "motion_segments": [
                {"start": m.start, "end": m.end, "pan": list(m.pan), "zoom_rate": m.zoom_rate}
                for m in self.motion_segments
            ],
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        return cls(
            total_frames=int(doc["total_frames"]),
            fps=float(doc["fps"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            slide_schedule=tuple(
                SlideChange(
                    slide_id=int(e["slide_id"]),
                    start_frame=int(e["start_frame"]),
                    style=str(e.get("style", "cut")),
                    dissolve_length=int(e.get("dissolve_length", 1)),
                    reveal=None if e.get("reveal") is None else int(e["reveal"]),
                )
                for e in doc["slide_schedule"]
            ),
            switch_segments=tuple(
                SwitchSegment(int(s[0]), int(s[1])) for s in doc.get("switch_segments", [])
            ),
            motion_segments=tuple(
                MotionSegment(
                    start=int(m["start"]),
                    end=int(m["end"]),
                    pan=tuple(float(v) for v in m.get("pan", (0, 0))),
                    zoom_rate=float(m.get("zoom_rate", 0.0)),
                )
                for m in doc.get("motion_segments", [])
            ),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            seed=int(doc.get("seed", 0)),
        )


def slide_line_count(slide_id: int) -> int:
    """Number of text lines in a slide's full layout (mirrors render_slide's
    draw order up to the line-count draw)."""
    rng = np.random.default_rng(slide_id)
    rng.integers(0, 61)
    rng.random()
    rng.random()
    rng.random()
    rng.integers(0, 40)
    return int(rng.integers(4, 9))


def render_slide(slide_id: int, width: int, height: int, reveal: int | None = None) -> Frame:
    """Procedural slide: theme background, dark title band, pseudo-text bars,
    and a coarse mosaic figure block.

    Layout derives from a PRNG seeded by slide_id, so identical calls give
    bit-identical frames and different slides differ substantially.  With
    ``reveal`` only the first n text lines are drawn (same layout
    otherwise), which models slide decks that build up bullet by bullet and
    whose transitions are subtle.
    """
    rng = np.random.default_rng(slide_id)
    base = 185 + int(rng.integers(0, 61))  # per-slide theme brightness
    canvas = np.full((height, width), float(base), dtype=np.float64)

    def hspan(frac_lo, frac_hi, length_frac, value):
        y0 = int(frac_lo * height)
        y1 = max(y0 + 1, int(frac_hi * height))
        x0 = int(0.06 * width)
        x1 = max(x0 + 1, x0 + int(length_frac * width))
        canvas[y0:min(y1, height), x0:min(x1, width)] = value

    title_top = 0.04 + 0.06 * rng.random()
    hspan(title_top, title_top + 0.08 + 0.05 * rng.random(), 0.45 + 0.4 * rng.random(),
          20 + rng.integers(0, 40))
    n_lines = int(rng.integers(4, 9))
    shown = n_lines if reveal is None else min(reveal, n_lines)
    for i in range(n_lines):
        top = 0.26 + 0.70 * i / n_lines
        length = 0.25 + 0.65 * rng.random()
        value = 40 + rng.integers(0, 60)
        if i < shown:
            hspan(top, top + 0.06, length, value)

    # coarse mosaic "figure" at a per-slide position: strong edges in both
    # directions, so camera motion produces the appearance change real
    # slide imagery would
    fy0 = int((0.22 + 0.18 * rng.random()) * height)
    fx0 = int((0.45 + 0.18 * rng.random()) * width)
    fh = max(height - fy0 - int(0.10 * height) - 1, 1)
    fw = max(width - fx0 - int(0.06 * width) - 1, 1)
    # cells sized to survive 3x spatial downsampling, so camera motion stays
    # trackable for the detector while still producing large pixel diffs
    cell = int(rng.integers(8, 14))
    cells_y = max(fh // cell, 1)
    cells_x = max(fw // cell, 1)
    mosaic = rng.integers(20, 236, size=(cells_y, cells_x)).astype(np.float64)
    figure = np.repeat(np.repeat(mosaic, cell, axis=0), cell, axis=1)[:fh, :fw]
    canvas[fy0:fy0 + figure.shape[0], fx0:fx0 + figure.shape[1]] = figure
    return Frame(np.floor(canvas + 0.5).clip(0, 255).astype(np.uint8))


def _speaker_frame(width: int, height: int, t: int, rng_seed: int) -> np.ndarray:
    """Dark gradient background plus a swaying bright blob (the speaker)."""
    rng = np.random.default_rng(rng_seed)
    phase = rng.uniform(0, 2 * np.pi)
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    canvas = 35.0 + 45.0 * ys / max(height - 1, 1)
    cx = (width - 1) / 2 + 0.14 * width * np.sin(2 * np.pi * t / 61 + phase)
    cy = 0.58 * height + 0.04 * height * np.sin(2 * np.pi * t / 47)
    rx = max(0.17 * width, 1.0)
    ry = max(0.30 * height, 1.0)
    d2 = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2
    canvas = np.where(d2 <= 1.0, 185.0 - 50.0 * d2, canvas)
    return canvas


def _sample_view(canvas: np.ndarray, ox: float, oy: float, scale: float) -> np.ndarray:
    """Camera transform with nearest sampling; out-of-canvas coordinates are
    clamped, which replicates edges instead of leaking black borders."""
    h, w = canvas.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    u = (xs - cx) / scale + cx - ox
    v = (ys - cy) / scale + cy - oy
    ui = np.clip(np.floor(u + 0.5).astype(np.int64), 0, w - 1)
    vi = np.clip(np.floor(v + 0.5).astype(np.int64), 0, h - 1)
    return canvas[vi, ui]


def generate(spec: SynthSpec) -> tuple[FrameSequence, list[EventLabel]]:
    """Render the full frame sequence and its exact ground-truth events."""
    variants = sorted({(e.slide_id, e.reveal) for e in spec.slide_schedule},
                      key=lambda v: (v[0], v[1] if v[1] is not None else -1))
    canvases = {
        (sid, reveal): render_slide(sid, spec.width, spec.height, reveal).pixels.astype(np.float64)
        for sid, reveal in variants
    }
    schedule = list(spec.slide_schedule)
    switch_lookup = np.zeros(spec.total_frames, dtype=bool)
    for seg in spec.switch_segments:
        switch_lookup[seg.start:seg.end + 1] = True
    motion_at: dict[int, MotionSegment] = {}
    for seg in spec.motion_segments:
        for t in range(seg.start, seg.end + 1):
            motion_at[t] = seg

    noise_rng = np.random.default_rng(spec.seed)
    frames = np.empty((spec.total_frames, spec.height, spec.width), dtype=np.uint8)
    ox = oy = 0.0
    scale = 1.0
    entry_idx = 0
    for t in range(spec.total_frames):
        while entry_idx + 1 < len(schedule) and schedule[entry_idx + 1].start_frame <= t:
            entry_idx += 1
        seg = motion_at.get(t)
        if seg is not None:
            ox += seg.pan[0]
            oy += seg.pan[1]
            scale *= 1.0 + seg.zoom_rate

        if switch_lookup[t]:
            view = _speaker_frame(spec.width, spec.height, t, spec.seed)
        else:
            entry = schedule[entry_idx]
            canvas = canvases[(entry.slide_id, entry.reveal)]
            if entry.style == "dissolve" and entry_idx > 0 and t in entry.blend_frames():
                alpha = (t - entry.start_frame + 1) / (entry.dissolve_length + 1)
                previous = schedule[entry_idx - 1]
                prev = canvases[(previous.slide_id, previous.reveal)]
                canvas = (1 - alpha) * prev + alpha * canvas
            view = _sample_view(canvas, ox, oy, scale)

        if spec.noise_sigma > 0:
            view = view + noise_rng.normal(0.0, spec.noise_sigma, size=view.shape)
        frames[t] = np.floor(view + 0.5).clip(0, 255).astype(np.uint8)

    events = [
        EventLabel(entry.event_frame(), "transition") for entry in schedule[1:]
    ]
    for seg in spec.switch_segments:
        events.append(EventLabel(seg.start, "switch"))
        events.append(EventLabel(seg.end + 1, "switch"))
    events.sort(key=lambda e: (e.frame_index, e.kind))
    sequence = FrameSequence(
        frames, spec.fps, np.arange(spec.total_frames, dtype=np.int64)
    )
    return sequence, events


def write_corpus(spec: SynthSpec, out_dir) -> tuple[Path, Path]:
    """Emit manifest.json + P5 frames + events.json, the ingest formats."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq, events = generate(spec)
    names = []
    for i in range(len(seq)):
        name = f"frame_{i:05d}.pgm"
        (out_dir / name).write_bytes(serialize_pgm(seq.frame(i)))
        names.append(name)
    manifest = {
        "fps": spec.fps,
        "width": spec.width,
        "height": spec.height,
        "frames": names,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", "utf-8")
    events_path = out_dir / "events.json"
    save_events(events_path, events)
    (out_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n", "utf-8")
    return manifest_path, events_path


LECTURE_KINDS = ("static", "motion", "switchy")


def lecture_spec(
    kind: str,
    seed: int,
    total_frames: int = 1200,
    fps: float = 30.0,
    width: int = 96,
    height: int = 72,
    noise_sigma: float = 2.0,
) -> SynthSpec:
    """Randomized lecture preset: slide schedule plus kind-specific disturbances.

    static   - no camera motion, one cut-away to the speaker
    motion   - pan/zoom segments throughout (the baseline-killer)
    switchy  - frequent cut-aways to the speaker
    """
    if kind not in LECTURE_KINDS:
        raise ValueError(f"kind must be one of {LECTURE_KINDS}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, LECTURE_KINDS.index(kind)]))

    # incremental deck: slides mostly build up line by line (subtle cuts),
    # with occasional fresh layouts (dramatic cuts, sometimes dissolved)
    n_slides = max(2, min(int(rng.integers(8, 13)), total_frames // 50))
    gap = total_frames // n_slides
    current_id = (seed + 1) * 100000 + LECTURE_KINDS.index(kind) * 1000
    next_fresh = current_id + 1
    lines = slide_line_count(current_id)
    reveal = min(2, lines)
    schedule = [SlideChange(slide_id=current_id, start_frame=0, reveal=reveal)]
    for i in range(1, n_slides):
        start = i * gap + int(rng.integers(-gap // 6, gap // 6 + 1))
        start = max(schedule[-1].start_frame + 12, min(start, total_frames - 8))
        if reveal < lines and rng.random() < 0.55:
            reveal += 1
            schedule.append(SlideChange(current_id, start, reveal=reveal))
        else:
            current_id, next_fresh = next_fresh, next_fresh + 1
            lines = slide_line_count(current_id)
            reveal = min(int(rng.integers(1, 4)), lines)
            if rng.random() < 0.3:
                schedule.append(
                    SlideChange(
                        current_id,
                        start,
                        style="dissolve",
                        dissolve_length=int(rng.integers(1, MAX_DISSOLVE + 1)),
                        reveal=reveal,
                    )
                )
            else:
                schedule.append(SlideChange(current_id, start, reveal=reveal))

    starts = [e.start_frame for e in schedule]

    def clear_of_transitions(lo: int, hi: int, margin: int = 10) -> bool:
        return all(not (lo - margin <= s <= hi + margin) for s in starts)

    n_switches = {"static": 1, "motion": 1, "switchy": 4}[kind]
    switches: list[SwitchSegment] = []
    attempts = 0
    max_switch = max(min(80, total_frames // 3), 31)
    while len(switches) < n_switches and attempts < 200:
        attempts += 1
        length = int(rng.integers(30, max_switch))
        if total_frames - length - 10 <= 10:
            break
        lo = int(rng.integers(10, total_frames - length - 10))
        hi = lo + length
        if not clear_of_transitions(lo, hi):
            continue
        if any(s.start <= hi + 5 and lo - 5 <= s.end for s in switches):
            continue
        switches.append(SwitchSegment(lo, hi))
    switches.sort(key=lambda s: s.start)

    n_motion = {"static": 1, "motion": 10, "switchy": 1}[kind]
    motions: list[MotionSegment] = []
    max_motion = max(min(45, total_frames // 6), 21)

    def random_motion_params():
        if rng.random() < 0.7:
            pan = (
                float(rng.uniform(0.5, 0.9)) * (1 if rng.random() < 0.5 else -1),
                float(rng.uniform(0.0, 0.3)) * (1 if rng.random() < 0.5 else -1),
            )
            zoom = 0.0
        else:
            pan = (0.0, 0.0)
            zoom = float(rng.uniform(0.004, 0.008)) * (1 if rng.random() < 0.5 else -1)
        return pan, zoom

    def fits(lo: int, hi: int) -> bool:
        return (
            0 <= lo <= hi < total_frames
            and not any(m.start <= hi + 10 and lo - 10 <= m.end for m in motions)
        )

    # the hard case the detector exists for: the camera moves across a
    # slide change, so some motion segments straddle schedule starts
    if kind == "motion":
        overlap_targets = [
            e.start_frame for e in schedule[1:] if rng.random() < 0.4
        ][: n_motion // 2]
        for target in overlap_targets:
            length = int(rng.integers(15, max_motion))
            lo = target - length // 2
            hi = lo + length
            if fits(lo, hi):
                pan, zoom = random_motion_params()
                motions.append(MotionSegment(lo, hi, pan=pan, zoom_rate=zoom))

    attempts = 0
    while len(motions) < n_motion and attempts < 400:
        attempts += 1
        length = int(rng.integers(15, max_motion))
        lo = int(rng.integers(0, max(total_frames - length - 1, 1)))
        hi = lo + length
        if not fits(lo, hi):
            continue
        pan, zoom = random_motion_params()
        motions.append(MotionSegment(lo, hi, pan=pan, zoom_rate=zoom))
    motions.sort(key=lambda m: m.start)

    return SynthSpec(
        total_frames=total_frames,
        fps=fps,
        width=width,
        height=height,
        slide_schedule=tuple(schedule),
        switch_segments=tuple(switches),
        motion_segments=tuple(motions),
        noise_sigma=noise_sigma,
        seed=seed,
    )
