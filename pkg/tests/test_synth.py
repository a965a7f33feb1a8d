"""Synthetic lecture generation: determinism, ground truth, and disturbances."""

import numpy as np
import pytest

from slidesum.ingest import VolumeConfig, build_volumes, downsample, label_volumes, load_events, load_sequence, remap_events
from slidesum.metrics import pixel_diff_baseline
from slidesum.synth import (
    MotionSegment,
    SlideChange,
    SwitchSegment,
    SynthSpec,
    SynthSpecError,
    generate,
    lecture_spec,
    render_slide,
    write_corpus,
)


def cuts_spec(total=120, cuts=(40, 80), noise=0.0, seed=0, width=64, height=48, **kw):
    schedule = [SlideChange(slide_id=100, start_frame=0)]
    for i, f in enumerate(cuts):
        schedule.append(SlideChange(slide_id=101 + i, start_frame=f))
    return SynthSpec(
        total_frames=total,
        fps=30.0,
        width=width,
        height=height,
        slide_schedule=tuple(schedule),
        noise_sigma=noise,
        seed=seed,
        **kw,
    )


class TestRenderSlide:
    def test_deterministic(self):
        a = render_slide(7, 64, 48)
        b = render_slide(7, 64, 48)
        assert np.array_equal(a.pixels, b.pixels)

    def test_distinct_slides(self):
        a = render_slide(1, 64, 64).pixels.astype(float)
        b = render_slide(2, 64, 64).pixels.astype(float)
        assert np.abs(a - b).mean() > 10

    def test_degenerate_one_pixel(self):
        frame = render_slide(3, 1, 1)
        assert frame.pixels.shape == (1, 1)


class TestGenerate:
    def test_schedule_echo(self):
        seq, events = generate(cuts_spec())
        assert len(seq) == 120
        assert [(e.frame_index, e.kind) for e in events] == [
            (40, "transition"),
            (80, "transition"),
        ]

    def test_baseline_finds_clean_cuts(self):
        seq, _ = generate(cuts_spec(noise=0.0))
        found = pixel_diff_baseline(seq, threshold=5)
        assert [e.frame_index for e in found] == [40, 80]

    def test_bit_identical_reruns(self):
        spec = cuts_spec(noise=2.0, seed=9, switch_segments=(SwitchSegment(50, 70),))
        a, _ = generate(spec)
        b, _ = generate(spec)
        assert np.array_equal(a.frames, b.frames)

    def test_static_span_bit_identical(self):
        seq, _ = generate(cuts_spec(noise=0.0))
        span = seq.frames[5:35]
        assert all(np.array_equal(span[0], f) for f in span)

    def test_event_count_invariant(self):
        spec = cuts_spec(
            total=200,
            cuts=(60, 120),
            switch_segments=(SwitchSegment(20, 40), SwitchSegment(140, 170)),
        )
        _, events = generate(spec)
        assert len(events) == spec.expected_events() == 2 + 4
        switches = [e.frame_index for e in events if e.kind == "switch"]
        assert switches == [20, 41, 140, 171]

    def test_dissolve_event_at_midpoint(self):
        spec = SynthSpec(
            total_frames=60,
            fps=30.0,
            width=32,
            height=24,
            slide_schedule=(
                SlideChange(1, 0),
                SlideChange(2, 30, style="dissolve", dissolve_length=3),
            ),
        )
        _, events = generate(spec)
        assert [(e.frame_index, e.kind) for e in events] == [(31, "transition")]

    def test_dissolve_blends_monotonically(self):
        spec = SynthSpec(
            total_frames=40,
            fps=30.0,
            width=32,
            height=24,
            slide_schedule=(
                SlideChange(1, 0),
                SlideChange(2, 20, style="dissolve", dissolve_length=3),
            ),
        )
        seq, _ = generate(spec)
        old = seq.frames[19].astype(float)
        new = seq.frames[23].astype(float)
        dist_to_new = [np.abs(seq.frames[t].astype(float) - new).mean() for t in (20, 21, 22)]
        dist_to_old = [np.abs(seq.frames[t].astype(float) - old).mean() for t in (20, 21, 22)]
        assert dist_to_new[0] > dist_to_new[1] > dist_to_new[2]
        assert dist_to_old[0] < dist_to_old[1] < dist_to_old[2]

    def test_pan_shifts_content(self):
        spec = cuts_spec(
            total=60,
            cuts=(),
            motion_segments=(MotionSegment(10, 40, pan=(1.0, 0.0)),),
        )
        seq, events = generate(spec)
        assert events == []
        f1 = seq.frames[20].astype(float)
        f2 = seq.frames[21].astype(float)
        margin = 8
        interior = f2[margin:-margin, margin:-margin]
        best_dx, best_err = None, None
        for dx in range(-3, 4):
            ref = f1[margin:-margin, margin - dx:f1.shape[1] - margin - dx]
            err = float(np.mean((interior - ref) ** 2))
            if best_err is None or err < best_err:
                best_dx, best_err = dx, err
        assert best_dx == 1

    def test_motion_confuses_baseline(self):
        spec = lecture_spec("motion", seed=3, total_frames=400, noise_sigma=0.0)
        no_transition_spec = SynthSpec(
            total_frames=400,
            fps=30.0,
            width=spec.width,
            height=spec.height,
            slide_schedule=(SlideChange(1, 0),),
            motion_segments=spec.motion_segments,
            noise_sigma=0.0,
            seed=3,
        )
        seq, events = generate(no_transition_spec)
        assert events == []
        false_events = pixel_diff_baseline(seq, threshold=5)
        assert len(false_events) >= 1  # motion disturbance fools the naive detector

    def test_dissolve_switch_overlap_rejected(self):
        with pytest.raises(SynthSpecError):
            SynthSpec(
                total_frames=100,
                fps=30.0,
                width=16,
                height=16,
                slide_schedule=(
                    SlideChange(1, 0),
                    SlideChange(2, 50, style="dissolve", dissolve_length=3),
                ),
                switch_segments=(SwitchSegment(48, 60),),
            )

    def test_schedule_must_start_at_zero(self):
        with pytest.raises(SynthSpecError):
            SynthSpec(
                total_frames=50,
                fps=30.0,
                width=16,
                height=16,
                slide_schedule=(SlideChange(1, 5),),
            )

    def test_spec_dict_roundtrip(self):
        spec = lecture_spec("switchy", seed=4, total_frames=500)
        assert SynthSpec.from_dict(spec.to_dict()) == spec


class TestCorpusOutput:
    def test_flows_through_ingest(self, tmp_path):
        spec = cuts_spec(total=60, cuts=(30,), width=24, height=18)
        manifest_path, events_path = write_corpus(spec, tmp_path)
        seq = load_sequence(manifest_path)
        events = load_events(events_path)
        gen_seq, gen_events = generate(spec)
        assert np.array_equal(seq.frames, gen_seq.frames)
        assert events == gen_events

        cfg = VolumeConfig(frames_per_volume=4, stride=2, temporal_rate=2, target_dims=(9, 12))
        small = downsample(seq, cfg)
        retained_events = remap_events(events, cfg.temporal_rate)
        volumes = label_volumes(build_volumes(small, cfg), retained_events, len(small))
        assert len(volumes) == (len(small) - 4) // 2 + 1
        assert any(int(v.category) == 2 for v in volumes)

    def test_lecture_presets_valid(self):
        for kind in ("static", "motion", "switchy"):
            spec = lecture_spec(kind, seed=11, total_frames=600)
            assert spec.expected_events() >= 7
            seq, events = generate(spec)
            assert len(seq) == 600
            assert len(events) == spec.expected_events()
