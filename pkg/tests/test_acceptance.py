"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The end-to-end study and
the service property sweep are the long poles; the whole module stays within
its stated CPU budgets on a desktop-class machine.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from slidesum.categories import Category
from slidesum.gradcheck import grad_check
from slidesum.ingest import (
    EventLabel,
    FrameSequence,
    VolumeConfig,
    build_volumes,
    downsample,
    label_volumes,
    remap_events,
)
from slidesum.layers import Conv3d, Linear, MaxPool3d, ReLU, conv3d, linear, maxpool3d, softmax_cross_entropy
from slidesum.metrics import (
    confusion_matrix,
    match_transitions,
    pixel_diff_baseline,
    prf1,
)
from slidesum.network import (
    BadMagicError,
    LengthMismatchError,
    build_network,
    load_weights,
    network_grad_check,
    paper_preset,
    save_weights,
    tiny_preset,
)
from slidesum.summarize import (
    Keyframe,
    PredictionTrack,
    SummaryManifest,
    build_outline,
    decode_categories,
    merge_transitions,
)
from slidesum.synth import generate, lecture_spec
from slidesum.tensor import ConvParams, ShapeError, Tensor
from slidesum.training import TrainConfig, predict_probs, train

from .oracles import label_volumes_oracle, merge_transitions_oracle, naive_conv3d, naive_linear, naive_maxpool3d

# End-to-end study protocol (tuned once, then frozen)
STUDY_LECTURES = 20
STUDY_HELD_OUT = 6
STUDY_FRAMES = 1200
STUDY_NOISE = 2.0
STUDY_CFG = VolumeConfig(frames_per_volume=8, stride=2, temporal_rate=5, target_dims=(32, 32))
STUDY_TRAIN = TrainConfig(
    learning_rate=0.01,
    momentum=0.9,
    epochs=75,
    batch_size=16,
    shuffle_seed=0,
    weighting="inverse_frequency",
    stop_at_accuracy=0.995,
)
STUDY_BASELINE_THRESHOLD = 5.0


@contextmanager
def criterion(name: str, budget_s: float | None = None):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL ({time.monotonic() - start:.1f}s)")
        raise
    elapsed = time.monotonic() - start
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.1f}s)")
    if budget_s is not None:
        assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget: {elapsed:.1f}s"


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


class TestNumericCorrectness:
    def test_numeric_correctness(self):
        with criterion("numeric correctness (oracles + gradient checks)", budget_s=120):
            rng = np.random.default_rng(2024)

            # forward vs naive oracles, >= 100 randomized instances each
            for _ in range(100):
                cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
                dims = tuple(int(rng.integers(2, 6)) for _ in range(3))
                kernel = tuple(int(rng.integers(1, min(3, d) + 1)) for d in dims)
                stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
                pad = tuple(int(rng.integers(0, 2)) for _ in range(3))
                x = rng.standard_normal((cin, *dims))
                w = rng.standard_normal((cout, cin, *kernel))
                b = rng.standard_normal(cout)
                try:
                    y = conv3d(
                        Tensor(x, precision="double"),
                        Tensor(w, precision="double"),
                        Tensor(b, precision="double"),
                        ConvParams(stride=stride, padding=pad),
                    )
                except ShapeError:
                    continue
                assert rel_err(y.data, naive_conv3d(x, w, b, stride, pad)) < 1e-6

            for _ in range(100):
                c = int(rng.integers(1, 3))
                dims = tuple(int(rng.integers(2, 7)) for _ in range(3))
                window = tuple(int(rng.integers(1, min(3, d) + 1)) for d in dims)
                stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
                x = rng.standard_normal((c, *dims))
                y, _ = maxpool3d(Tensor(x, precision="double"), window, stride)
                expected, _ = naive_maxpool3d(x, window, stride)
                assert np.array_equal(y.data, expected)

            for _ in range(100):
                bsz, fin, fout = (int(rng.integers(1, 7)) for _ in range(3))
                x = rng.standard_normal((bsz, fin))
                w = rng.standard_normal((fout, fin))
                b = rng.standard_normal(fout)
                y = linear(Tensor(x, precision="double"), Tensor(w, precision="double"), Tensor(b, precision="double"))
                assert rel_err(y.data, naive_linear(x, w, b)) < 1e-6

            # backward finite-difference checks < 1e-4, double precision
            for seed in range(5):
                r = np.random.default_rng(seed)
                conv = Conv3d(
                    Tensor(r.standard_normal((2, 2, 3, 3, 3)), precision="double"),
                    Tensor(r.standard_normal(2), precision="double"),
                    ConvParams(stride=(1, 2, 1), padding=1),
                )
                assert grad_check(conv, Tensor(r.standard_normal((2, 4, 5, 5)), precision="double")) < 1e-4

                fc = Linear(
                    Tensor(r.standard_normal((4, 6)), precision="double"),
                    Tensor(r.standard_normal(4), precision="double"),
                )
                assert grad_check(fc, Tensor(r.standard_normal((3, 6)), precision="double")) < 1e-4

                pool_x = r.permutation(128).reshape(2, 4, 4, 4).astype(np.float64)
                assert grad_check(MaxPool3d(2, 2), Tensor(pool_x, precision="double")) < 1e-4

                relu_x = r.standard_normal(30)
                relu_x = np.where(np.abs(relu_x) < 0.15, relu_x + np.sign(relu_x) * 0.5, relu_x)
                assert grad_check(ReLU(), Tensor(relu_x, precision="double"), eps=1e-6) < 1e-6

                logits = r.standard_normal((4, 3))
                weights = np.array([0.5, 1.3, 1.2])
                targets = r.integers(0, 3, size=4)
                _, _, analytic = softmax_cross_entropy(
                    Tensor(logits, precision="double"), targets, Tensor(weights, precision="double")
                )
                eps = 1e-6
                worst = 0.0
                for i in range(logits.size):
                    flat = logits.reshape(-1)
                    orig = flat[i]
                    flat[i] = orig + eps
                    plus, _, _ = softmax_cross_entropy(
                        Tensor(logits, precision="double"), targets, Tensor(weights, precision="double")
                    )
                    flat[i] = orig - eps
                    minus, _, _ = softmax_cross_entropy(
                        Tensor(logits, precision="double"), targets, Tensor(weights, precision="double")
                    )
                    flat[i] = orig
                    numeric = (plus - minus) / (2 * eps)
                    analytic_i = analytic.data.reshape(-1)[i]
                    worst = max(worst, abs(analytic_i - numeric) / max(abs(analytic_i), abs(numeric), 1e-8))
                assert worst < 1e-4

            # whole tiny network gradient check < 1e-3
            net = build_network(tiny_preset(init_seed=11))
            batch = Tensor(
                np.random.default_rng(11).uniform(0, 1, (2, *net.config.input_shape)),
                precision="double",
            )
            assert network_grad_check(net, batch, [0, 2], max_coords_per_tensor=4) < 1e-3


class TestArchitectureConformance:
    def test_architecture_conformance(self):
        with criterion("architecture conformance (7 conv / 4 fc, softmax rows, residual identity)"):
            for preset in (paper_preset, tiny_preset):
                net = build_network(preset(init_seed=1))
                assert net.conv_layer_count == 7
                assert net.fc_layer_count == 4

                rng = np.random.default_rng(3)
                batch = Tensor(rng.uniform(0, 1, (2, *net.config.input_shape)).astype(np.float32))
                probs = net.forward(batch)
                assert probs.shape == (2, 3)
                assert np.all(np.abs(probs.data.sum(axis=1) - 1.0) <= 1e-5)

                for name in net.weights:
                    if name.startswith("block"):
                        net.weights[name].data[...] = 0.0
                trace: dict = {}
                net.forward(batch, trace=trace)
                for i in range(1, 4):
                    block_in = trace[f"block{i}.in"].data
                    block_out = trace[f"block{i}.add"].data
                    cs = block_in.shape[1]
                    assert np.array_equal(block_out[:, :cs], block_in)
                    assert np.all(block_out[:, cs:] == 0)


class TestPersistence:
    def test_persistence(self, tmp_path):
        with criterion("persistence (bit-exact round-trip, distinct corruption errors)"):
            net = build_network(tiny_preset(init_seed=21))
            path = tmp_path / "net.strw"
            save_weights(net, path)
            loaded = load_weights(path)
            assert loaded.config == net.config
            for name in net.weights:
                assert loaded.weights[name].data.tobytes() == net.weights[name].data.tobytes()

            corrupted = bytearray(path.read_bytes())
            corrupted[0] ^= 0x01
            bad_magic = tmp_path / "bad_magic.strw"
            bad_magic.write_bytes(bytes(corrupted))
            with pytest.raises(BadMagicError):
                load_weights(bad_magic)

            truncated = tmp_path / "truncated.strw"
            truncated.write_bytes(path.read_bytes()[:-8])
            with pytest.raises(LengthMismatchError):
                load_weights(truncated)
            assert not issubclass(BadMagicError, LengthMismatchError)
            assert not issubclass(LengthMismatchError, BadMagicError)


class TestPipelineAlgebra:
    def test_pipeline_algebra(self):
        with criterion("pipeline algebra (windows, labels, merges, outlines vs oracles)"):
            rng = np.random.default_rng(7)

            for _ in range(500):
                n = int(rng.integers(2, 24))
                t = int(rng.integers(n, 200))
                stride = int(rng.integers(1, 16))
                seq = FrameSequence(
                    np.zeros((t, 2, 2), dtype=np.uint8), 30.0, np.arange(t, dtype=np.int64)
                )
                cfg = VolumeConfig(frames_per_volume=n, stride=stride, temporal_rate=1, target_dims=(2, 2))
                vols = build_volumes(seq, cfg)
                assert len(vols) == (t - n) // stride + 1
                assert all(v.end - v.start + 1 == n for v in vols)

            t = 80
            seq = FrameSequence(np.zeros((t, 2, 2), dtype=np.uint8), 30.0, np.arange(t, dtype=np.int64))
            cfg = VolumeConfig(frames_per_volume=8, stride=4, temporal_rate=1, target_dims=(2, 2))
            vols = build_volumes(seq, cfg)
            ranges = [v.frame_range for v in vols]
            for _ in range(100):
                events = [
                    EventLabel(int(rng.integers(0, t)), str(rng.choice(["transition", "switch"])))
                    for _ in range(int(rng.integers(0, 7)))
                ]
                labeled = label_volumes(vols, events, t)
                expected = label_volumes_oracle(ranges, [(e.frame_index, e.kind) for e in events])
                assert [int(v.category) for v in labeled] == expected

            for _ in range(1000):
                length = int(rng.integers(1, 50))
                cats = rng.integers(0, 3, size=length).tolist()
                stride = int(rng.integers(1, 5))
                width = stride + int(rng.integers(0, 9))
                vranges = [(i * stride, i * stride + width) for i in range(length)]
                got = [e.frame_index for e in merge_transitions(cats, vranges)]
                assert got == merge_transitions_oracle(cats, vranges)

            for _ in range(100):
                cuts = np.unique(rng.integers(1, 400, size=int(rng.integers(0, 9))))
                boundaries = [0] + cuts.tolist() + [400]
                keyframes = [
                    Keyframe(
                        frame_index=boundaries[i],
                        time_s=boundaries[i] / 6.0,
                        confidence=1.0,
                        segment=(boundaries[i], boundaries[i + 1]),
                    )
                    for i in range(len(boundaries) - 1)
                ]
                outline = build_outline(SummaryManifest(video_id="x", fps=6.0, keyframes=keyframes))
                segs = outline.segments
                assert segs[0].start_frame == 0
                assert segs[-1].end_frame == 400
                assert all(a.end_frame == b.start_frame for a, b in zip(segs, segs[1:]))
                assert all(s.start_frame < s.end_frame for s in segs)


def _study_volumes(kind: str, seed: int):
    spec = lecture_spec(kind, seed=seed, total_frames=STUDY_FRAMES, noise_sigma=STUDY_NOISE)
    seq, events = generate(spec)
    small = downsample(seq, STUDY_CFG)
    retained_events = remap_events(events, STUDY_CFG.temporal_rate, len(small))
    volumes = label_volumes(build_volumes(small, STUDY_CFG), retained_events, len(small))
    decim = VolumeConfig(
        frames_per_volume=2,
        stride=1,
        temporal_rate=STUDY_CFG.temporal_rate,
        target_dims=(spec.height, spec.width),
    )
    retained_full = downsample(seq, decim)
    return {
        "kind": kind,
        "volumes": volumes,
        "events": retained_events,
        "retained_full": retained_full,
    }


class TestOverfit:
    def test_overfit_tiny_dataset(self):
        with criterion("overfit (8 synthetic volumes memorized, 5/5 seeds)", budget_s=120):
            lecture = _study_volumes("static", seed=99)
            by_cat = {c: [v for v in lecture["volumes"] if v.category == c] for c in Category}
            eight = (
                by_cat[Category.UNCHANGED][:3]
                + by_cat[Category.SWITCH][:2]
                + by_cat[Category.TRANSITION][:3]
            )
            assert len(eight) == 8
            for seed in range(5):
                net = build_network(tiny_preset(init_seed=seed))
                config = TrainConfig(
                    learning_rate=0.01,
                    momentum=0.9,
                    epochs=300,
                    batch_size=8,
                    shuffle_seed=seed,
                    weighting="inverse_frequency",
                    stop_at_accuracy=1.0,
                )
                _, history = train(net, eight, config)
                assert history.best_accuracy == 1.0, f"seed {seed} failed to memorize"
                assert len(history) <= 300


def _event_f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


class TestEndToEndStudy:
    def test_end_to_end_synthetic_study(self):
        with criterion("end-to-end study (macro-F1, event F1, baseline margin)", budget_s=900):
            kinds = ["motion", "switchy", "static"]
            lectures = [_study_volumes(kinds[i % 3], seed=i) for i in range(STUDY_LECTURES)]
            train_set = lectures[: STUDY_LECTURES - STUDY_HELD_OUT]
            held_out = lectures[STUDY_LECTURES - STUDY_HELD_OUT:]

            train_volumes = [v for lec in train_set for v in lec["volumes"]]
            net = build_network(tiny_preset(init_seed=0))
            net, history = train(net, train_volumes, STUDY_TRAIN)
            print(
                f"  study: trained {len(history)} epochs on {len(train_volumes)} volumes, "
                f"train accuracy {history.final_accuracy:.4f}"
            )

            all_preds: list[int] = []
            all_labels: list[int] = []
            totals = {"tp": 0, "fp": 0, "fn": 0}
            motion_net = {"tp": 0, "fp": 0, "fn": 0}
            motion_base = {"tp": 0, "fp": 0, "fn": 0}
            tol = STUDY_CFG.frames_per_volume
            for lec in held_out:
                x = Tensor(np.stack([v.data.data for v in lec["volumes"]]).astype(np.float32))
                probs = predict_probs(net, x, 32)
                preds = np.argmax(probs, axis=1)
                all_preds.extend(preds.tolist())
                all_labels.extend(int(v.category) for v in lec["volumes"])

                ranges = [v.frame_range for v in lec["volumes"]]
                track = PredictionTrack(probs=probs, ranges=ranges)
                cats = decode_categories(track)
                pred_events = [e.frame_index for e in merge_transitions(cats, ranges, track.probs)]
                truth = sorted(e.frame_index for e in lec["events"] if e.kind == "transition")
                report = match_transitions(pred_events, truth, tol)
                totals["tp"] += report.true_positives
                totals["fp"] += report.false_positives
                totals["fn"] += report.false_negatives
                if lec["kind"] == "motion":
                    motion_net["tp"] += report.true_positives
                    motion_net["fp"] += report.false_positives
                    motion_net["fn"] += report.false_negatives
                    baseline_events = [
                        e.frame_index
                        for e in pixel_diff_baseline(lec["retained_full"], STUDY_BASELINE_THRESHOLD)
                    ]
                    base_report = match_transitions(baseline_events, truth, tol)
                    motion_base["tp"] += base_report.true_positives
                    motion_base["fp"] += base_report.false_positives
                    motion_base["fn"] += base_report.false_negatives

            metrics = prf1(confusion_matrix(all_preds, all_labels))
            net_f1 = _event_f1(**totals)
            net_motion_f1 = _event_f1(**motion_net)
            base_motion_f1 = _event_f1(**motion_base)
            print(
                f"  study: held-out macro-F1 {metrics.macro_f1:.4f}, event F1 {net_f1:.4f}, "
                f"motion net F1 {net_motion_f1:.4f} vs baseline {base_motion_f1:.4f}"
            )
            assert metrics.macro_f1 >= 0.85, f"macro-F1 {metrics.macro_f1:.4f} < 0.85"
            assert net_f1 >= 0.90, f"event F1 {net_f1:.4f} < 0.90"
            assert net_motion_f1 - base_motion_f1 >= 0.10, (
                f"motion margin {net_motion_f1 - base_motion_f1:.4f} < 0.10 "
                f"(net {net_motion_f1:.4f}, baseline {base_motion_f1:.4f})"
            )


class TestServiceProperties:
    def test_service_properties(self, tmp_path, monkeypatch):
        from slidesum.service import SessionService

        from .service_driver import drive_random_actions, make_demo_video

        with criterion("service properties (10k randomized actions, crash safety)"):
            service = SessionService(tmp_path / "store")
            video_id = make_demo_video(service, keyframes=3)

            for probe in range(5):
                doc = service.create_session(video_id)
                assert doc["stage"] == "selection"  # sessions always open in Selection

            stats = drive_random_actions(service, video_id, n_actions=10_000, seed=7)
            assert stats.attempts == 10_000
            assert stats.successes > 1000
            assert stats.rejections > 100

            # kill-during-write: interrupted persists leave whole documents
            import slidesum.service as svc

            doc = service.create_session(video_id)
            sid = doc["id"]
            real_replace = svc.os.replace

            def crash(src, dst):
                raise OSError("simulated crash")

            monkeypatch.setattr(svc.os, "replace", crash)
            with pytest.raises(OSError):
                service.set_stage(sid, "integration", doc["version"])
            monkeypatch.setattr(svc.os, "replace", real_replace)
            recovered = SessionService(service.store).get_session(sid)
            assert recovered == doc  # the whole old document


class TestCliDeterminism:
    def test_cli_matches_in_process_composition(self, tmp_path):
        from slidesum.cli import main as cli_main
        from slidesum.ingest import load_sequence
        from slidesum.summarize import export_keyframes, summarize_track

        with criterion("cli determinism (detect+summarize == library, 10 corpora)"):
            weights_path = tmp_path / "net.strw"
            save_weights(build_network(tiny_preset(init_seed=5)), weights_path)
            net = load_weights(weights_path)

            for seed in range(10):
                corpus = tmp_path / f"corpus{seed}"
                assert cli_main([
                    "synth", "--preset", ["static", "motion", "switchy"][seed % 3],
                    "--seed", str(seed), "--out", str(corpus),
                    "--frames", "240", "--width", "48", "--height", "36", "--noise", "1.0",
                ]) == 0
                track_path = tmp_path / f"track{seed}.json"
                assert cli_main([
                    "detect", "--weights", str(weights_path),
                    "--manifest", str(corpus / "manifest.json"),
                    "--out", str(track_path), "--stride", "2", "--temporal-rate", "5",
                    "--video-id", f"corpus{seed}",
                ]) == 0
                cli_dir = tmp_path / f"cli_summary{seed}"
                assert cli_main([
                    "summarize", "--track", str(track_path),
                    "--manifest", str(corpus / "manifest.json"),
                    "--out", str(cli_dir), "--temporal-rate", "5",
                ]) == 0

                seq = load_sequence(corpus / "manifest.json")
                cfg = VolumeConfig(frames_per_volume=8, stride=2, temporal_rate=5, target_dims=(32, 32))
                small = downsample(seq, cfg)
                volumes = build_volumes(small, cfg)
                x = Tensor(np.stack([v.data.data for v in volumes]).astype(np.float32))
                probs = predict_probs(net, x, 32)
                track = PredictionTrack(
                    probs=probs, ranges=[v.frame_range for v in volumes], video_id=f"corpus{seed}"
                )
                lib_track = tmp_path / f"lib_track{seed}.json"
                track.save(lib_track)
                assert lib_track.read_bytes() == track_path.read_bytes(), f"track differs, seed {seed}"

                decim = VolumeConfig(
                    frames_per_volume=2, stride=1, temporal_rate=5, target_dims=(seq.height, seq.width)
                )
                retained = downsample(seq, decim)
                manifest, outline, _ = summarize_track(track, retained)
                lib_dir = tmp_path / f"lib_summary{seed}"
                lib_dir.mkdir()
                manifest.save(lib_dir / "summary.json")
                outline.save(lib_dir / "outline.json")
                export_keyframes(manifest, retained, lib_dir)
                cli_files = sorted(p.name for p in cli_dir.iterdir())
                lib_files = sorted(p.name for p in lib_dir.iterdir())
                assert cli_files == lib_files
                for name in cli_files:
                    assert (cli_dir / name).read_bytes() == (lib_dir / name).read_bytes(), (
                        f"{name} differs, seed {seed}"
                    )
