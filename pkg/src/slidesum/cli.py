"""Single executable exposing the whole pipeline as subcommands.

Every stage reads and writes the file formats owned by its module, so a run
can be decomposed, inspected, and diffed between stages.  Subcommands that
take --seed are bit-reproducible across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .ingest import (
    VolumeConfig,
    build_volumes,
    downsample,
    label_volumes,
    load_events,
    load_sequence,
    load_volumes,
    remap_events,
    save_volumes,
)
from .metrics import match_transitions, pixel_diff_baseline
from .network import PRESETS, build_network, load_weights, save_weights
from .summarize import PredictionTrack, export_keyframes, summarize_track
from .synth import LECTURE_KINDS, SynthSpec, lecture_spec, write_corpus
from .training import TrainConfig, predict_probs, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slidesum",
        description="Slide transition detection and summarization workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic lecture corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=LECTURE_KINDS)
    group.add_argument("--spec", help="SynthSpec JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=1200)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=72)
    p.add_argument("--noise", type=float, default=2.0)

    p = sub.add_parser("ingest", help="manifest + events -> labeled volume archive")
    p.add_argument("--manifest", required=True)
    p.add_argument("--events", help="ground-truth events file (labels volumes)")
    p.add_argument("--out", required=True, help="output .svol archive")
    p.add_argument("--config", choices=("paper", "tiny"), default="paper")
    p.add_argument("--frames-per-volume", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--temporal-rate", type=int)
    p.add_argument("--target-height", type=int)
    p.add_argument("--target-width", type=int)

    p = sub.add_parser("train", help="train the network on volume archives")
    p.add_argument("--volumes", required=True, nargs="+", help=".svol archives")
    p.add_argument("--preset", choices=sorted(PRESETS), default="tiny")
    p.add_argument("--out", required=True, help="output weights file")
    p.add_argument("--history", help="optional history table output")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0, help="shuffle seed")
    p.add_argument("--init-seed", type=int, default=0, help="weight init seed")
    p.add_argument("--weighting", choices=("uniform", "inverse_frequency"), default="inverse_frequency")
    p.add_argument("--stop-at-accuracy", type=float)

    p = sub.add_parser("detect", help="weights + sequence -> prediction track")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output track JSON")
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--temporal-rate", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--video-id", default="")

    p = sub.add_parser("summarize", help="track -> summary manifest, keyframes, outline")
    p.add_argument("--track", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--temporal-rate", type=int, default=5, help="must match detect")
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.add_argument("--median-window", type=int, default=3)

    p = sub.add_parser("eval", help="compare predicted vs true transition events")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tol", type=int, default=16, help="temporal tolerance in frames")
    p.add_argument("--out", help="optional report JSON path")

    p = sub.add_parser("baseline", help="pixel-difference transition detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output events JSON")
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--temporal-rate", type=int, default=1)

    p = sub.add_parser("serve", help="run the interactive summarizing service")
    p.add_argument(
        "--store",
        default=os.environ.get("SLIDESUM_STORE"),
        help="state directory (or SLIDESUM_STORE)",
    )
    p.add_argument(
        "--bind",
        default=os.environ.get("SLIDESUM_BIND", "127.0.0.1:8000"),
        help="host:port (or SLIDESUM_BIND)",
    )
    p.add_argument("--ui-dir", help="optional static frontend directory to mount at /app")

    return parser


def _volume_config(args) -> VolumeConfig:
    base = VolumeConfig() if args.config == "paper" else VolumeConfig.tiny()
    overrides = {}
    if args.frames_per_volume is not None:
        overrides["frames_per_volume"] = args.frames_per_volume
    if args.stride is not None:
        overrides["stride"] = args.stride
    if args.temporal_rate is not None:
        overrides["temporal_rate"] = args.temporal_rate
    th = args.target_height if args.target_height is not None else base.target_dims[0]
    tw = args.target_width if args.target_width is not None else base.target_dims[1]
    return VolumeConfig(
        frames_per_volume=overrides.get("frames_per_volume", base.frames_per_volume),
        stride=overrides.get("stride", base.stride),
        temporal_rate=overrides.get("temporal_rate", base.temporal_rate),
        target_dims=(th, tw),
    )


def _cmd_synth(args) -> int:
    if args.spec:
        spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text("utf-8")))
    else:
        spec = lecture_spec(
            args.preset,
            seed=args.seed,
            total_frames=args.frames,
            fps=args.fps,
            width=args.width,
            height=args.height,
            noise_sigma=args.noise,
        )
    manifest_path, events_path = write_corpus(spec, args.out)
    print(f"wrote corpus: {manifest_path} ({spec.total_frames} frames), {events_path}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    cfg = _volume_config(args)
    seq = load_sequence(args.manifest)
    small = downsample(seq, cfg)
    volumes = build_volumes(small, cfg)
    if args.events:
        events = remap_events(load_events(args.events), cfg.temporal_rate, len(small))
        volumes = label_volumes(volumes, events, len(small))
    extra = {
        "fps": seq.fps,
        "source_manifest": str(args.manifest),
        "config": cfg.to_dict(),
    }
    save_volumes(volumes, args.out, extra=extra)
    labeled = sum(1 for v in volumes if v.category is not None)
    print(f"wrote {len(volumes)} volumes ({labeled} labeled) to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    volumes = []
    for path in args.volumes:
        batch, _ = load_volumes(path)
        volumes.extend(batch)
    net = build_network(PRESETS[args.preset](init_seed=args.init_seed))
    config = TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        shuffle_seed=args.seed,
        weighting=args.weighting,
        stop_at_accuracy=args.stop_at_accuracy,
    )
    net, history = train(net, volumes, config)
    save_weights(net, args.out)
    if args.history:
        Path(args.history).write_text(history.export_table(), "utf-8")
    final = history.records[-1] if history.records else None
    if final:
        print(
            f"trained {len(history)} epochs on {len(volumes)} volumes; "
            f"loss {final.loss:.4f}, accuracy {final.accuracy:.4f}"
        )
    print(f"wrote weights to {args.out}")
    return EXIT_OK


def _detect_track(net, manifest_path, stride, temporal_rate, batch_size, video_id):
    input_shape = net.config.input_shape
    cfg = VolumeConfig(
        frames_per_volume=input_shape[1],
        stride=stride,
        temporal_rate=temporal_rate,
        target_dims=(input_shape[2], input_shape[3]),
    )
    seq = load_sequence(manifest_path)
    small = downsample(seq, cfg)
    volumes = build_volumes(small, cfg)
    x, _ = stack_volumes_unlabeled(volumes)
    probs = predict_probs(net, x, batch_size)
    return PredictionTrack(
        probs=probs,
        ranges=[v.frame_range for v in volumes],
        video_id=video_id,
    )


def stack_volumes_unlabeled(volumes):
    """Stack volumes that may be unlabeled; targets come back as -1."""
    from .tensor import Tensor

    x = np.stack([v.data.data for v in volumes]).astype(np.float32)
    y = np.asarray([-1 if v.category is None else int(v.category) for v in volumes])
    return Tensor(x), y


def _cmd_detect(args) -> int:
    net = load_weights(args.weights)
    video_id = args.video_id or Path(args.manifest).resolve().parent.name
    track = _detect_track(
        net, args.manifest, args.stride, args.temporal_rate, args.batch_size, video_id
    )
    track.save(args.out)
    print(f"wrote track with {len(track)} volumes to {args.out}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    track = PredictionTrack.load(args.track)
    seq = load_sequence(args.manifest)
    # temporal decimation only: keyframes export at full spatial resolution
    cfg = VolumeConfig(
        frames_per_volume=2,
        stride=1,
        temporal_rate=args.temporal_rate,
        target_dims=(seq.height, seq.width),
    )
    retained = downsample(seq, cfg)
    manifest, outline, events = summarize_track(
        track, retained, min_confidence=args.min_confidence, median_window=args.median_window
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "summary.json")
    outline.save(out / "outline.json")
    export_keyframes(manifest, retained, out)
    print(
        f"wrote summary with {len(manifest.keyframes)} keyframes "
        f"({len(events)} transitions) to {out}"
    )
    return EXIT_OK


def _load_event_frames(path) -> list[int]:
    doc = json.loads(Path(path).read_text("utf-8"))
    frames = []
    for item in doc:
        if isinstance(item, dict):
            if item.get("kind", "transition") != "transition":
                continue
            frames.append(int(item["frame_index"]))
        else:
            frames.append(int(item))
    return sorted(frames)


def _cmd_eval(args) -> int:
    pred = _load_event_frames(args.pred)
    truth = _load_event_frames(args.truth)
    report = match_transitions(pred, truth, args.tol)
    doc = report.to_dict()
    print(json.dumps(doc, indent=1))
    print(
        f"precision {report.precision:.4f}  recall {report.recall:.4f}  "
        f"f1 {report.f1:.4f}  (tol={args.tol})"
    )
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n", "utf-8")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    seq = load_sequence(args.manifest)
    if args.temporal_rate > 1:
        cfg = VolumeConfig(
            frames_per_volume=2,
            stride=1,
            temporal_rate=args.temporal_rate,
            target_dims=(seq.height, seq.width),
        )
        seq = downsample(seq, cfg)
    events = pixel_diff_baseline(seq, args.threshold)
    doc = [
        {"frame_index": e.frame_index, "kind": "transition", "confidence": e.confidence}
        for e in events
    ]
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n", "utf-8")
    print(f"baseline found {len(events)} events, wrote {args.out}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import SessionService, create_app

    if not args.store:
        print("error: --store (or SLIDESUM_STORE) is required", file=sys.stderr)
        return EXIT_USAGE
    host, _, port = args.bind.rpartition(":")
    app = create_app(SessionService(args.store))
    if args.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=args.ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "detect": _cmd_detect,
    "summarize": _cmd_summarize,
    "eval": _cmd_eval,
    "baseline": _cmd_baseline,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
