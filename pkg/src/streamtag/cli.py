"""Command-line surface: tag, stream, eval, profile.

stdout carries only data records (jsonl or csv); every diagnostic goes to
stderr.  Exit codes: 0 ok, 2 bad arguments, 3 weight/shape errors, 4 audio
errors.  Record schemas are documented in docs/CLI.md and every record
carries a ``schema`` field.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import signal
import sys

import numpy as np

from . import metrics, profiler, streaming
from .frontend import AudioError, buffer_from_raw_f32, compute_mel, load_wav
from .model import ModelConfig
from .streaming import StreamState, StreamingMelizer, new_stream, process_chunk, run_clip
from .weights import WeightFormatError, load as load_weights

TAG_SCHEMA = "streamtag/tag/v1"
SUMMARY_SCHEMA = "streamtag/summary/v1"
EVAL_SCHEMA = "streamtag/eval/v1"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_WEIGHTS = 3
EXIT_AUDIO = 4


def _read_label_names(path) -> dict[int, str]:
    names: dict[int, str] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            names[int(row[0])] = row[1] if len(row) > 1 else ""
    return names


def _topk(probs: np.ndarray, k: int, names: dict[int, str]) -> list[dict]:
    order = np.argsort(-probs, kind="stable")[:k]
    return [
        {
            "class_id": int(c),
            "class_name": names.get(int(c), str(int(c))),
            "probability": float(probs[c]),
        }
        for c in order
    ]


def _load_model(args) -> tuple[ModelConfig, object]:
    cfg = ModelConfig.from_variant(args.arch)
    if not os.path.exists(args.weights):
        raise WeightFormatError(f"weights file not found: {args.weights}")
    return cfg, load_weights(args.weights, cfg)


def _emit(record: dict, fmt: str, out) -> None:
    if fmt == "jsonl":
        out.write(json.dumps(record) + "\n")
    else:  # csv: one row per top-k entry
        writer = csv.writer(out)
        for rank, entry in enumerate(record.get("top", [])):
            writer.writerow([
                record["schema"], record.get("stream_id", ""),
                record.get("chunk_index", ""), record.get("chunk_start_s", ""),
                record.get("chunk_end_s", ""), rank,
                entry["class_id"], entry["class_name"], entry["probability"],
            ])
    out.flush()


def cmd_tag(args) -> int:
    cfg, weights = _load_model(args)
    names = _read_label_names(args.labels) if args.labels else {}
    audio = load_wav(args.input)
    stream_id = os.path.basename(args.input)
    if args.delay == "full":
        mel = compute_mel(audio)
        frames = min(mel.n_frames // cfg.patch_size * cfg.patch_size,
                     cfg.max_time_patches * cfg.patch_size)
        if frames < cfg.patch_size:
            raise AudioError("input shorter than one patch column")
        state = StreamState(cfg=cfg, chunk_frames=frames, weights=weights)
        chunk = streaming.MelSpectrogram(values=mel.values[:, :frames])
        rows = np.asarray([process_chunk(state, chunk)])
        chunk_s = frames / streaming.FRAMES_PER_SECOND
    else:
        delay = float(args.delay)
        scores = run_clip(cfg, weights, audio, delay)
        rows = scores.chunk_rows
        chunk_s = streaming.chunk_frames_for_delay(delay) / streaming.FRAMES_PER_SECOND
    for i, row in enumerate(rows):
        _emit({
            "schema": TAG_SCHEMA,
            "stream_id": stream_id,
            "chunk_index": i,
            "chunk_start_s": round(i * chunk_s, 6),
            "chunk_end_s": round((i + 1) * chunk_s, 6),
            "top": _topk(row, args.topk, names),
        }, args.format, sys.stdout)
    _emit({
        "schema": SUMMARY_SCHEMA,
        "stream_id": stream_id,
        "n_chunks": int(rows.shape[0]),
        "top": _topk(rows.mean(axis=0), args.topk, names),
    }, args.format, sys.stdout)
    return EXIT_OK


def _stream_samples(args, block: int):
    if args.stdin_raw_f32:
        raw = sys.stdin.buffer
        while True:
            data = raw.read(block * 4)
            if not data:
                return
            yield buffer_from_raw_f32(data).samples
    else:
        samples = load_wav(args.input).samples
        for start in range(0, samples.size, block):
            yield samples[start:start + block]


def cmd_stream(args) -> int:
    cfg, weights = _load_model(args)
    names = _read_label_names(args.labels) if args.labels else {}
    delay = float(args.delay)
    state = new_stream(cfg, delay, weights)
    melizer = StreamingMelizer(state.chunk_frames)
    stream_id = "stdin" if args.stdin_raw_f32 else os.path.basename(args.input)
    rows = []
    interrupted = False

    def on_sigint(signum, frame):
        nonlocal interrupted
        interrupted = True

    previous = signal.signal(signal.SIGINT, on_sigint)
    try:
        chunk_s = state.chunk_seconds

        def emit_chunk(mel_chunk):
            if args.no_cache:
                state.reset()
            probs = process_chunk(state, mel_chunk)
            i = len(rows)
            rows.append(probs)
            end_frames = i * state.chunk_frames + mel_chunk.n_frames
            _emit({
                "schema": TAG_SCHEMA,
                "stream_id": stream_id,
                "chunk_index": i,
                "chunk_start_s": round(i * chunk_s, 6),
                "chunk_end_s": round(end_frames / streaming.FRAMES_PER_SECOND, 6),
                "top": _topk(probs, args.topk, names),
            }, "jsonl", sys.stdout)

        for block in _stream_samples(args, melizer.chunk_samples):
            if interrupted:
                break
            for mel_chunk in melizer.push(block):
                emit_chunk(mel_chunk)
        if not interrupted:
            tail = melizer.flush()
            if tail is not None:
                emit_chunk(tail)
    finally:
        signal.signal(signal.SIGINT, previous)
    if rows:
        _emit({
            "schema": SUMMARY_SCHEMA,
            "stream_id": stream_id,
            "n_chunks": len(rows),
            "interrupted": interrupted,
            "top": _topk(np.mean(rows, axis=0), args.topk, names),
        }, "jsonl", sys.stdout)
    return EXIT_OK


def _read_manifest(path) -> list[tuple[str, str, list[int]]]:
    clips = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0].startswith("#"):
                continue
            clip_id, wav_path = row[0], row[1]
            ids = [int(tok) for tok in row[2].replace(",", ";").split(";") if tok.strip()] \
                if len(row) > 2 and row[2].strip() else []
            clips.append((clip_id, wav_path, ids))
    return clips


def cmd_eval(args) -> int:
    cfg, weights = _load_model(args)
    clips = _read_manifest(args.manifest)
    if not clips:
        print("empty manifest", file=sys.stderr)
        return EXIT_USAGE
    strong = metrics.read_strong_labels(args.strong_labels) if args.strong_labels else None
    delay = float(args.delay)
    n_workers = max(1, int(os.environ.get("SAT_NUM_THREADS", "1")))

    def score_one(item):
        clip_id, wav_path, _ = item
        return run_clip(cfg, weights, load_wav(wav_path), delay)

    results: list = [None] * len(clips)
    failures = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as pool:
        for i, outcome in enumerate(pool.map(
                lambda item: _try(score_one, item), clips)):
            results[i] = outcome
    labels = np.zeros((len(clips), cfg.n_classes), dtype=np.int64)
    scores = np.zeros((len(clips), cfg.n_classes))
    keep = []
    for i, ((clip_id, wav_path, ids), outcome) in enumerate(zip(clips, results)):
        if isinstance(outcome, Exception):
            failures += 1
            print(f"eval: {clip_id} ({wav_path}): {outcome}", file=sys.stderr)
            continue
        keep.append(i)
        scores[i] = outcome.averaged
        labels[i, ids] = 1
    out = {
        "schema": EVAL_SCHEMA,
        "n_clips": len(clips),
        "n_failed": failures,
        "delay_s": delay,
        "arch": args.arch,
    }
    if keep:
        try:
            out["map"] = metrics.mean_ap(scores[keep], labels[keep])
        except metrics.NoPositivesError as exc:
            print(f"eval: {exc}", file=sys.stderr)
            out["map"] = None
    if strong is not None:
        chunk_s = streaming.chunk_frames_for_delay(delay) / streaming.FRAMES_PER_SECOND
        tp = fp = fn = 0
        onset_tp = n_pred = n_truth = 0
        for i in keep:
            clip_id = clips[i][0]
            truth_events = strong.get(clip_id, [])
            counts = metrics._segment_counts(results[i].chunk_rows, truth_events,
                                             chunk_s, 0.5)
            tp, fp, fn = tp + counts[0], fp + counts[1], fn + counts[2]
            pred_events = metrics.events_from_scores(results[i].chunk_rows, chunk_s)
            onset_tp += metrics._onset_matches(pred_events, truth_events, 0.2)
            n_pred += len(pred_events)
            n_truth += len(truth_events)
        out["seg_f1"] = metrics.f1_from_counts(tp, fp, fn)
        out["onset_f1"] = metrics.f1_from_counts(onset_tp, n_pred - onset_tp,
                                                 n_truth - onset_tp)
    print(json.dumps(out, sort_keys=True))
    if failures > 0.1 * len(clips):
        return 1
    return EXIT_OK


def _try(fn, arg):
    try:
        return fn(arg)
    except Exception as exc:  # per-file failures are counted, not fatal
        return exc


def cmd_profile(args) -> int:
    cfg = ModelConfig.from_variant(args.arch)
    if args.tokens is not None:
        n_tokens = args.tokens
    else:
        frames = streaming.chunk_frames_for_delay(float(args.delay))
        n_tokens = cfg.n_freq_patches * (frames // cfg.patch_size)
    cache_len = n_tokens if args.streaming else 0
    rep = profiler.report(cfg, n_tokens, cache_len)
    if args.format == "table":
        print(rep.to_markdown(model_name=args.arch))
    else:
        print(rep.to_json(arch=args.arch, streaming=bool(args.streaming),
                          schema="streamtag/profile/v1"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamtag",
                                     description="Streaming audio tagging engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p):
        p.add_argument("--weights", required=True)
        p.add_argument("--arch", choices=["tiny", "small", "base"], required=True)
        p.add_argument("--labels", help="CSV mapping class_id,name")
        p.add_argument("--topk", type=int, default=5)

    p_tag = sub.add_parser("tag", help="tag a WAV file chunk by chunk")
    model_args(p_tag)
    p_tag.add_argument("--delay", choices=["1", "2", "full"], default="2")
    p_tag.add_argument("--input", required=True)
    p_tag.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p_tag.set_defaults(fn=cmd_tag)

    p_stream = sub.add_parser("stream", help="continuous jsonl tagging")
    model_args(p_stream)
    p_stream.add_argument("--delay", choices=["1", "2"], default="2")
    src = p_stream.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--stdin-raw-f32", action="store_true",
                     help="read headerless little-endian f32 mono 16 kHz from stdin")
    p_stream.add_argument("--no-cache", action="store_true",
                          help="reset the KV cache before every chunk")
    p_stream.set_defaults(fn=cmd_stream)

    p_eval = sub.add_parser("eval", help="evaluate a manifest of labeled clips")
    model_args(p_eval)
    p_eval.add_argument("--delay", choices=["1", "2"], default="2")
    p_eval.add_argument("--manifest", required=True,
                        help="TSV: clip_id, wav_path, class ids (';'-joined)")
    p_eval.add_argument("--strong-labels",
                        help="TSV: clip_id, onset_s, offset_s, class_id")
    p_eval.set_defaults(fn=cmd_eval)

    p_prof = sub.add_parser("profile", help="analytic cost report")
    p_prof.add_argument("--arch", choices=["tiny", "small", "base"], required=True)
    grp = p_prof.add_mutually_exclusive_group(required=True)
    grp.add_argument("--tokens", type=int)
    grp.add_argument("--delay", choices=["1", "2"])
    p_prof.add_argument("--streaming", action="store_true")
    p_prof.add_argument("--format", choices=["json", "table"], default="json")
    p_prof.set_defaults(fn=cmd_profile)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        # labels/manifest paths; audio and weights raise their own types
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WeightFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except AudioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUDIO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS


if __name__ == "__main__":
    sys.exit(main())
