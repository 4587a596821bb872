import json
import os
import subprocess
import sys

import numpy as np
import pytest

from streamtag import ModelConfig, save, seeded_init
from streamtag.cli import main
from tests.conftest import tone


@pytest.fixture(scope="module")
def tiny_weights_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "tiny.satw"
    save(seeded_init(ModelConfig.from_variant("tiny"), 1234), path)
    return str(path)


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def parse_jsonl(out):
    return [json.loads(line) for line in out.strip().splitlines()]


class TestTag:
    def test_ten_second_clip(self, tiny_weights_file, write_wav, capsys):
        wav = write_wav("ten.wav", tone(10.0))
        code, out, _ = run_cli(["tag", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--delay", "2", "--input", wav], capsys)
        assert code == 0
        records = parse_jsonl(out)
        assert len(records) == 6  # 5 chunks + summary
        assert [r["schema"] for r in records[:5]] == ["streamtag/tag/v1"] * 5
        assert records[-1]["schema"] == "streamtag/summary/v1"
        assert records[-1]["n_chunks"] == 5
        for r in records[:5]:
            probs = [e["probability"] for e in r["top"]]
            assert probs == sorted(probs, reverse=True)
            assert all(0 < p < 1 for p in probs)
            assert r["chunk_end_s"] - r["chunk_start_s"] == pytest.approx(1.92)

    def test_full_delay_single_record(self, tiny_weights_file, write_wav, capsys):
        wav = write_wav("long.wav", tone(10.24))
        code, out, _ = run_cli(["tag", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--delay", "full", "--input", wav], capsys)
        assert code == 0
        records = parse_jsonl(out)
        assert len(records) == 2  # one chunk + summary
        # 1021 frames -> 1008 usable -> capped at 1024? min(1008,1024)=1008 -> 63 patches
        assert records[0]["chunk_end_s"] == pytest.approx(10.08)

    def test_full_delay_256_tokens(self, tiny_weights_file, write_wav, capsys):
        # long enough for 1024 frames; the cap trims usable audio to 10.24 s
        wav = write_wav("exact.wav", tone(10.30))
        code, out, _ = run_cli(["tag", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--delay", "full", "--input", wav], capsys)
        assert code == 0
        assert parse_jsonl(out)[0]["chunk_end_s"] == pytest.approx(10.24)

    def test_missing_weights_exit_3(self, write_wav, capsys):
        wav = write_wav("x.wav", tone(2.0))
        code, out, err = run_cli(["tag", "--weights", "/nope/w.satw", "--arch", "tiny",
                                  "--input", wav], capsys)
        assert code == 3
        assert "/nope/w.satw" in err
        assert out == ""

    def test_missing_audio_exit_4(self, tiny_weights_file, capsys):
        code, _, err = run_cli(["tag", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--input", "/nope/a.wav"], capsys)
        assert code == 4
        assert "a.wav" in err

    def test_bad_args_exit_2(self, capsys):
        code, _, _ = run_cli(["tag", "--arch", "tiny"], capsys)
        assert code == 2

    def test_csv_format(self, tiny_weights_file, write_wav, capsys):
        wav = write_wav("c.wav", tone(2.0))
        code, out, _ = run_cli(["tag", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--input", wav, "--format", "csv", "--topk", "3"], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 6  # 1 chunk * 3 + summary * 3
        assert lines[0].startswith("streamtag/tag/v1,")

    def test_label_names(self, tiny_weights_file, write_wav, tmp_path, capsys):
        labels = tmp_path / "labels.csv"
        labels.write_text("".join(f"{i},class_{i}\n" for i in range(527)))
        wav = write_wav("l.wav", tone(2.0))
        code, out, _ = run_cli(["tag", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--input", wav, "--labels", str(labels)], capsys)
        assert code == 0
        top = parse_jsonl(out)[0]["top"][0]
        assert top["class_name"] == f"class_{top['class_id']}"


class TestStream:
    def test_file_streaming_records(self, tiny_weights_file, write_wav, capsys):
        wav = write_wav("s.wav", tone(13.0))
        code, out, _ = run_cli(["stream", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--delay", "2", "--input", wav], capsys)
        assert code == 0
        records = parse_jsonl(out)
        chunks = [r for r in records if r["schema"] == "streamtag/tag/v1"]
        # 1297 frames: 6 full chunks + 145-frame tail
        assert len(chunks) == 7
        starts = [r["chunk_start_s"] for r in chunks]
        assert starts == sorted(starts)
        assert records[-1]["schema"] == "streamtag/summary/v1"

    def test_no_cache_only_probabilities_differ(self, tiny_weights_file, write_wav, capsys):
        wav = write_wav("n.wav", np.clip(
            np.random.default_rng(0).normal(scale=0.1, size=16000 * 6), -1, 1))
        _, out_a, _ = run_cli(["stream", "--weights", tiny_weights_file, "--arch", "tiny",
                               "--input", wav], capsys)
        _, out_b, _ = run_cli(["stream", "--weights", tiny_weights_file, "--arch", "tiny",
                               "--input", wav, "--no-cache"], capsys)
        recs_a, recs_b = parse_jsonl(out_a), parse_jsonl(out_b)
        assert len(recs_a) == len(recs_b)
        for a, b in zip(recs_a, recs_b):
            assert a["schema"] == b["schema"]
            if a["schema"] == "streamtag/tag/v1":
                assert a["chunk_start_s"] == b["chunk_start_s"]
                assert a["chunk_end_s"] == b["chunk_end_s"]

    def test_stdin_raw_f32(self, tiny_weights_file, write_wav):
        raw = tone(4.0).astype(np.float32).tobytes()
        proc = subprocess.run(
            [sys.executable, "-m", "streamtag.cli", "stream", "--weights", tiny_weights_file,
             "--arch", "tiny", "--delay", "2", "--stdin-raw-f32"],
            input=raw, capture_output=True)
        assert proc.returncode == 0
        records = [json.loads(l) for l in proc.stdout.decode().strip().splitlines()]
        chunks = [r for r in records if r["schema"] == "streamtag/tag/v1"]
        assert len(chunks) == 2  # 397 frames: 2 full chunks, 13-frame tail dropped

    def test_sigint_clean_summary(self, tiny_weights_file, write_wav):
        import signal
        import time

        wav = write_wav("long.wav", tone(120.0))
        proc = subprocess.Popen(
            [sys.executable, "-u", "-m", "streamtag.cli", "stream", "--weights",
             tiny_weights_file, "--arch", "tiny", "--input", wav],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        # wait for the first record, then interrupt
        first = proc.stdout.readline()
        assert first
        proc.send_signal(signal.SIGINT)
        out, _ = proc.communicate(timeout=30)
        assert proc.returncode == 0
        records = [json.loads(l) for l in (first + out).decode().strip().splitlines()]
        assert records[-1]["schema"] == "streamtag/summary/v1"
        assert records[-1]["interrupted"] is True


@pytest.fixture(scope="module")
def manifest(tmp_path_factory, tiny_weights_file):
    import scipy.io.wavfile

    root = tmp_path_factory.mktemp("evalset")
    rng = np.random.default_rng(42)
    rows = []
    strong_rows = []
    for i in range(10):
        samples = np.clip(rng.normal(scale=0.1, size=16000 * 4), -1, 1)
        path = root / f"clip{i}.wav"
        scipy.io.wavfile.write(path, 16000, (samples * 32767).astype(np.int16))
        labels = sorted(rng.choice(527, size=3, replace=False))
        rows.append(f"clip{i}\t{path}\t{';'.join(map(str, labels))}")
        for c in labels[:2]:
            strong_rows.append(f"clip{i}\t0.0\t2.0\t{c}")
    manifest_path = root / "manifest.tsv"
    manifest_path.write_text("\n".join(rows) + "\n")
    strong_path = root / "strong.tsv"
    strong_path.write_text("\n".join(strong_rows) + "\n")
    return str(manifest_path), str(strong_path)


class TestEval:
    def test_smoke_and_determinism(self, tiny_weights_file, manifest, capsys):
        manifest_path, _ = manifest
        args = ["eval", "--weights", tiny_weights_file, "--arch", "tiny",
                "--delay", "2", "--manifest", manifest_path]
        code1, out1, _ = run_cli(args, capsys)
        code2, out2, _ = run_cli(args, capsys)
        assert code1 == code2 == 0
        assert out1 == out2
        body = json.loads(out1)
        assert body["n_clips"] == 10
        assert body["n_failed"] == 0
        assert 0.0 <= body["map"] <= 1.0
        assert "seg_f1" not in body

    def test_strong_labels_add_f1_keys(self, tiny_weights_file, manifest, capsys):
        manifest_path, strong_path = manifest
        code, out, _ = run_cli(["eval", "--weights", tiny_weights_file, "--arch", "tiny",
                                "--delay", "2", "--manifest", manifest_path,
                                "--strong-labels", strong_path], capsys)
        assert code == 0
        body = json.loads(out)
        assert 0.0 <= body["seg_f1"] <= 1.0
        assert 0.0 <= body["onset_f1"] <= 1.0

    def test_parallel_matches_serial(self, tiny_weights_file, manifest, capsys, monkeypatch):
        manifest_path, _ = manifest
        args = ["eval", "--weights", tiny_weights_file, "--arch", "tiny",
                "--delay", "2", "--manifest", manifest_path]
        monkeypatch.setenv("SAT_NUM_THREADS", "1")
        _, serial, _ = run_cli(args, capsys)
        monkeypatch.setenv("SAT_NUM_THREADS", "4")
        _, parallel, _ = run_cli(args, capsys)
        assert serial == parallel

    def test_failures_counted(self, tiny_weights_file, manifest, tmp_path, capsys):
        manifest_path, _ = manifest
        rows = open(manifest_path).read().strip().splitlines()
        rows += [f"bad{i}\t/nope/bad{i}.wav\t5" for i in range(3)]
        bad = tmp_path / "bad.tsv"
        bad.write_text("\n".join(rows) + "\n")
        code, out, err = run_cli(["eval", "--weights", tiny_weights_file, "--arch", "tiny",
                                  "--delay", "2", "--manifest", str(bad)], capsys)
        assert code == 1  # >10% failed
        body = json.loads(out)
        assert body["n_failed"] == 3
        assert "bad0" in err


class TestProfile:
    def test_tiny_256_tokens(self, capsys):
        code, out, _ = run_cli(["profile", "--arch", "tiny", "--tokens", "256"], capsys)
        assert code == 0
        body = json.loads(out)
        assert abs(body["gflops"] - 2.7) / 2.7 <= 0.15

    def test_base_streaming_table(self, capsys):
        code, out, _ = run_cli(["profile", "--arch", "base", "--delay", "2",
                                "--streaming", "--format", "table"], capsys)
        assert code == 0
        assert "48/48" in out

    def test_minimal_tokens(self, capsys):
        code, out, _ = run_cli(["profile", "--arch", "tiny", "--tokens", "1"], capsys)
        assert code == 0
        assert json.loads(out)["token_count"] == 1

    def test_bad_arch(self, capsys):
        code, _, _ = run_cli(["profile", "--arch", "huge", "--tokens", "8"], capsys)
        assert code == 2
